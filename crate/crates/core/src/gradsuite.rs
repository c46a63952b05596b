//! Named gradient-check cases for every differentiable op and module, each
//! built on random small shapes from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cim::{
    cim_forward, cim_round, init_cim, init_gate, init_vlm, lvm, vlm, CimConfig, CimState,
};
use crate::encoders::{
    encode_phrase, init_phrase, init_visual, phrase_encode, visual_encode, PhraseConfig, PhraseSet,
    VisualConfig,
};
use crate::error::{Error, Result};
use crate::fusion::{bilinear_fuse, init_bilinear, Activation, FusionConfig};
use crate::params::{Forward, Params};
use crate::seghead::{aspp, bce_loss, concat_levels, init_head, predict_mask, HeadConfig, BCE_EPS};
use crate::tensor::{grad_check, DType, GradCheckReport, Graph, Tensor, Var};

pub const GRAD_H: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

/// Every case name, primitives first.
pub const CASES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "mul_row",
    "matmul",
    "transpose",
    "reshape",
    "conv2d",
    "conv2d_strided",
    "depthwise_conv2d",
    "depthwise_separable_conv",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "l2_normalize",
    "concat",
    "slice",
    "global_avg_pool",
    "elementwise_max",
    "bilinear_upsample",
    "gather_rows",
    "sum",
    "bce_with_logits",
    "lstm_phrase",
    "phrase_max_pool",
    "visual_encoder",
    "bilinear_fusion",
    "vlm",
    "lvm",
    "cim_forward",
    "aspp_head",
    "vlm_lvm_aspp_bce",
];

type CaseFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    f: CaseFn,
}

impl GradCase {
    pub fn run(&self) -> Result<GradCheckReport> {
        grad_check(
            |g: &mut Graph, v: &[Var]| (self.f)(g, v),
            &self.inputs,
            GRAD_H,
            GRAD_TOL,
        )
    }
}

/// Build and run case `name` for `seed`.
pub fn check(name: &str, seed: u64) -> Result<GradCheckReport> {
    case(name, seed)?.run()
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn binary(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_bool(0.5) as u8 as f64).collect()
}

fn prim(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Random biases so that zero-initialized terms are exercised too.
fn jitter_biases(params: &mut Params, rng: &mut ChaCha8Rng) {
    for (name, t) in params.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
}

/// A case whose inputs are all of `params` followed by `extra`. `body`
/// receives a [`Forward`] with every parameter bound to its input node, and
/// the extra input nodes.
fn module(
    name: &'static str,
    params: Params,
    extra: Vec<Tensor>,
    body: impl Fn(&mut Forward<'_>, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    let names: Vec<String> = params.iter().map(|(k, _)| k.to_string()).collect();
    let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    inputs.extend(extra);
    let f = move |g: &mut Graph, vars: &[Var]| {
        let taken = std::mem::replace(g, Graph::new(DType::F64));
        let mut fx = Forward::with_graph(taken, &params);
        for (n, &v) in names.iter().zip(vars) {
            fx.bind(n.clone(), v);
        }
        let out = body(&mut fx, &vars[names.len()..]);
        *g = fx.into_graph();
        out
    };
    GradCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

pub fn case(name: &str, seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AD0_C4EC);
    let r = &mut rng;
    let (m, n, k) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
    let (h, w, c) = (dim(r, 2, 5), dim(r, 2, 5), dim(r, 1, 3));
    let case = match name {
        "add" => prim(
            "add",
            vec![rand_t(r, &[m, n]), rand_t(r, &[m, n])],
            |g, v| g.add(v[0], v[1]),
        ),
        "sub" => prim(
            "sub",
            vec![rand_t(r, &[m, n]), rand_t(r, &[m, n])],
            |g, v| g.sub(v[0], v[1]),
        ),
        "mul" => prim(
            "mul",
            vec![rand_t(r, &[m, n]), rand_t(r, &[m, n])],
            |g, v| g.mul(v[0], v[1]),
        ),
        "scale" => {
            let s = r.gen_range(-2.0..2.0);
            prim("scale", vec![rand_t(r, &[m, n])], move |g, v| {
                g.scale(v[0], s)
            })
        }
        "add_row" => prim(
            "add_row",
            vec![rand_t(r, &[m, n]), rand_t(r, &[n])],
            |g, v| g.add_row(v[0], v[1]),
        ),
        "mul_row" => prim(
            "mul_row",
            vec![rand_t(r, &[m, n]), rand_t(r, &[n])],
            |g, v| g.mul_row(v[0], v[1]),
        ),
        "matmul" => prim(
            "matmul",
            vec![rand_t(r, &[m, k]), rand_t(r, &[k, n])],
            |g, v| g.matmul(v[0], v[1]),
        ),
        "transpose" => prim("transpose", vec![rand_t(r, &[m, n])], |g, v| {
            g.transpose(v[0])
        }),
        "reshape" => prim("reshape", vec![rand_t(r, &[m, n])], move |g, v| {
            g.reshape(v[0], &[n * m])
        }),
        "conv2d" => {
            let (cout, ks, dil) = (dim(r, 1, 3), [1, 3][dim(r, 0, 1)], dim(r, 1, 2));
            let with_bias = r.gen_bool(0.5);
            let mut ins = vec![rand_t(r, &[h, w, c]), rand_t(r, &[ks, ks, c, cout])];
            if with_bias {
                ins.push(rand_t(r, &[cout]));
            }
            prim("conv2d", ins, move |g, v| {
                g.conv2d(v[0], v[1], v.get(2).copied(), dil)
            })
        }
        "conv2d_strided" => {
            let cout = dim(r, 1, 3);
            let (h, w) = (dim(r, 3, 7), dim(r, 3, 7));
            let ins = vec![
                rand_t(r, &[h, w, c]),
                rand_t(r, &[3, 3, c, cout]),
                rand_t(r, &[cout]),
            ];
            prim("conv2d_strided", ins, |g, v| {
                g.conv2d_strided(v[0], v[1], Some(v[2]), 2, 1)
            })
        }
        "depthwise_conv2d" => {
            let dil = dim(r, 1, 3);
            prim(
                "depthwise_conv2d",
                vec![rand_t(r, &[h, w, c]), rand_t(r, &[3, 3, c])],
                move |g, v| g.depthwise_conv2d(v[0], v[1], dil),
            )
        }
        "depthwise_separable_conv" => {
            let (cout, dil) = (dim(r, 1, 3), dim(r, 1, 3));
            let ins = vec![
                rand_t(r, &[h, w, c]),
                rand_t(r, &[3, 3, c]),
                rand_t(r, &[1, 1, c, cout]),
            ];
            prim("depthwise_separable_conv", ins, move |g, v| {
                g.depthwise_separable_conv(v[0], v[1], v[2], dil)
            })
        }
        "relu" => prim("relu", vec![rand_t(r, &[m, n])], |g, v| g.relu(v[0])),
        "sigmoid" => prim("sigmoid", vec![rand_t(r, &[m, n]).scaled(4.0)], |g, v| {
            g.sigmoid(v[0])
        }),
        "tanh" => prim("tanh", vec![rand_t(r, &[m, n]).scaled(3.0)], |g, v| {
            g.tanh(v[0])
        }),
        "softmax" => {
            let (s, len) = (r.gen_range(0.5..3.0), dim(r, 2, 8));
            prim(
                "softmax",
                vec![rand_t(r, &[len]).scaled(2.0)],
                move |g, v| g.softmax(v[0], s),
            )
        }
        "l2_normalize" => {
            let len = dim(r, 2, 6);
            prim("l2_normalize", vec![rand_t(r, &[len])], |g, v| {
                g.l2_normalize(v[0], 1e-12)
            })
        }
        "concat" => {
            let axis = dim(r, 0, 2);
            let mut s2 = [h, w, c];
            s2[axis] = dim(r, 1, 3);
            prim(
                "concat",
                vec![rand_t(r, &[h, w, c]), rand_t(r, &s2)],
                move |g, v| g.concat(&[v[0], v[1]], axis),
            )
        }
        "slice" => {
            let axis = dim(r, 0, 2);
            let size = [h, w, c][axis];
            let start = dim(r, 0, size - 1);
            let len = dim(r, 1, size - start);
            prim("slice", vec![rand_t(r, &[h, w, c])], move |g, v| {
                g.slice(v[0], axis, start, len)
            })
        }
        "global_avg_pool" => prim("global_avg_pool", vec![rand_t(r, &[h, w, c])], |g, v| {
            g.global_avg_pool(v[0])
        }),
        "elementwise_max" => {
            let ins = (0..3).map(|_| rand_t(r, &[m, n])).collect();
            prim("elementwise_max", ins, |g, v| g.elementwise_max(v))
        }
        "bilinear_upsample" => {
            let (oh, ow) = (dim(r, 1, 9), dim(r, 1, 9));
            prim(
                "bilinear_upsample",
                vec![rand_t(r, &[h, w, c])],
                move |g, v| g.bilinear_upsample(v[0], oh, ow),
            )
        }
        "gather_rows" => {
            let rows = dim(r, 2, 5);
            let ids: Vec<usize> = (0..dim(r, 1, 6)).map(|_| r.gen_range(0..rows)).collect();
            prim("gather_rows", vec![rand_t(r, &[rows, n])], move |g, v| {
                g.gather_rows(v[0], &ids)
            })
        }
        "sum" => prim("sum", vec![rand_t(r, &[m, n])], |g, v| g.sum(v[0])),
        "bce_with_logits" => {
            let gt = binary(r, h * w);
            prim(
                "bce_with_logits",
                vec![rand_t(r, &[h, w, 1]).scaled(4.0)],
                move |g, v| g.bce_with_logits(v[0], &gt, BCE_EPS),
            )
        }
        "lstm_phrase" | "phrase_max_pool" => {
            let cfg = PhraseConfig {
                vocab_size: dim(r, 3, 6),
                embed_dim: dim(r, 2, 3),
                c_l: dim(r, 2, 3),
            };
            let mut p = Params::new();
            init_phrase(&cfg, &mut p, r)?;
            jitter_biases(&mut p, r);
            let seqs: Vec<Vec<usize>> = (0..dim(r, 2, 3))
                .map(|_| {
                    (0..dim(r, 1, 3))
                        .map(|_| r.gen_range(0..cfg.vocab_size))
                        .collect()
                })
                .collect();
            if name == "lstm_phrase" {
                module("lstm_phrase", p, vec![], move |fx, _| {
                    encode_phrase(fx, &cfg, &seqs[0])
                })
            } else {
                let set = PhraseSet::new(seqs, cfg.vocab_size)?;
                module("phrase_max_pool", p, vec![], move |fx, _| {
                    phrase_encode(fx, &cfg, &set)
                })
            }
        }
        "visual_encoder" => {
            let cfg = VisualConfig {
                widths: [2, 2, 2, 2, 2],
                c_i: 2,
                feat_h: 3,
                feat_w: 3,
            };
            let mut p = Params::new();
            init_visual(&cfg, &mut p, r)?;
            jitter_biases(&mut p, r);
            let image = Tensor::from_fn(&[32, 32, 3], |_| r.gen_range(0.0..1.0));
            module("visual_encoder", p, vec![], move |fx, _| {
                let img = fx.g.constant(image.clone())?;
                let pyr = visual_encode(fx, &cfg, img)?;
                fx.g.concat(&pyr.levels, 2)
            })
        }
        "bilinear_fusion" => {
            let activation = if r.gen_bool(0.5) {
                Activation::Tanh
            } else {
                Activation::Identity
            };
            let cfg = FusionConfig {
                c_i: dim(r, 1, 3),
                c_l: dim(r, 1, 3),
                c_f: dim(r, 1, 3),
                rank: dim(r, 1, 3),
                activation,
            };
            let mut p = Params::new();
            init_bilinear(&cfg, "fuse", &mut p, r)?;
            jitter_biases(&mut p, r);
            let extra = vec![rand_t(r, &[h, w, cfg.c_i]), rand_t(r, &[cfg.c_l])];
            module("bilinear_fusion", p, extra, move |fx, v| {
                bilinear_fuse(fx, &cfg, "fuse", v[0], v[1])
            })
        }
        "vlm" => {
            let cfg = CimConfig {
                c_l: dim(r, 2, 3),
                c_v: dim(r, 2, 4),
                c_attn: dim(r, 1, 3),
                rounds: 1,
                cycles: 1,
            };
            let mut p = Params::new();
            init_vlm(&cfg, "vlm", &mut p, r)?;
            jitter_biases(&mut p, r);
            let extra = vec![rand_t(r, &[cfg.c_l]), rand_t(r, &[h, w, cfg.c_v])];
            module("vlm", p, extra, move |fx, v| {
                Ok(vlm(fx, &cfg, "vlm", v[0], v[1])?.lang)
            })
        }
        "lvm" => {
            let cfg = CimConfig {
                c_l: dim(r, 1, 3),
                c_v: dim(r, 1, 3),
                c_attn: 1,
                rounds: 1,
                cycles: 1,
            };
            let mut p = Params::new();
            for src in [4, 5] {
                init_gate(&cfg, &format!("gate{src}"), &mut p, r)?;
            }
            jitter_biases(&mut p, r);
            let mut extra: Vec<Tensor> = (0..3).map(|_| rand_t(r, &[h, w, cfg.c_v])).collect();
            extra.push(rand_t(r, &[cfg.c_l]));
            module("lvm", p, extra, move |fx, v| {
                lvm(
                    fx,
                    |s| format!("gate{s}"),
                    3,
                    v[3],
                    v[0],
                    [(4, v[1]), (5, v[2])],
                )
            })
        }
        "cim_forward" => {
            let cfg = CimConfig {
                c_l: 2,
                c_v: 3,
                c_attn: 2,
                rounds: 2,
                cycles: dim(r, 1, 2),
            };
            let mut p = Params::new();
            init_cim(&cfg, &mut p, r)?;
            jitter_biases(&mut p, r);
            let (h, w) = (dim(r, 2, 3), dim(r, 2, 3));
            let mut extra: Vec<Tensor> = (0..3).map(|_| rand_t(r, &[h, w, cfg.c_v])).collect();
            extra.push(rand_t(r, &[cfg.c_l]));
            module("cim_forward", p, extra, move |fx, v| {
                let s = cim_forward(fx, &cfg, v[3], [v[0], v[1], v[2]])?;
                let maps = fx.g.concat(&s.fused, 2)?;
                let flat = fx.g.reshape(maps, &[h * w * 3 * cfg.c_v])?;
                let langs = fx.g.concat(&s.lang, 0)?;
                fx.g.concat(&[flat, langs], 0)
            })
        }
        "aspp_head" => {
            let cfg = HeadConfig {
                c_v: dim(r, 1, 2),
                c_a: dim(r, 1, 3),
            };
            let mut p = Params::new();
            init_head(&cfg, &mut p, r)?;
            jitter_biases(&mut p, r);
            let (oh, ow) = (dim(r, h, 2 * h), dim(r, w, 2 * w));
            module(
                "aspp_head",
                p,
                vec![rand_t(r, &[h, w, 3 * cfg.c_v])],
                move |fx, v| {
                    let a = aspp(fx, &cfg, v[0])?;
                    Ok(predict_mask(fx, a, oh, ow)?.probs)
                },
            )
        }
        "vlm_lvm_aspp_bce" => composed(r)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown gradient case {other:?}; known cases: {}",
                CASES.join(", ")
            )))
        }
    };
    Ok(case)
}

/// One synchronous interaction round feeding the mask head and the BCE
/// loss, checked end to end.
fn composed(r: &mut ChaCha8Rng) -> Result<GradCase> {
    let cim = CimConfig {
        c_l: 3,
        c_v: 4,
        c_attn: 4,
        rounds: 1,
        cycles: 1,
    };
    let head = HeadConfig { c_v: 4, c_a: 3 };
    let mut p = Params::new();
    init_cim(&cim, &mut p, r)?;
    init_head(&head, &mut p, r)?;
    jitter_biases(&mut p, r);
    let (h, w) = (3, 3);
    let (oh, ow) = (5, 5);
    let gt = binary(r, oh * ow);
    let mut extra: Vec<Tensor> = (0..3).map(|_| rand_t(r, &[h, w, 4])).collect();
    extra.push(rand_t(r, &[3]));
    Ok(module("vlm_lvm_aspp_bce", p, extra, move |fx, v| {
        let state = CimState {
            lang: [v[3]; 3],
            fused: [v[0], v[1], v[2]],
            round: 0,
        };
        let s = cim_round(fx, &cim, 0, 0, state)?;
        let cat = concat_levels(fx, &s.fused)?;
        let a = aspp(fx, &head, cat)?;
        let pred = predict_mask(fx, a, oh, ow)?;
        bce_loss(fx, &pred, &gt)
    }))
}
