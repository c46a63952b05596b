//! Helpers shared by the integration tests: naive reference
//! implementations and small fixtures.
#![allow(dead_code)]

pub mod arch_checks;
pub mod metric_checks;
pub mod persistence_checks;

use std::path::{Path, PathBuf};

use cbce::data::{layout, synth_generate, Dataset, PhraseBank, SynthConfig};
use cbce::model::ModelConfig;
use cbce::params::Params;
use cbce::train::{ExperimentConfig, TrainConfig};
use rand::Rng;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy_config() -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs/toy.json")).expect("configs/toy.json")
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        backbone_widths: [4, 6, 8, 8, 8],
        feat_h: 4,
        feat_w: 4,
        c_i: 8,
        embed_dim: 6,
        c_l: 8,
        c_f: 6,
        rank: 4,
        c_a: 8,
        input_size: Some([40, 40]),
        ..Default::default()
    }
}

/// A small synthetic dataset written under `dir`, with matching train config.
pub fn tiny_experiment(dir: &Path, samples: usize) -> (Dataset, TrainConfig) {
    let synth = SynthConfig {
        height: 48,
        width: 48,
        samples,
        min_radius: 6.0,
        max_radius: 9.0,
        max_distractors: 1,
        seed: 3,
        ..Default::default()
    };
    synth_generate(&synth, &PhraseBank::toy(), dir).expect("synth");
    let data = Dataset::open(dir, layout::TRAIN).expect("dataset");
    let cfg = TrainConfig {
        epochs: 2,
        base_lr: 2e-3,
        model: tiny_model(),
        ..Default::default()
    };
    (data, cfg)
}

pub fn random_map<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

pub fn random_binary<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_bool(p) as u8 as f64).collect()
}

/// Direct-summation metric definitions, written independently of the
/// library's confusion-matrix code.
pub mod oracle {
    fn bin(v: &[f64], t: f64) -> Vec<bool> {
        v.iter().map(|&x| x >= t).collect()
    }

    pub fn iou(pred: &[f64], gt: &[f64], t: f64) -> f64 {
        let p = bin(pred, t);
        let g = bin(gt, 0.5);
        let inter = (0..p.len()).filter(|&i| p[i] && g[i]).count();
        let union = (0..p.len()).filter(|&i| p[i] || g[i]).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn fbeta(pred: &[f64], gt: &[f64], t: f64, b2: f64) -> f64 {
        let p = bin(pred, t);
        let g = bin(gt, 0.5);
        let predicted = p.iter().filter(|&&x| x).count() as f64;
        let actual = g.iter().filter(|&&x| x).count() as f64;
        let tp = p.iter().zip(&g).filter(|(a, b)| **a && **b).count() as f64;
        if predicted == 0.0 && actual == 0.0 {
            return 1.0;
        }
        if tp == 0.0 {
            return 0.0;
        }
        let precision = tp / predicted;
        let recall = tp / actual;
        (1.0 + b2) * precision * recall / (b2 * precision + recall)
    }

    pub fn ephi(pred: &[f64], gt: &[f64], t: f64) -> f64 {
        let n = pred.len() as f64;
        let f: Vec<f64> = bin(pred, t).into_iter().map(|b| b as u8 as f64).collect();
        let g: Vec<f64> = bin(gt, 0.5).into_iter().map(|b| b as u8 as f64).collect();
        let g_fg = g.iter().sum::<f64>();
        if g_fg == 0.0 {
            return f.iter().map(|x| 1.0 - x).sum::<f64>() / n;
        }
        if g_fg == n {
            return f.iter().sum::<f64>() / n;
        }
        let mean_f = f.iter().sum::<f64>() / n;
        let mean_g = g_fg / n;
        let mut total = 0.0;
        for i in 0..f.len() {
            let df = f[i] - mean_f;
            let dg = g[i] - mean_g;
            let align = 2.0 * dg * df / (dg * dg + df * df);
            total += (align + 1.0) * (align + 1.0) / 4.0;
        }
        total / n
    }

    pub fn cc(pred: &[f64], gt: &[f64]) -> f64 {
        let n = pred.len() as f64;
        let mp = pred.iter().sum::<f64>() / n;
        let mg = gt.iter().sum::<f64>() / n;
        let cov = pred
            .iter()
            .zip(gt)
            .map(|(p, g)| (p - mp) * (g - mg))
            .sum::<f64>()
            / n;
        let sp = (pred.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / n).sqrt();
        let sg = (gt.iter().map(|g| (g - mg).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sp * sg)
    }

    pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..pred.len() {
            s += (pred[i] - gt[i]).abs();
        }
        s / pred.len() as f64
    }

    /// Numerically naive BCE on probabilities.
    pub fn bce(p: &[f64], gt: &[f64]) -> f64 {
        p.iter()
            .zip(gt)
            .map(|(&p, &g)| -(g * p.ln() + (1.0 - g) * (1.0 - p).ln()))
            .sum()
    }
}

/// Plain-loop vision-to-language attention on an `[h, w, c_v]` map stored
/// row-major, using the parameters under `prefix`.
pub struct VlmReference {
    pub scores: Vec<f64>,
    pub attention: Vec<f64>,
    pub attended: Vec<f64>,
    pub lang: Vec<f64>,
}

pub fn vlm_reference(
    params: &Params,
    prefix: &str,
    lang: &[f64],
    fused: &[f64],
    c_v: usize,
) -> VlmReference {
    let get = |n: &str| {
        params
            .get(&format!("{prefix}.{n}"))
            .unwrap()
            .data()
            .to_vec()
    };
    let (tw, tb) = (get("theta.w"), get("theta.b"));
    let (pw, pb) = (get("phi.w"), get("phi.b"));
    let (ow, ob) = (get("out.w"), get("out.b"));
    let c_l = lang.len();
    let c = tb.len();
    let hw = fused.len() / c_v;

    let q: Vec<f64> = (0..c)
        .map(|j| tb[j] + (0..c_l).map(|i| lang[i] * tw[i * c + j]).sum::<f64>())
        .collect();
    let mut scores = vec![0.0; hw];
    for (p, s) in scores.iter_mut().enumerate() {
        for j in 0..c {
            let k = pb[j]
                + (0..c_v)
                    .map(|i| fused[p * c_v + i] * pw[i * c + j])
                    .sum::<f64>();
            *s += k * q[j];
        }
    }
    let scale = (c as f64).sqrt();
    let exps: Vec<f64> = scores.iter().map(|s| (s / scale).exp()).collect();
    let z: f64 = exps.iter().sum();
    let attention: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let attended: Vec<f64> = (0..c_v)
        .map(|i| (0..hw).map(|p| attention[p] * fused[p * c_v + i]).sum())
        .collect();
    let cat: Vec<f64> = lang.iter().chain(&attended).copied().collect();
    let y: Vec<f64> = (0..c_l)
        .map(|j| {
            ob[j]
                + (0..cat.len())
                    .map(|i| cat[i] * ow[i * c_l + j])
                    .sum::<f64>()
        })
        .collect();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lang = y.iter().map(|v| v / norm).collect();
    VlmReference {
        scores,
        attention,
        attended,
        lang,
    }
}
