use cbce::cim::{
    cim_forward, init_cim, init_gate, init_vlm, lvm, lvm_prefix, vlm, vlm_prefix, CimConfig,
};
use cbce::encoders::LEVELS;
use cbce::params::{Forward, Params};
use cbce::tensor::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn randomize(params: &mut Params, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
}

pub fn vlm_is_unit_norm_and_attention_is_a_distribution() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c_l, c_v) = (rng.gen_range(2..7), rng.gen_range(2..9));
        let cfg = CimConfig {
            c_l,
            c_v,
            c_attn: rng.gen_range(1..6),
            rounds: 2,
            cycles: 1,
        };
        let mut p = Params::new();
        init_vlm(&cfg, "v", &mut p, &mut rng).unwrap();
        randomize(&mut p, &mut rng);
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let scale = if seed % 5 == 0 { 30.0 } else { 2.0 };
        let mut fx = Forward::new(&p, DType::F64);
        let f =
            fx.g.constant(rand_t(&mut rng, &[h, w, c_v], scale))
                .unwrap();
        let l = fx.g.constant(rand_t(&mut rng, &[c_l], scale)).unwrap();
        let out = vlm(&mut fx, &cfg, "v", l, f).unwrap();
        let norm: f64 =
            fx.g.data(out.lang)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "seed {seed}: norm {norm}");
        let a = fx.g.data(out.attention);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

pub fn vlm_matches_brute_force_attention() {
    let cfg = CimConfig {
        c_l: 4,
        c_v: 3,
        c_attn: 3,
        rounds: 2,
        cycles: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut p = Params::new();
    init_vlm(&cfg, "v", &mut p, &mut rng).unwrap();
    randomize(&mut p, &mut rng);
    let fused = rand_t(&mut rng, &[2, 2, 3], 1.0);
    let lang = rand_t(&mut rng, &[4], 1.0);
    let want = super::vlm_reference(&p, "v", lang.data(), fused.data(), 3);

    let mut fx = Forward::new(&p, DType::F64);
    let f = fx.g.constant(fused).unwrap();
    let l = fx.g.constant(lang).unwrap();
    let out = vlm(&mut fx, &cfg, "v", l, f).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    assert!(close(fx.g.data(out.scores), &want.scores));
    assert!(close(fx.g.data(out.attention), &want.attention));
    assert!(close(fx.g.data(out.attended), &want.attended));
    assert!(close(fx.g.data(out.lang), &want.lang));
}

pub fn dominant_score_selects_one_position() {
    let cfg = CimConfig {
        c_l: 2,
        c_v: 2,
        c_attn: 1,
        rounds: 2,
        cycles: 1,
    };
    let mut p = Params::new();
    init_vlm(&cfg, "v", &mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // theta = phi = identity on the first channel.
    *p.get_mut("v.theta.w").unwrap() = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
    *p.get_mut("v.phi.w").unwrap() = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
    let fused = Tensor::new(&[2, 2, 2], vec![0.1, 5.0, 40.0, -3.0, 0.2, 1.0, -0.3, 2.0]).unwrap();
    let mut fx = Forward::new(&p, DType::F64);
    let f = fx.g.constant(fused).unwrap();
    let l =
        fx.g.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap())
            .unwrap();
    let out = vlm(&mut fx, &cfg, "v", l, f).unwrap();
    let ac = fx.g.data(out.attended);
    assert!(
        (ac[0] - 40.0).abs() < 1e-3 && (ac[1] + 3.0).abs() < 1e-3,
        "{ac:?}"
    );
}

fn gate_setup(seed: u64) -> (CimConfig, Params, Tensor, [Tensor; 3]) {
    let cfg = CimConfig {
        c_l: 3,
        c_v: 4,
        c_attn: 4,
        rounds: 2,
        cycles: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    init_gate(&cfg, "g4", &mut p, &mut rng).unwrap();
    init_gate(&cfg, "g5", &mut p, &mut rng).unwrap();
    let lang = rand_t(&mut rng, &[3], 1.0);
    let maps = [0, 1, 2].map(|_| rand_t(&mut rng, &[3, 2, 4], 2.0));
    (cfg, p, lang, maps)
}

fn run_lvm(p: &Params, lang: &Tensor, maps: &[Tensor; 3]) -> Vec<f64> {
    let mut fx = Forward::new(p, DType::F64);
    let l = fx.g.constant(lang.clone()).unwrap();
    let v: Vec<Var> = maps
        .iter()
        .map(|m| fx.g.constant(m.clone()).unwrap())
        .collect();
    let out = lvm(
        &mut fx,
        |s| format!("g{s}"),
        3,
        l,
        v[0],
        [(4, v[1]), (5, v[2])],
    )
    .unwrap();
    fx.g.data(out).to_vec()
}

pub fn closed_gates_are_an_exact_identity() {
    for seed in 0..10 {
        let (_, mut p, lang, maps) = gate_setup(seed);
        for s in ["g4", "g5"] {
            p.get_mut(&format!("{s}.w"))
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = -1e4);
            p.get_mut(&format!("{s}.b"))
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = -1e4);
        }
        let lang = Tensor::new(&[3], lang.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
        assert_eq!(run_lvm(&p, &lang, &maps), maps[0].data());
    }
}

pub fn half_open_gates_average_the_other_levels() {
    let (_, mut p, lang, maps) = gate_setup(3);
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let got = run_lvm(&p, &lang, &maps);
    for (i, g) in got.iter().enumerate() {
        let want = maps[0].data()[i] + 0.5 * (maps[1].data()[i] + maps[2].data()[i]);
        assert!((g - want).abs() < 1e-12);
    }
}

/// The cyclic schedule written out by hand for rounds = 2: VLM on each level, then
/// LVM on each level from the previous round's maps, twice.
pub fn two_rounds_equal_the_hand_unrolled_schedule() {
    let cfg = CimConfig {
        c_l: 3,
        c_v: 4,
        c_attn: 2,
        rounds: 2,
        cycles: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut p = Params::new();
    init_cim(&cfg, &mut p, &mut rng).unwrap();
    randomize(&mut p, &mut rng);
    let l0 = rand_t(&mut rng, &[3], 1.0);
    let maps = [0, 1, 2].map(|_| rand_t(&mut rng, &[2, 3, 4], 1.0));

    let mut fx = Forward::new(&p, DType::F64);
    let l = fx.g.constant(l0.clone()).unwrap();
    let f: Vec<Var> = maps
        .iter()
        .map(|m| fx.g.constant(m.clone()).unwrap())
        .collect();
    let st = cim_forward(&mut fx, &cfg, l, [f[0], f[1], f[2]]).unwrap();
    let auto_lang: Vec<Vec<f64>> = st.lang.iter().map(|v| fx.g.data(*v).to_vec()).collect();
    let auto_fused: Vec<Vec<f64>> = st.fused.iter().map(|v| fx.g.data(*v).to_vec()).collect();

    let mut hx = Forward::new(&p, DType::F64);
    let l = hx.g.constant(l0).unwrap();
    let f0: Vec<Var> = maps
        .iter()
        .map(|m| hx.g.constant(m.clone()).unwrap())
        .collect();
    let [i3, i4, i5] = LEVELS;
    // Round 1.
    let l1_3 = vlm(&mut hx, &cfg, &vlm_prefix(0, 0, i3), l, f0[0])
        .unwrap()
        .lang;
    let l1_4 = vlm(&mut hx, &cfg, &vlm_prefix(0, 0, i4), l, f0[1])
        .unwrap()
        .lang;
    let l1_5 = vlm(&mut hx, &cfg, &vlm_prefix(0, 0, i5), l, f0[2])
        .unwrap()
        .lang;
    let f1_3 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 0, i3, s),
        i3,
        l1_3,
        f0[0],
        [(i4, f0[1]), (i5, f0[2])],
    )
    .unwrap();
    let f1_4 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 0, i4, s),
        i4,
        l1_4,
        f0[1],
        [(i3, f0[0]), (i5, f0[2])],
    )
    .unwrap();
    let f1_5 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 0, i5, s),
        i5,
        l1_5,
        f0[2],
        [(i3, f0[0]), (i4, f0[1])],
    )
    .unwrap();
    // Round 2.
    let l2_3 = vlm(&mut hx, &cfg, &vlm_prefix(0, 1, i3), l1_3, f1_3)
        .unwrap()
        .lang;
    let l2_4 = vlm(&mut hx, &cfg, &vlm_prefix(0, 1, i4), l1_4, f1_4)
        .unwrap()
        .lang;
    let l2_5 = vlm(&mut hx, &cfg, &vlm_prefix(0, 1, i5), l1_5, f1_5)
        .unwrap()
        .lang;
    let f2_3 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 1, i3, s),
        i3,
        l2_3,
        f1_3,
        [(i4, f1_4), (i5, f1_5)],
    )
    .unwrap();
    let f2_4 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 1, i4, s),
        i4,
        l2_4,
        f1_4,
        [(i3, f1_3), (i5, f1_5)],
    )
    .unwrap();
    let f2_5 = lvm(
        &mut hx,
        |s| lvm_prefix(0, 1, i5, s),
        i5,
        l2_5,
        f1_5,
        [(i3, f1_3), (i4, f1_4)],
    )
    .unwrap();

    for (got, want) in auto_lang.iter().zip([l2_3, l2_4, l2_5]) {
        assert_eq!(got.as_slice(), hx.g.data(want));
    }
    for (got, want) in auto_fused.iter().zip([f2_3, f2_4, f2_5]) {
        assert_eq!(got.as_slice(), hx.g.data(want));
    }
}

pub fn lvm_update_ignores_same_round_outputs_of_other_levels() {
    // Perturbing the round-1 output of level 4 after the fact must not change
    // the round-1 output of level 3, which only reads round-0 maps.
    let cfg = CimConfig {
        c_l: 3,
        c_v: 4,
        c_attn: 4,
        rounds: 1,
        cycles: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = Params::new();
    init_cim(&cfg, &mut p, &mut rng).unwrap();
    let l0 = rand_t(&mut rng, &[3], 1.0);
    let maps = [0, 1, 2].map(|_| rand_t(&mut rng, &[2, 2, 4], 1.0));
    let mut fx = Forward::new(&p, DType::F64);
    let l = fx.g.param(l0).unwrap();
    let f: Vec<Var> = maps
        .iter()
        .map(|m| fx.g.param(m.clone()).unwrap())
        .collect();
    let st = cim_forward(&mut fx, &cfg, l, [f[0], f[1], f[2]]).unwrap();
    // Backprop from F^3_1 only: the gradient must reach all three round-0
    // maps but the graph contains no path from F^4_1 to it.
    let s = fx.g.sum(st.fused[0]).unwrap();
    fx.g.backward(s).unwrap();
    assert!(f
        .iter()
        .all(|v| fx.g.grad(*v).is_some_and(|g| g.iter().any(|x| *x != 0.0))));
    assert!(fx
        .g
        .grad(st.fused[1])
        .is_none_or(|g| g.iter().all(|x| *x == 0.0)));
}
