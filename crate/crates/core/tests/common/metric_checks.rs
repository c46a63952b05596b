use super::oracle;
use cbce::metrics::{e_measure, f_measure, iou, mae, pearson_cc, DEFAULT_BETA_SQ};
use cbce::params::Params;
use cbce::seghead::bce_loss;
use cbce::tensor::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

pub fn random_pairs_match_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cc_checked = 0;
    for k in 0..200 {
        let pred = super::random_map(&mut rng, 64);
        let density = rng.gen_range(0.05..0.6);
        let mut gt = super::random_binary(&mut rng, 64, density);
        if k % 50 == 7 {
            gt.iter_mut().for_each(|v| *v = 0.0);
        }
        let t = if k % 3 == 0 {
            0.5
        } else {
            rng.gen_range(0.2..0.8)
        };
        let b2 = if k % 2 == 0 {
            DEFAULT_BETA_SQ
        } else {
            rng.gen_range(0.1..2.0)
        };

        let pairs = [
            (
                "iou",
                iou(&pred, &gt, t).unwrap(),
                oracle::iou(&pred, &gt, t),
            ),
            (
                "fbeta",
                f_measure(&pred, &gt, t, b2).unwrap(),
                oracle::fbeta(&pred, &gt, t, b2),
            ),
            (
                "ephi",
                e_measure(&pred, &gt, t).unwrap(),
                oracle::ephi(&pred, &gt, t),
            ),
            ("mae", mae(&pred, &gt).unwrap(), oracle::mae(&pred, &gt)),
        ];
        for (name, got, want) in pairs {
            assert!(
                (got - want).abs() <= TOL,
                "pair {k}: {name} {got} vs {want}"
            );
        }
        if gt.iter().any(|&v| v > 0.5) {
            let got = pearson_cc(&pred, &gt).unwrap();
            let want = oracle::cc(&pred, &gt);
            assert!((got - want).abs() <= TOL, "pair {k}: cc {got} vs {want}");
            cc_checked += 1;
        } else {
            assert!(pearson_cc(&pred, &gt).is_err());
        }
    }
    assert!(cc_checked >= 190);
}

pub fn identity_anchors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt = super::random_binary(&mut rng, 64, 0.3);
    assert_eq!(iou(&gt, &gt, 0.5).unwrap(), 1.0);
    assert_eq!(f_measure(&gt, &gt, 0.5, DEFAULT_BETA_SQ).unwrap(), 1.0);
    assert!((e_measure(&gt, &gt, 0.5).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson_cc(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
    let empty = vec![0.0; 64];
    assert_eq!(iou(&empty, &empty, 0.5).unwrap(), 1.0);
    assert_eq!(
        f_measure(&empty, &empty, 0.5, DEFAULT_BETA_SQ).unwrap(),
        1.0
    );
}

pub fn equal_precision_and_recall_give_that_value() {
    // 4 true positives, 1 false positive, 1 false negative: P = R = 0.8.
    let mut pred = vec![0.0; 20];
    let mut gt = vec![0.0; 20];
    pred[..5].iter_mut().for_each(|v| *v = 0.9);
    gt[..4].iter_mut().for_each(|v| *v = 1.0);
    gt[10] = 1.0;
    for b2 in [0.1, 0.3, 1.0, 4.0] {
        assert!((f_measure(&pred, &gt, 0.5, b2).unwrap() - 0.8).abs() < 1e-12);
    }
    // P = 0.5, R = 1 at beta^2 = 0.3.
    let pred = [1.0, 1.0, 1.0, 1.0];
    let gt = [1.0, 1.0, 0.0, 0.0];
    let want = 1.3 * 0.5 / (0.15 + 1.0);
    assert!((f_measure(&pred, &gt, 0.5, 0.3).unwrap() - want).abs() < 1e-12);
}

pub fn complement_has_correlation_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gt = super::random_binary(&mut rng, 64, 0.4);
    let comp: Vec<f64> = gt.iter().map(|v| 1.0 - v).collect();
    assert!((pearson_cc(&comp, &gt).unwrap() + 1.0).abs() < 1e-12);
}

pub fn half_probability_bce_is_hw_ln2() {
    let (h, w) = (7, 9);
    let params = Params::new();
    let mut fx = cbce::params::Forward::new(&params, DType::F64);
    let logits = fx.g.constant(Tensor::zeros(&[h, w, 1])).unwrap();
    let probs = fx.g.sigmoid(logits).unwrap();
    let pred = cbce::seghead::MaskPrediction { logits, probs };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = super::random_binary(&mut rng, h * w, 0.5);
    let loss = bce_loss(&mut fx, &pred, &gt).unwrap();
    let want = (h * w) as f64 * std::f64::consts::LN_2;
    assert!((fx.g.data(loss)[0] - want).abs() < 1e-9);
    assert!((oracle::bce(&vec![0.5; h * w], &gt) - want).abs() < 1e-9);
}

pub fn bce_matches_naive_form_away_from_the_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<f64> = (0..48).map(|_| rng.gen_range(-6.0..6.0)).collect();
    let gt = super::random_binary(&mut rng, 48, 0.3);
    let params = Params::new();
    let mut fx = cbce::params::Forward::new(&params, DType::F64);
    let logits =
        fx.g.constant(Tensor::new(&[6, 8, 1], z.clone()).unwrap())
            .unwrap();
    let probs = fx.g.sigmoid(logits).unwrap();
    let pred = cbce::seghead::MaskPrediction { logits, probs };
    let loss = bce_loss(&mut fx, &pred, &gt).unwrap();
    let p: Vec<f64> = z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    assert!((fx.g.data(loss)[0] - oracle::bce(&p, &gt)).abs() < 1e-9);
}
