use std::time::{Duration, Instant};

use cbce::gradsuite::{check, CASES, GRAD_H, GRAD_TOL};

const SEEDS: u64 = 20;

#[test]
fn every_case_passes_for_twenty_seeds() {
    assert_eq!((GRAD_H, GRAD_TOL), (1e-4, 1e-4));
    let start = Instant::now();
    let mut failures = Vec::new();
    for name in CASES {
        for seed in 0..SEEDS {
            let r = check(name, seed).unwrap();
            if !r.passed || r.checked == 0 || r.skipped_nonsmooth * 10 > r.checked {
                failures.push(format!("{name} seed {seed}: {r}"));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    assert!(
        start.elapsed() < Duration::from_secs(120),
        "took {:?}",
        start.elapsed()
    );
}

#[test]
fn composed_micro_graph_is_in_the_suite() {
    for name in [
        "vlm",
        "lvm",
        "cim_forward",
        "aspp_head",
        "vlm_lvm_aspp_bce",
        "bce_with_logits",
    ] {
        assert!(CASES.contains(&name), "{name}");
    }
}
