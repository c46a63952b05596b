//! Central-difference gradient checks: the built-in suite plus a custom graph.
//!
//! cargo run --example gradcheck [-- OP...]

use cbce::gradsuite::{check, CASES, GRAD_H, GRAD_TOL};
use cbce::tensor::{grad_check, Graph, Tensor, Var};

fn main() -> cbce::Result<()> {
    let wanted: Vec<String> = std::env::args().skip(1).collect();
    let ops: Vec<&str> = if wanted.is_empty() {
        CASES.to_vec()
    } else {
        wanted.iter().map(String::as_str).collect()
    };
    println!("h = {GRAD_H:e}, relative tolerance = {GRAD_TOL:e}");
    for op in ops {
        for seed in 0..3 {
            println!("{op:>18} seed {seed}: {}", check(op, seed)?);
        }
    }

    // Any closure over graph ops can be checked the same way:
    // here f(a, b) = sum(tanh(a @ b) * a @ b).
    let a = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
    let b = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.61).cos());
    let report = grad_check(
        |g: &mut Graph, v: &[Var]| {
            let ab = g.matmul(v[0], v[1])?;
            let t = g.tanh(ab)?;
            let p = g.mul(t, ab)?;
            g.sum(p)
        },
        &[a, b],
        GRAD_H,
        GRAD_TOL,
    )?;
    println!("{:>18}        : {report}", "custom");
    Ok(())
}
