//! Central-difference gradient checking.

use super::{DType, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Elements whose difference stencil straddles a kink (ReLU at zero, max
    /// ties, clamp edges). Detected from the numeric differences alone: the
    /// one-sided slopes disagree, or halving the step changes the central
    /// difference at first order.
    pub skipped_nonsmooth: usize,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel_err={:.3e} tol={:.1e} checked={} skipped={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tol,
            self.checked,
            self.skipped_nonsmooth
        )?;
        if let Some((i, e, a, n)) = self.worst {
            write!(f, " worst=input{i}[{e}] analytic={a:.6e} numeric={n:.6e}")?;
        }
        Ok(())
    }
}

fn projection_weight(i: usize) -> f64 {
    0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract()
}

/// Reduce `out` to a scalar with fixed, non-uniform weights so that every
/// output element contributes a distinct amount.
fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    let n = g.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, projection_weight))?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(DType::F64);
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    Ok(g.data(loss)[0])
}

/// Compare the analytic gradient of `f` against central differences with
/// step `h`. Non-scalar outputs are reduced with a fixed weighted sum.
///
/// Fails with [`Error::GradCheck`] if `f` is not deterministic.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let f0 = evaluate(&f, inputs)?;
    let again = evaluate(&f, inputs)?;
    if f0.to_bits() != again.to_bits() {
        return Err(Error::GradCheck(format!(
            "function is not deterministic: {f0:e} then {again:e}"
        )));
    }

    let mut g = Graph::new(DType::F64);
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_nonsmooth: 0,
        tol,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for (ei, &x) in input.data().iter().enumerate() {
            probe[ti].data_mut()[ei] = x + h;
            let fp = evaluate(&f, &probe)?;
            probe[ti].data_mut()[ei] = x - h;
            let fm = evaluate(&f, &probe)?;
            probe[ti].data_mut()[ei] = x;

            let numeric = (fp - fm) / (2.0 * h);
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            let spread = (fwd - bwd).abs();
            if spread > 1e-3 && spread > 0.05 * fwd.abs().max(bwd.abs()) {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let a = analytic[ti][ei];
            let scale = |n: f64| a.abs().max(n.abs()).max(MAGNITUDE_FLOOR);
            let rel = (a - numeric).abs() / scale(numeric);
            if rel > tol {
                // A kink strictly inside the stencil shows up as a first-order
                // change when the step is halved; smooth functions only move by
                // O(h²). The decision uses numeric values alone.
                probe[ti].data_mut()[ei] = x + h / 2.0;
                let fp2 = evaluate(&f, &probe)?;
                probe[ti].data_mut()[ei] = x - h / 2.0;
                let fm2 = evaluate(&f, &probe)?;
                probe[ti].data_mut()[ei] = x;
                let half = (fp2 - fm2) / h;
                if (half - numeric).abs() > 0.1 * tol * scale(numeric) {
                    report.skipped_nonsmooth += 1;
                    continue;
                }
            }
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
