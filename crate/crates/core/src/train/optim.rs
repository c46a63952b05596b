//! Adam with decoupled weight decay and the polynomial learning-rate decay.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::DType;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.to_string(), vec![0.0; t.numel()]))
                .collect()
        };
        AdamState {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// `lr` at `step`: `base_lr * (1 - step / max_steps)^power`.
pub fn poly_lr(step: usize, max_steps: usize, base_lr: f64, power: f64) -> Result<f64> {
    if step > max_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past max_steps {max_steps}"
        )));
    }
    if max_steps == 0 {
        return Ok(base_lr);
    }
    Ok(base_lr * (1.0 - step as f64 / max_steps as f64).powf(power))
}

/// One Adam update. Parameters without a gradient entry get only the weight
/// decay term `lr * wd * p`, which is applied outside the adaptive
/// normalization. In `F32` mode the updated values are rounded to single
/// precision.
pub fn adam_step(
    params: &mut Params,
    grads: &IndexMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    dtype: DType,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let data = p.data_mut();
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no optimizer state for {name}")))?;
        let v = state.v.get_mut(name).expect("m and v share keys");
        if m.len() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer state size mismatch for {name}"
            )));
        }
        let g = grads.get(name);
        if let Some(g) = g {
            if g.len() != data.len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient size mismatch for {name}"
                )));
            }
        }
        for i in 0..data.len() {
            let mut step = weight_decay * data[i];
            if let Some(g) = g {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                step += mh / (vh.sqrt() + ADAM_EPS);
            }
            data[i] = dtype.round(data[i] - lr * step);
        }
    }
    Ok(())
}
