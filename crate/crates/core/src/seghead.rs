//! Multi-level concatenation, atrous spatial pyramid pooling, mask
//! prediction and the BCE training loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Forward, Params};
use crate::tensor::Var;

pub const DILATIONS: [usize; 4] = [1, 3, 7, 11];
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Width `C_v` of each fused level; the ASPP input has `3 * c_v` channels.
    pub c_v: usize,
    pub c_a: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MaskPrediction {
    /// `[H_img, W_img, 1]`, pre-sigmoid.
    pub logits: Var,
    /// `sigmoid(logits)`.
    pub probs: Var,
}

pub fn init_head<R: Rng>(cfg: &HeadConfig, params: &mut Params, rng: &mut R) -> Result<()> {
    let cin = 3 * cfg.c_v;
    let ca = cfg.c_a;
    let relu_gain = 2f64.sqrt();
    params.init_fan_in("head.aspp.pool.w", &[1, 1, cin, ca], cin, relu_gain, rng)?;
    params.init_const("head.aspp.pool.b", &[ca], 0.0)?;
    for d in DILATIONS {
        let name = format!("head.aspp.d{d}");
        params.init_fan_in(format!("{name}.dw"), &[3, 3, cin], 9, 1.0, rng)?;
        params.init_fan_in(format!("{name}.pw"), &[1, 1, cin, ca], cin, relu_gain, rng)?;
        params.init_const(format!("{name}.b"), &[ca], 0.0)?;
    }
    params.init_fan_in(
        "head.aspp.fuse.w",
        &[1, 1, 5 * ca, ca],
        5 * ca,
        relu_gain,
        rng,
    )?;
    params.init_const("head.aspp.fuse.b", &[ca], 0.0)?;
    params.init_fan_in("head.mask.w", &[1, 1, ca, 1], ca, 1.0, rng)?;
    params.init_const("head.mask.b", &[1], 0.0)
}

/// `concat(F^3, F^4, F^5)` along channels, in level order.
pub fn concat_levels(fx: &mut Forward<'_>, fused: &[Var; 3]) -> Result<Var> {
    let s0 = fx.g.shape(fused[0]).to_vec();
    for &f in &fused[1..] {
        if fx.g.shape(f) != s0.as_slice() {
            return Err(Error::shape(
                "concat_levels",
                format!("{s0:?} vs {:?}", fx.g.shape(f)),
            ));
        }
    }
    fx.g.concat(fused, 2)
}

/// Five parallel branches (global pooling plus depthwise-separable atrous
/// convolutions at each dilation in [`DILATIONS`]), concatenated and fused
/// by a `1×1` convolution to `C_a` channels.
pub fn aspp(fx: &mut Forward<'_>, cfg: &HeadConfig, x: Var) -> Result<Var> {
    let s = fx.g.shape(x).to_vec();
    if s.len() != 3 || s[2] != 3 * cfg.c_v {
        return Err(Error::shape(
            "aspp",
            format!("input {s:?}, expected 3*C_v = {}", 3 * cfg.c_v),
        ));
    }
    let (h, w) = (s[0], s[1]);
    let mut branches = Vec::with_capacity(5);

    let pooled = fx.g.global_avg_pool(x)?;
    let pooled = fx.conv1x1(pooled, "head.aspp.pool")?;
    let pooled = fx.g.relu(pooled)?;
    branches.push(fx.g.bilinear_upsample(pooled, h, w)?);

    for d in DILATIONS {
        let name = format!("head.aspp.d{d}");
        let dw = fx.p(&format!("{name}.dw"))?;
        let pw = fx.p(&format!("{name}.pw"))?;
        let b = fx.p(&format!("{name}.b"))?;
        let y = fx.g.depthwise_separable_conv(x, dw, pw, d)?;
        let y = fx.g.add_row(y, b)?;
        branches.push(fx.g.relu(y)?);
    }
    let cat = fx.g.concat(&branches, 2)?;
    let y = fx.conv1x1(cat, "head.aspp.fuse")?;
    fx.g.relu(y)
}

/// `1×1` conv to one channel, bilinear upsample to the image size, sigmoid.
pub fn predict_mask(
    fx: &mut Forward<'_>,
    aspp_out: Var,
    image_h: usize,
    image_w: usize,
) -> Result<MaskPrediction> {
    let z = fx.conv1x1(aspp_out, "head.mask")?;
    let logits = fx.g.bilinear_upsample(z, image_h, image_w)?;
    let probs = fx.g.sigmoid(logits)?;
    Ok(MaskPrediction { logits, probs })
}

/// Summed binary cross-entropy against a `{0, 1}` mask.
pub fn bce_loss(fx: &mut Forward<'_>, pred: &MaskPrediction, gt: &[f64]) -> Result<Var> {
    fx.g.bce_with_logits(pred.logits, gt, BCE_EPS)
}
