//! Initial multimodal features `F^i_0 = concat(f(I_i, L0), P)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{FeaturePyramid, LEVELS};
use crate::error::{Error, Result};
use crate::params::{Forward, Params};
use crate::tensor::{Tensor, Var};

/// Number of coordinate channels appended to every fused map.
pub const COORD_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear output stage; makes the fusion exactly bilinear.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub c_i: usize,
    pub c_l: usize,
    pub c_f: usize,
    pub rank: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl FusionConfig {
    /// Channel width `C_v` of every fused map.
    pub fn fused_width(&self) -> usize {
        self.c_f + COORD_CHANNELS
    }
}

/// Per-cell `[x_min, y_min, x_max, y_max, x_center, y_center, 1/W, 1/H]` with
/// the cell extents normalized to `[-1, 1]`. Shape `[H, W, 8]`.
pub fn spatial_coords(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * COORD_CHANNELS);
    for r in 0..h {
        let y0 = -1.0 + 2.0 * r as f64 / h as f64;
        let y1 = -1.0 + 2.0 * (r + 1) as f64 / h as f64;
        for c in 0..w {
            let x0 = -1.0 + 2.0 * c as f64 / w as f64;
            let x1 = -1.0 + 2.0 * (c + 1) as f64 / w as f64;
            data.extend_from_slice(&[
                x0,
                y0,
                x1,
                y1,
                (x0 + x1) / 2.0,
                (y0 + y1) / 2.0,
                1.0 / w as f64,
                1.0 / h as f64,
            ]);
        }
    }
    Tensor::new(&[h, w, COORD_CHANNELS], data).expect("coordinate grid shape")
}

pub fn init_bilinear<R: Rng>(
    cfg: &FusionConfig,
    prefix: &str,
    params: &mut Params,
    rng: &mut R,
) -> Result<()> {
    params.init_fan_in(
        format!("{prefix}.vis.w"),
        &[cfg.c_i, cfg.rank],
        cfg.c_i,
        1.0,
        rng,
    )?;
    params.init_const(format!("{prefix}.vis.b"), &[cfg.rank], 0.0)?;
    params.init_fan_in(
        format!("{prefix}.lang.w"),
        &[cfg.c_l, cfg.rank],
        cfg.c_l,
        1.0,
        rng,
    )?;
    params.init_const(format!("{prefix}.lang.b"), &[cfg.rank], 0.0)?;
    params.init_fan_in(
        format!("{prefix}.out.w"),
        &[cfg.rank, cfg.c_f],
        cfg.rank,
        1.0,
        rng,
    )?;
    params.init_const(format!("{prefix}.out.b"), &[cfg.c_f], 0.0)
}

pub fn init_fusion<R: Rng>(cfg: &FusionConfig, params: &mut Params, rng: &mut R) -> Result<()> {
    for level in LEVELS {
        init_bilinear(cfg, &format!("fusion.l{level}"), params, rng)?;
    }
    Ok(())
}

/// Low-rank bilinear pooling applied at every position:
/// `act(((I·Wv + bv) ⊙ (L0·Wl + bl))·Wo + bo)`.
pub fn bilinear_fuse(
    fx: &mut Forward<'_>,
    cfg: &FusionConfig,
    prefix: &str,
    visual: Var,
    lang: Var,
) -> Result<Var> {
    let s = fx.g.shape(visual).to_vec();
    if s.len() != 3 || s[2] != cfg.c_i {
        return Err(Error::shape(
            "bilinear_fuse",
            format!("visual {s:?}, expected C_I = {}", cfg.c_i),
        ));
    }
    let (h, w) = (s[0], s[1]);
    let v = fx.g.reshape(visual, &[h * w, cfg.c_i])?;
    let v = fx.linear(v, &format!("{prefix}.vis"))?;
    let l = fx.g.reshape(lang, &[1, cfg.c_l])?;
    let l = fx.linear(l, &format!("{prefix}.lang"))?;
    let z = fx.g.mul_row(v, l)?;
    let o = fx.linear(z, &format!("{prefix}.out"))?;
    let o = match cfg.activation {
        Activation::Tanh => fx.g.tanh(o)?,
        Activation::Identity => o,
    };
    fx.g.reshape(o, &[h, w, cfg.c_f])
}

/// `{F^3_0, F^4_0, F^5_0}`, each `[H, W, C_f + 8]`.
pub fn build_initial_fused(
    fx: &mut Forward<'_>,
    cfg: &FusionConfig,
    pyramid: &FeaturePyramid,
    lang: Var,
) -> Result<[Var; 3]> {
    let s0 = fx.g.shape(pyramid.levels[0]).to_vec();
    for &lv in &pyramid.levels[1..] {
        if fx.g.shape(lv) != s0.as_slice() {
            return Err(Error::shape(
                "build_initial_fused",
                format!("pyramid levels disagree: {s0:?} vs {:?}", fx.g.shape(lv)),
            ));
        }
    }
    let coords = fx.g.constant(spatial_coords(s0[0], s0[1]))?;
    let mut out = [coords; 3];
    for (i, level) in LEVELS.iter().enumerate() {
        let f = bilinear_fuse(
            fx,
            cfg,
            &format!("fusion.l{level}"),
            pyramid.levels[i],
            lang,
        )?;
        out[i] = fx.g.concat(&[f, coords], 2)?;
    }
    Ok(out)
}
