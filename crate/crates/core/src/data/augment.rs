//! Random crop and horizontal flip, applied identically to image and mask.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Crop side as a fraction of the input side (320 of 360).
pub const CROP_RATIO: f64 = 320.0 / 360.0;

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape(op, format!("expected [H, W, C], got {s:?}"))),
    }
}

/// Window `[top, top + ch) x [left, left + cw)` of an `[H, W, C]` tensor.
pub fn crop(t: &Tensor, top: usize, left: usize, ch: usize, cw: usize) -> Result<Tensor> {
    let (h, w, c) = dims(t, "crop")?;
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(Error::shape(
            "crop",
            format!("window {ch}x{cw} at ({top}, {left}) does not fit in {h}x{w}"),
        ));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(ch * cw * c);
    for y in top..top + ch {
        let row = (y * w + left) * c;
        out.extend_from_slice(&src[row..row + cw * c]);
    }
    Tensor::new(&[ch, cw, c], out)
}

/// Mirror an `[H, W, C]` tensor left to right.
pub fn hflip(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims(t, "hflip")?;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let p = (y * w + x) * c;
            out.extend_from_slice(&src[p..p + c]);
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Crop side for an input side of `n`.
pub fn crop_size(n: usize) -> usize {
    ((n as f64) * CROP_RATIO).round().max(1.0) as usize
}

/// One random crop window of side `CROP_RATIO` and a coin-flip mirror,
/// shared by image and mask.
pub fn augment<R: Rng>(image: &Tensor, mask: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let (h, w, _) = dims(image, "augment")?;
    let (mh, mw, _) = dims(mask, "augment")?;
    if (h, w) != (mh, mw) {
        return Err(Error::shape(
            "augment",
            format!("image is {h}x{w} but mask is {mh}x{mw}"),
        ));
    }
    let (ch, cw) = (crop_size(h), crop_size(w));
    let top = rng.gen_range(0..=h - ch);
    let left = rng.gen_range(0..=w - cw);
    let flip = rng.gen_bool(0.5);
    let mut img = crop(image, top, left, ch, cw)?;
    let mut m = crop(mask, top, left, ch, cw)?;
    if flip {
        img = hflip(&img)?;
        m = hflip(&m)?;
    }
    Ok((img, m))
}
