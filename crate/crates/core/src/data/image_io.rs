//! Binary PPM (P6) images and PGM (P5) masks, maxval 255.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn img_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| img_err(path, e))
}

/// `(height, width)` from the file header.
pub fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let (w, h) = reader.into_dimensions().map_err(|e| img_err(path, e))?;
    Ok((h as usize, w as usize))
}

/// `[H, W, 3]` with values in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 255.0)
        .collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// `[H, W, 1]` with values in `{0, 1}` (foreground is any value >= 128).
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(&[h as usize, w as usize, 1], data)
}

fn encode(
    path: &Path,
    bytes: &[u8],
    w: usize,
    h: usize,
    subtype: PnmSubtype,
    color: ExtendedColorType,
) -> Result<()> {
    let mut buf = Vec::with_capacity(bytes.len() + 32);
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| img_err(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape(
            "write_rgb",
            format!("expected [H, W, 3], got {s:?}"),
        ));
    }
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    encode(
        path,
        &bytes,
        s[1],
        s[0],
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
    )
}

/// Writes 255 where `mask >= 0.5` and 0 elsewhere.
pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let s = mask.shape();
    if s.len() < 2 || s[2..].iter().product::<usize>() != 1 {
        return Err(Error::shape(
            "write_mask",
            format!("expected [H, W] or [H, W, 1], got {s:?}"),
        ));
    }
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&v| if v >= 0.5 { 255 } else { 0 })
        .collect();
    encode(
        path,
        &bytes,
        s[1],
        s[0],
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}
