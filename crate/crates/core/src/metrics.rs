//! Mask evaluation: IoU, F-measure, E-measure, Pearson CC and MAE, plus
//! per-category aggregation over a dataset.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ManifestRecord;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BETA_SQ: f64 = 0.3;
pub const CSV_HEADER: &str = "sample,affordance,iou,fbeta,ephi,cc,mae";

fn check_len(op: &'static str, pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(
            op,
            format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn confusion(pred: &[f64], gt: &[f64], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p >= threshold, g >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// `|bin(pred) ∩ gt| / |bin(pred) ∪ gt|`; 1 when both masks are empty.
pub fn iou(pred: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    check_len("iou", pred, gt)?;
    let c = confusion(pred, gt, threshold);
    let union = c.tp + c.fp + c.fn_;
    Ok(if union == 0 {
        1.0
    } else {
        c.tp as f64 / union as f64
    })
}

/// `(1 + β²)·P·R / (β²·P + R)` on the thresholded prediction.
///
/// Both masks empty scores 1. Otherwise, an undefined precision or recall
/// (no predicted or no true positives) counts as 0.
pub fn f_measure(pred: &[f64], gt: &[f64], threshold: f64, beta_sq: f64) -> Result<f64> {
    check_len("f_measure", pred, gt)?;
    if beta_sq.is_nan() || beta_sq <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta^2 must be positive, got {beta_sq}"
        )));
    }
    let c = confusion(pred, gt, threshold);
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok(1.0);
    }
    if c.tp == 0 {
        return Ok(0.0);
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    Ok((1.0 + beta_sq) * p * r / (beta_sq * p + r))
}

/// Enhanced-alignment measure of the binarized prediction against `gt`.
///
/// With `φ = x - mean(x)` for both binary maps, each pixel scores
/// `(1 + ξ)² / 4` where `ξ = 2·φ_gt·φ_pred / (φ_gt² + φ_pred² + ε)`. An
/// all-background ground truth scores `mean(1 - pred)` and an
/// all-foreground one `mean(pred)`.
pub fn e_measure(pred: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    check_len("e_measure", pred, gt)?;
    let n = pred.len() as f64;
    let fm: Vec<f64> = pred
        .iter()
        .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
        .collect();
    let g: Vec<f64> = gt
        .iter()
        .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let gt_sum: f64 = g.iter().sum();
    if gt_sum == 0.0 {
        return Ok(fm.iter().map(|v| 1.0 - v).sum::<f64>() / n);
    }
    if gt_sum == n {
        return Ok(fm.iter().sum::<f64>() / n);
    }
    let mf = fm.iter().sum::<f64>() / n;
    let mg = gt_sum / n;
    let score: f64 = fm
        .iter()
        .zip(&g)
        .map(|(f, g)| {
            let (a, b) = (f - mf, g - mg);
            let xi = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
            (1.0 + xi).powi(2) / 4.0
        })
        .sum();
    Ok(score / n)
}

/// Pearson correlation of the continuous prediction with the ground truth.
pub fn pearson_cc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("pearson_cc", pred, gt)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p - mp, g - mg);
        cov += a * b;
        vp += a * a;
        vg += b * b;
    }
    if vp == 0.0 || vg == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation is undefined for a constant map".into(),
        ));
    }
    Ok((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("mae", pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub threshold: f64,
    pub beta_sq: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            threshold: DEFAULT_THRESHOLD,
            beta_sq: DEFAULT_BETA_SQ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub iou: f64,
    pub fbeta: f64,
    pub ephi: f64,
    pub cc: f64,
    pub mae: f64,
}

impl MetricValues {
    fn add(&mut self, o: &MetricValues) {
        self.iou += o.iou;
        self.fbeta += o.fbeta;
        self.ephi += o.ephi;
        self.cc += o.cc;
        self.mae += o.mae;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.iou *= s;
        self.fbeta *= s;
        self.ephi *= s;
        self.cc *= s;
        self.mae *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub sample: String,
    pub affordance: String,
    #[serde(flatten)]
    pub values: MetricValues,
    /// Set when CC was undefined (constant map) and recorded as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cc_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub count: usize,
    #[serde(flatten)]
    pub means: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub options: MetricOptions,
    pub per_image: Vec<ImageMetrics>,
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub overall: MetricValues,
}

pub fn image_metrics(
    pred: &[f64],
    gt: &[f64],
    opts: &MetricOptions,
) -> Result<(MetricValues, bool)> {
    let (cc, undefined) = match pearson_cc(pred, gt) {
        Ok(v) => (v, false),
        Err(Error::InvalidArgument(_)) => (0.0, true),
        Err(e) => return Err(e),
    };
    Ok((
        MetricValues {
            iou: iou(pred, gt, opts.threshold)?,
            fbeta: f_measure(pred, gt, opts.threshold, opts.beta_sq)?,
            ephi: e_measure(pred, gt, opts.threshold)?,
            cc,
            mae: mae(pred, gt)?,
        },
        undefined,
    ))
}

impl MetricReport {
    /// Aggregate per-image rows. `overall` is the unweighted mean over images.
    pub fn from_rows(per_image: Vec<ImageMetrics>, options: MetricOptions) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Validation(
                "cannot build a report from zero images".into(),
            ));
        }
        let mut overall = MetricValues::default();
        let mut cats: BTreeMap<String, (usize, MetricValues)> = BTreeMap::new();
        for row in &per_image {
            overall.add(&row.values);
            let e = cats.entry(row.affordance.clone()).or_default();
            e.0 += 1;
            e.1.add(&row.values);
        }
        let overall = overall.scaled(1.0 / per_image.len() as f64);
        let per_category = cats
            .into_iter()
            .map(|(k, (n, sum))| {
                (
                    k,
                    CategoryMetrics {
                        count: n,
                        means: sum.scaled(1.0 / n as f64),
                    },
                )
            })
            .collect();
        Ok(MetricReport {
            options,
            per_image,
            per_category,
            overall,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.per_image {
            let v = &r.values;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.sample, r.affordance, v.iou, v.fbeta, v.ephi, v.cc, v.mae
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Parse per-image rows back from the CSV form.
    pub fn parse_csv(text: &str) -> Result<Vec<ImageMetrics>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Validation("report CSV header mismatch".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 7 {
                    return Err(Error::Validation(format!("malformed report row {l:?}")));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Validation(format!("bad number {s:?}: {e}")))
                };
                Ok(ImageMetrics {
                    sample: f[0].to_string(),
                    affordance: f[1].to_string(),
                    values: MetricValues {
                        iou: num(f[2])?,
                        fbeta: num(f[3])?,
                        ephi: num(f[4])?,
                        cc: num(f[5])?,
                        mae: num(f[6])?,
                    },
                    cc_undefined: false,
                })
            })
            .collect()
    }
}

/// Score one prediction per manifest record. `ground_truth` supplies the
/// binary mask of a record, flattened row-major.
pub fn evaluate_dataset(
    predictions: &HashMap<String, Vec<f64>>,
    manifest: &[ManifestRecord],
    mut ground_truth: impl FnMut(&ManifestRecord) -> Result<Vec<f64>>,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if manifest.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate an empty manifest".into(),
        ));
    }
    let mut rows = Vec::with_capacity(manifest.len());
    for rec in manifest {
        let pred = predictions
            .get(&rec.id)
            .ok_or_else(|| Error::Validation(format!("no prediction for record {}", rec.id)))?;
        let gt = ground_truth(rec)?;
        let (values, cc_undefined) = image_metrics(pred, &gt, opts)?;
        rows.push(ImageMetrics {
            sample: rec.id.clone(),
            affordance: rec.affordance.clone(),
            values,
            cc_undefined,
        });
    }
    MetricReport::from_rows(rows, *opts)
}
