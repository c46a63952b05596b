use std::collections::HashMap;
use std::path::Path;

use crate::data::{read_rgb, Dataset, ManifestRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, MetricOptions, MetricReport};
use crate::model::Model;
use crate::tensor::{DType, Tensor};

/// The phrases used to query `rec`: its manifest list, cut to `n` when given.
pub fn query_phrases(rec: &ManifestRecord, n: Option<usize>) -> &[String] {
    match n {
        Some(n) => &rec.phrases[..n.min(rec.phrases.len())],
        None => &rec.phrases,
    }
}

/// Probability maps for every record, keyed by id. Records are split across
/// the available cores.
pub fn predict_dataset(
    model: &Model,
    data: &Dataset,
    n_phrases: Option<usize>,
    dtype: DType,
) -> Result<HashMap<String, Vec<f64>>> {
    if n_phrases == Some(0) {
        return Err(Error::Validation("n_phrases must be positive".into()));
    }
    let n = data.len();
    let threads = std::thread::available_parallelism()
        .map_or(1, |t| t.get())
        .clamp(1, n.max(1));
    let chunk = n.div_ceil(threads).max(1);
    type Part = Result<Vec<(String, Vec<f64>)>>;
    let parts: Vec<Part> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for i in t * chunk..((t + 1) * chunk).min(n) {
                        let rec = &data.records[i];
                        let img = data.image(i)?;
                        let p = model.predict(&img, query_phrases(rec, n_phrases), dtype)?;
                        out.push((rec.id.clone(), p.into_data()));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction thread panicked"))
            .collect()
    });
    let mut map = HashMap::with_capacity(n);
    for p in parts {
        map.extend(p?);
    }
    Ok(map)
}

/// Score `model` on every record of `data`.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    n_phrases: Option<usize>,
    opts: &MetricOptions,
    dtype: DType,
) -> Result<MetricReport> {
    let preds = predict_dataset(model, data, n_phrases, dtype)?;
    evaluate_dataset(
        &preds,
        &data.records,
        |r| Ok(data.mask_of(r)?.into_data()),
        opts,
    )
}

/// Probability map for one image file.
pub fn infer<S: AsRef<str>>(
    model: &Model,
    image: &Path,
    phrases: &[S],
    dtype: DType,
) -> Result<Tensor> {
    if phrases.is_empty() {
        return Err(Error::Validation("at least one phrase is required".into()));
    }
    let img = read_rgb(image)?;
    model.predict(&img, phrases, dtype)
}
