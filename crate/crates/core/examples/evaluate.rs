//! Score a checkpoint on a dataset split and break the result down by class.
//!
//! cargo run --release --example evaluate -- CKPT DATA_DIR [REPORT.csv]

use std::path::Path;

use cbce::data::{layout, Dataset};
use cbce::metrics::MetricOptions;
use cbce::train::{evaluate, load_checkpoint};
use cbce::Error;

fn main() -> cbce::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let [_, ckpt, data, rest @ ..] = args.as_slice() else {
        return Err(Error::Validation(
            "usage: evaluate CKPT DATA_DIR [REPORT.csv]".into(),
        ));
    };
    let ck = load_checkpoint(Path::new(ckpt))?;
    let n_phrases = ck.train.as_ref().map(|t| t.config.n_phrases);
    let test = Dataset::open(Path::new(data), layout::TEST)?;
    let rep = evaluate(
        &ck.model,
        &test,
        n_phrases,
        &MetricOptions::default(),
        cbce::tensor::DType::F64,
    )?;

    println!(
        "{:<14} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "class", "n", "IoU", "F_beta", "E_phi", "CC", "MAE"
    );
    let row = |name: &str, n: usize, m: &cbce::metrics::MetricValues| {
        println!(
            "{name:<14} {n:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            m.iou, m.fbeta, m.ephi, m.cc, m.mae
        )
    };
    for (name, c) in &rep.per_category {
        row(name, c.count, &c.means);
    }
    row("overall", rep.per_image.len(), &rep.overall);

    let worst = rep
        .per_image
        .iter()
        .min_by(|a, b| a.values.iou.total_cmp(&b.values.iou));
    if let Some(w) = worst {
        println!(
            "weakest sample: {} [{}] IoU {:.4}",
            w.sample, w.affordance, w.values.iou
        );
    }
    if let Some(path) = rest.first() {
        rep.write_csv(Path::new(path))?;
        println!("per-image rows written to {path}");
    }
    Ok(())
}
