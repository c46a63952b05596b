//! Train on the toy dataset from `configs/toy.json` and save a checkpoint.
//!
//! cargo run --release --example train_toy -- [DATA_DIR] [OUT_DIR] [MAX_STEPS]
//!
//! The dataset is generated first if DATA_DIR has no manifest. The full run
//! is 3000 steps, about a minute on one core.

use std::path::PathBuf;
use std::time::Instant;

use cbce::data::{layout, synth_generate, Dataset, PhraseBank};
use cbce::metrics::MetricOptions;
use cbce::train::{evaluate, loss_ratio, smoothed, train, ExperimentConfig, StepLog, TrainOptions};

fn main() -> cbce::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let data_dir = PathBuf::from(args.get(1).map_or("target/toy-data", String::as_str));
    let out_dir = PathBuf::from(args.get(2).map_or("target/toy-run", String::as_str));
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut exp = ExperimentConfig::load(&root.join("configs/toy.json"))?;
    if let Some(s) = args.get(3) {
        exp.train.max_steps = Some(
            s.parse()
                .map_err(|_| cbce::Error::Validation(format!("bad step count {s:?}")))?,
        );
    }

    if !data_dir.join(layout::TRAIN).exists() {
        synth_generate(&exp.synth, &PhraseBank::toy(), &data_dir)?;
    }
    let train_set = Dataset::open(&data_dir, layout::TRAIN)?;
    let total = exp.train.total_steps(train_set.len());
    println!("training {total} steps on {} images", train_set.len());

    let start = Instant::now();
    let mut window = Vec::new();
    let mut progress = |s: &StepLog| {
        window.push(s.loss);
        if window.len() == 250 || s.step + 1 == total {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            println!(
                "step {:>5}  epoch {}  lr {:.2e}  loss {mean:.1}",
                s.step + 1,
                s.epoch + 1,
                s.lr
            );
            window.clear();
        }
    };
    let opts = TrainOptions {
        out_dir: Some(out_dir.clone()),
        on_step: Some(&mut progress),
        ..Default::default()
    };
    let (model, report) = train(&exp.train, &train_set, opts)?;
    let losses = report.losses();
    let curve = smoothed(&losses, 100);
    println!(
        "done in {:.0}s; smoothed loss {:.1} -> {:.1} (ratio {:.3})",
        start.elapsed().as_secs_f64(),
        curve[0],
        curve[curve.len() - 1],
        loss_ratio(&losses, 100).unwrap_or(f64::NAN)
    );

    let test_set = Dataset::open(&data_dir, layout::TEST)?;
    let rep = evaluate(
        &model,
        &test_set,
        Some(exp.train.n_phrases),
        &MetricOptions::default(),
        exp.train.dtype,
    )?;
    println!(
        "held-out IoU {:.4}, checkpoint in {}",
        rep.overall.iou,
        out_dir.display()
    );
    Ok(())
}
