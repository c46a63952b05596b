use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use cbce::data::{layout, read_mask, synth_generate, write_mask, Dataset, PhraseBank};
use cbce::gradsuite;
use cbce::metrics::{image_metrics, MetricOptions, DEFAULT_BETA_SQ, DEFAULT_THRESHOLD};
use cbce::tensor::{DType, Tensor};
use cbce::train::{
    evaluate, infer, load_checkpoint, loss_ratio, train, ExperimentConfig, TrainOptions,
    FINAL_CHECKPOINT,
};
use cbce::{Error, Result};

/// Phrase-conditioned affordance segmentation toolkit.
#[derive(Parser)]
#[command(name = "cbce", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset described by a config file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a JSONL log and one checkpoint per epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written at an epoch boundary.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Manifest file inside the data directory.
        #[arg(long, default_value = layout::TEST)]
        manifest: String,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_BETA_SQ)]
        beta_sq: f64,
        /// Phrases per query; defaults to the value the model was trained with.
        #[arg(long)]
        n_phrases: Option<usize>,
        /// Report path; `.csv` writes per-image rows, anything else JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict a mask for one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long = "phrase", required = true)]
        phrases: Vec<String>,
        /// Where to write the thresholded mask (PGM).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the probability map as raw little-endian f32, row-major.
        #[arg(long)]
        probs: Option<PathBuf>,
        /// Ground-truth mask (PGM) to report overlap against.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Run central-difference gradient checks.
    Gradcheck {
        /// A single case; all cases when omitted.
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

fn dtype_override() -> Result<Option<DType>> {
    match std::env::var("CBCE_DTYPE") {
        Ok(s) if !s.is_empty() => s.parse().map(Some),
        _ => Ok(None),
    }
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let s = synth_generate(&cfg.synth, &PhraseBank::toy(), out)?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        s.samples,
        s.train,
        s.test,
        out.display()
    );
    for (name, n) in &s.per_class {
        println!("  {name:<8} {n}");
    }
    Ok(())
}

fn run_train(
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<PathBuf>,
    max_steps: Option<usize>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?.train;
    if let Some(d) = dtype_override()? {
        cfg.dtype = d;
    }
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    let ds = Dataset::open(data, layout::TRAIN)?;
    let total = cfg.total_steps(ds.len());
    let every = (total / 20).max(1);
    let mut cb = |s: &cbce::train::StepLog| {
        if s.step.is_multiple_of(every) || s.step + 1 == total {
            info!(
                "step {:>5}/{total} epoch {} lr {:.3e} loss {:.2}",
                s.step, s.epoch, s.lr, s.loss
            );
        }
    };
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        on_step: Some(&mut cb),
    };
    let (_, report) = train(&cfg, &ds, opts)?;
    let losses = report.losses();
    if let Some(r) = loss_ratio(&losses, 100) {
        println!(
            "trained {} steps; smoothed loss ratio (last/first 100) = {r:.3}",
            losses.len()
        );
    }
    println!("checkpoint: {}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    ckpt: &Path,
    data: &Path,
    manifest: &str,
    threshold: f64,
    beta_sq: f64,
    n_phrases: Option<usize>,
    report: Option<PathBuf>,
) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) || beta_sq.is_nan() || beta_sq <= 0.0 {
        return Err(Error::Validation(format!(
            "bad threshold {threshold} or beta_sq {beta_sq}"
        )));
    }
    let ck = load_checkpoint(ckpt)?;
    let dtype = dtype_override()?
        .unwrap_or_else(|| ck.train.as_ref().map_or(DType::F64, |t| t.config.dtype));
    let n = n_phrases.or(ck.train.as_ref().map(|t| t.config.n_phrases));
    let ds = Dataset::open(data, manifest)?;
    let opts = MetricOptions { threshold, beta_sq };
    let rep = evaluate(&ck.model, &ds, n, &opts, dtype)?;
    let o = &rep.overall;
    println!(
        "{} images: IoU {:.4}  F_beta {:.4}  E_phi {:.4}  CC {:.4}  MAE {:.4}",
        rep.per_image.len(),
        o.iou,
        o.fbeta,
        o.ephi,
        o.cc,
        o.mae
    );
    for (name, c) in &rep.per_category {
        println!("  {name:<8} n={:<4} IoU {:.4}", c.count, c.means.iou);
    }
    if let Some(p) = report {
        if p.extension().is_some_and(|e| e == "csv") {
            rep.write_csv(&p)?;
        } else {
            rep.write_json(&p)?;
        }
        println!("report: {}", p.display());
    }
    Ok(())
}

struct InferArgs {
    ckpt: PathBuf,
    image: PathBuf,
    phrases: Vec<String>,
    out: Option<PathBuf>,
    probs: Option<PathBuf>,
    gt: Option<PathBuf>,
    threshold: f64,
}

fn run_infer(a: InferArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::Validation(format!("bad threshold {}", a.threshold)));
    }
    let ck = load_checkpoint(&a.ckpt)?;
    let dtype = dtype_override()?
        .unwrap_or_else(|| ck.train.as_ref().map_or(DType::F64, |t| t.config.dtype));
    for p in &a.phrases {
        let unk = ck.model.vocab.unknown_count(p);
        if unk > 0 {
            eprintln!("warning: {unk} unknown word(s) in {p:?}");
        }
    }
    let probs = infer(&ck.model, &a.image, &a.phrases, dtype)?;
    let p = probs.data();
    let fg = p.iter().filter(|&&v| v >= a.threshold).count();
    println!(
        "foreground pixels: {fg} of {} ({:.2}%), mean probability {:.4}",
        p.len(),
        100.0 * fg as f64 / p.len() as f64,
        p.iter().sum::<f64>() / p.len() as f64
    );
    if let Some(path) = &a.gt {
        let gt = read_mask(path)?;
        let opts = MetricOptions {
            threshold: a.threshold,
            beta_sq: DEFAULT_BETA_SQ,
        };
        let (v, _) = image_metrics(p, gt.data(), &opts)?;
        println!(
            "vs {}: IoU {:.4}  F_beta {:.4}  MAE {:.4}",
            path.display(),
            v.iou,
            v.fbeta,
            v.mae
        );
    }
    if let Some(path) = &a.out {
        let bin = p.iter().map(|&v| (v >= a.threshold) as u8 as f64).collect();
        write_mask(path, &Tensor::new(probs.shape(), bin)?)?;
        println!("mask: {}", path.display());
    }
    if let Some(path) = &a.probs {
        let bytes: Vec<u8> = p.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        std::fs::write(path, bytes).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let s = probs.shape();
        println!("probabilities: {} ({}x{} f32)", path.display(), s[0], s[1]);
    }
    Ok(())
}

fn run_gradcheck(op: Option<String>, seed: u64, seeds: u64) -> Result<()> {
    let names: Vec<&str> = match &op {
        Some(n) => vec![n.as_str()],
        None => gradsuite::CASES.to_vec(),
    };
    let mut failed = 0;
    for name in names {
        for s in seed..seed + seeds.max(1) {
            let r = gradsuite::check(name, s)?;
            println!("{name:<26} seed {s:<3} {r}");
            failed += (!r.passed) as usize;
        }
    }
    if failed > 0 {
        return Err(Error::GradCheck(format!("{failed} case(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Synth { config, out } => synth(&config, &out),
        Cmd::Train {
            config,
            data,
            out,
            resume,
            max_steps,
        } => run_train(&config, &data, &out, resume, max_steps),
        Cmd::Eval {
            ckpt,
            data,
            manifest,
            threshold,
            beta_sq,
            n_phrases,
            report,
        } => run_eval(
            &ckpt, &data, &manifest, threshold, beta_sq, n_phrases, report,
        ),
        Cmd::Infer {
            ckpt,
            image,
            phrases,
            out,
            probs,
            gt,
            threshold,
        } => run_infer(InferArgs {
            ckpt,
            image,
            phrases,
            out,
            probs,
            gt,
            threshold,
        }),
        Cmd::Gradcheck { op, seed, seeds } => run_gradcheck(op, seed, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
