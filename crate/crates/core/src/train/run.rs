use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use super::config::TrainConfig;
use super::optim::{adam_step, poly_lr, AdamState};
use crate::data::{augment, phrase_sample, split_seed, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Forward;
use crate::seghead::bce_loss;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch{epoch:03}.ckpt")
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where the log and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written at an epoch boundary.
    pub resume: Option<PathBuf>,
    pub on_step: Option<&'a mut dyn FnMut(&StepLog)>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    pub total_steps: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|s| s.loss).collect()
    }
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn smoothed(losses: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut acc = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        acc += l;
        if i >= w {
            acc -= losses[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean loss of the last `w` steps over the mean of the first `w`.
pub fn loss_ratio(losses: &[f64], w: usize) -> Option<f64> {
    if losses.is_empty() {
        return None;
    }
    let w = w.clamp(1, losses.len());
    Some(mean(&losses[losses.len() - w..]) / mean(&losses[..w]))
}

struct Logger {
    file: Option<std::io::BufWriter<std::fs::File>>,
    path: PathBuf,
}

impl Logger {
    fn open(out: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = out else {
            return Ok(Logger {
                file: None,
                path: PathBuf::new(),
            });
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Logger {
            file: Some(std::io::BufWriter::new(f)),
            path,
        })
    }

    fn write(&mut self, s: &StepLog) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, s)?;
            f.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

fn numeric_to_diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step: step as u64,
            msg: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Train on `data` with batch size 1: each step draws the next record of a
/// per-epoch shuffle, augments it, samples `n_phrases` fresh phrases from
/// the bank, and takes one Adam step on the summed BCE loss.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    mut opts: TrainOptions<'_>,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let n = data.len();
    let total = cfg.total_steps(n);

    let (mut model, mut adam, mut rng, start) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let st = ck.train.ok_or_else(|| {
                Error::Checkpoint(format!("{} has no optimizer state", path.display()))
            })?;
            if st.config.model != cfg.model || st.config.seed != cfg.seed {
                return Err(Error::Validation(
                    "resume config does not match the checkpoint".into(),
                ));
            }
            if ck.model.vocab != data.vocab {
                return Err(Error::Validation(
                    "dataset vocabulary does not match the checkpoint".into(),
                ));
            }
            let step = st.step as usize;
            if !step.is_multiple_of(n) {
                return Err(Error::Checkpoint(
                    "can only resume from an epoch boundary".into(),
                ));
            }
            (ck.model, st.adam, st.rng, step)
        }
        None => {
            let model = Model::init(cfg.model.clone(), data.vocab.clone(), cfg.seed)?;
            let adam = AdamState::new(&model.params);
            let rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 0x7EA1));
            (model, adam, rng, 0)
        }
    };

    let out = opts.out_dir.clone();
    let mut logger = Logger::open(out.as_deref(), start > 0)?;
    let mut log = Vec::with_capacity(total.saturating_sub(start));
    let mut step = start;
    let mut epoch = start / n;
    while step < total {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &idx in &order {
            if step >= total {
                break;
            }
            let rec = &data.records[idx];
            let (mut img, mut mask) = (data.image(idx)?, data.mask(idx)?);
            if cfg.augment {
                (img, mask) = augment(&img, &mask, &mut rng)?;
            }
            let phrases = phrase_sample(&data.bank, &rec.affordance, cfg.n_phrases, &mut rng)?;
            let set = model.encode_phrases(&phrases)?;
            let lr = poly_lr(step, total, cfg.base_lr, cfg.poly_power)?;

            let grads = {
                let mut fx = Forward::new(&model.params, cfg.dtype);
                let result = (|| {
                    let out = model.forward(&mut fx, &img, &set)?;
                    let loss = bce_loss(&mut fx, &out.pred, mask.data())?;
                    fx.g.backward(loss)?;
                    Ok(fx.g.data(loss)[0])
                })();
                let loss = result.map_err(|e| numeric_to_diverged(step, e))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        step: step as u64,
                        msg: format!("loss is {loss}"),
                    });
                }
                let s = StepLog {
                    step,
                    epoch,
                    lr,
                    loss,
                };
                logger.write(&s)?;
                if let Some(cb) = opts.on_step.as_mut() {
                    cb(&s);
                }
                log.push(s);
                fx.grads()
            };
            adam_step(
                &mut model.params,
                &grads,
                &mut adam,
                lr,
                cfg.weight_decay,
                cfg.dtype,
            )?;
            step += 1;
        }
        epoch += 1;
        logger.flush()?;
        if let Some(dir) = &out {
            let state = TrainState {
                config: cfg.clone(),
                step: step as u64,
                adam: adam.clone(),
                rng: rng.clone(),
            };
            save_checkpoint(&dir.join(epoch_checkpoint(epoch)), &model, Some(&state))?;
            if step >= total {
                save_checkpoint(&dir.join(FINAL_CHECKPOINT), &model, Some(&state))?;
            }
        }
    }
    Ok((
        model,
        TrainReport {
            log,
            total_steps: total,
        },
    ))
}
