//! Optimization, checkpointing, the training loop and evaluation.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod run;
mod swap;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use config::{ExperimentConfig, TrainConfig};
pub use eval::{evaluate, infer, predict_dataset, query_phrases};
pub use optim::{adam_step, poly_lr, AdamState, ADAM_EPS, BETA1, BETA2};
pub use run::{
    epoch_checkpoint, loss_ratio, smoothed, train, StepLog, TrainOptions, TrainReport,
    FINAL_CHECKPOINT, LOG_FILE,
};
pub use swap::{phrase_swap, SwapReport, SwapScene};
