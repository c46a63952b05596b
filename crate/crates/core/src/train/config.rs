use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::DType;

/// Optimization and schedule settings.
///
/// The defaults are the toy-scale settings. The full-scale recipe is Adam at
/// `base_lr = 2.5e-4`, `weight_decay = 5e-4`, poly power 0.9, 100 epochs,
/// batch size 1 and 4 phrases per image; see [`TrainConfig::full_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    /// Only 1 is supported.
    pub batch_size: usize,
    pub n_phrases: usize,
    pub augment: bool,
    pub dtype: DType,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            epochs: 5,
            max_steps: None,
            base_lr: 1e-3,
            weight_decay: 5e-4,
            poly_power: 0.9,
            batch_size: 1,
            n_phrases: 4,
            augment: true,
            dtype: DType::F64,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 2.5e-4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        if self.batch_size != 1 {
            return bad(format!(
                "batch_size {} is not supported; use 1",
                self.batch_size
            ));
        }
        if self.n_phrases == 0 {
            return bad("n_phrases must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            ));
        }
        if !(self.poly_power.is_finite() && self.poly_power >= 0.0) {
            return bad(format!(
                "poly_power {} must be non-negative",
                self.poly_power
            ));
        }
        self.model.validate()
    }

    /// Total optimizer steps for a training set of `n_train` records.
    pub fn total_steps(&self, n_train: usize) -> usize {
        let full = self.epochs * n_train;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// A config file: `{"synth": {...}, "train": {...}}`. Either part may be
/// omitted to take its defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.synth.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
