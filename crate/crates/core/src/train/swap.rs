use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{phrase_sample, split_seed, two_object_scene, PhraseBank, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::model::Model;
use crate::tensor::DType;

/// Outcome of querying one two-object scene with each object's phrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapScene {
    pub classes: [String; 2],
    pub phrases: [Vec<String>; 2],
    /// IoU of each predicted mask with its own object's ground truth.
    pub own_iou: [f64; 2],
    /// IoU between the two predicted masks.
    pub mutual_iou: f64,
}

impl SwapScene {
    pub fn passes(&self, max_mutual: f64, min_own: f64) -> bool {
        self.mutual_iou < max_mutual && self.own_iou.iter().all(|&v| v >= min_own)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub scenes: Vec<SwapScene>,
}

impl SwapReport {
    pub fn pass_rate(&self, max_mutual: f64, min_own: f64) -> f64 {
        if self.scenes.is_empty() {
            return 0.0;
        }
        let n = self
            .scenes
            .iter()
            .filter(|s| s.passes(max_mutual, min_own))
            .count();
        n as f64 / self.scenes.len() as f64
    }
}

/// Render `n_scenes` fresh two-object scenes and query each with the phrase
/// set of either object in turn.
///
/// Scene `i` is drawn from `split_seed(seed, i)`, so the fixture set depends
/// only on `cfg` and `seed`.
#[allow(clippy::too_many_arguments)]
pub fn phrase_swap(
    model: &Model,
    cfg: &SynthConfig,
    bank: &PhraseBank,
    n_scenes: usize,
    n_phrases: usize,
    seed: u64,
    threshold: f64,
    dtype: DType,
) -> Result<SwapReport> {
    cfg.validate()?;
    if cfg.classes.len() < 2 {
        return Err(Error::Validation(
            "phrase swap needs at least two classes".into(),
        ));
    }
    let mut scenes = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64));
        let idx: Vec<usize> = (0..cfg.classes.len()).collect();
        let pick: Vec<usize> = idx.choose_multiple(&mut rng, 2).copied().collect();
        let scene = two_object_scene(cfg, pick[0], pick[1], &mut rng)?;
        let names = pick
            .iter()
            .map(|&c| cfg.classes[c].name.clone())
            .collect::<Vec<_>>();
        let phrases = [
            phrase_sample(bank, &names[0], n_phrases, &mut rng)?,
            phrase_sample(bank, &names[1], n_phrases, &mut rng)?,
        ];
        let preds = [
            model.predict(&scene.image, &phrases[0], dtype)?,
            model.predict(&scene.image, &phrases[1], dtype)?,
        ];
        let own_iou = [
            iou(preds[0].data(), scene.masks[0].data(), threshold)?,
            iou(preds[1].data(), scene.masks[1].data(), threshold)?,
        ];
        let bin: Vec<f64> = preds[1]
            .data()
            .iter()
            .map(|&v| (v >= threshold) as u8 as f64)
            .collect();
        let mutual_iou = iou(preds[0].data(), &bin, threshold)?;
        scenes.push(SwapScene {
            classes: [names[0].clone(), names[1].clone()],
            phrases,
            own_iou,
            mutual_iou,
        });
    }
    Ok(SwapReport { scenes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocabulary;
    use crate::model::ModelConfig;

    #[test]
    fn untrained_model_runs_and_is_reproducible() {
        let bank = PhraseBank::toy();
        let vocab = Vocabulary::build(bank.all_phrases());
        let cfg = ModelConfig {
            backbone_widths: [4, 4, 6, 6, 6],
            feat_h: 4,
            feat_w: 4,
            c_i: 6,
            embed_dim: 5,
            c_l: 6,
            c_f: 4,
            rank: 3,
            c_a: 5,
            ..Default::default()
        };
        let m = Model::init(cfg, vocab, 0).unwrap();
        let synth = SynthConfig {
            height: 48,
            width: 48,
            min_radius: 6.0,
            max_radius: 9.0,
            ..Default::default()
        };
        let a = phrase_swap(&m, &synth, &bank, 3, 2, 9, 0.5, DType::F64).unwrap();
        let b = phrase_swap(&m, &synth, &bank, 3, 2, 9, 0.5, DType::F64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scenes.len(), 3);
        for s in &a.scenes {
            assert_ne!(s.classes[0], s.classes[1]);
            assert!(s.phrases.iter().all(|p| p.len() == 2));
        }
        assert!((0.0..=1.0).contains(&a.pass_rate(0.2, 0.6)));
    }
}
