//! The full network: encoders, fusion, cyclic interaction and the mask head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cim::{cim_forward, init_cim, CimConfig, CimState};
use crate::encoders::{
    init_phrase, init_visual, phrase_encode, visual_encode, FeaturePyramid, PhraseConfig,
    PhraseSet, VisualConfig, Vocabulary,
};
use crate::error::{Error, Result};
use crate::fusion::{build_initial_fused, init_fusion, Activation, FusionConfig, COORD_CHANNELS};
use crate::params::{Forward, Params};
use crate::seghead::{aspp, concat_levels, init_head, predict_mask, HeadConfig, MaskPrediction};
use crate::tensor::{DType, Tensor, Var};

/// Every width and schedule knob of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone_widths: [usize; 5],
    pub feat_h: usize,
    pub feat_w: usize,
    pub c_i: usize,
    pub embed_dim: usize,
    pub c_l: usize,
    pub c_f: usize,
    pub rank: usize,
    pub fusion_activation: Activation,
    /// Attention width; `None` means `C_v`.
    pub c_attn: Option<usize>,
    pub c_a: usize,
    pub rounds: usize,
    pub cycles: usize,
    /// Resolution the encoder sees, `[H, W]`. Images of another size are
    /// resized before encoding and the mask comes back at their own size.
    /// Set it to the training crop so test images keep the training scale.
    pub input_size: Option<[usize; 2]>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_widths: [8, 16, 24, 32, 32],
            feat_h: 10,
            feat_w: 10,
            c_i: 32,
            embed_dim: 32,
            c_l: 32,
            c_f: 32,
            rank: 16,
            fusion_activation: Activation::Tanh,
            c_attn: None,
            c_a: 64,
            rounds: 2,
            cycles: 1,
            input_size: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feat_h", self.feat_h),
            ("feat_w", self.feat_w),
            ("c_i", self.c_i),
            ("embed_dim", self.embed_dim),
            ("c_l", self.c_l),
            ("c_f", self.c_f),
            ("rank", self.rank),
            ("c_a", self.c_a),
            ("rounds", self.rounds),
            ("cycles", self.cycles),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!(
                "model dimension {name} must be positive"
            )));
        }
        if self.backbone_widths.contains(&0)
            || self.c_attn == Some(0)
            || self.input_size.is_some_and(|s| s.contains(&0))
        {
            return Err(Error::Validation("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Width `C_v = C_f + 8` of every fused map.
    pub fn c_v(&self) -> usize {
        self.c_f + COORD_CHANNELS
    }

    pub fn visual(&self) -> VisualConfig {
        VisualConfig {
            widths: self.backbone_widths,
            c_i: self.c_i,
            feat_h: self.feat_h,
            feat_w: self.feat_w,
        }
    }

    pub fn phrase(&self, vocab_size: usize) -> PhraseConfig {
        PhraseConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            c_l: self.c_l,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            c_i: self.c_i,
            c_l: self.c_l,
            c_f: self.c_f,
            rank: self.rank,
            activation: self.fusion_activation,
        }
    }

    pub fn cim(&self) -> CimConfig {
        CimConfig {
            c_l: self.c_l,
            c_v: self.c_v(),
            c_attn: self.c_attn.unwrap_or(self.c_v()),
            rounds: self.rounds,
            cycles: self.cycles,
        }
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            c_v: self.c_v(),
            c_a: self.c_a,
        }
    }
}

/// Intermediate results of one forward pass.
pub struct ModelOutput {
    pub pyramid: FeaturePyramid,
    pub l0: Var,
    pub fused0: [Var; 3],
    pub cim: CimState,
    pub pred: MaskPrediction,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Params,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        init_visual(&config.visual(), &mut params, &mut rng)?;
        init_phrase(&config.phrase(vocab.len()), &mut params, &mut rng)?;
        init_fusion(&config.fusion(), &mut params, &mut rng)?;
        init_cim(&config.cim(), &mut params, &mut rng)?;
        init_head(&config.head(), &mut params, &mut rng)?;
        Ok(Model {
            config,
            vocab,
            params,
        })
    }

    pub fn encode_phrases<S: AsRef<str>>(&self, phrases: &[S]) -> Result<PhraseSet> {
        PhraseSet::from_texts(phrases, &self.vocab)
    }

    /// Build the graph for one `(image, phrases)` pair inside `fx`.
    pub fn forward(
        &self,
        fx: &mut Forward<'_>,
        image: &Tensor,
        phrases: &PhraseSet,
    ) -> Result<ModelOutput> {
        let s = image.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::shape(
                "model",
                format!("image must be [H, W, 3], got {s:?}"),
            ));
        }
        let (h, w) = (s[0], s[1]);
        let mut img = fx.g.constant(image.clone())?;
        if let Some([ih, iw]) = self.config.input_size {
            if (ih, iw) != (h, w) {
                img = fx.g.bilinear_upsample(img, ih, iw)?;
            }
        }
        let pyramid = visual_encode(fx, &self.config.visual(), img)?;
        let l0 = phrase_encode(fx, &self.config.phrase(self.vocab.len()), phrases)?;
        let fused0 = build_initial_fused(fx, &self.config.fusion(), &pyramid, l0)?;
        let cim = cim_forward(fx, &self.config.cim(), l0, fused0)?;
        let cat = concat_levels(fx, &cim.fused)?;
        let a = aspp(fx, &self.config.head(), cat)?;
        let pred = predict_mask(fx, a, h, w)?;
        Ok(ModelOutput {
            pyramid,
            l0,
            fused0,
            cim,
            pred,
        })
    }

    /// Probability map `[H, W, 1]` for `image` and a set of phrases.
    pub fn predict<S: AsRef<str>>(
        &self,
        image: &Tensor,
        phrases: &[S],
        dtype: DType,
    ) -> Result<Tensor> {
        let set = self.encode_phrases(phrases)?;
        let mut fx = Forward::new(&self.params, dtype);
        let out = self.forward(&mut fx, image, &set)?;
        Ok(fx.g.value(out.pred.probs).clone().requires_grad(false))
    }
}
