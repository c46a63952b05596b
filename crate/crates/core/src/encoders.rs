//! Visual and phrase encoders.
//!
//! The visual side is a five-stage strided CNN whose last three stages are
//! projected to a common width and resized to a common grid, giving the
//! feature pyramid `{I3, I4, I5}`. The language side embeds each phrase,
//! runs a shared LSTM over it and max-pools the final hidden states across
//! phrases into one global language vector `L0`.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Forward, Params};
use crate::tensor::Var;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Pyramid levels tapped from the backbone, in order.
pub const LEVELS: [usize; 3] = [3, 4, 5];

/// `I3, I4, I5`, each `[H, W, C_I]`.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    pub levels: [Var; 3],
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token table. Ids 0 and 1 are reserved for padding and unknown words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Validation(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Sorted vocabulary over every token appearing in `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        words.sort();
        words.dedup();
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    /// One token per line; the line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Number of tokens in `text` that are out of vocabulary.
    pub fn unknown_count(&self, text: &str) -> usize {
        tokenize(text)
            .iter()
            .filter(|t| !self.index.contains_key(t.as_str()))
            .count()
    }
}

/// Padded token-id sequences for the `n` phrases of one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    pub phrases: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl PhraseSet {
    pub fn new(sequences: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Validation(
                "a phrase set needs at least one phrase".into(),
            ));
        }
        if let Some(i) = sequences.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("phrase {i} is empty")));
        }
        if let Some(bad) = sequences.iter().flatten().find(|&&id| id >= vocab_size) {
            return Err(Error::Validation(format!(
                "token id {bad} >= vocabulary size {vocab_size}"
            )));
        }
        let lengths: Vec<usize> = sequences.iter().map(Vec::len).collect();
        let max_len = *lengths.iter().max().expect("non-empty");
        let phrases = sequences
            .into_iter()
            .map(|mut s| {
                s.resize(max_len, PAD_ID);
                s
            })
            .collect();
        Ok(PhraseSet {
            phrases,
            lengths,
            vocab_size,
            max_len,
        })
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S], vocab: &Vocabulary) -> Result<Self> {
        Self::new(
            texts.iter().map(|t| vocab.encode(t.as_ref())).collect(),
            vocab.len(),
        )
    }

    pub fn n(&self) -> usize {
        self.phrases.len()
    }

    /// Unpadded ids of phrase `i`.
    pub fn tokens(&self, i: usize) -> &[usize] {
        &self.phrases[i][..self.lengths[i]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualConfig {
    /// Output channels of the five backbone stages.
    pub widths: [usize; 5],
    pub c_i: usize,
    pub feat_h: usize,
    pub feat_w: usize,
}

/// Total downsampling of the backbone.
pub const BACKBONE_STRIDE: usize = 32;

pub fn init_visual<R: Rng>(cfg: &VisualConfig, params: &mut Params, rng: &mut R) -> Result<()> {
    let mut cin = 3;
    for (s, &cout) in cfg.widths.iter().enumerate() {
        let name = format!("visual.stage{}", s + 1);
        params.init_fan_in(
            format!("{name}.w"),
            &[3, 3, cin, cout],
            9 * cin,
            2f64.sqrt(),
            rng,
        )?;
        params.init_const(format!("{name}.b"), &[cout], 0.0)?;
        cin = cout;
    }
    for (li, level) in LEVELS.iter().enumerate() {
        let c = cfg.widths[2 + li];
        let name = format!("visual.proj{level}");
        params.init_fan_in(format!("{name}.w"), &[1, 1, c, cfg.c_i], c, 1.0, rng)?;
        params.init_const(format!("{name}.b"), &[cfg.c_i], 0.0)?;
    }
    Ok(())
}

/// `image: [H, W, 3]` with values in `[0, 1]`.
pub fn visual_encode(
    fx: &mut Forward<'_>,
    cfg: &VisualConfig,
    image: Var,
) -> Result<FeaturePyramid> {
    let shape = fx.g.shape(image).to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape(
            "visual_encode",
            format!("expected [H, W, 3], got {shape:?}"),
        ));
    }
    if shape[0] < BACKBONE_STRIDE || shape[1] < BACKBONE_STRIDE {
        return Err(Error::Validation(format!(
            "image {}x{} is smaller than the backbone stride {BACKBONE_STRIDE}",
            shape[0], shape[1]
        )));
    }
    if fx.g.data(image).iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation("image values must lie in [0, 1]".into()));
    }
    let mut x = image;
    let mut taps = Vec::with_capacity(3);
    for s in 1..=5 {
        let w = fx.p(&format!("visual.stage{s}.w"))?;
        let b = fx.p(&format!("visual.stage{s}.b"))?;
        let y = fx.g.conv2d_strided(x, w, Some(b), 2, 1)?;
        x = fx.g.relu(y)?;
        if s >= 3 {
            taps.push(x);
        }
    }
    let mut levels = [image; 3];
    for (li, (&level, &tap)) in LEVELS.iter().zip(&taps).enumerate() {
        let p = fx.conv1x1(tap, &format!("visual.proj{level}"))?;
        let s = fx.g.shape(p);
        levels[li] = if s[0] == cfg.feat_h && s[1] == cfg.feat_w {
            p
        } else {
            fx.g.bilinear_upsample(p, cfg.feat_h, cfg.feat_w)?
        };
    }
    Ok(FeaturePyramid { levels })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden size of the recurrent encoder, which is also `C_l`.
    pub c_l: usize,
}

pub fn init_phrase<R: Rng>(cfg: &PhraseConfig, params: &mut Params, rng: &mut R) -> Result<()> {
    let (e, c) = (cfg.embed_dim, cfg.c_l);
    params.init_uniform("lang.embed", &[cfg.vocab_size, e], 0.08, rng)?;
    params.init_fan_in("lang.lstm.wx", &[e, 4 * c], e, 1.0, rng)?;
    params.init_fan_in("lang.lstm.wh", &[c, 4 * c], c, 1.0, rng)?;
    // forget-gate bias starts at 1
    let bias =
        crate::tensor::Tensor::from_fn(
            &[4 * c],
            |i| if (c..2 * c).contains(&i) { 1.0 } else { 0.0 },
        );
    params.insert("lang.lstm.b", bias)
}

/// Final hidden state of the shared LSTM over one phrase, `[C_l]`.
pub fn encode_phrase(fx: &mut Forward<'_>, cfg: &PhraseConfig, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot encode an empty phrase".into()));
    }
    let c = cfg.c_l;
    let table = fx.p("lang.embed")?;
    let wx = fx.p("lang.lstm.wx")?;
    let wh = fx.p("lang.lstm.wh")?;
    let b = fx.p("lang.lstm.b")?;
    let emb = fx.g.gather_rows(table, tokens)?;
    let xp = fx.g.matmul(emb, wx)?;
    let xp = fx.g.add_row(xp, b)?;
    let mut state: Option<(Var, Var)> = None;
    for t in 0..tokens.len() {
        let mut z = fx.g.slice(xp, 0, t, 1)?;
        if let Some((h, _)) = state {
            let r = fx.g.matmul(h, wh)?;
            z = fx.g.add(z, r)?;
        }
        let i = fx.g.slice(z, 1, 0, c)?;
        let i = fx.g.sigmoid(i)?;
        let f = fx.g.slice(z, 1, c, c)?;
        let f = fx.g.sigmoid(f)?;
        let gg = fx.g.slice(z, 1, 2 * c, c)?;
        let gg = fx.g.tanh(gg)?;
        let o = fx.g.slice(z, 1, 3 * c, c)?;
        let o = fx.g.sigmoid(o)?;
        let ig = fx.g.mul(i, gg)?;
        let cell = match state {
            Some((_, prev)) => {
                let keep = fx.g.mul(f, prev)?;
                fx.g.add(keep, ig)?
            }
            None => ig,
        };
        let tc = fx.g.tanh(cell)?;
        let h = fx.g.mul(o, tc)?;
        state = Some((h, cell));
    }
    let (h, _) = state.expect("at least one step");
    fx.g.reshape(h, &[c])
}

/// Global language feature `L0`: element-wise max over per-phrase encodings.
pub fn phrase_encode(fx: &mut Forward<'_>, cfg: &PhraseConfig, phrases: &PhraseSet) -> Result<Var> {
    let per_phrase = (0..phrases.n())
        .map(|i| encode_phrase(fx, cfg, phrases.tokens(i)))
        .collect::<Result<Vec<_>>>()?;
    if per_phrase.len() == 1 {
        return Ok(per_phrase[0]);
    }
    fx.g.elementwise_max(&per_phrase)
}
