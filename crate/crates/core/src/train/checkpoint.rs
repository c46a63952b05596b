//! Binary checkpoints.
//!
//! Layout: the magic bytes `CBCECKPT`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header, then raw little-endian `f64` data:
//! every parameter in header order, followed by the Adam first and second
//! moments in the same order when optimizer state is present. Values are
//! written at full precision, so a reload reproduces forward outputs bit for
//! bit.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamState;
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::Params;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CBCECKPT";
const VERSION: u32 = 1;

/// Everything needed to continue a training run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub step: u64,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    step: u64,
    adam_t: u64,
    rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    train: Option<TrainHeader>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put(buf: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, train: Option<&TrainState>) -> Result<()> {
    let header = Header {
        model: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: model
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        train: train.map(|s| TrainHeader {
            config: s.config.clone(),
            step: s.step,
            adam_t: s.adam.t,
            rng: RngState {
                seed: s.rng.get_seed().to_vec(),
                stream: s.rng.get_stream(),
                word_pos: s.rng.get_word_pos().to_string(),
            },
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 8 * model.params.numel() * 3 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in model.params.iter() {
        put(&mut buf, t.data());
    }
    if let Some(s) = train {
        for moments in [&s.adam.m, &s.adam.v] {
            for (name, _) in model.params.iter() {
                let m = moments
                    .get(name)
                    .ok_or_else(|| ck(format!("missing optimizer state for {name}")))?;
                put(&mut buf, m);
            }
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ck("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| ck("tensor too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8)? != MAGIC {
        return Err(ck(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ck(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(cur.take(hlen)?).map_err(|e| ck(format!("bad header: {e}")))?;
    header.model.validate()?;

    let mut params = Params::new();
    for e in &header.tensors {
        let n = e.shape.iter().product();
        params.insert(e.name.clone(), Tensor::new(&e.shape, cur.f64s(n)?)?)?;
    }
    let model = Model {
        config: header.model,
        vocab: header.vocab,
        params,
    };
    let expected = Model::init(model.config.clone(), model.vocab.clone(), 0)?;
    for ((a, ta), (b, tb)) in expected.params.iter().zip(model.params.iter()) {
        if a != b || ta.shape() != tb.shape() {
            return Err(ck(format!(
                "parameter {b} does not match the model layout (expected {a})"
            )));
        }
    }
    if expected.params.len() != model.params.len() {
        return Err(ck("parameter count does not match the model layout"));
    }

    let train = match header.train {
        None => None,
        Some(th) => {
            let mut moments = [IndexMap::new(), IndexMap::new()];
            for mm in &mut moments {
                for (name, t) in model.params.iter() {
                    mm.insert(name.to_string(), cur.f64s(t.numel())?);
                }
            }
            let [m, v] = moments;
            let seed: [u8; 32] = th
                .rng
                .seed
                .try_into()
                .map_err(|_| ck("rng seed must be 32 bytes"))?;
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_stream(th.rng.stream);
            rng.set_word_pos(
                th.rng
                    .word_pos
                    .parse()
                    .map_err(|_| ck("bad rng position"))?,
            );
            Some(TrainState {
                config: th.config,
                step: th.step,
                adam: AdamState { t: th.adam_t, m, v },
                rng,
            })
        }
    };
    if cur.pos != bytes.len() {
        return Err(ck(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(Checkpoint { model, train })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;
    use rand::RngCore;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            backbone_widths: [2, 2, 3, 3, 3],
            feat_h: 2,
            feat_w: 2,
            c_i: 3,
            embed_dim: 3,
            c_l: 3,
            c_f: 2,
            rank: 2,
            c_a: 3,
            ..Default::default()
        };
        Model::init(cfg, Vocabulary::build(["roll over"]), 5).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = tiny();
        let mut adam = AdamState::new(&model.params);
        adam.t = 7;
        adam.m
            .values_mut()
            .for_each(|m| m.iter_mut().for_each(|x| *x = 0.1f64.sqrt()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(2);
        rng.next_u64();
        let state = TrainState {
            config: TrainConfig::default(),
            step: 42,
            adam,
            rng,
        };
        save_checkpoint(&p, &model, Some(&state)).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.model.params, model.params);
        assert_eq!(back.model.vocab, model.vocab);
        let t = back.train.unwrap();
        assert_eq!(t.step, 42);
        assert_eq!(t.adam, state.adam);
        let mut r1 = state.rng.clone();
        let mut r2 = t.rng;
        assert_eq!(r1.next_u64(), r2.next_u64());

        let img = Tensor::from_fn(&[32, 32, 3], |i| (i % 11) as f64 / 11.0);
        let a = model.predict(&img, &["roll over"], DType::F64).unwrap();
        let b = back
            .model
            .predict(&img, &["roll over"], DType::F64)
            .unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &tiny(), None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&p, &extra).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
