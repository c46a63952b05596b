use std::path::{Path, PathBuf};

use super::layout;
use super::manifest::{load_manifest, ManifestRecord};
use super::phrases::PhraseBank;
use super::{read_mask, read_rgb};
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A generated dataset directory opened on one of its manifests.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub bank: PhraseBank,
    pub vocab: Vocabulary,
}

impl Dataset {
    /// `manifest` is a file name inside `root`, e.g. [`layout::TRAIN`].
    pub fn open(root: &Path, manifest: &str) -> Result<Self> {
        let records = load_manifest(&root.join(manifest))?;
        let bank = PhraseBank::load(&root.join(layout::PHRASE_BANK))?;
        let vocab = Vocabulary::load(&root.join(layout::VOCAB))?;
        for r in &records {
            bank.get(&r.affordance).map_err(|_| {
                Error::Validation(format!(
                    "record {} has unknown affordance {:?}",
                    r.id, r.affordance
                ))
            })?;
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            records,
            bank,
            vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        read_rgb(&self.root.join(&self.records[i].image))
    }

    pub fn mask(&self, i: usize) -> Result<Tensor> {
        read_mask(&self.root.join(&self.records[i].mask))
    }

    pub fn mask_of(&self, record: &ManifestRecord) -> Result<Tensor> {
        read_mask(&self.root.join(&record.mask))
    }
}
