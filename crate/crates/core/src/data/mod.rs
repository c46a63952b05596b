//! Dataset I/O, the synthetic affordance dataset, the phrase bank and
//! training-time augmentation.

mod augment;
mod dataset;
mod image_io;
mod manifest;
mod phrases;
mod synth;

pub use augment::{augment, crop, crop_size, hflip, CROP_RATIO};
pub use dataset::Dataset;
pub use image_io::{image_dims, read_mask, read_rgb, write_mask, write_rgb};
pub use manifest::{load_manifest, write_manifest, ManifestRecord};
pub use phrases::{phrase_sample, Perspective, Perspectives, PhraseBank};
pub use synth::{
    class_catalog, hash_split, render_scene, sample_scene, split_seed, synth_generate,
    two_object_scene, ClassSpec, PlacedObject, Scene, ShapeKind, SynthConfig, SynthSummary,
    TwoObjectScene,
};

/// Standard file names inside a generated dataset directory.
pub mod layout {
    pub const MANIFEST: &str = "manifest.jsonl";
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const PHRASE_BANK: &str = "phrase_bank.json";
    pub const VOCAB: &str = "vocab.txt";
}
