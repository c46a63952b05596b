//! Synthetic affordance scenes: one target shape plus distractors of other
//! classes on a noisy background, with a binary mask over the target.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout;
use super::manifest::{write_manifest, ManifestRecord};
use super::phrases::{phrase_sample, PhraseBank};
use super::{write_mask, write_rgb};
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GAP: f64 = 2.0;
const PLACEMENT_TRIES: usize = 200;
const SCENE_TRIES: usize = 20;
const COLOR_JITTER: f64 = 0.06;
const NOISE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Annulus,
    Wedge,
    Rectangle,
    Triangle,
    Cross,
}

impl ShapeKind {
    /// Whether offset `(dy, dx)` from the centre lies inside a shape of
    /// outer radius `r`. Every shape fits in the square `|dx|, |dy| <= r`.
    pub fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        if dx.abs() > r || dy.abs() > r {
            return false;
        }
        let d2 = dx * dx + dy * dy;
        match self {
            ShapeKind::Disc => d2 <= r * r,
            ShapeKind::Annulus => d2 <= r * r && d2 >= (0.45 * r).powi(2),
            ShapeKind::Wedge => {
                let u = (dx + r) / (2.0 * r);
                dy.abs() <= 0.9 * r * (1.0 - u)
            }
            ShapeKind::Rectangle => dy.abs() <= 0.6 * r,
            ShapeKind::Triangle => dx.abs() <= 0.5 * (dy + r),
            ShapeKind::Cross => dx.abs() <= 0.35 * r || dy.abs() <= 0.35 * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub color: [f64; 3],
}

/// The six built-in affordance classes.
pub fn class_catalog() -> Vec<ClassSpec> {
    let c = |name: &str, shape, color| ClassSpec {
        name: name.into(),
        shape,
        color,
    };
    vec![
        c("roll", ShapeKind::Disc, [0.90, 0.25, 0.20]),
        c("contain", ShapeKind::Annulus, [0.20, 0.70, 0.90]),
        c("cut", ShapeKind::Wedge, [0.85, 0.85, 0.85]),
        c("stack", ShapeKind::Rectangle, [0.90, 0.75, 0.15]),
        c("support", ShapeKind::Triangle, [0.30, 0.80, 0.30]),
        c("hang", ShapeKind::Cross, [0.70, 0.35, 0.85]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub classes: Vec<ClassSpec>,
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Phrases stored per manifest record.
    pub n_phrases: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 90,
            width: 90,
            samples: 800,
            classes: class_catalog(),
            min_distractors: 0,
            max_distractors: 3,
            min_radius: 11.0,
            max_radius: 16.0,
            n_phrases: 4,
            train_fraction: 0.75,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.classes.len() < 2 {
            return bad(format!(
                "need at least 2 affordance classes, got {}",
                self.classes.len()
            ));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.classes.len() {
            return bad("duplicate class names".into());
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("image {}x{} is too small", self.height, self.width));
        }
        if self.min_distractors > self.max_distractors {
            return bad("min_distractors exceeds max_distractors".into());
        }
        if self.max_distractors + 1 > self.classes.len() {
            return bad(format!(
                "{} distractors need {} classes besides the target",
                self.max_distractors, self.max_distractors
            ));
        }
        if !(self.min_radius >= 1.0 && self.min_radius <= self.max_radius) {
            return bad(format!(
                "bad radius range [{}, {}]",
                self.min_radius, self.max_radius
            ));
        }
        if self.n_phrases == 0 {
            return bad("n_phrases must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            ));
        }
        for c in &self.classes {
            if c.color.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("class {} color outside [0, 1]", c.name));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Validation(format!("unknown affordance {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub class: usize,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub background: [f64; 3],
    pub noise_seed: u64,
    /// The first object is the target.
    pub objects: Vec<PlacedObject>,
}

/// SplitMix64 finalizer, used to derive independent per-record seeds.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic train/test split of `n` records: indices are ranked by a
/// seeded hash and the first `round(n * train_fraction)` go to training.
/// Both halves come back sorted.
pub fn hash_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (split_seed(seed ^ 0x5EED_5EED, i as u64), i));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn jitter<R: Rng>(color: [f64; 3], rng: &mut R) -> [f64; 3] {
    color.map(|c| (c + rng.gen_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0.0, 1.0))
}

fn place<R: Rng>(cfg: &SynthConfig, classes: &[usize], rng: &mut R) -> Option<Vec<PlacedObject>> {
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(classes.len());
    for &class in classes {
        let mut ok = false;
        for _ in 0..PLACEMENT_TRIES {
            let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let lo_y = r;
            let hi_y = cfg.height as f64 - r;
            let lo_x = r;
            let hi_x = cfg.width as f64 - r;
            if lo_y > hi_y || lo_x > hi_x {
                continue;
            }
            let cy = rng.gen_range(lo_y..=hi_y);
            let cx = rng.gen_range(lo_x..=hi_x);
            let clear = placed.iter().all(|o| {
                (o.cy - cy).abs() >= o.radius + r + GAP || (o.cx - cx).abs() >= o.radius + r + GAP
            });
            if clear {
                let color = jitter(cfg.classes[class].color, rng);
                placed.push(PlacedObject {
                    class,
                    cy,
                    cx,
                    radius: r,
                    color,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

fn place_scene<R: Rng>(cfg: &SynthConfig, classes: &[usize], rng: &mut R) -> Result<Scene> {
    let background = [0.0; 3].map(|_: f64| rng.gen_range(0.05..0.30));
    let noise_seed = rng.gen();
    for _ in 0..SCENE_TRIES {
        if let Some(objects) = place(cfg, classes, rng) {
            return Ok(Scene {
                height: cfg.height,
                width: cfg.width,
                background,
                noise_seed,
                objects,
            });
        }
    }
    Err(Error::Validation(format!(
        "could not place {} objects on a {}x{} canvas after {} attempts",
        classes.len(),
        cfg.height,
        cfg.width,
        SCENE_TRIES
    )))
}

/// Sample a scene whose target has class `target` (or a uniform class when
/// `None`), plus distinct distractor classes.
pub fn sample_scene<R: Rng>(
    cfg: &SynthConfig,
    target: Option<usize>,
    rng: &mut R,
) -> Result<Scene> {
    let k = cfg.classes.len();
    let target = match target {
        Some(t) if t < k => t,
        Some(t) => return Err(Error::Validation(format!("class index {t} out of range"))),
        None => rng.gen_range(0..k),
    };
    let n_distract = rng.gen_range(cfg.min_distractors..=cfg.max_distractors);
    let mut others: Vec<usize> = (0..k).filter(|&c| c != target).collect();
    others.shuffle(rng);
    let mut classes = vec![target];
    classes.extend(others.into_iter().take(n_distract));
    place_scene(cfg, &classes, rng)
}

/// Rasterize at pixel centres. Returns the `[H, W, 3]` image and the class
/// painted last at each pixel; later objects are drawn on top.
fn rasterize(scene: &Scene, shapes: &[ShapeKind]) -> (Tensor, Vec<Option<usize>>) {
    let (h, w) = (scene.height, scene.width);
    let mut noise = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let mut img = vec![0.0; h * w * 3];
    let mut labels = vec![None; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut rgb = scene.background;
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            for o in &scene.objects {
                if shapes[o.class].contains(py - o.cy, px - o.cx, o.radius) {
                    rgb = o.color;
                    labels[y * w + x] = Some(o.class);
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                let n: f64 = noise.gen_range(-NOISE..=NOISE);
                img[(y * w + x) * 3 + c] = (v + n).clamp(0.0, 1.0);
            }
        }
    }
    (Tensor::new(&[h, w, 3], img).expect("sized buffer"), labels)
}

/// Render `scene` into an `[H, W, 3]` image and the `[H, W, 1]` mask of
/// the target class.
pub fn render_scene(cfg: &SynthConfig, scene: &Scene) -> Result<(Tensor, Tensor)> {
    let target = scene
        .objects
        .first()
        .ok_or_else(|| Error::Validation("scene has no objects".into()))?
        .class;
    let (img, labels) = render_labels(cfg, scene)?;
    Ok((img, class_mask(&labels, target, scene.height, scene.width)))
}

fn render_labels(cfg: &SynthConfig, scene: &Scene) -> Result<(Tensor, Vec<Option<usize>>)> {
    if let Some(o) = scene.objects.iter().find(|o| o.class >= cfg.classes.len()) {
        return Err(Error::Validation(format!(
            "object class {} out of range",
            o.class
        )));
    }
    let shapes: Vec<ShapeKind> = cfg.classes.iter().map(|c| c.shape).collect();
    Ok(rasterize(scene, &shapes))
}

fn class_mask(labels: &[Option<usize>], class: usize, h: usize, w: usize) -> Tensor {
    let data = labels
        .iter()
        .map(|l| (*l == Some(class)) as u8 as f64)
        .collect();
    Tensor::new(&[h, w, 1], data).expect("sized buffer")
}

/// A scene with exactly two objects of different classes and a mask for
/// each, for phrase-swap checks.
#[derive(Debug, Clone)]
pub struct TwoObjectScene {
    pub image: Tensor,
    pub classes: [usize; 2],
    pub masks: [Tensor; 2],
}

pub fn two_object_scene<R: Rng>(
    cfg: &SynthConfig,
    a: usize,
    b: usize,
    rng: &mut R,
) -> Result<TwoObjectScene> {
    if a == b || a >= cfg.classes.len() || b >= cfg.classes.len() {
        return Err(Error::Validation(format!(
            "need two distinct valid classes, got {a} and {b}"
        )));
    }
    let scene = place_scene(cfg, &[a, b], rng)?;
    let (image, labels) = render_labels(cfg, &scene)?;
    let masks = [a, b].map(|c| class_mask(&labels, c, cfg.height, cfg.width));
    Ok(TwoObjectScene {
        image,
        classes: [a, b],
        masks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub per_class: BTreeMap<String, usize>,
}

struct Generated {
    record: ManifestRecord,
    image: Tensor,
    mask: Tensor,
}

fn generate_one(cfg: &SynthConfig, bank: &PhraseBank, index: usize) -> Result<Generated> {
    let seed = split_seed(cfg.seed, index as u64);
    let mut geo = ChaCha8Rng::seed_from_u64(seed);
    geo.set_stream(0);
    let mut words = ChaCha8Rng::seed_from_u64(seed);
    words.set_stream(1);
    let scene = sample_scene(cfg, None, &mut geo)?;
    let (image, mask) = render_scene(cfg, &scene)?;
    let affordance = cfg.classes[scene.objects[0].class].name.clone();
    let phrases = phrase_sample(bank, &affordance, cfg.n_phrases, &mut words)?;
    let id = format!("{index:05}");
    let record = ManifestRecord {
        image: format!("images/{id}.ppm").into(),
        mask: format!("masks/{id}.pgm").into(),
        id,
        affordance,
        phrases,
    };
    Ok(Generated {
        record,
        image,
        mask,
    })
}

/// Generate the whole dataset into `out`: images, masks, the full manifest,
/// the train/test manifests, the phrase bank and the vocabulary. Records are
/// produced in parallel; each one draws from its own seeded generator, so
/// the output does not depend on the thread count.
pub fn synth_generate(cfg: &SynthConfig, bank: &PhraseBank, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    bank.validate()?;
    for c in &cfg.classes {
        let have = bank.get(&c.name)?.len();
        if have < cfg.n_phrases {
            return Err(Error::Validation(format!(
                "class {} has {have} phrases, need {}",
                c.name, cfg.n_phrases
            )));
        }
    }
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cfg.samples);
    let chunk = cfg.samples.div_ceil(threads);
    let chunks: Vec<Result<Vec<ManifestRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    let mut recs = Vec::new();
                    for i in t * chunk..((t + 1) * chunk).min(cfg.samples) {
                        let g = generate_one(cfg, bank, i)?;
                        write_rgb(&out.join(&g.record.image), &g.image)?;
                        write_mask(&out.join(&g.record.mask), &g.mask)?;
                        recs.push(g.record);
                    }
                    Ok(recs)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generator thread panicked"))
            .collect()
    });
    let mut records = Vec::with_capacity(cfg.samples);
    for c in chunks {
        records.extend(c?);
    }

    let (train_idx, test_idx) = hash_split(records.len(), cfg.train_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    write_manifest(&out.join(layout::MANIFEST), &records)?;
    write_manifest(&out.join(layout::TRAIN), &pick(&train_idx))?;
    write_manifest(&out.join(layout::TEST), &pick(&test_idx))?;
    bank.save(&out.join(layout::PHRASE_BANK))?;
    Vocabulary::build(bank.all_phrases()).save(&out.join(layout::VOCAB))?;

    let mut per_class: BTreeMap<String, usize> =
        cfg.classes.iter().map(|c| (c.name.clone(), 0)).collect();
    for r in &records {
        *per_class.entry(r.affordance.clone()).or_default() += 1;
    }
    Ok(SynthSummary {
        samples: records.len(),
        train: train_idx.len(),
        test: test_idx.len(),
        per_class,
    })
}
