//! One image, two phrase sets: each set should pick out its own object.
//!
//! cargo run --release --example phrase_swap -- CKPT [SCENES]

use std::path::{Path, PathBuf};

use cbce::data::{phrase_sample, two_object_scene, PhraseBank};
use cbce::tensor::DType;
use cbce::train::{load_checkpoint, phrase_swap, ExperimentConfig};
use cbce::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ascii(a: &[f64], b: &[f64], w: usize) {
    // 'A' / 'B': only that phrase set fires, '#': both, '.': neither. Rows are subsampled by 3 and columns by 2.
    for (ra, rb) in a.chunks(w).zip(b.chunks(w)).step_by(3) {
        let line: String = ra
            .iter()
            .zip(rb)
            .step_by(2)
            .map(|(&x, &y)| match (x >= 0.5, y >= 0.5) {
                (true, true) => '#',
                (true, false) => 'A',
                (false, true) => 'B',
                _ => '.',
            })
            .collect();
        println!("  {line}");
    }
}

fn main() -> cbce::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args
        .get(1)
        .ok_or_else(|| Error::Validation("usage: phrase_swap CKPT [SCENES]".into()))?;
    let scenes: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let ck = load_checkpoint(Path::new(ckpt))?;
    let n = ck.train.as_ref().map_or(4, |t| t.config.n_phrases);
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let synth = ExperimentConfig::load(&root.join("configs/toy.json"))?.synth;
    let bank = PhraseBank::toy();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = two_object_scene(&synth, 1, 4, &mut rng)?;
    let names = scene.classes.map(|c| synth.classes[c].name.as_str());
    let phrases = [
        phrase_sample(&bank, names[0], n, &mut rng)?,
        phrase_sample(&bank, names[1], n, &mut rng)?,
    ];
    println!(
        "A = {} {:?}\nB = {} {:?}",
        names[0], phrases[0], names[1], phrases[1]
    );
    let pa = ck.model.predict(&scene.image, &phrases[0], DType::F64)?;
    let pb = ck.model.predict(&scene.image, &phrases[1], DType::F64)?;
    ascii(pa.data(), pb.data(), synth.width);

    let rep = phrase_swap(&ck.model, &synth, &bank, scenes, n, 99, 0.5, DType::F64)?;
    for s in rep.scenes.iter().take(8) {
        println!(
            "{:>12} / {:<12} own IoU {:.2} {:.2}  mutual IoU {:.2}",
            s.classes[0], s.classes[1], s.own_iou[0], s.own_iou[1], s.mutual_iou
        );
    }
    println!(
        "{} of {} scenes separate cleanly (pass rate {:.2})",
        (rep.pass_rate(0.2, 0.6) * scenes as f64).round(),
        scenes,
        rep.pass_rate(0.2, 0.6)
    );
    Ok(())
}
