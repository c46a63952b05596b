//! Generate the toy dataset and a two-object scene.
//!
//! cargo run --example synth_dataset -- [OUT_DIR]

use std::path::PathBuf;

use cbce::data::{
    layout, load_manifest, synth_generate, two_object_scene, write_mask, write_rgb, PhraseBank,
};
use cbce::train::ExperimentConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cbce::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/toy-data".into()),
    );
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let exp = ExperimentConfig::load(&root.join("configs/toy.json"))?;
    let bank = PhraseBank::toy();

    let summary = synth_generate(&exp.synth, &bank, &out)?;
    println!(
        "wrote {} samples to {} ({} train / {} test)",
        summary.samples,
        out.display(),
        summary.train,
        summary.test
    );
    for (class, n) in &summary.per_class {
        println!("  {class:<14} {n}");
    }

    let train = load_manifest(&out.join(layout::TRAIN))?;
    let r = &train[0];
    println!(
        "first record: {} [{}] phrases {:?}",
        r.id, r.affordance, r.phrases
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scene = two_object_scene(&exp.synth, 0, 3, &mut rng)?;
    let names = scene.classes.map(|c| exp.synth.classes[c].name.clone());
    write_rgb(&out.join("pair.ppm"), &scene.image)?;
    for (name, mask) in names.iter().zip(&scene.masks) {
        write_mask(&out.join(format!("pair_{name}.pgm")), mask)?;
    }
    println!(
        "two-object scene {names:?} written to {}",
        out.join("pair.ppm").display()
    );
    Ok(())
}
