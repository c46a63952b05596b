//! Where the first vision-to-language attention step looks for a phrase.
//!
//! cargo run --release --example attention -- CKPT IMAGE.ppm "PHRASE" [...]

use std::path::Path;

use cbce::cim::{vlm, vlm_prefix};
use cbce::data::read_rgb;
use cbce::encoders::LEVELS;
use cbce::params::Forward;
use cbce::tensor::DType;
use cbce::train::load_checkpoint;
use cbce::Error;

const SHADES: &[u8] = b" .:-=+*#%@";

fn main() -> cbce::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let [_, ckpt, image, phrases @ ..] = args.as_slice() else {
        return Err(Error::Validation(
            "usage: attention CKPT IMAGE.ppm PHRASE...".into(),
        ));
    };
    if phrases.is_empty() {
        return Err(Error::Validation("at least one phrase is required".into()));
    }
    let model = load_checkpoint(Path::new(ckpt))?.model;
    let img = read_rgb(Path::new(image))?;
    let set = model.encode_phrases(phrases)?;
    let mut fx = Forward::new(&model.params, DType::F64);
    let out = model.forward(&mut fx, &img, &set)?;
    let cfg = model.config.cim();
    let (h, w) = (model.config.feat_h, model.config.feat_w);

    for (k, level) in LEVELS.into_iter().enumerate() {
        let v = vlm(
            &mut fx,
            &cfg,
            &vlm_prefix(0, 0, level),
            out.l0,
            out.fused0[k],
        )?;
        let att = fx.g.data(v.attention).to_vec();
        let peak = att.iter().cloned().fold(0.0, f64::max);
        let low = att.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "level {level}: weights {low:.4}..{peak:.4} (uniform would be {:.4})",
            1.0 / att.len() as f64
        );
        for row in att.chunks(w).take(h) {
            let line: String = row
                .iter()
                .map(|&a| {
                    SHADES[((a - low) / (peak - low).max(1e-12) * (SHADES.len() - 1) as f64).round()
                        as usize] as char
                })
                .flat_map(|c| [c, c])
                .collect();
            println!("  |{line}|");
        }
    }
    let probs = fx.g.data(out.pred.probs);
    let fg = probs.iter().filter(|&&p| p >= 0.5).count();
    println!(
        "mask covers {:.1}% of the image",
        100.0 * fg as f64 / probs.len() as f64
    );
    Ok(())
}
