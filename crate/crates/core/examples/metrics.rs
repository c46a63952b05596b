//! The five evaluation measures on a hand-made prediction.
//!
//! cargo run --example metrics

use cbce::metrics::{image_metrics, MetricOptions};

fn main() -> cbce::Result<()> {
    // 6x6 ground truth square at rows/cols 1..4; the prediction spills one column to the right.
    let (h, w) = (6, 6);
    let gt: Vec<f64> = (0..h * w)
        .map(|i| ((1..4).contains(&(i / w)) && (1..4).contains(&(i % w))) as u8 as f64)
        .collect();
    let pred: Vec<f64> = (0..h * w)
        .map(|i| {
            if (1..4).contains(&(i / w)) && (1..5).contains(&(i % w)) {
                0.9
            } else {
                0.05
            }
        })
        .collect();

    let show = |name: &str, v: &[f64]| {
        println!("{name}:");
        for row in v.chunks(w) {
            println!(
                "  {}",
                row.iter()
                    .map(|x| format!("{x:.2}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    };
    show("ground truth", &gt);
    show("prediction", &pred);

    for opts in [
        MetricOptions::default(),
        MetricOptions {
            threshold: 0.5,
            beta_sq: 1.0,
        },
    ] {
        let (m, cc_undefined) = image_metrics(&pred, &gt, &opts)?;
        println!(
            "threshold {} beta^2 {}: IoU {:.4}  F_beta {:.4}  E_phi {:.4}  CC {:.4}{}  MAE {:.4}",
            opts.threshold,
            opts.beta_sq,
            m.iou,
            m.fbeta,
            m.ephi,
            m.cc,
            if cc_undefined { " (undefined)" } else { "" },
            m.mae
        );
    }
    Ok(())
}
