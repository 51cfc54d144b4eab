//! Scores an untrained and a briefly trained model, prints the CSV report
//! and renders a bar chart plus one inference grid.

use polypseg::dataset::{generate_synthetic_sample, SampleLabel};
use polypseg::metrics::{evaluate_model, MetricsReport};
use polypseg::training::{train, TrainConfig};
use polypseg::viz::{render_grid, render_metric_bars, Metric};
use polypseg::zoo::{build_model, ArchitectureKind, MaskPredictor, ModelConfig};

fn main() -> polypseg::Result<()> {
    let samples: Vec<_> =
        (0..6).map(|s| generate_synthetic_sample(s, SampleLabel::Polyps, (64, 64))).collect::<polypseg::Result<_>>()?;
    let untrained = build_model(&ModelConfig::new(ArchitectureKind::LinkNet))?;
    let trained = build_model(&ModelConfig::new(ArchitectureKind::UNet))?;
    let cfg = TrainConfig { epochs: 20, learning_rate: 3e-3, ..Default::default() };
    train(&trained, &samples, &samples, &cfg)?;

    let (a, _) = evaluate_model(&untrained, "LinkNet", &samples, 0.5)?;
    let (b, per_sample) = evaluate_model(&trained, "UNet", &samples, 0.5)?;
    for s in &per_sample {
        println!("{} dice {:.3} psnr {:.2} ssim {:.3}", s.id, s.dice.value, s.psnr, s.ssim);
    }
    let report = MetricsReport::new(vec![a, b], 0.5, "example");
    print!("{}", report.to_csv());

    render_metric_bars(&report, &Metric::MASK)?.save_png("metrics_mask.png".as_ref())?;
    let s = &samples[0];
    let grid = render_grid(&s.image, s.gt_mask.as_ref().unwrap(), &trained.predict_map(&s.image)?, 0.5)?;
    grid.save_png("grid.png".as_ref())?;
    Ok(())
}
