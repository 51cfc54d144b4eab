//! Builds every architecture, runs one forward pass and lists the
//! structural events each decoder reports.

use polypseg::dataset::{generate_synthetic_sample, SampleLabel};
use polypseg::zoo::{build_model, image_to_batch, ArchitectureKind, ModelConfig, Trace};

fn main() -> polypseg::Result<()> {
    let sample = generate_synthetic_sample(3, SampleLabel::Polyps, (64, 64))?;
    let x = image_to_batch(&[&sample.image])?;
    for kind in ArchitectureKind::ALL {
        let model = build_model(&ModelConfig::new(kind))?;
        let (y, traces) = model.forward_traced(&x)?;
        let kinds: Vec<&str> = traces
            .iter()
            .map(|t| match t {
                Trace::ConcatSkip { .. } => "concat-skip",
                Trace::AdditiveSkip { .. } => "additive-skip",
                Trace::PyramidPool { .. } => "pyramid-pool",
                Trace::LateralProjection { .. } => "lateral",
                Trace::TopDownMerge { .. } => "top-down",
                Trace::PyramidAggregate { .. } => "aggregate",
                Trace::AttentionGate { .. } => "gate",
            })
            .collect();
        println!("{kind:8} {:>8} params, output {:?}, {}", model.param_count(), y.dims(), kinds.join(" "));
    }
    Ok(())
}
