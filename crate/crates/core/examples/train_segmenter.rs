//! Trains one architecture on procedural samples with early stopping and
//! saves the best checkpoint.
//!
//! `cargo run --release --example train_segmenter -- FPN`

use polypseg::dataset::{generate_synthetic_sample, SampleLabel};
use polypseg::training::{save_checkpoint, train, TrainConfig};
use polypseg::zoo::{build_model, ArchitectureKind, ModelConfig};

fn main() -> polypseg::Result<()> {
    let kind: ArchitectureKind = std::env::args().nth(1).as_deref().unwrap_or("UNet").parse()?;
    let gen = |seeds: std::ops::Range<u64>| -> polypseg::Result<Vec<_>> {
        seeds.map(|s| generate_synthetic_sample(s, SampleLabel::Polyps, (64, 64))).collect()
    };
    let (train_set, val_set) = (gen(0..16)?, gen(100..104)?);
    let model = build_model(&ModelConfig::new(kind).with_seed(1))?;
    let cfg = TrainConfig { epochs: 30, learning_rate: 3e-3, patience: 8, ..Default::default() };
    let (ckpt, history) = train(&model, &train_set, &val_set, &cfg)?;
    for r in &history.records {
        println!("epoch {:3} loss {:.4} val dice {:.4} lr {:.1e}", r.epoch, r.train_loss, r.val_dice, r.learning_rate);
    }
    let meta = save_checkpoint(&ckpt, format!("checkpoints/{kind}").as_ref())?;
    println!("best epoch {} (dice {:.4}) saved to {}", ckpt.meta.epoch, ckpt.meta.val_dice, meta.display());
    Ok(())
}
