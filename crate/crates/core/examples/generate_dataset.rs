//! Writes a small procedural dataset, builds its manifest and splits it.
//!
//! `cargo run --example generate_dataset -- /tmp/polyps`

use polypseg::dataset::{
    build_manifest, generate_synthetic_sample, split_dataset, write_sample, Layout, SampleLabel, Split,
};

fn main() -> polypseg::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "polyp-data".into());
    for seed in 0..10u64 {
        let label = if seed < 8 { SampleLabel::Polyps } else { SampleLabel::NonPolyps };
        let sample = generate_synthetic_sample(seed, label, (96, 96))?;
        write_sample(&sample, root.as_ref())?;
        println!("{}: {} box(es)", sample.id, sample.gt_boxes.len());
    }
    let built = build_manifest(root.as_ref())?;
    let manifest = split_dataset(&built.manifest, 0.8, 42)?;
    manifest.save(&Layout::new(&root).manifest_path())?;
    println!(
        "{} samples, {} train / {} val, manifest at {}",
        manifest.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        Layout::new(&root).manifest_path().display()
    );
    Ok(())
}
