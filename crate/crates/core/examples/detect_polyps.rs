//! Trains the anchor detector on procedural images, then scores and
//! serializes its detections on held-out ones.

use polypseg::dataset::{generate_synthetic_sample, SampleLabel};
use polypseg::detection::{
    annotate_image, detect, match_detections, serialize_detections, train_detector, AnchorDetector, DetectionMetrics,
    DetectorConfig,
};

fn main() -> polypseg::Result<()> {
    let gen = |seeds: std::ops::Range<u64>| -> polypseg::Result<Vec<_>> {
        seeds.map(|s| generate_synthetic_sample(s, SampleLabel::Polyps, (64, 64))).collect()
    };
    let train = gen(0..64)?;
    let test = gen(1000..1016)?;
    let mut detector = AnchorDetector::new(DetectorConfig { epochs: 25, ..Default::default() })?;
    let losses = train_detector(&mut detector, &train)?;
    println!("loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);

    let mut per_image = Vec::new();
    for s in &test {
        let dets = detect(&s.image, &detector, 0.5)?;
        per_image.push(match_detections(&dets, &s.gt_boxes, 0.5));
    }
    let m = DetectionMetrics::merge(per_image);
    println!("precision {:.3} recall {:.3} f1 {:.3}", m.precision, m.recall, m.f1);

    let dets = detect(&test[0].image, &detector, 0.5)?;
    print!("{}", serialize_detections(&dets));
    annotate_image(&test[0].image, &dets).save_png("annotated.png".as_ref())?;
    Ok(())
}
