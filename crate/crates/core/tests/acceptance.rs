//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, in order, with timing.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polypseg::config::CliConfig;
use polypseg::dataset::{
    augment_sample, build_manifest, generate_synthetic_sample, split_dataset, write_sample, AugmentationConfig,
    SampleLabel, Split,
};
use polypseg::detection::{
    detect, harmonic_mean, match_detections, train_detector, AnchorDetector, DetectionMetrics, DetectorConfig,
    OracleDetector,
};
use polypseg::losses::{hybrid_gradient, hybrid_loss, LossWeights};
use polypseg::metrics::{confusion_counts, psnr, ssim, Ratio};
use polypseg::pipeline::run_pipeline;
use polypseg::prompt::{boxes_to_mask, ReferenceSegmenter};
use polypseg::raster::{BinaryMask, ProbabilityMap};
use polypseg::training::{mean_dice, train, CheckpointMeta, TrainConfig, META_FILE};
use polypseg::zoo::{build_model, ArchitectureKind, GateKind, ModelConfig, Trace, PSP_BINS};

// Pinned tolerances and budgets.
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const F1_TOL: f64 = 5e-4;
const PSNR_TOL: f64 = 1e-3;
const SSIM_DISJOINT_MAX: f64 = 1e-3;
const IMAGE_METRIC_BUDGET: Duration = Duration::from_secs(1);
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const ZOO_BUDGET: Duration = Duration::from_secs(30);
const OVERFIT_DICE: f64 = 0.90;
const OVERFIT_MAX_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const DETECT_RECALL: f64 = 0.80;
const DETECT_PRECISION: f64 = 0.70;
const DETECT_BUDGET: Duration = Duration::from_secs(600);
const PROMPT_MASK_IOU: f64 = 0.80;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    let data = (0..h * w).map(|_| u8::from(rng.random_bool(density))).collect();
    BinaryMask::from_vec(h, w, data).unwrap()
}

/// Pixel-loop counting, kept independent of the library's confusion counts.
fn brute_force(pred: &BinaryMask, gt: &BinaryMask) -> [Option<f64>; 5] {
    let (mut inter, mut p, mut g, mut union) = (0u32, 0u32, 0u32, 0u32);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let a = pred.get(x, y) == 1;
            let b = gt.get(x, y) == 1;
            inter += u32::from(a && b);
            union += u32::from(a || b);
            p += u32::from(a);
            g += u32::from(b);
        }
    }
    let frac = |n: u32, d: u32| (d > 0).then(|| n as f64 / d as f64);
    [frac(inter, union), frac(2 * inter, p + g), frac(inter, p), frac(inter, g), frac(2 * inter, p + g)]
}

fn metric_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0f64;
    let mut mismatched_definedness = 0;
    for i in 0..200 {
        // Sweep densities so empty and full masks occur too.
        let dp = [0.0, 0.05, 0.5, 0.95, 1.0][i % 5];
        let dg = [0.5, 0.0, 0.3, 1.0, 0.7][(i / 5) % 5];
        let pred = random_mask(&mut rng, 16, 16, dp);
        let gt = random_mask(&mut rng, 16, 16, dg);
        let c = confusion_counts(&pred, &gt).unwrap();
        let got: [Ratio; 5] = [c.iou(), c.dice(), c.precision(), c.recall(), c.f1()];
        for (r, want) in got.iter().zip(brute_force(&pred, &gt)) {
            match want {
                Some(v) if !r.undefined => worst = worst.max((r.value - v).abs()),
                None if r.undefined => {}
                _ => mismatched_definedness += 1,
            }
        }
    }
    let t = start.elapsed();
    check(
        worst < ORACLE_TOL && mismatched_definedness == 0 && t < ORACLE_BUDGET,
        format!("max abs err {worst:.3e}, definedness mismatches {mismatched_definedness}, {:.2?}", t),
    )
}

fn f1_reference_identity() -> Outcome {
    let f1 = harmonic_mean(0.8897, 0.9308);
    check((f1 - 0.9098).abs() <= F1_TOL, format!("f1 = {f1:.6}"))
}

fn closed_form_image_metrics() -> Outcome {
    let start = Instant::now();
    let half = ProbabilityMap::filled(32, 32, 0.5);
    let one = ProbabilityMap::filled(32, 32, 1.0);
    let zero = ProbabilityMap::filled(32, 32, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = ProbabilityMap::from_vec(32, 32, (0..32 * 32).map(|_| rng.random::<f32>()).collect()).unwrap();
    let p = psnr(&half, &one).unwrap();
    let s_same = ssim(&noisy, &noisy).unwrap();
    let s_disjoint = ssim(&zero, &one).unwrap();
    let t = start.elapsed();
    check(
        (p - 6.0206).abs() <= PSNR_TOL && s_same == 1.0 && s_disjoint < SSIM_DISJOINT_MAX && t < IMAGE_METRIC_BUDGET,
        format!("psnr {p:.5} dB, ssim(same) {s_same}, ssim(0,1) {s_disjoint:.3e}, {t:.2?}"),
    )
}

fn loss_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..0.99)).collect();
    let target: Vec<f64> = (0..64).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
    let w = LossWeights::components(1.0, 1.0, 1.0);
    assert_eq!((w.focal_gamma, w.focal_alpha), (2.0, 0.25));
    let grad = hybrid_gradient(&pred, &target, &w).unwrap();
    let mut worst = 0f64;
    for i in 0..pred.len() {
        let mut up = pred.clone();
        let mut down = pred.clone();
        up[i] += GRAD_STEP;
        down[i] -= GRAD_STEP;
        let fd =
            (hybrid_loss(&up, &target, &w).unwrap() - hybrid_loss(&down, &target, &w).unwrap()) / (2.0 * GRAD_STEP);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    check(worst < GRAD_REL_TOL, format!("max relative error {worst:.3e} over 64 pixels"))
}

fn structural_distinguishers(kind: ArchitectureKind, traces: &[Trace]) -> bool {
    let count = |f: &dyn Fn(&Trace) -> bool| traces.iter().filter(|t| f(t)).count();
    match kind {
        ArchitectureKind::UNet => {
            count(&|t| {
                matches!(t, Trace::ConcatSkip { decoder_channels, skip_channels, merged_channels, .. }
                if decoder_channels + skip_channels == *merged_channels)
            }) == 4
                && count(&|t| matches!(t, Trace::AdditiveSkip { .. })) == 0
        }
        ArchitectureKind::LinkNet => {
            count(&|t| matches!(t, Trace::AdditiveSkip { .. })) == 4
                && count(&|t| matches!(t, Trace::ConcatSkip { .. })) == 0
        }
        ArchitectureKind::PSPNet => {
            PSP_BINS == [1, 2, 3, 6]
                && count(&|t| matches!(t, Trace::PyramidPool { bins, .. } if bins.as_slice() == [1, 2, 3, 6])) == 1
        }
        ArchitectureKind::FPN => {
            count(&|t| matches!(t, Trace::LateralProjection { kernel: 1, .. })) == 4
                && count(&|t| matches!(t, Trace::TopDownMerge { .. })) == 3
                && count(&|t| matches!(t, Trace::PyramidAggregate { levels: 4 })) == 1
        }
        ArchitectureKind::MANet => {
            let gates: Vec<_> = traces
                .iter()
                .filter_map(|t| match t {
                    Trace::AttentionGate { kind, min, max, .. } => Some((*kind, *min, *max)),
                    _ => None,
                })
                .collect();
            gates.iter().any(|g| g.0 == GateKind::Channel)
                && gates.iter().any(|g| g.0 == GateKind::Spatial)
                && gates.iter().all(|&(_, lo, hi)| lo > 0.0 && hi < 1.0)
        }
    }
}

fn architecture_shape_and_range() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    for side in [64usize, 96] {
        let data: Vec<f32> = (0..2 * 3 * side * side).map(|_| rng.random()).collect();
        let x = Tensor::from_vec(data, (2, 3, side, side), &Device::Cpu).unwrap();
        for kind in ArchitectureKind::ALL {
            let model = build_model(&ModelConfig::new(kind).with_input_size(side, side)).unwrap();
            let (y, traces) = model.forward_traced(&x).unwrap();
            let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let (lo, hi) = v.iter().fold((f32::MAX, f32::MIN), |(a, b), &p| (a.min(p), b.max(p)));
            if y.dims() != [2, 1, side, side] {
                failures.push(format!("{kind}@{side}: shape {:?}", y.dims()));
            }
            if !(lo > 0.0 && hi < 1.0) {
                failures.push(format!("{kind}@{side}: range [{lo}, {hi}]"));
            }
            if !structural_distinguishers(kind, &traces) {
                failures.push(format!("{kind}@{side}: structure"));
            }
        }
    }
    let t = start.elapsed();
    if t >= ZOO_BUDGET {
        failures.push(format!("took {t:.2?}"));
    }
    check(failures.is_empty(), format!("10 forward passes in {t:.2?} {}", failures.join("; ")))
}

fn overfit_smoke() -> Outcome {
    let fixture: Vec<_> =
        (0..4).map(|i| generate_synthetic_sample(7 + i, SampleLabel::Polyps, (64, 64)).unwrap()).collect();
    let cfg = TrainConfig {
        epochs: OVERFIT_MAX_EPOCHS,
        batch_size: 4,
        learning_rate: 3e-3,
        patience: OVERFIT_MAX_EPOCHS,
        seed: 7,
        target_val_dice: Some(OVERFIT_DICE),
        ..Default::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in ArchitectureKind::ALL {
        let start = Instant::now();
        let model = build_model(&ModelConfig::new(kind).with_seed(7)).unwrap();
        let (ckpt, history) = train(&model, &fixture, &fixture, &cfg).unwrap();
        let dice = mean_dice(&model, &fixture).unwrap();
        let t = start.elapsed();
        ok &= dice >= OVERFIT_DICE && history.records.len() <= OVERFIT_MAX_EPOCHS && t < OVERFIT_BUDGET;
        parts.push(format!("{kind} {dice:.3}@{} in {:.0}s", ckpt.meta.epoch, t.as_secs_f64()));
    }
    check(ok, parts.join(", "))
}

fn detection_analogue() -> Outcome {
    let start = Instant::now();
    let gen = |seeds: std::ops::Range<u64>| -> Vec<_> {
        seeds.map(|s| generate_synthetic_sample(s, SampleLabel::Polyps, (64, 64)).unwrap()).collect()
    };
    let train_set = gen(1000..1200);
    let test_set = gen(5000..5050);
    let mut det = AnchorDetector::new(DetectorConfig::default()).unwrap();
    train_detector(&mut det, &train_set).unwrap();
    let m = DetectionMetrics::merge(
        test_set.iter().map(|s| match_detections(&detect(&s.image, &det, 0.5).unwrap(), &s.gt_boxes, 0.5)),
    );
    let t = start.elapsed();
    check(
        m.recall >= DETECT_RECALL && m.precision >= DETECT_PRECISION && t < DETECT_BUDGET,
        format!(
            "recall {:.3}, precision {:.3} (tp {} fp {} fn {}), {:.0}s",
            m.recall,
            m.precision,
            m.tp,
            m.fp,
            m.fn_,
            t.as_secs_f64()
        ),
    )
}

fn prompt_mask_quality() -> Outcome {
    let samples: Vec<_> =
        (3000..3050).map(|s| generate_synthetic_sample(s, SampleLabel::Polyps, (64, 64)).unwrap()).collect();
    let oracle = OracleDetector::from_samples(&samples);
    let seg = ReferenceSegmenter::default();
    let mut ious = Vec::new();
    for s in &samples {
        let boxes: Vec<_> = detect(&s.image, &oracle, 0.5).unwrap().into_iter().map(|d| d.bbox).collect();
        let mask = boxes_to_mask(&s.image, &boxes, &seg, 0.5).unwrap();
        let r = confusion_counts(&mask, s.gt_mask.as_ref().unwrap()).unwrap().iou();
        ious.push(r.value);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let min = ious.iter().copied().fold(f64::MAX, f64::min);
    check(mean >= PROMPT_MASK_IOU, format!("mean IoU {mean:.4} (min {min:.4}) over {} samples", ious.len()))
}

const TINY_PIPELINE: &str = r#"
seed = 5
[dataset]
n_polyps = 6
n_nonpolyps = 2
[detector]
train_samples = 16
[detector.model]
epochs = 3
[models]
encoder_channels = [8, 8, 16, 16, 32]
blocks_per_stage = 1
[models.decoder_channels]
UNet = [16, 16, 8, 8, 8]
MANet = [16, 16, 8, 8, 8]
FPN = [16, 8]
PSPNet = [16]
LinkNet = [8]
[training]
epochs = 2
[evaluation]
grids = 1
"#;

/// Every artifact the determinism criterion compares, keyed by relative path.
fn deterministic_artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut add = |rel: String| {
        let bytes = std::fs::read(root.join(&rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        out.insert(rel, bytes);
    };
    add("manifest.json".into());
    add("results/metrics.csv".into());
    add("results/detection_metrics.json".into());
    for dir in ["results/detections", "SAM-Results"] {
        let mut names: Vec<_> =
            std::fs::read_dir(root.join(dir)).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        for n in names {
            add(format!("{dir}/{n}"));
        }
    }
    for kind in ArchitectureKind::ALL {
        let rel = format!("results/checkpoints/{kind}/{META_FILE}");
        let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(root.join(&rel)).unwrap()).unwrap();
        out.insert(format!("{rel}#hash"), meta.hash.into_bytes());
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let mut runs = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let mut cfg = CliConfig::from_toml(TINY_PIPELINE).unwrap();
        cfg.root = dir.path().to_path_buf();
        assert!(!cfg.training.mixed_precision);
        if let Err(e) = run_pipeline(&cfg) {
            return Err(format!("pipeline failed: {e}"));
        }
        runs.push(deterministic_artifacts(dir.path()));
    }
    let differing: Vec<_> =
        runs[0].iter().filter(|(k, v)| runs[1].get(*k) != Some(v)).map(|(k, _)| k.clone()).collect();
    let same_keys = runs[0].keys().eq(runs[1].keys());
    check(differing.is_empty() && same_keys, format!("{} artifacts compared, differing: {differing:?}", runs[0].len()))
}

fn split_and_augmentation_invariants() -> Outcome {
    let mut failures = Vec::new();
    for n in [5usize, 10, 101] {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            let s = generate_synthetic_sample(i as u64, SampleLabel::NonPolyps, (64, 64)).unwrap();
            write_sample(&s, dir.path()).unwrap();
        }
        let m = split_dataset(&build_manifest(dir.path()).unwrap().manifest, 0.8, 1).unwrap();
        let want = (0.8 * n as f64 + 1e-9).floor() as usize;
        if m.count(Split::Train) != want || m.count(Split::Val) != n - want {
            failures.push(format!("N={n}: {} train", m.count(Split::Train)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..100u64 {
        let cfg = AugmentationConfig {
            rotation_max_deg: rng.random_range(0.0..180.0),
            hflip_prob: rng.random(),
            vflip_prob: rng.random(),
            scale_range: (rng.random_range(0.5..1.0), rng.random_range(1.0..1.5)),
            brightness_delta: rng.random_range(0.0..0.5),
            seed: i,
        };
        let s = generate_synthetic_sample(600 + i, SampleLabel::Polyps, (64, 64)).unwrap();
        let (out, params) = augment_sample(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        let mask = out.gt_mask.as_ref().unwrap();
        let again = params.apply_to_mask(s.gt_mask.as_ref().unwrap());
        let iou = confusion_counts(&again, mask).unwrap().iou();
        let self_consistent = iou.undefined && mask.is_empty() || (!iou.undefined && iou.value == 1.0);
        if mask.data().iter().any(|&v| v > 1) || !self_consistent {
            failures.push(format!("config {i}"));
        }
    }
    check(failures.is_empty(), format!("3 splits, 100 augmentation configs {}", failures.join("; ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracle_equivalence),
        ("f1 reference identity", f1_reference_identity),
        ("closed-form image metrics", closed_form_image_metrics),
        ("loss gradient check", loss_gradient_check),
        ("architecture shape and range", architecture_shape_and_range),
        ("overfit smoke test", overfit_smoke),
        ("detection analogue", detection_analogue),
        ("prompt mask quality", prompt_mask_quality),
        ("end-to-end determinism", end_to_end_determinism),
        ("split and augmentation invariants", split_and_augmentation_invariants),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        match run() {
            Ok(detail) => println!("acceptance {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
