//! The six stages behind the command-line tool. Each stage reads what the
//! previous one left under the dataset root and can run on its own.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{CliConfig, DetectorKind};
use crate::dataset::{
    build_manifest, generate_synthetic_sample, read_sample, split_dataset, write_sample, DatasetManifest, ImageSample,
    Layout, ManifestEntry, SampleLabel, Split,
};
use crate::detection::{
    annotate_image, detect, match_detections, parse_detections, serialize_detections, train_detector, AnchorDetector,
    DetectionMetrics, DetectorModel, OracleDetector,
};
use crate::error::{Error, Result};
use crate::losses::combined_objective;
use crate::metrics::{evaluate_model, write_per_sample, write_report, MetricsReport};
use crate::prompt::generate_groundtruth;
use crate::training::{load_checkpoint, save_checkpoint, train};
use crate::viz::{render_grid, render_metric_bars, Metric};
use crate::zoo::{build_model, ArchitectureKind, MaskPredictor};

/// Seed offset separating the detector's own training images from the dataset.
const DETECTOR_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Detect,
    Masks,
    Train,
    Evaluate,
    Visualize,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Generate, Stage::Detect, Stage::Masks, Stage::Train, Stage::Evaluate, Stage::Visualize];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Detect => "detect",
            Stage::Masks => "masks",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Visualize => "visualize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub seconds: f64,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_hash: String,
    pub stages: Vec<StageReport>,
}

pub const RUN_SUMMARY: &str = "run_summary.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_PER_SAMPLE_CSV: &str = "metrics_per_sample.csv";
pub const DETECTION_METRICS: &str = "detection_metrics.json";
pub const TRAINING_SUMMARY: &str = "training_summary.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    crate::raster::ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn load_manifest(layout: &Layout) -> Result<DatasetManifest> {
    let path = layout.manifest_path();
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run the generate stage first", path.display())));
    }
    let mut m = DatasetManifest::load(&path)?;
    m.root = layout.root().to_path_buf();
    Ok(m)
}

/// Reads a sample with its generator mask when one exists, else with the
/// manifest's mask.
fn read_with_reference_mask(layout: &Layout, entry: &ManifestEntry) -> Result<ImageSample> {
    let gt = Layout::mask_rel(&entry.id);
    let entry =
        if layout.abs(&gt).exists() { ManifestEntry { mask: Some(gt), ..entry.clone() } } else { entry.clone() };
    read_sample(layout.root(), &entry)
}

fn read_split(layout: &Layout, m: &DatasetManifest, split: Split) -> Result<Vec<ImageSample>> {
    m.split(split).map(|e| read_sample(layout.root(), e)).collect()
}

/// Procedural samples, Polyps first. Sample `i` uses seed `base + i`.
fn procedural(base: u64, n_polyps: usize, n_nonpolyps: usize, size: (usize, usize)) -> Result<Vec<ImageSample>> {
    (0..n_polyps + n_nonpolyps)
        .map(|i| {
            let label = if i < n_polyps { SampleLabel::Polyps } else { SampleLabel::NonPolyps };
            generate_synthetic_sample(base + i as u64, label, size)
        })
        .collect()
}

pub fn run_generate(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let base = cfg.seed.wrapping_mul(1_000_000);
    for s in procedural(base, cfg.dataset.n_polyps, cfg.dataset.n_nonpolyps, cfg.image_size)? {
        write_sample(&s, layout.root())?;
    }
    let built = build_manifest(layout.root())?;
    for p in &built.skipped {
        log::warn!("skipped {}", p.display());
    }
    let mut manifest = split_dataset(&built.manifest, cfg.dataset.split_ratio, cfg.seed)?;
    manifest.seed = cfg.seed;
    manifest.save(&layout.manifest_path())?;
    Ok(vec![layout.manifest_path()])
}

pub fn run_detect(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let mut manifest = load_manifest(&layout)?;
    let references: Vec<ImageSample> =
        manifest.entries.iter().map(|e| read_with_reference_mask(&layout, e)).collect::<Result<_>>()?;
    let mut outputs = Vec::new();
    let detector: Box<dyn DetectorModel> = match cfg.detector.kind {
        DetectorKind::Oracle => Box::new(OracleDetector::from_samples(&references)),
        DetectorKind::Anchor => {
            let n = cfg.detector.train_samples;
            let base = DETECTOR_SEED_BASE + cfg.seed.wrapping_mul(1_000_000);
            let train_set = procedural(base, n, 0, cfg.image_size)?;
            let mut det = AnchorDetector::new(cfg.detector_config())?;
            let losses = train_detector(&mut det, &train_set)?;
            let dir = layout.checkpoints_dir().join("detector");
            det.save(&dir)?;
            write_json(&dir.join("losses.json"), &losses)?;
            outputs.push(dir);
            Box::new(det)
        }
    };
    let threshold = cfg.detector.model.score_threshold;
    let mut per_image = Vec::new();
    for (entry, sample) in manifest.entries.iter_mut().zip(&references) {
        let dets = detect(&sample.image, detector.as_ref(), threshold)?;
        let rel = Layout::detections_rel(&entry.id);
        let path = layout.abs(&rel);
        crate::raster::ensure_parent(&path)?;
        std::fs::write(&path, serialize_detections(&dets)).map_err(|e| Error::io(&path, e))?;
        annotate_image(&sample.image, &dets).save_png(&layout.abs(&Layout::annotated_rel(&entry.id)))?;
        entry.boxes = Some(rel);
        if sample.gt_mask.is_some() {
            per_image.push(match_detections(&dets, &sample.gt_boxes, 0.5));
        }
    }
    let metrics = DetectionMetrics::merge(per_image);
    let metrics_path = layout.results_dir().join(DETECTION_METRICS);
    write_json(&metrics_path, &metrics)?;
    manifest.save(&layout.manifest_path())?;
    outputs.extend([layout.manifest_path(), metrics_path]);
    Ok(outputs)
}

pub fn run_masks(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let mut manifest = load_manifest(&layout)?;
    // Replays the stored detections so this stage does not need the detector.
    let mut replay = OracleDetector::new();
    for entry in &manifest.entries {
        let rel = entry
            .boxes
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no detections for {}; run the detect stage first", entry.id)))?;
        let path = layout.abs(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let boxes = parse_detections(&text)?.into_iter().map(|d| d.bbox).collect();
        let image = crate::raster::RgbImage::load_png(&layout.abs(&entry.image))?;
        replay.insert(&image, boxes);
    }
    let segmenter = cfg.segmenter.build();
    let report = generate_groundtruth(&mut manifest, &replay, 0.0, &segmenter, cfg.segmenter.mask_threshold)?;
    if let Some((id, msg)) = report.failures.first() {
        return Err(Error::invalid(format!(
            "{} of {} masks failed, first {id}: {msg}",
            report.failures.len(),
            manifest.len()
        )));
    }
    manifest.save(&layout.manifest_path())?;
    Ok(vec![layout.abs(Layout::PROMPT_MASKS), layout.manifest_path()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchTrainingSummary {
    pub arch: ArchitectureKind,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_dice: f64,
    pub val_loss: f64,
    pub param_l2: f64,
    /// Detection loss, segmentation loss and parameter norm combined with the
    /// configured weights; reported only, nothing minimizes it jointly.
    pub combined_objective: f64,
    pub checkpoint_hash: String,
}

pub fn run_train(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let manifest = load_manifest(&layout)?;
    let train_set = read_split(&layout, &manifest, Split::Train)?;
    let val_set = read_split(&layout, &manifest, Split::Val)?;
    let tcfg = cfg.train_config();
    let det_loss = {
        let p = layout.checkpoints_dir().join("detector").join("losses.json");
        if p.exists() {
            read_json::<Vec<f32>>(&p)?.last().copied().unwrap_or(0.0) as f64
        } else {
            0.0
        }
    };
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for &arch in &cfg.models.architectures {
        let model = build_model(&cfg.model_config(arch))?;
        let (ckpt, history) = train(&model, &train_set, &val_set, &tcfg)?;
        let dir = layout.checkpoints_dir().join(arch.name());
        outputs.push(save_checkpoint(&ckpt, &dir)?);
        let log = layout.results_dir().join("history").join(format!("{}.jsonl", arch.name()));
        if log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        history.append_to(&log)?;
        outputs.push(log);
        let val_loss = history.records.iter().find(|r| r.epoch == ckpt.meta.epoch).map_or(0.0, |r| r.val_loss);
        let mut sq = 0.0f64;
        for v in model.vars() {
            sq += v.as_tensor().sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
        }
        let l2 = sq.sqrt();
        summary.push(ArchTrainingSummary {
            arch,
            best_epoch: ckpt.meta.epoch,
            epochs_run: history.records.len(),
            val_dice: ckpt.meta.val_dice,
            val_loss,
            param_l2: l2,
            combined_objective: combined_objective(det_loss, val_loss, l2, &tcfg.loss_weights),
            checkpoint_hash: ckpt.meta.hash.clone(),
        });
        log::info!("{arch}: best epoch {} val dice {:.4}", ckpt.meta.epoch, ckpt.meta.val_dice);
    }
    let path = layout.results_dir().join(TRAINING_SUMMARY);
    write_json(&path, &summary)?;
    outputs.push(path);
    Ok(outputs)
}

fn evaluation_set(layout: &Layout, manifest: &DatasetManifest) -> Result<Vec<ImageSample>> {
    manifest.split(Split::Val).map(|e| read_with_reference_mask(layout, e)).collect()
}

pub fn run_evaluate(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let manifest = load_manifest(&layout)?;
    let samples = evaluation_set(&layout, &manifest)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &arch in &cfg.models.architectures {
        let (model, _) = load_checkpoint(&layout.checkpoints_dir().join(arch.name()))?;
        let (row, per) = evaluate_model(&model, arch.name(), &samples, cfg.evaluation.threshold)?;
        rows.push(row);
        details.push((arch.name().to_string(), per));
    }
    let report = MetricsReport::new(rows, cfg.evaluation.threshold, cfg.hash());
    let csv = layout.results_dir().join(METRICS_CSV);
    write_report(&report, &csv)?;
    let per_sample = layout.results_dir().join(METRICS_PER_SAMPLE_CSV);
    write_per_sample(&details, &per_sample)?;
    let json = layout.results_dir().join(METRICS_JSON);
    write_json(&json, &report)?;
    Ok(vec![csv, per_sample, json])
}

pub fn run_visualize(cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.root);
    let manifest = load_manifest(&layout)?;
    let samples = evaluation_set(&layout, &manifest)?;
    let figures = layout.results_dir().join("figures");
    let mut outputs = Vec::new();
    for &arch in &cfg.models.architectures {
        let (model, _) = load_checkpoint(&layout.checkpoints_dir().join(arch.name()))?;
        for s in samples.iter().filter(|s| s.gt_mask.is_some()).take(cfg.evaluation.grids) {
            let pred = model.predict_map(&s.image)?;
            let grid = render_grid(&s.image, s.gt_mask.as_ref().expect("filtered"), &pred, cfg.evaluation.threshold)?;
            let path = figures.join(format!("grid_{}_{}.png", arch.name(), s.id));
            grid.save_png(&path)?;
            outputs.push(path);
        }
    }
    let report: MetricsReport = read_json(&layout.results_dir().join(METRICS_JSON))?;
    for (name, metrics) in [("metrics_mask.png", &Metric::MASK[..]), ("metrics_quality.png", &Metric::QUALITY[..])] {
        let path = figures.join(name);
        render_metric_bars(&report, metrics)?.save_png(&path)?;
        outputs.push(path);
    }
    Ok(outputs)
}

pub fn run_stage(stage: Stage, cfg: &CliConfig) -> std::result::Result<StageReport, StageError> {
    let start = Instant::now();
    let outputs = match stage {
        Stage::Generate => run_generate(cfg),
        Stage::Detect => run_detect(cfg),
        Stage::Masks => run_masks(cfg),
        Stage::Train => run_train(cfg),
        Stage::Evaluate => run_evaluate(cfg),
        Stage::Visualize => run_visualize(cfg),
    }
    .map_err(|source| StageError { stage, source })?;
    Ok(StageReport { stage, seconds: start.elapsed().as_secs_f64(), outputs })
}

/// Runs every stage in order and writes `results/run_summary.json`. On
/// failure the summary lists the stages that completed.
pub fn run_pipeline(cfg: &CliConfig) -> std::result::Result<RunSummary, StageError> {
    let mut summary = RunSummary { seed: cfg.seed, config_hash: cfg.hash(), stages: Vec::new() };
    let path = Layout::new(&cfg.root).results_dir().join(RUN_SUMMARY);
    for stage in Stage::ALL {
        log::info!("running stage {stage}");
        match run_stage(stage, cfg) {
            Ok(report) => summary.stages.push(report),
            Err(e) => {
                let _ = write_json(&path, &summary);
                return Err(e);
            }
        }
    }
    write_json(&path, &summary).map_err(|source| StageError { stage: Stage::Visualize, source })?;
    Ok(summary)
}
