use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{confusion_counts, psnr, ssim, Ratio};
use crate::dataset::ImageSample;
use crate::error::{Error, Result};
use crate::raster::{ensure_parent, ProbabilityMap};
use crate::zoo::{ArchitectureKind, MaskPredictor};

pub const PSNR_SSIM_OPERANDS: &str = "predicted probability map vs ground-truth mask as real-valued images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub iou: Ratio,
    pub dice: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-model means over an evaluation set.
///
/// Samples whose ratio is undefined (zero denominator) are left out of that
/// ratio's mean; a column with no defined sample reports 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub arch: String,
    pub iou: f64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
    pub skipped: usize,
}

impl MetricsRow {
    fn from_samples(arch: &str, samples: &[SampleMetrics], skipped: usize) -> Self {
        let defined_mean = |f: fn(&SampleMetrics) -> Ratio| {
            let vals: Vec<f64> = samples.iter().map(f).filter(|r| !r.undefined).map(|r| r.value).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let mean = |f: fn(&SampleMetrics) -> f64| {
            if samples.is_empty() {
                0.0
            } else {
                samples.iter().map(f).sum::<f64>() / samples.len() as f64
            }
        };
        MetricsRow {
            arch: arch.to_string(),
            iou: defined_mean(|s| s.iou),
            dice: defined_mean(|s| s.dice),
            precision: defined_mean(|s| s.precision),
            recall: defined_mean(|s| s.recall),
            f1: defined_mean(|s| s.f1),
            psnr: mean(|s| s.psnr),
            ssim: mean(|s| s.ssim),
            n: samples.len(),
            skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub threshold: f32,
    pub config_hash: String,
}

impl MetricsReport {
    /// Rows ordered by architecture (UNet, PSPNet, FPN, LinkNet, MANet), any
    /// other labels after them alphabetically.
    pub fn new(mut rows: Vec<MetricsRow>, threshold: f32, config_hash: impl Into<String>) -> Self {
        rows.sort_by_key(|r| {
            let rank = r
                .arch
                .parse::<ArchitectureKind>()
                .ok()
                .and_then(|k| ArchitectureKind::ALL.iter().position(|a| *a == k))
                .unwrap_or(ArchitectureKind::ALL.len());
            (rank, r.arch.clone())
        });
        MetricsReport { rows, threshold, config_hash: config_hash.into() }
    }

    pub fn row(&self, arch: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.arch == arch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# psnr/ssim operands: {PSNR_SSIM_OPERANDS}; threshold {:.6}; config {}\n",
            self.threshold, self.config_hash
        );
        out.push_str("arch,iou,dice,precision,recall,f1,psnr,ssim,n\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{}",
                r.arch,
                r.iou,
                r.dice,
                r.precision,
                r.recall,
                r.f1,
                fmt_psnr(r.psnr),
                r.ssim,
                r.n
            );
        }
        out
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_ratio(r: Ratio) -> String {
    if r.undefined {
        "undefined".to_string()
    } else {
        format!("{:.6}", r.value)
    }
}

/// Runs `model` over every sample with a ground-truth mask. Samples without
/// one are skipped and counted in the row.
pub fn evaluate_model(
    model: &dyn MaskPredictor,
    arch: &str,
    samples: &[ImageSample],
    threshold: f32,
) -> Result<(MetricsRow, Vec<SampleMetrics>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0,1]")));
    }
    let mut per_sample = Vec::new();
    let mut skipped = 0;
    for sample in samples {
        let Some(gt) = &sample.gt_mask else {
            skipped += 1;
            continue;
        };
        let probs = model.predict_map(&sample.image)?;
        if probs.dims() != gt.dims() {
            return Err(Error::shape(format!("{:?}", gt.dims()), format!("{:?}", probs.dims())));
        }
        let counts = confusion_counts(&probs.threshold(threshold), gt)?;
        let reference = ProbabilityMap::from_mask(gt);
        per_sample.push(SampleMetrics {
            id: sample.id.clone(),
            iou: counts.iou(),
            dice: counts.dice(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            psnr: psnr(&probs, &reference)?,
            ssim: ssim(&probs, &reference)?,
        });
    }
    if per_sample.is_empty() {
        return Err(Error::invalid("no sample with a ground-truth mask to evaluate"));
    }
    Ok((MetricsRow::from_samples(arch, &per_sample, skipped), per_sample))
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::invalid("metrics report needs at least one row"));
    }
    ensure_parent(path)?;
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Per-sample detail table; undefined ratios are written as `undefined`.
pub fn write_per_sample(rows: &[(String, Vec<SampleMetrics>)], path: &Path) -> Result<()> {
    let mut out = String::from("arch,id,iou,dice,precision,recall,f1,psnr,ssim\n");
    for (arch, samples) in rows {
        for s in samples {
            let _ = writeln!(
                out,
                "{arch},{},{},{},{},{},{},{},{:.6}",
                s.id,
                fmt_ratio(s.iou),
                fmt_ratio(s.dice),
                fmt_ratio(s.precision),
                fmt_ratio(s.recall),
                fmt_ratio(s.f1),
                fmt_psnr(s.psnr),
                s.ssim
            );
        }
    }
    ensure_parent(path)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
