//! Box-prompted mask generation: detections become pixel masks through a
//! promptable segmenter, and the masks are written as training targets.

use serde::{Deserialize, Serialize};

use crate::dataset::{read_sample, DatasetManifest, Layout};
use crate::detection::{detect, DetectorModel};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::raster::{BinaryMask, ProbabilityMap, RgbImage};

/// Anything that turns an image plus one box prompt into a probability mask
/// of the image's size.
pub trait PromptableSegmenter {
    fn segment(&self, image: &RgbImage, prompt: &BoundingBox) -> Result<ProbabilityMap>;
}

/// Deterministic stand-in for a learned promptable segmenter.
///
/// Inside the box, grayscale intensities are split by Otsu's threshold; the
/// probability is a logistic of the distance from that threshold relative
/// to the intensity range, so brighter-than-threshold pixels count as
/// foreground. Only the component (at probability ≥ 0.5) containing the box
/// centre is kept, falling back to the largest one when the centre is
/// background. A constant interior gives 0.5 everywhere, i.e. the full box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSegmenter {
    /// Logistic slope in units of the interior intensity range.
    pub sharpness: f32,
}

impl Default for ReferenceSegmenter {
    fn default() -> Self {
        ReferenceSegmenter { sharpness: 12.0 }
    }
}

/// Otsu threshold of values in `[0, 1]` over a 256-bin histogram, returned as
/// the upper edge of the lower class.
pub fn otsu_threshold(values: &[f32]) -> f32 {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[((v.clamp(0.0, 1.0) * 255.0).round()) as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    (best as f32 + 0.5) / 255.0
}

impl PromptableSegmenter for ReferenceSegmenter {
    fn segment(&self, image: &RgbImage, prompt: &BoundingBox) -> Result<ProbabilityMap> {
        let (h, w) = image.dims();
        let mut out = ProbabilityMap::zeros(h, w);
        let Some(b) = prompt.clip(w, h) else {
            return Ok(out);
        };
        let (x0, x1, y0, y1) = b.pixel_span(w, h);
        if x0 >= x1 || y0 >= y1 {
            return Ok(out);
        }
        let luma = image.luminance();
        let (bw, bh) = (x1 - x0, y1 - y0);
        let inside: Vec<f32> =
            (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| luma[y * w + x]).collect();
        let lo = inside.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = inside.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let probs: Vec<f32> = if hi - lo < 1e-6 {
            vec![0.5; inside.len()]
        } else {
            let t = otsu_threshold(&inside);
            let scale = self.sharpness / (hi - lo);
            inside.iter().map(|&v| 1.0 / (1.0 + (-(v - t) * scale).exp())).collect()
        };
        let fg = BinaryMask::from_vec(bh, bw, probs.iter().map(|&p| (p >= 0.5) as u8).collect())?;
        let comps = fg.components();
        let centre = (bh / 2) * bw + bw / 2;
        let keep = comps
            .iter()
            .find(|c| c.pixels.binary_search(&centre).is_ok())
            .or_else(|| comps.iter().max_by_key(|c| (c.pixels.len(), std::cmp::Reverse(c.pixels[0]))));
        if let Some(c) = keep {
            let data = out.data_mut();
            for &i in &c.pixels {
                let (lx, ly) = (i % bw, i / bw);
                data[(y0 + ly) * w + x0 + lx] = probs[i];
            }
        }
        Ok(out)
    }
}

/// Thresholds each per-box probability mask (≥ `threshold`), restricts it
/// to its box and ORs the results. No boxes give an all-zero mask.
pub fn boxes_to_mask(
    image: &RgbImage,
    boxes: &[BoundingBox],
    segmenter: &dyn PromptableSegmenter,
    threshold: f32,
) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("mask threshold {threshold} outside (0,1)")));
    }
    let (h, w) = image.dims();
    let mut mask = BinaryMask::zeros(h, w);
    for b in boxes {
        let Some(clipped) = b.clip(w, h) else { continue };
        let probs = segmenter.segment(image, b)?;
        if probs.dims() != (h, w) {
            return Err(Error::shape(format!("{h}x{w}"), format!("{:?}", probs.dims())));
        }
        let (x0, x1, y0, y1) = clipped.pixel_span(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if probs.get(x, y) >= threshold {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthReport {
    pub written: usize,
    /// Samples that received an all-zero mask because nothing was detected.
    pub empty: Vec<String>,
    /// Per-sample failures; the remaining samples are still processed.
    pub failures: Vec<(String, String)>,
}

/// Detect, segment each box, and write the mask under `SAM-Results/`; the
/// manifest entry's mask path then points at the written file.
pub fn generate_groundtruth(
    manifest: &mut DatasetManifest,
    detector: &dyn DetectorModel,
    score_threshold: f32,
    segmenter: &dyn PromptableSegmenter,
    mask_threshold: f32,
) -> Result<GroundTruthReport> {
    let root = manifest.root.clone();
    let layout = Layout::new(&root);
    let mut report = GroundTruthReport::default();
    for entry in &mut manifest.entries {
        let outcome = (|| -> Result<bool> {
            let image_only = crate::dataset::ManifestEntry { mask: None, ..entry.clone() };
            let sample = read_sample(&root, &image_only)?;
            let dets = detect(&sample.image, detector, score_threshold)?;
            let boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
            let mask = boxes_to_mask(&sample.image, &boxes, segmenter, mask_threshold)?;
            let rel = Layout::prompt_mask_rel(&entry.id);
            mask.save_png(&layout.abs(&rel))?;
            entry.mask = Some(rel);
            Ok(boxes.is_empty())
        })();
        match outcome {
            Ok(empty) => {
                report.written += 1;
                if empty {
                    log::warn!("no detections for {}; wrote an empty mask", entry.id);
                    report.empty.push(entry.id.clone());
                }
            }
            Err(e) => {
                log::error!("mask generation failed for {}: {e}", entry.id);
                report.failures.push((entry.id.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
