//! Bounding-box detection: the detector contract, suppression, matching
//! against ground truth, the box text format and image annotation.

mod anchor;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::dataset::check_size;
use crate::error::{Error, Result};
use crate::geometry::{box_iou, BoundingBox};
use crate::metrics::Ratio;
use crate::raster::RgbImage;

pub use crate::geometry::box_iou as iou;
pub use anchor::{train_detector, AnchorDetector, DetectorConfig};

/// Class id of the polyp class.
pub const POLYP: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f32,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f32, class_id: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Detection { bbox, confidence, class_id })
    }
}

/// Anything that maps an image to scored boxes.
///
/// Implementations must be deterministic for fixed parameters and input.
pub trait DetectorModel {
    fn predict(&self, image: &RgbImage) -> Result<Vec<Detection>>;

    fn trainable(&self) -> bool {
        false
    }
}

/// Runs a detector and normalizes its output: boxes clipped to the image,
/// confidences at least `score_threshold`, sorted by descending confidence
/// (stable, so equal scores keep the detector's order).
pub fn detect(image: &RgbImage, model: &dyn DetectorModel, score_threshold: f32) -> Result<Vec<Detection>> {
    let (h, w) = image.dims();
    check_size(h, w)?;
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::invalid(format!("score threshold {score_threshold} outside [0, 1]")));
    }
    let mut out: Vec<Detection> = model
        .predict(image)?
        .into_iter()
        .filter(|d| d.confidence >= score_threshold)
        .filter_map(|d| d.bbox.clip(w, h).map(|bbox| Detection { bbox, ..d }))
        .collect();
    sort_by_confidence(&mut out);
    Ok(out)
}

fn sort_by_confidence(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// Greedy non-maximum suppression. A detection survives iff its IoU with
/// every already kept detection of the same class is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sort_by_confidence(&mut sorted);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let clear = kept.iter().filter(|k| k.class_id == d.class_id).all(|k| box_iou(&k.bbox, &d.bbox) < iou_threshold);
        if clear {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl DetectionMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let p = Ratio::new(tp as f64, (tp + fp) as f64);
        let r = Ratio::new(tp as f64, (tp + fn_) as f64);
        DetectionMetrics {
            tp,
            fp,
            fn_,
            precision: p.value,
            recall: r.value,
            f1: harmonic_mean(p.value, r.value),
            precision_undefined: p.undefined,
            recall_undefined: r.undefined,
        }
    }

    /// Sums counts across images and recomputes the fractions.
    pub fn merge(items: impl IntoIterator<Item = DetectionMetrics>) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for m in items {
            tp += m.tp;
            fp += m.fp;
            fn_ += m.fn_;
        }
        Self::from_counts(tp, fp, fn_)
    }
}

/// `2pr / (p + r)`, 0 when `p + r = 0`.
pub fn harmonic_mean(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Greedy matching in descending-confidence order. Each ground-truth box is
/// claimed at most once; a prediction is a true positive iff its best IoU
/// with a still-unmatched ground truth reaches `iou_threshold`.
pub fn match_detections(preds: &[Detection], gts: &[BoundingBox], iou_threshold: f32) -> DetectionMetrics {
    let mut order: Vec<&Detection> = preds.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut claimed = vec![false; gts.len()];
    let mut tp = 0;
    for p in order {
        let mut best: Option<(usize, f32)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let v = box_iou(&p.bbox, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            if v >= iou_threshold {
                claimed[j] = true;
                tp += 1;
            }
        }
    }
    DetectionMetrics::from_counts(tp, preds.len() - tp, gts.len() - tp)
}

/// One line per detection: `class_id x_min y_min x_max y_max confidence`.
pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let b = &d.bbox;
        writeln!(out, "{} {:.6} {:.6} {:.6} {:.6} {:.6}", d.class_id, b.x_min, b.y_min, b.x_max, b.y_max, d.confidence)
            .expect("writing to a String");
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0].parse().map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
        let mut v = [0f32; 5];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
        }
        let bbox = BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()))?;
        let det = Detection::new(bbox, v[4], class_id).map_err(|e| err(e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

const BOX_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
const BOX_THICKNESS: usize = 2;

/// Copy of `image` with a red 2-px outline drawn inside each (clipped) box.
pub fn annotate_image(image: &RgbImage, dets: &[Detection]) -> RgbImage {
    let mut out = image.clone();
    let (h, w) = image.dims();
    for d in dets {
        let Some(b) = d.bbox.clip(w, h) else { continue };
        let (x0, x1, y0, y1) = b.pixel_span(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                let border = x < x0 + BOX_THICKNESS
                    || x + BOX_THICKNESS >= x1
                    || y < y0 + BOX_THICKNESS
                    || y + BOX_THICKNESS >= y1;
                if border {
                    out.set_pixel(x, y, BOX_COLOR);
                }
            }
        }
    }
    out
}

/// Content fingerprint of an image (bit patterns of every channel value).
pub fn image_fingerprint(image: &RgbImage) -> u64 {
    let mut h = DefaultHasher::new();
    image.dims().hash(&mut h);
    for v in image.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Returns the known ground-truth boxes of an image with confidence 1.
/// Images it was not told about yield no detections.
#[derive(Debug, Clone, Default)]
pub struct OracleDetector {
    boxes: HashMap<u64, Vec<BoundingBox>>,
}

impl OracleDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &RgbImage, boxes: Vec<BoundingBox>) {
        self.boxes.insert(image_fingerprint(image), boxes);
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a crate::dataset::ImageSample>) -> Self {
        let mut o = Self::new();
        for s in samples {
            o.insert(&s.image, s.gt_boxes.clone());
        }
        o
    }
}

impl DetectorModel for OracleDetector {
    fn predict(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        Ok(self
            .boxes
            .get(&image_fingerprint(image))
            .map(|bs| bs.iter().map(|&bbox| Detection { bbox, confidence: 1.0, class_id: POLYP }).collect())
            .unwrap_or_default())
    }
}
