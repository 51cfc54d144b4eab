//! Desk-scale single-stage detector: one anchor per 16-px grid cell, an
//! objectness logit and a 4-value box regression per anchor.

use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nms, Detection, DetectorModel, POLYP};
use crate::dataset::{check_size, ImageSample};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::nn::{bce_with_logits, Conv2d, ConvBlock, ConvSpec, ParamStore};
use crate::raster::RgbImage;

pub const GRID_STRIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Widths of the four stride-2 backbone stages.
    pub channels: [usize; 4],
    /// Anchor side as a fraction of the shorter image side.
    pub anchor_fraction: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Minimum confidence reported by `predict`.
    pub score_threshold: f32,
    pub nms_iou: f32,
    /// Random horizontal/vertical flips during training.
    pub flip_augment: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            channels: [16, 32, 64, 64],
            anchor_fraction: 0.3,
            epochs: 60,
            batch_size: 8,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            seed: 0,
            score_threshold: 0.5,
            nms_iou: 0.5,
            flip_augment: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config("detector channels must be positive".into()));
        }
        if !(self.anchor_fraction > 0.0) || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("detector needs anchor_fraction > 0, batch_size >= 1, learning_rate > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config("detector thresholds out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct AnchorDetector {
    params: ParamStore,
    stages: Vec<ConvBlock>,
    context: Vec<ConvBlock>,
    head: Conv2d,
    config: DetectorConfig,
}

/// Per-image regression targets on the anchor grid.
struct GridTargets {
    objectness: Vec<f32>,
    boxes: Vec<f32>,
    positive: Vec<f32>,
}

impl AnchorDetector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(config.seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            stages.push(ps.conv_block(&format!("backbone.{i}"), cin, c, 3, 2)?);
            cin = c;
        }
        let context = vec![ps.conv_block("context.0", cin, cin, 3, 1)?, ps.conv_block("context.1", cin, cin, 3, 1)?];
        // Objectness prior around 0.1 keeps the early loss balanced.
        let head = ps.conv2d("head", ConvSpec::new(cin, 5, 1).gain(0.1).bias_init(0.0))?;
        let det = AnchorDetector { params: ps, stages, context, head, config };
        det.set_objectness_prior(-2.2)?;
        Ok(det)
    }

    fn set_objectness_prior(&self, logit: f32) -> Result<()> {
        let var = self.params.get("head.bias").expect("head has a bias");
        var.set(&Tensor::new(&[logit, 0.0, 0.0, 0.0, 0.0], self.params.device())?)?;
        Ok(())
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut x = batch.clone();
        for s in self.stages.iter().chain(&self.context) {
            x = s.forward(&x)?;
        }
        self.head.forward(&x)
    }

    fn anchor_side(&self, h: usize, w: usize) -> f32 {
        self.config.anchor_fraction * h.min(w) as f32
    }

    fn targets(&self, boxes: &[BoundingBox], h: usize, w: usize) -> GridTargets {
        let (gh, gw) = (h / GRID_STRIDE, w / GRID_STRIDE);
        let cells = gh * gw;
        let anchor = self.anchor_side(h, w);
        let mut t =
            GridTargets { objectness: vec![0.0; cells], boxes: vec![0.0; 4 * cells], positive: vec![0.0; cells] };
        let mut owner_area = vec![0.0f32; cells];
        for b in boxes {
            let (cx, cy) = b.center();
            let gx = ((cx / GRID_STRIDE as f32) as usize).min(gw - 1);
            let gy = ((cy / GRID_STRIDE as f32) as usize).min(gh - 1);
            let cell = gy * gw + gx;
            // One anchor per cell: the larger box wins a shared cell.
            if b.area() <= owner_area[cell] {
                continue;
            }
            owner_area[cell] = b.area();
            let ax = (gx as f32 + 0.5) * GRID_STRIDE as f32;
            let ay = (gy as f32 + 0.5) * GRID_STRIDE as f32;
            t.objectness[cell] = 1.0;
            t.positive[cell] = 1.0;
            t.boxes[cell] = (cx - ax) / anchor;
            t.boxes[cells + cell] = (cy - ay) / anchor;
            t.boxes[2 * cells + cell] = (b.width() / anchor).ln();
            t.boxes[3 * cells + cell] = (b.height() / anchor).ln();
        }
        t
    }

    fn decode(&self, raw: &Tensor, h: usize, w: usize) -> Result<Vec<Detection>> {
        let (gh, gw) = (h / GRID_STRIDE, w / GRID_STRIDE);
        let cells = gh * gw;
        let v: Vec<f32> = raw.flatten_all()?.to_vec1()?;
        let anchor = self.anchor_side(h, w);
        let mut dets = Vec::new();
        for gy in 0..gh {
            for gx in 0..gw {
                let cell = gy * gw + gx;
                let conf = 1.0 / (1.0 + (-v[cell]).exp());
                if !(conf >= self.config.score_threshold) {
                    continue;
                }
                let ax = (gx as f32 + 0.5) * GRID_STRIDE as f32;
                let ay = (gy as f32 + 0.5) * GRID_STRIDE as f32;
                let cx = ax + v[cells + cell] * anchor;
                let cy = ay + v[2 * cells + cell] * anchor;
                let bw = v[3 * cells + cell].clamp(-4.0, 4.0).exp() * anchor;
                let bh = v[4 * cells + cell].clamp(-4.0, 4.0).exp() * anchor;
                let raw_box = BoundingBox {
                    x_min: cx - 0.5 * bw,
                    y_min: cy - 0.5 * bh,
                    x_max: cx + 0.5 * bw,
                    y_max: cy + 0.5 * bh,
                };
                if let Some(bbox) = raw_box.clip(w, h) {
                    dets.push(Detection { bbox, confidence: conf.clamp(0.0, 1.0), class_id: POLYP });
                }
            }
        }
        Ok(nms(&dets, self.config.nms_iou))
    }

    /// Writes the parameter blob and a JSON config sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(&dir.join("detector.bin"))?;
        let cfg = serde_json::to_string_pretty(&self.config).expect("config serializes");
        let path = dir.join("detector.json");
        std::fs::write(&path, cfg + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("detector.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: DetectorConfig =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        let det = Self::new(config)?;
        let blob_path = dir.join("detector.bin");
        let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        det.params.load_bytes(&bytes, "")?;
        Ok(det)
    }
}

impl DetectorModel for AnchorDetector {
    fn predict(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        let (h, w) = image.dims();
        check_size(h, w)?;
        let x = Tensor::from_vec(image.to_chw(), (1, 3, h, w), self.params.device())?;
        let raw = self.forward(&x)?;
        self.decode(&raw, h, w)
    }

    fn trainable(&self) -> bool {
        true
    }
}

fn flip_boxes(boxes: &[BoundingBox], h: usize, w: usize, hflip: bool, vflip: bool) -> Vec<BoundingBox> {
    boxes
        .iter()
        .map(|b| {
            let mut o = *b;
            if hflip {
                o.x_min = w as f32 - b.x_max;
                o.x_max = w as f32 - b.x_min;
            }
            if vflip {
                o.y_min = h as f32 - b.y_max;
                o.y_max = h as f32 - b.y_min;
            }
            o
        })
        .collect()
}

fn flip_chw(chw: &[f32], h: usize, w: usize, hflip: bool, vflip: bool) -> Vec<f32> {
    let mut out = vec![0.0; chw.len()];
    for c in 0..3 {
        for y in 0..h {
            let sy = if vflip { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if hflip { w - 1 - x } else { x };
                out[(c * h + y) * w + x] = chw[(c * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Trains the detector in place with AdamW on objectness BCE plus an L1 box
/// loss on positive anchors. Returns the mean training loss of each epoch.
pub fn train_detector(model: &mut AnchorDetector, samples: &[ImageSample]) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::invalid("detector training split is empty"));
    }
    if samples.iter().all(|s| s.gt_boxes.is_empty()) {
        return Err(Error::invalid("detector training split has no boxes"));
    }
    let (h, w) = samples[0].image.dims();
    check_size(h, w)?;
    if let Some(s) = samples.iter().find(|s| s.image.dims() != (h, w)) {
        return Err(Error::shape(format!("{h}x{w}"), format!("{:?} in {}", s.image.dims(), s.id)));
    }
    let cfg = model.config.clone();
    let mut opt = AdamW::new(
        model.params.vars(),
        ParamsAdamW { lr: cfg.learning_rate, weight_decay: cfg.weight_decay, ..Default::default() },
    )?;
    let dev = model.params.device().clone();
    let (gh, gw) = (h / GRID_STRIDE, w / GRID_STRIDE);
    let planes: Vec<Vec<f32>> = samples.iter().map(|s| s.image.to_chw()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0f32, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let n = chunk.len();
            let mut pixels = Vec::with_capacity(n * 3 * h * w);
            let (mut obj, mut boxes, mut pos) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let (hf, vf) =
                    if cfg.flip_augment { (rng.random::<bool>(), rng.random::<bool>()) } else { (false, false) };
                pixels.extend(flip_chw(&planes[i], h, w, hf, vf));
                let t = model.targets(&flip_boxes(&samples[i].gt_boxes, h, w, hf, vf), h, w);
                obj.extend(t.objectness);
                boxes.extend(t.boxes);
                pos.extend(t.positive);
            }
            let x = Tensor::from_vec(pixels, (n, 3, h, w), &dev)?;
            let obj = Tensor::from_vec(obj, (n, 1, gh, gw), &dev)?;
            let boxes = Tensor::from_vec(boxes, (n, 4, gh, gw), &dev)?;
            let npos: f32 = pos.iter().sum();
            let pos = Tensor::from_vec(pos, (n, 1, gh, gw), &dev)?;
            let raw = model.forward(&x)?;
            let obj_loss = bce_with_logits(&raw.narrow(1, 0, 1)?, &obj)?;
            let box_err = (raw.narrow(1, 1, 4)? - &boxes)?.abs()?.broadcast_mul(&pos)?;
            let box_loss = (box_err.sum_all()? / (npos.max(1.0) as f64))?;
            let loss = (obj_loss + box_loss)?;
            let value: f32 = loss.to_scalar()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, value: value as f64 });
            }
            opt.backward_step(&loss)?;
            total += value;
            batches += 1;
        }
        history.push(total / batches as f32);
    }
    Ok(history)
}
