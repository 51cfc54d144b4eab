//! Training loop with AdamW, per-epoch validation, reduce-on-plateau,
//! early stopping and best-checkpoint selection.

mod checkpoint;

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    content_hash, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, META_FILE, WEIGHTS_FILE,
};

use crate::dataset::{augment_sample, AugmentationConfig, ImageSample};
use crate::error::{Error, Result};
use crate::losses::{hybrid_loss_from_logits, LossWeights};
use crate::metrics::confusion_counts;
use crate::raster::{ensure_parent, ProbabilityMap};
use crate::zoo::{image_to_batch, SegmentationModel, LOGIT_LIMIT};

/// The learning rate never drops below this during plateau reductions.
pub const MIN_LEARNING_RATE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValDice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub mixed_precision: bool,
    pub loss_weights: LossWeights,
    pub selection_metric: SelectionMetric,
    /// Paired augmentation applied to each training sample when set. Config
    /// files set it through the top-level augmentation section.
    #[serde(skip)]
    pub augmentation: Option<AugmentationConfig>,
    /// Ends training as soon as validation Dice reaches this value.
    pub target_val_dice: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            patience: 10,
            seed: 0,
            mixed_precision: false,
            loss_weights: LossWeights::default(),
            selection_metric: SelectionMetric::ValDice,
            augmentation: None,
            target_val_dice: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight_decay {} must be non-negative", self.weight_decay)));
        }
        self.loss_weights.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    pub val_iou: f64,
    pub learning_rate: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// True when training ended because of the patience window.
    pub stopped_early: bool,
}

impl TrainingHistory {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json_lines().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Records with wall-clock time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Vec<EpochRecord> {
        self.records.iter().map(|r| EpochRecord { wall_time: 0.0, ..r.clone() }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub loss: f64,
    /// Per-sample means at threshold 0.5; samples with an undefined ratio are
    /// left out of that mean.
    pub dice: f64,
    pub iou: f64,
}

fn check_samples(samples: &[ImageSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    if let Some(s) = samples.iter().find(|s| s.gt_mask.is_none()) {
        return Err(Error::invalid(format!("{what} sample {} has no mask", s.id)));
    }
    Ok(())
}

fn mask_batch(samples: &[&ImageSample]) -> Result<Tensor> {
    let mut data = Vec::new();
    for s in samples {
        data.extend(s.gt_mask.as_ref().expect("checked").to_f32());
    }
    let (h, w) = samples[0].image.dims();
    Ok(Tensor::from_vec(data, (samples.len(), 1, h, w), &Device::Cpu)?)
}

/// Mean validation loss and mask metrics. Parameters are not touched.
pub fn validate(model: &SegmentationModel, samples: &[ImageSample], cfg: &TrainConfig) -> Result<ValidationRecord> {
    check_samples(samples, "validation")?;
    let mut loss_sum = 0.0;
    let (mut dice, mut dice_n, mut iou, mut iou_n) = (0.0, 0usize, 0.0, 0usize);
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let logits = model.forward_logits(&image_to_batch(&images)?)?;
        let targets = mask_batch(&refs)?;
        let loss = hybrid_loss_from_logits(&logits, &targets, &cfg.loss_weights)?.to_scalar::<f32>()? as f64;
        loss_sum += loss * chunk.len() as f64;
        let probs = crate::nn::sigmoid(&logits.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)?)?;
        for (i, s) in chunk.iter().enumerate() {
            let (h, w) = s.image.dims();
            let map = ProbabilityMap::from_vec(h, w, probs.get(i)?.flatten_all()?.to_vec1()?)?;
            let c = confusion_counts(&map.threshold(0.5), s.gt_mask.as_ref().expect("checked"))?;
            let (d, j) = (c.dice(), c.iou());
            if !d.undefined {
                dice += d.value;
                dice_n += 1;
            }
            if !j.undefined {
                iou += j.value;
                iou_n += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(ValidationRecord { loss: loss_sum / samples.len() as f64, dice: mean(dice, dice_n), iou: mean(iou, iou_n) })
}

/// Trains `model` in place. On return the model holds the best parameters
/// (highest validation Dice, earliest epoch on ties), which the returned
/// checkpoint also carries. Epoch 0 in a checkpoint means the initial weights.
pub fn train(
    model: &SegmentationModel,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainingHistory)> {
    cfg.validate()?;
    check_samples(train_set, "train")?;
    check_samples(val_set, "validation")?;
    model.set_half_precision(cfg.mixed_precision);
    let result = run_training(model, train_set, val_set, cfg);
    model.set_half_precision(false);
    result
}

fn run_training(
    model: &SegmentationModel,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainingHistory)> {
    let mut history = TrainingHistory::default();
    if cfg.epochs == 0 {
        let v = validate(model, val_set, cfg)?;
        return Ok((Checkpoint::capture(model, 0, v.dice, v.iou)?, history));
    }
    let mut opt = AdamW::new(
        model.vars(),
        ParamsAdamW { lr: cfg.learning_rate, weight_decay: cfg.weight_decay, ..Default::default() },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut best: Option<Checkpoint> = None;
    let mut stale = 0usize;
    let plateau = (cfg.patience / 2).max(1);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut owned = Vec::with_capacity(chunk.len());
            for &i in chunk {
                owned.push(match &cfg.augmentation {
                    Some(aug) => augment_sample(&train_set[i], aug, &mut rng)?.0,
                    None => train_set[i].clone(),
                });
            }
            let refs: Vec<&ImageSample> = owned.iter().collect();
            let images: Vec<_> = owned.iter().map(|s| &s.image).collect();
            let logits = model.forward_logits(&image_to_batch(&images)?)?;
            let loss = hybrid_loss_from_logits(&logits, &mask_batch(&refs)?, &cfg.loss_weights)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx, value });
            }
            opt.backward_step(&loss)?;
            loss_sum += value * chunk.len() as f64;
        }
        let v = validate(model, val_set, cfg)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: v.loss,
            val_dice: v.dice,
            val_iou: v.iou,
            learning_rate: lr,
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: val dice {:.4}", v.dice);
        if best.as_ref().is_none_or(|b| v.dice > b.meta.val_dice) {
            best = Some(Checkpoint::capture(model, epoch, v.dice, v.iou)?);
            stale = 0;
            if cfg.target_val_dice.is_some_and(|t| v.dice >= t) {
                break;
            }
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
            if stale.is_multiple_of(plateau) {
                lr = (lr / 2.0).max(MIN_LEARNING_RATE);
                opt.set_learning_rate(lr);
            }
        }
    }
    let best = best.expect("at least one epoch ran");
    model.load_all_weights(&best.params)?;
    Ok((best, history))
}

/// Mean Dice of thresholded predictions over `samples`.
pub fn mean_dice(model: &SegmentationModel, samples: &[ImageSample]) -> Result<f64> {
    Ok(validate(model, samples, &TrainConfig::default())?.dice)
}
