//! Mask metrics (IoU, Dice, precision, recall, F1), image-quality metrics
//! (PSNR, SSIM) and per-model report assembly.

mod quality;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub use quality::{psnr, ssim, SSIM_WINDOW};
pub use report::{evaluate_model, write_per_sample, write_report, MetricsReport, MetricsRow, SampleMetrics};

/// A fraction whose denominator may vanish; then `value` is 0 and
/// `undefined` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    pub fn new(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Ratio { value: num / den, undefined: false }
        } else {
            Ratio { value: 0.0, undefined: true }
        }
    }
}

/// Pixel counts with polyp (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Counts over raw `{0, 1}` slices; anything else is rejected.
    pub fn from_slices(pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape(gt.len(), pred.len()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                (0, 0) => c.tn += 1,
                _ => return Err(Error::invalid(format!("non-binary mask value pair ({p}, {g})"))),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn iou(&self) -> Ratio {
        Ratio::new(self.tp as f64, (self.tp + self.fp + self.fn_) as f64)
    }

    pub fn dice(&self) -> Ratio {
        Ratio::new(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::new(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Ratio {
        Ratio::new(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    /// Pixelwise F1 as `2tp / (2tp + fp + fn)`. Equals `2pr / (p + r)`
    /// whenever both are defined, and stays defined (at 0) when the
    /// prediction is empty but the ground truth is not.
    pub fn f1(&self) -> Ratio {
        Ratio::new(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!("{:?}", gt.dims()), format!("{:?}", pred.dims())));
    }
    ConfusionCounts::from_slices(pred.data(), gt.data())
}

pub fn iou(c: &ConfusionCounts) -> Ratio {
    c.iou()
}

pub fn dice(c: &ConfusionCounts) -> Ratio {
    c.dice()
}

pub fn precision(c: &ConfusionCounts) -> Ratio {
    c.precision()
}

pub fn recall(c: &ConfusionCounts) -> Ratio {
    c.recall()
}

pub fn f1(c: &ConfusionCounts) -> Ratio {
    c.f1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: usize) -> BinaryMask {
        let mut m = BinaryMask::zeros(4, 4);
        for y in 0..2 {
            for x in x0..x0 + 2 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn shifted_square_counts() {
        let c = confusion_counts(&square(0), &square(1)).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 2, fn_: 2, tn: 10 });
        assert!((c.iou().value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.dice().value, 0.5);
    }

    #[test]
    fn identical_and_complementary() {
        let m = square(1);
        let c = confusion_counts(&m, &m).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        for r in [c.iou(), c.dice(), c.precision(), c.recall(), c.f1()] {
            assert_eq!(r.value, 1.0);
        }
        let inv: Vec<u8> = m.data().iter().map(|v| 1 - v).collect();
        let c = ConfusionCounts::from_slices(&inv, m.data()).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn undefined_flags() {
        let empty = BinaryMask::zeros(4, 4);
        let c = confusion_counts(&empty, &empty).unwrap();
        assert!(c.iou().undefined && c.dice().undefined && c.precision().undefined);
        assert_eq!(c.iou().value, 0.0);
    }

    #[test]
    fn non_binary_and_shape_mismatch_rejected() {
        assert!(ConfusionCounts::from_slices(&[0, 2], &[0, 1]).is_err());
        assert!(confusion_counts(&BinaryMask::zeros(4, 4), &BinaryMask::zeros(4, 5)).is_err());
    }

    #[test]
    fn f1_of_reference_pair() {
        let f1 = crate::detection::harmonic_mean(0.8897, 0.9308);
        assert!((f1 - 0.90979).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn metric_algebra(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let c = ConfusionCounts { tp, fp, fn_, tn };
            let i = c.iou().value;
            prop_assert!((c.dice().value - 2.0 * i / (1.0 + i)).abs() < 1e-12);
            prop_assert_eq!(c.f1(), c.dice());
            for r in [c.iou(), c.dice(), c.precision(), c.recall(), c.f1()] {
                prop_assert!((0.0..=1.0).contains(&r.value));
            }
        }
    }
}
