//! Binary cross-entropy, Dice and focal losses, their weighted hybrid, and
//! the combined detection + segmentation objective used for reporting.
//!
//! Scalar versions take probabilities and binary targets as `f64` slices.
//! The tensor version used by training takes logits, which keeps the
//! logarithms numerically stable without clamping away the gradient.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_bce: f64,
    pub w_dice: f64,
    pub w_focal: f64,
    pub lambda_det: f64,
    pub lambda_seg: f64,
    pub lambda_l2: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_bce: 1.0,
            w_dice: 1.0,
            w_focal: 1.0,
            lambda_det: 1.0,
            lambda_seg: 1.0,
            lambda_l2: 1e-4,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn components(w_bce: f64, w_dice: f64, w_focal: f64) -> Self {
        LossWeights { w_bce, w_dice, w_focal, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all =
            [self.w_bce, self.w_dice, self.w_focal, self.lambda_det, self.lambda_seg, self.lambda_l2, self.focal_gamma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights and focal gamma must be finite and non-negative"));
        }
        if self.w_bce + self.w_dice + self.w_focal <= 0.0 {
            return Err(Error::invalid("at least one of w_bce, w_dice, w_focal must be positive"));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::invalid(format!("focal_alpha {} outside [0,1]", self.focal_alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::invalid(format!("epsilon {} must lie in (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} pixels", target.len()), format!("{} pixels", pred.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty prediction"));
    }
    if let Some(t) = target.iter().find(|t| **t != 0.0 && **t != 1.0) {
        return Err(Error::invalid(format!("target value {t} is not binary")));
    }
    Ok(())
}

fn clamp(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp(p, eps);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `1 − (2·Σpt + ε) / (Σp + Σt + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    check(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    Ok(1.0 - (2.0 * inter + eps) / (sp + st + eps))
}

fn dice_sums(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    pred.iter().zip(target).fold((0.0, 0.0, 0.0), |(i, sp, st), (&p, &t)| (i + p * t, sp + p, st + t))
}

/// Mean of `−α_t (1−p_t)^γ ln p_t`.
pub fn focal_loss(pred: &[f64], target: &[f64], gamma: f64, alpha: f64, eps: f64) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp(p, eps);
            let (pt, at) = if t == 1.0 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn hybrid_loss(pred: &[f64], target: &[f64], w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let mut total = 0.0;
    if w.w_bce != 0.0 {
        total += w.w_bce * bce_loss(pred, target, w.epsilon)?;
    }
    if w.w_dice != 0.0 {
        total += w.w_dice * dice_loss(pred, target, w.epsilon)?;
    }
    if w.w_focal != 0.0 {
        total += w.w_focal * focal_loss(pred, target, w.focal_gamma, w.focal_alpha, w.epsilon)?;
    }
    Ok(total)
}

/// Analytic gradient of [`hybrid_loss`] with respect to each prediction.
/// Pixels held at the clamp boundary get a zero BCE and focal gradient.
pub fn hybrid_gradient(pred: &[f64], target: &[f64], w: &LossWeights) -> Result<Vec<f64>> {
    w.validate()?;
    check(pred, target)?;
    let n = pred.len() as f64;
    let eps = w.epsilon;
    let (inter, sp, st) = dice_sums(pred, target);
    let num = 2.0 * inter + eps;
    let den = sp + st + eps;
    let (g, a) = (w.focal_gamma, w.focal_alpha);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let dice = -(2.0 * t * den - num) / (den * den);
            let inside = p > eps && p < 1.0 - eps;
            let (bce, focal) = if inside {
                let bce = (-t / p + (1.0 - t) / (1.0 - p)) / n;
                let focal = if t == 1.0 {
                    -a * (-g * (1.0 - p).powf(g - 1.0) * p.ln() + (1.0 - p).powf(g) / p)
                } else {
                    -(1.0 - a) * (g * p.powf(g - 1.0) * (1.0 - p).ln() - p.powf(g) / (1.0 - p))
                };
                (bce, focal / n)
            } else {
                (0.0, 0.0)
            };
            w.w_bce * bce + w.w_dice * dice + w.w_focal * focal
        })
        .collect())
}

/// Weighted sum of the detection loss, segmentation loss and parameter norm.
/// Stages are trained separately, so this is a reporting scalar.
pub fn combined_objective(det_loss: f64, seg_loss: f64, l2_norm: f64, w: &LossWeights) -> f64 {
    w.lambda_det * det_loss + w.lambda_seg * seg_loss + w.lambda_l2 * l2_norm
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Hybrid loss over a batch of logits, differentiable through candle.
/// Dice sums run over the whole batch.
pub fn hybrid_loss_from_logits(logits: &Tensor, targets: &Tensor, w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    if logits.dims() != targets.dims() {
        return Err(Error::shape(format!("{:?}", targets.dims()), format!("{:?}", logits.dims())));
    }
    let mut total = Tensor::zeros((), logits.dtype(), logits.device())?;
    if w.w_bce != 0.0 {
        total = (total + bce_with_logits(logits, targets)?.affine(w.w_bce, 0.0)?)?;
    }
    let p = sigmoid(logits)?;
    if w.w_dice != 0.0 {
        let inter = p.mul(targets)?.sum_all()?;
        let den = (p.sum_all()? + targets.sum_all()?)?.affine(1.0, w.epsilon)?;
        let dice = inter.affine(2.0, w.epsilon)?.div(&den)?.affine(-1.0, 1.0)?;
        total = (total + dice.affine(w.w_dice, 0.0)?)?;
    }
    if w.w_focal != 0.0 {
        let log_p = softplus(&logits.neg()?)?.neg()?;
        let log_q = softplus(logits)?.neg()?;
        let q = p.affine(-1.0, 1.0)?;
        let neg_t = targets.affine(-1.0, 1.0)?;
        let pos = q.powf(w.focal_gamma)?.mul(&log_p)?.mul(targets)?.affine(w.focal_alpha, 0.0)?;
        let neg = p.powf(w.focal_gamma)?.mul(&log_q)?.mul(&neg_t)?.affine(1.0 - w.focal_alpha, 0.0)?;
        let focal = (pos + neg)?.mean_all()?.neg()?;
        total = (total + focal.affine(w.w_focal, 0.0)?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-6;

    #[test]
    fn closed_forms() {
        let ones = vec![1.0; 4];
        let half = vec![0.5; 4];
        assert!((bce_loss(&half, &ones, EPS).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(&half, &[0.0, 1.0, 0.0, 1.0], EPS).unwrap() - 2f64.ln()).abs() < 1e-12);
        let d = dice_loss(&half, &ones, EPS).unwrap();
        assert!((d - (1.0 - (4.0 + EPS) / (6.0 + EPS))).abs() < 1e-15);
        assert!((d - 1.0 / 3.0).abs() < 1e-6);
        let zeros = vec![0.0; 4];
        assert!((dice_loss(&zeros, &ones, EPS).unwrap() - (1.0 - EPS / (4.0 + EPS))).abs() < 1e-15);
        let f = focal_loss(&[0.5], &[1.0], 2.0, 0.25, EPS).unwrap();
        assert!((f - 0.043322).abs() < 1e-6);
        let h = hybrid_loss(&half, &ones, &LossWeights::default()).unwrap();
        assert!((h - 1.069802).abs() < 1e-5);
    }

    #[test]
    fn perfect_prediction() {
        let t = vec![1.0, 0.0, 1.0, 0.0];
        assert!(bce_loss(&t, &t, EPS).unwrap() <= -(1.0 - EPS).ln() + 1e-15);
        assert_eq!(dice_loss(&t, &t, EPS).unwrap(), 0.0);
        assert_eq!(focal_loss(&[1.0 - 1e-300, 1e-300], &[1.0, 0.0], 2.0, 0.25, 1e-300).unwrap(), 0.0);
        let dice_only = LossWeights::components(0.0, 1.0, 0.0);
        assert_eq!(hybrid_loss(&t, &t, &dice_only).unwrap(), 0.0);
    }

    #[test]
    fn combined_objective_arithmetic() {
        let mut w = LossWeights::default();
        (w.lambda_det, w.lambda_seg, w.lambda_l2) = (1.0, 1.0, 0.0);
        assert!((combined_objective(0.2, 0.3, 123.0, &w) - 0.5).abs() < 1e-12);
        (w.lambda_det, w.lambda_seg, w.lambda_l2) = (0.5, 1.0, 0.01);
        assert!((combined_objective(0.4, 0.6, 2.0, &w) - 0.82).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(bce_loss(&[0.5], &[1.0, 0.0], EPS).is_err());
        assert!(dice_loss(&[0.5], &[0.5], EPS).is_err());
        assert!(hybrid_loss(&[0.5], &[1.0], &LossWeights::components(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn tensor_loss_matches_scalar_loss() {
        use candle_core::Device;
        let logits: Vec<f32> = (0..64).map(|i| ((i * 37 % 23) as f32 - 11.0) / 3.0).collect();
        let target: Vec<f32> = (0..64).map(|i| ((i * 13) % 3 == 0) as u8 as f32).collect();
        let lt = Tensor::from_vec(logits.clone(), (1, 1, 8, 8), &Device::Cpu).unwrap();
        let tt = Tensor::from_vec(target.clone(), (1, 1, 8, 8), &Device::Cpu).unwrap();
        let w = LossWeights::default();
        let got = hybrid_loss_from_logits(&lt, &tt, &w).unwrap().to_scalar::<f32>().unwrap() as f64;
        let p: Vec<f64> = logits.iter().map(|&x| 1.0 / (1.0 + (-x as f64).exp())).collect();
        let t: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        let want = hybrid_loss(&p, &t, &w).unwrap();
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    fn pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.01f64..0.99, n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), n),
        )
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences((p, t) in pair(64)) {
            let w = LossWeights::default();
            let grad = hybrid_gradient(&p, &t, &w).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let (mut up, mut down) = (p.clone(), p.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (hybrid_loss(&up, &t, &w).unwrap() - hybrid_loss(&down, &t, &w).unwrap()) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                prop_assert!(rel < 1e-4, "pixel {i}: fd {fd} analytic {}", grad[i]);
            }
        }

        #[test]
        fn hybrid_is_linear_and_non_negative((p, t) in pair(32), a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.1f64..3.0) {
            let w1 = LossWeights::components(a, b, c);
            let w2 = LossWeights::components(c, a, b);
            let sum = LossWeights::components(a + c, b + a, c + b);
            let lhs = hybrid_loss(&p, &t, &sum).unwrap();
            let rhs = hybrid_loss(&p, &t, &w1).unwrap() + hybrid_loss(&p, &t, &w2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9 * lhs.max(1.0));
            prop_assert!(lhs >= 0.0);
            prop_assert!(bce_loss(&p, &t, EPS).unwrap() >= 0.0);
            prop_assert!(focal_loss(&p, &t, 2.0, 0.25, EPS).unwrap() >= 0.0);
            let d = dice_loss(&p, &t, EPS).unwrap();
            prop_assert!((0.0..1.0).contains(&d));
        }

        #[test]
        fn focal_reduces_to_half_bce((p, t) in pair(32)) {
            let f = focal_loss(&p, &t, 0.0, 0.5, EPS).unwrap();
            let b = bce_loss(&p, &t, EPS).unwrap();
            prop_assert_eq!(f, 0.5 * b);
        }

        #[test]
        fn bce_symmetry((p, t) in pair(32)) {
            let q: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
            let u: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
            let a = bce_loss(&p, &t, EPS).unwrap();
            let b = bce_loss(&q, &u, EPS).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn dice_permutation_invariant((p, t) in pair(32), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let a = dice_loss(&p, &t, EPS).unwrap();
            let b = dice_loss(&pp, &tt, EPS).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
