use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageSample, SampleLabel};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub rotation_max_deg: f32,
    pub hflip_prob: f32,
    pub vflip_prob: f32,
    pub scale_range: (f32, f32),
    pub brightness_delta: f32,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotation_max_deg: 30.0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            scale_range: (0.8, 1.2),
            brightness_delta: 0.2,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// The configuration that leaves every sample untouched.
    pub fn identity() -> Self {
        AugmentationConfig {
            rotation_max_deg: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            scale_range: (1.0, 1.0),
            brightness_delta: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        if !prob(self.hflip_prob) || !prob(self.vflip_prob) {
            return Err(Error::Config("flip probabilities must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("scale_range ({lo}, {hi}) needs 0 < lo <= hi")));
        }
        if !(self.rotation_max_deg >= 0.0) || !(self.brightness_delta >= 0.0) {
            return Err(Error::Config("rotation_max_deg and brightness_delta must be >= 0".into()));
        }
        Ok(())
    }

    /// Draws one set of transform parameters.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let rotation_deg = if self.rotation_max_deg > 0.0 {
            rng.random_range(-self.rotation_max_deg..=self.rotation_max_deg)
        } else {
            0.0
        };
        let hflip = rng.random::<f32>() < self.hflip_prob;
        let vflip = rng.random::<f32>() < self.vflip_prob;
        let (lo, hi) = self.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let brightness = if self.brightness_delta > 0.0 {
            rng.random_range(-self.brightness_delta..=self.brightness_delta)
        } else {
            0.0
        };
        AugmentParams { rotation_deg, hflip, vflip, scale, brightness }
    }
}

/// One concrete draw of the augmentation transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f32,
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f32,
    pub brightness: f32,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams { rotation_deg: 0.0, hflip: false, vflip: false, scale: 1.0, brightness: 0.0 }
    }

    fn is_pure_flip(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0
    }

    /// Maps an output pixel center to the source position it samples,
    /// inverting `flip -> scale -> rotate` about the image center.
    fn source(&self, x: f32, y: f32, w: usize, h: usize) -> (f32, f32) {
        let (cx, cy) = (0.5 * w as f32, 0.5 * h as f32);
        let (dx, dy) = (x - cx, y - cy);
        let (s, c) = (-self.rotation_deg.to_radians()).sin_cos();
        let (rx, ry) = (c * dx - s * dy, s * dx + c * dy);
        let (mut ux, mut uy) = (rx / self.scale, ry / self.scale);
        if self.hflip {
            ux = -ux;
        }
        if self.vflip {
            uy = -uy;
        }
        (cx + ux, cy + uy)
    }

    /// Applies the geometric part to a mask with nearest-neighbor sampling.
    pub fn apply_to_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (h, w) = mask.dims();
        let mut out = BinaryMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let v = if self.is_pure_flip() {
                    let sx = if self.hflip { w - 1 - x } else { x };
                    let sy = if self.vflip { h - 1 - y } else { y };
                    mask.get(sx, sy)
                } else {
                    let (sx, sy) = self.source(x as f32 + 0.5, y as f32 + 0.5, w, h);
                    let (ix, iy) = (sx.floor(), sy.floor());
                    if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
                        mask.get(ix as usize, iy as usize)
                    } else {
                        0
                    }
                };
                out.set(x, y, v == 1);
            }
        }
        out
    }

    /// Applies the geometric part (bilinear, black outside) and then the
    /// brightness shift to an image.
    pub fn apply_to_image(&self, image: &RgbImage) -> RgbImage {
        let (h, w) = image.dims();
        let mut out = RgbImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let px = if self.is_pure_flip() {
                    let sx = if self.hflip { w - 1 - x } else { x };
                    let sy = if self.vflip { h - 1 - y } else { y };
                    image.pixel(sx, sy)
                } else {
                    let (sx, sy) = self.source(x as f32 + 0.5, y as f32 + 0.5, w, h);
                    bilinear(image, sx - 0.5, sy - 0.5)
                };
                let px = px.map(|v| (v + self.brightness).clamp(0.0, 1.0));
                out.set_pixel(x, y, px);
            }
        }
        out
    }
}

fn bilinear(image: &RgbImage, fx: f32, fy: f32) -> [f32; 3] {
    let (h, w) = image.dims();
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let fetch = |x: f32, y: f32| -> [f32; 3] {
        if x < 0.0 || y < 0.0 || x as usize >= w || y as usize >= h {
            [0.0; 3]
        } else {
            image.pixel(x as usize, y as usize)
        }
    };
    let (a, b) = (fetch(x0, y0), fetch(x0 + 1.0, y0));
    let (c, d) = (fetch(x0, y0 + 1.0), fetch(x0 + 1.0, y0 + 1.0));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] * (1.0 - tx) + b[k] * tx;
        let bot = c[k] * (1.0 - tx) + d[k] * tx;
        out[k] = top * (1.0 - ty) + bot * ty;
    }
    out
}

/// Draws parameters from `rng` and applies them jointly to image and mask.
/// Boxes are recomputed from the transformed mask's components.
pub fn augment_sample<R: Rng + ?Sized>(
    sample: &ImageSample,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<(ImageSample, AugmentParams)> {
    cfg.validate()?;
    let mask = sample
        .gt_mask
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("sample {} has no mask to augment", sample.id)))?;
    let params = cfg.draw(rng);
    let new_mask = params.apply_to_mask(mask);
    let gt_boxes = new_mask.component_boxes();
    let label = if gt_boxes.is_empty() { SampleLabel::NonPolyps } else { SampleLabel::Polyps };
    Ok((
        ImageSample {
            id: sample.id.clone(),
            image: params.apply_to_image(&sample.image),
            gt_boxes,
            gt_mask: Some(new_mask),
            label,
        },
        params,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_config_is_identity() {
        let s = generate_synthetic_sample(7, SampleLabel::Polyps, (64, 64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, params) = augment_sample(&s, &AugmentationConfig::identity(), &mut rng).unwrap();
        assert_eq!(params, AugmentParams::identity());
        assert_eq!(out, s);
    }

    #[test]
    fn hflip_is_an_involution() {
        let s = generate_synthetic_sample(9, SampleLabel::Polyps, (64, 64)).unwrap();
        let flip = AugmentParams { hflip: true, ..AugmentParams::identity() };
        let mask = s.gt_mask.unwrap();
        let once = flip.apply_to_mask(&mask);
        assert_ne!(once, mask);
        assert_eq!(flip.apply_to_mask(&once), mask);
    }

    #[test]
    fn quarter_turn_preserves_area() {
        let mut mask = BinaryMask::zeros(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                let (dx, dy) = (x as f32 + 0.5 - 40.0, y as f32 + 0.5 - 26.0);
                if dx * dx / 81.0 + dy * dy / 36.0 <= 1.0 {
                    mask.set(x, y, true);
                }
            }
        }
        let rot = AugmentParams { rotation_deg: 90.0, ..AugmentParams::identity() };
        let before = mask.count() as f32;
        let after = rot.apply_to_mask(&mask).count() as f32;
        assert!((after - before).abs() / before <= 0.02, "{before} -> {after}");
    }

    #[test]
    fn missing_mask_rejected() {
        let mut s = generate_synthetic_sample(1, SampleLabel::Polyps, (64, 64)).unwrap();
        s.gt_mask = None;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment_sample(&s, &AugmentationConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let c = AugmentationConfig { hflip_prob: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = AugmentationConfig { scale_range: (1.2, 0.8), ..Default::default() };
        assert!(c.validate().is_err());
    }
}
