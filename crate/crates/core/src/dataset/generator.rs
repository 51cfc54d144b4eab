use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_size, ImageSample, SampleLabel};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::raster::{BinaryMask, RgbImage};

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f32,
    cy: f32,
    major: f32,
    minor: f32,
    cos: f32,
    sin: f32,
    color: [f32; 3],
}

impl Blob {
    /// Normalized elliptical radius; the blob support is `rho <= 1`.
    fn rho(&self, x: f32, y: f32) -> f32 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.major).powi(2) + (v / self.minor).powi(2)).sqrt()
    }
}

/// Bilinearly interpolated lattice noise in `[-1, 1]` with `cells` lattice
/// intervals across the shorter side.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cells: usize) -> Vec<f32> {
    let step = h.min(w) as f32 / cells as f32;
    let gw = (w as f32 / step).ceil() as usize + 2;
    let gh = (h as f32 / step).ceil() as usize + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = (y as f32 + 0.5) / step;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = (x as f32 + 0.5) / step;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let g = |i: usize, j: usize| lattice[j * gw + i];
            let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
            let bot = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn place_blobs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Blob> {
    let side = h.min(w) as f32;
    let wanted = rng.random_range(1..=3usize);
    let mut blobs: Vec<Blob> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        for _attempt in 0..200 {
            let major = rng.random_range(0.11..0.20) * side;
            let minor = (major * rng.random_range(0.65..1.0)).max(4.0);
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let margin = major + 2.0;
            if 2.0 * margin >= w as f32 || 2.0 * margin >= h as f32 {
                continue;
            }
            let cx = rng.random_range(margin..w as f32 - margin);
            let cy = rng.random_range(margin..h as f32 - margin);
            let clear = blobs.iter().all(|b| {
                let d = ((b.cx - cx).powi(2) + (b.cy - cy).powi(2)).sqrt();
                d >= b.major + major + 4.0
            });
            if !clear {
                continue;
            }
            let color = [rng.random_range(0.90..1.0), rng.random_range(0.64..0.76), rng.random_range(0.50..0.62)];
            blobs.push(Blob { cx, cy, major, minor, cos: theta.cos(), sin: theta.sin(), color });
            break;
        }
    }
    blobs
}

/// Procedurally renders one colonoscopy-like sample.
///
/// The background is a pink/red tissue color modulated by two octaves of
/// lattice noise. `Polyps` samples add 1 to 3 non-touching bright elliptical
/// blobs with a soft edge; the mask is the union of the blob supports and
/// every box is the tight pixel rectangle of one blob. Pixel values are
/// quantized to 8 bits so the sample survives a PNG round trip unchanged.
pub fn generate_synthetic_sample(seed: u64, label: SampleLabel, size: (usize, usize)) -> Result<ImageSample> {
    let (h, w) = size;
    check_size(h, w)?;
    if h < 64 || w < 64 {
        return Err(Error::invalid(format!("image size {h}x{w} below the 64 px minimum")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [rng.random_range(0.68..0.80f32), rng.random_range(0.28..0.38f32), rng.random_range(0.32..0.42f32)];
    let coarse = value_noise(&mut rng, h, w, 3);
    let fine = value_noise(&mut rng, h, w, 9);
    let tint = value_noise(&mut rng, h, w, 4);

    let mut image = RgbImage::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let shade = 1.0 + 0.10 * coarse[i] + 0.04 * fine[i];
            let t = 0.03 * tint[i];
            image.set_pixel(x, y, [base[0] * shade + t, base[1] * shade - t, base[2] * shade]);
        }
    }

    let blobs = match label {
        SampleLabel::Polyps => place_blobs(&mut rng, h, w),
        SampleLabel::NonPolyps => Vec::new(),
    };
    let mut mask = BinaryMask::zeros(h, w);
    let mut boxes = Vec::with_capacity(blobs.len());
    for blob in &blobs {
        let edge_px = 0.8f32;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let rho = blob.rho(px, py);
                // Approximate signed distance to the ellipse boundary in pixels.
                let dist = (1.0 - rho) * blob.minor;
                if dist < -6.0 * edge_px {
                    continue;
                }
                let alpha = 1.0 / (1.0 + (-dist / edge_px).exp());
                let dome = 1.0 - 0.08 * rho.min(1.0).powi(2);
                let i = y * w + x;
                let texture = 1.0 + 0.03 * fine[i];
                let under = image.pixel(x, y);
                let mut px_rgb = [0.0; 3];
                for c in 0..3 {
                    let top = blob.color[c] * dome * texture;
                    px_rgb[c] = under[c] * (1.0 - alpha) + top * alpha;
                }
                image.set_pixel(x, y, px_rgb);
                if rho <= 1.0 {
                    mask.set(x, y, true);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 != usize::MAX {
            boxes.push(BoundingBox {
                x_min: x0 as f32,
                y_min: y0 as f32,
                x_max: (x1 + 1) as f32,
                y_max: (y1 + 1) as f32,
            });
        }
    }
    boxes.sort_by(|a, b| (a.y_min, a.x_min).partial_cmp(&(b.y_min, b.x_min)).expect("finite box coordinates"));
    image.quantize();

    let label = if boxes.is_empty() { SampleLabel::NonPolyps } else { SampleLabel::Polyps };
    Ok(ImageSample { id: format!("s{seed:06}"), image, gt_boxes: boxes, gt_mask: Some(mask), label })
}
