//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! The image frame has its origin at the top-left corner; pixel `(x, y)`
//! covers the unit square `[x, x+1) × [y, y+1)`, so a box tightly enclosing
//! pixel columns `c0..=c1` spans `x_min = c0`, `x_max = c1 + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BoundingBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Result<Self> {
        let b = BoundingBox { x_min, y_min, x_max, y_max };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(Error::invalid(format!("non-finite box {b:?}")));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    /// Builds a box from the `(x, y, w, h)` form, `(x, y)` being the top-left corner.
    pub fn from_xywh(x: f32, y: f32, w: f32, h: f32) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> (f32, f32, f32, f32) {
        (self.x_min, self.y_min, self.width(), self.height())
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Clips to `[0, width] × [0, height]`. Returns `None` if nothing is left.
    pub fn clip(&self, width: usize, height: usize) -> Option<Self> {
        let b = BoundingBox {
            x_min: self.x_min.clamp(0.0, width as f32),
            y_min: self.y_min.clamp(0.0, height as f32),
            x_max: self.x_max.clamp(0.0, width as f32),
            y_max: self.y_max.clamp(0.0, height as f32),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width as f32 && self.y_max <= height as f32
    }

    /// Integer pixel ranges `(x0..x1, y0..y1)` touched by the box, clamped to the image.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let x0 = (self.x_min.floor().max(0.0) as usize).min(width);
        let y0 = (self.y_min.floor().max(0.0) as usize).min(height);
        let x1 = (self.x_max.ceil().max(0.0) as usize).min(width);
        let y1 = (self.y_max.ceil().max(0.0) as usize).min(height);
        (x0, x1, y0, y1)
    }
}

/// Intersection over union with continuous areas; 0 for disjoint boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f32 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
