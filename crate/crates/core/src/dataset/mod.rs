//! Synthetic sample generation, on-disk layout, manifests, splitting and
//! paired augmentation.

mod augment;
mod generator;
mod layout;
mod manifest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::raster::{BinaryMask, RgbImage};

pub use augment::{augment_sample, AugmentParams, AugmentationConfig};
pub use generator::generate_synthetic_sample;
pub use layout::{read_sample, write_sample, Layout};
pub use manifest::{build_manifest, split_dataset, DatasetManifest, ManifestBuild, ManifestEntry, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleLabel {
    Polyps,
    NonPolyps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub image: RgbImage,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_mask: Option<BinaryMask>,
    pub label: SampleLabel,
}

impl ImageSample {
    /// Checks the sample-level invariants: mask shape and binarity, label
    /// consistency and box containment.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image.dims();
        if let Some(m) = &self.gt_mask {
            if m.dims() != (h, w) {
                return Err(Error::shape(format!("{h}x{w}"), format!("{}x{}", m.height(), m.width())));
            }
        }
        let empty_mask = self.gt_mask.as_ref().is_none_or(BinaryMask::is_empty);
        let background = self.gt_boxes.is_empty() && empty_mask;
        if background != (self.label == SampleLabel::NonPolyps) {
            return Err(Error::invalid(format!(
                "sample {}: label {:?} inconsistent with annotations",
                self.id, self.label
            )));
        }
        if let Some(b) = self.gt_boxes.iter().find(|b| !b.within(w, h)) {
            return Err(Error::invalid(format!("sample {}: box {b:?} outside image", self.id)));
        }
        Ok(())
    }
}

/// Image sides must be positive multiples of 32.
pub fn check_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(32) || !width.is_multiple_of(32) {
        return Err(Error::invalid(format!("image size {height}x{width} must be a positive multiple of 32")));
    }
    Ok(())
}
