use std::path::{Path, PathBuf};

use super::{ImageSample, ManifestEntry, SampleLabel, Split};
use crate::error::Result;
use crate::raster::{BinaryMask, RgbImage};

/// The on-disk directory layout relative to a dataset root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub const SYNTHETIC: &'static str = "synthetic";
    pub const MASKS: &'static str = "masks";
    pub const PROMPT_MASKS: &'static str = "SAM-Results";
    pub const RESULTS: &'static str = "results";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn abs(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn image_rel(id: &str) -> String {
        format!("{}/{id}.png", Self::SYNTHETIC)
    }

    pub fn mask_rel(id: &str) -> String {
        format!("{}/{id}.png", Self::MASKS)
    }

    pub fn prompt_mask_rel(id: &str) -> String {
        format!("{}/{id}.png", Self::PROMPT_MASKS)
    }

    pub fn detections_rel(id: &str) -> String {
        format!("{}/detections/{id}.txt", Self::RESULTS)
    }

    pub fn annotated_rel(id: &str) -> String {
        format!("{}/annotated/{id}.png", Self::RESULTS)
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join(Self::RESULTS)
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.results_dir().join("checkpoints")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Writes the image under `synthetic/` and, when present, the GT mask under
/// `masks/` as a {0, 255} single-channel PNG.
pub fn write_sample(sample: &ImageSample, root: &Path) -> Result<ManifestEntry> {
    let layout = Layout::new(root);
    let image = Layout::image_rel(&sample.id);
    sample.image.save_png(&layout.abs(&image))?;
    let mask = match &sample.gt_mask {
        Some(m) => {
            let rel = Layout::mask_rel(&sample.id);
            m.save_png(&layout.abs(&rel))?;
            Some(rel)
        }
        None => None,
    };
    Ok(ManifestEntry { id: sample.id.clone(), image, mask, boxes: None, split: Split::Unassigned })
}

/// Loads the sample referenced by a manifest entry. Boxes are the tight
/// rectangles of the mask's connected components; the label follows the mask.
pub fn read_sample(root: &Path, entry: &ManifestEntry) -> Result<ImageSample> {
    let image = RgbImage::load_png(&root.join(&entry.image))?;
    let gt_mask = entry.mask.as_ref().map(|rel| BinaryMask::load_png(&root.join(rel))).transpose()?;
    let gt_boxes = gt_mask.as_ref().map(BinaryMask::component_boxes).unwrap_or_default();
    let label = if gt_boxes.is_empty() { SampleLabel::NonPolyps } else { SampleLabel::Polyps };
    Ok(ImageSample { id: entry.id.clone(), image, gt_boxes, gt_mask, label })
}
