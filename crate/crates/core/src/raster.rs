//! Plain in-memory rasters: RGB images, binary masks and probability maps,
//! plus their lossless PNG encodings.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(height * width * 3, data.len()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (dst, v) in self.data[i..i + 3].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Rounds every channel to the nearest multiple of 1/255 so that the
    /// image survives an 8-bit round trip bit-exactly.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    /// Planar `3 × H × W` copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            out[i] = p[0];
            out[n + i] = p[1];
            out[2 * n + i] = p[2];
        }
        out
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let bytes = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        RgbImage {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_rgb8().save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

/// Binary mask with values in `{0, 1}`; 1 marks polyp pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask { height, width, data: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("binary mask values must be 0 or 1"));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// 4-connected foreground components in raster-scan order of their first pixel.
    pub fn components(&self) -> Vec<Component> {
        let (h, w) = (self.height, self.width);
        let mut label = vec![usize::MAX; h * w];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..h * w {
            if self.data[start] == 0 || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Component { pixels: Vec::new(), x_min: usize::MAX, y_min: usize::MAX, x_max: 0, y_max: 0 };
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                comp.pixels.push(i);
                comp.x_min = comp.x_min.min(x);
                comp.y_min = comp.y_min.min(y);
                comp.x_max = comp.x_max.max(x);
                comp.y_max = comp.y_max.max(y);
                let mut visit = |j: usize| {
                    if self.data[j] == 1 && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            comp.pixels.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Tight boxes around each connected component.
    pub fn component_boxes(&self) -> Vec<BoundingBox> {
        self.components().iter().map(Component::bounding_box).collect()
    }

    pub fn to_luma8(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer length matches dimensions")
    }

    /// Reads an 8-bit grayscale image, thresholding at 128.
    pub fn from_luma8(img: &ImageBuffer<Luma<u8>, Vec<u8>>) -> Self {
        BinaryMask {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&b| (b >= 128) as u8).collect(),
        }
    }

    /// Writes a single-channel 8-bit PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_luma8().save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(Self::from_luma8(&img.to_luma8()))
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    /// Flat indices `y * width + x`, ascending.
    pub pixels: Vec<usize>,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl Component {
    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min as f32,
            y_min: self.y_min as f32,
            x_max: (self.x_max + 1) as f32,
            y_max: (self.y_max + 1) as f32,
        }
    }
}

/// Real-valued map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        ProbabilityMap { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        Ok(ProbabilityMap { height, width, data })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        ProbabilityMap { height: mask.height, width: mask.width, data: mask.to_f32() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixels with `p >= threshold` become 1.
    pub fn threshold(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| (p >= threshold) as u8).collect(),
        }
    }
}

/// A mask tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentationMask {
    Binary(BinaryMask),
    Probability(ProbabilityMap),
}

impl SegmentationMask {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            SegmentationMask::Binary(m) => m.dims(),
            SegmentationMask::Probability(p) => p.dims(),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, SegmentationMask::Binary(_))
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}
