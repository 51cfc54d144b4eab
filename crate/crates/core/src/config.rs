//! The single configuration document behind the command-line tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{check_size, AugmentationConfig};
use crate::detection::DetectorConfig;
use crate::error::{Error, Result};
use crate::prompt::ReferenceSegmenter;
use crate::training::TrainConfig;
use crate::zoo::{ArchitectureKind, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_polyps: usize,
    pub n_nonpolyps: usize,
    pub split_ratio: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { n_polyps: 32, n_nonpolyps: 8, split_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// The trainable anchor detector, fitted on its own procedural set.
    Anchor,
    /// Ground-truth boxes read back from the generator masks.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    /// Size of the procedural training set for the anchor detector.
    pub train_samples: usize,
    pub model: DetectorConfig,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection { kind: DetectorKind::Anchor, train_samples: 200, model: DetectorConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    pub kind: SegmenterKind,
    pub sharpness: f32,
    pub mask_threshold: f32,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        SegmenterSection {
            kind: SegmenterKind::Reference,
            sharpness: ReferenceSegmenter::default().sharpness,
            mask_threshold: 0.5,
        }
    }
}

impl SegmenterSection {
    pub fn build(&self) -> ReferenceSegmenter {
        match self.kind {
            SegmenterKind::Reference => ReferenceSegmenter { sharpness: self.sharpness },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub architectures: Vec<ArchitectureKind>,
    pub encoder_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Per-architecture decoder widths replacing the defaults.
    pub decoder_channels: BTreeMap<ArchitectureKind, Vec<usize>>,
    pub pretrained_encoder_path: Option<PathBuf>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            architectures: ArchitectureKind::ALL.to_vec(),
            encoder_channels: ModelConfig::DEFAULT_ENCODER_CHANNELS.to_vec(),
            blocks_per_stage: 2,
            decoder_channels: BTreeMap::new(),
            pretrained_encoder_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub threshold: f32,
    /// Number of validation samples rendered as 1×4 grids per architecture.
    pub grids: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { threshold: 0.5, grids: 4 }
    }
}

/// Root configuration. The top-level `seed` drives every random stream
/// (dataset, split, detector, model initialization, batch order,
/// augmentation) and replaces the nested `seed` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub root: PathBuf,
    pub seed: u64,
    pub image_size: (usize, usize),
    pub dataset: DatasetSection,
    pub augmentation: Option<AugmentationConfig>,
    pub detector: DetectorSection,
    pub segmenter: SegmenterSection,
    pub models: ModelsSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            root: PathBuf::from("data"),
            seed: 0,
            image_size: (64, 64),
            dataset: DatasetSection::default(),
            augmentation: None,
            detector: DetectorSection::default(),
            segmenter: SegmenterSection::default(),
            models: ModelsSection::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        let (h, w) = self.image_size;
        check_size(h, w).map_err(cfg)?;
        if h < 64 || w < 64 {
            return Err(Error::Config(format!("image_size {h}x{w} must be at least 64x64")));
        }
        if self.dataset.n_polyps + self.dataset.n_nonpolyps < 2 {
            return Err(Error::Config("dataset needs at least 2 samples to split".into()));
        }
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} outside (0,1)", self.dataset.split_ratio)));
        }
        if let Some(a) = &self.augmentation {
            a.validate().map_err(cfg)?;
        }
        self.detector.model.validate().map_err(cfg)?;
        if self.detector.kind == DetectorKind::Anchor && self.detector.train_samples == 0 {
            return Err(Error::Config("detector.train_samples must be positive".into()));
        }
        let t = self.segmenter.mask_threshold;
        if !(t > 0.0 && t < 1.0) || !(self.segmenter.sharpness > 0.0) {
            return Err(Error::Config("segmenter needs mask_threshold in (0,1) and sharpness > 0".into()));
        }
        if self.models.architectures.is_empty() {
            return Err(Error::Config("models.architectures is empty".into()));
        }
        for kind in &self.models.architectures {
            self.model_config(*kind).validate().map_err(cfg)?;
        }
        self.training.validate().map_err(cfg)?;
        if !(0.0..=1.0).contains(&self.evaluation.threshold) {
            return Err(Error::Config("evaluation.threshold outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, arch: ArchitectureKind) -> ModelConfig {
        let mut m = ModelConfig::new(arch).with_seed(self.seed).with_input_size(self.image_size.0, self.image_size.1);
        m.encoder_channels = self.models.encoder_channels.clone();
        m.blocks_per_stage = self.models.blocks_per_stage;
        m.pretrained_encoder_path = self.models.pretrained_encoder_path.clone();
        if let Some(d) = self.models.decoder_channels.get(&arch) {
            m.decoder_channels = d.clone();
        }
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            augmentation: self.augmentation.clone().map(|a| AugmentationConfig { seed: self.seed, ..a }),
            ..self.training.clone()
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig { seed: self.seed, ..self.detector.model.clone() }
    }

    /// Short hex digest of the resolved configuration, excluding `root` so
    /// that identical runs in different directories agree.
    pub fn hash(&self) -> String {
        let rootless = CliConfig { root: PathBuf::new(), ..self.clone() };
        crate::training::content_hash(rootless.to_toml().as_bytes())[..16].to_string()
    }
}
