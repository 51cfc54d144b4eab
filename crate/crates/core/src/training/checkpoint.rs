use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::ensure_parent;
use crate::zoo::{build_model, ArchitectureKind, ModelConfig, SegmentationModel};

pub const WEIGHTS_FILE: &str = "model.bin";
pub const META_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchitectureKind,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub val_dice: f64,
    pub val_iou: f64,
    /// Hex SHA-256 of the parameter blob.
    pub hash: String,
}

/// Parameter blob plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<u8>,
    pub meta: CheckpointMeta,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn capture(model: &SegmentationModel, epoch: usize, val_dice: f64, val_iou: f64) -> Result<Self> {
        let params = model.params().to_bytes()?;
        let mut config = model.config().clone();
        config.pretrained_encoder_path = None;
        Ok(Checkpoint {
            meta: CheckpointMeta {
                arch: model.arch(),
                seed: config.seed,
                config,
                epoch,
                val_dice,
                val_iou,
                hash: content_hash(&params),
            },
            params,
        })
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn restore(&self) -> Result<SegmentationModel> {
        let actual = content_hash(&self.params);
        if actual != self.meta.hash {
            return Err(Error::Corrupt(format!("parameter hash {actual} does not match recorded {}", self.meta.hash)));
        }
        let model = build_model(&self.meta.config)?;
        model.load_all_weights(&self.params)?;
        Ok(model)
    }
}

/// Writes `model.bin` and `model.json` into `dir`.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<PathBuf> {
    let weights = dir.join(WEIGHTS_FILE);
    ensure_parent(&weights)?;
    std::fs::write(&weights, &ckpt.params).map_err(|e| Error::io(&weights, e))?;
    let meta = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&ckpt.meta).expect("metadata serializes");
    std::fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(SegmentationModel, CheckpointMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: meta_path.clone(), source })?;
    let weights = dir.join(WEIGHTS_FILE);
    let params = std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    let ckpt = Checkpoint { params, meta };
    let model = ckpt.restore()?;
    Ok((model, ckpt.meta))
}
