//! Five segmentation architectures over one residual encoder. Every model
//! maps an `N×3×H×W` batch in `[0,1]` to an `N×1×H×W` probability map.

mod decoders;
mod encoder;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

pub use decoders::PSP_BINS;
use decoders::{FpnDecoder, LinkNetDecoder, MaNetDecoder, PspDecoder, UNetDecoder};
pub use encoder::{Encoder, EncoderFeatures};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamStore};
use crate::raster::{ProbabilityMap, RgbImage};

/// Logits are clamped to this magnitude before the logistic so the output
/// stays strictly inside `(0, 1)` in f32.
pub const LOGIT_LIMIT: f64 = 13.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchitectureKind {
    UNet,
    PSPNet,
    FPN,
    LinkNet,
    MANet,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 5] = [
        ArchitectureKind::UNet,
        ArchitectureKind::PSPNet,
        ArchitectureKind::FPN,
        ArchitectureKind::LinkNet,
        ArchitectureKind::MANet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::UNet => "UNet",
            ArchitectureKind::PSPNet => "PSPNet",
            ArchitectureKind::FPN => "FPN",
            ArchitectureKind::LinkNet => "LinkNet",
            ArchitectureKind::MANet => "MANet",
        }
    }

    /// Default decoder widths. The meaning of each entry depends on the
    /// architecture, see [`ModelConfig::decoder_channels`].
    pub fn default_decoder_channels(self) -> Vec<usize> {
        match self {
            ArchitectureKind::UNet | ArchitectureKind::MANet => vec![128, 64, 32, 16, 16],
            ArchitectureKind::FPN => vec![64, 32],
            ArchitectureKind::PSPNet => vec![64],
            ArchitectureKind::LinkNet => vec![32],
        }
    }

    /// Number of encoder levels the architecture consumes.
    pub fn encoder_depth(self) -> usize {
        match self {
            ArchitectureKind::PSPNet => 3,
            _ => 5,
        }
    }

    fn decoder_len(self) -> usize {
        self.default_decoder_channels().len()
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchitectureKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s)).ok_or_else(|| {
            Error::invalid(format!("unknown architecture {s:?} (expected one of UNet, PSPNet, FPN, LinkNet, MANet)"))
        })
    }
}

/// Model hyperparameters.
///
/// `decoder_channels` per architecture: UNet and MANet take one width per
/// upsampling block (5); FPN takes `[pyramid width, segmentation width]`;
/// PSPNet takes the fused width after pyramid pooling; LinkNet takes the
/// width of its final block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchitectureKind,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub input_size: (usize, usize),
    pub seed: u64,
    #[serde(default)]
    pub pretrained_encoder_path: Option<PathBuf>,
    pub blocks_per_stage: usize,
}

impl ModelConfig {
    pub const DEFAULT_ENCODER_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];

    pub fn new(arch: ArchitectureKind) -> Self {
        ModelConfig {
            arch,
            encoder_channels: Self::DEFAULT_ENCODER_CHANNELS.to_vec(),
            decoder_channels: arch.default_decoder_channels(),
            input_size: (64, 64),
            seed: 0,
            pretrained_encoder_path: None,
            blocks_per_stage: 2,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != 5 {
            return Err(Error::invalid(format!(
                "encoder_channels needs 5 entries (stem + 4 stages), got {}",
                self.encoder_channels.len()
            )));
        }
        let want = self.arch.decoder_len();
        if self.decoder_channels.len() != want {
            return Err(Error::invalid(format!(
                "{} expects {want} decoder_channels entries, got {}",
                self.arch,
                self.decoder_channels.len()
            )));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::invalid("blocks_per_stage must be at least 1"));
        }
        let (h, w) = self.input_size;
        check_input_dims(h, w)
    }
}

fn check_input_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(Error::invalid(format!("input size {h}x{w} must be positive multiples of 32")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Channel,
    Spatial,
}

/// Structural events recorded by [`SegmentationModel::forward_traced`].
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    ConcatSkip {
        level: usize,
        decoder_channels: usize,
        skip_channels: usize,
        merged_channels: usize,
    },
    AdditiveSkip {
        level: usize,
        channels: usize,
    },
    PyramidPool {
        bins: Vec<usize>,
        input_size: (usize, usize),
    },
    LateralProjection {
        level: usize,
        kernel: usize,
        channels: usize,
    },
    TopDownMerge {
        level: usize,
    },
    PyramidAggregate {
        levels: usize,
    },
    /// Attention weights actually multiplied into the features.
    AttentionGate {
        level: usize,
        kind: GateKind,
        min: f32,
        max: f32,
    },
}

#[derive(Debug, Default)]
pub(crate) struct Tracer {
    events: Option<Vec<Trace>>,
}

impl Tracer {
    fn on() -> Self {
        Tracer { events: Some(Vec::new()) }
    }

    pub(crate) fn enabled(&self) -> bool {
        self.events.is_some()
    }

    pub(crate) fn push(&mut self, event: impl FnOnce() -> Trace) {
        if let Some(events) = &mut self.events {
            events.push(event());
        }
    }
}

#[derive(Debug, Clone)]
enum Decoder {
    UNet(UNetDecoder),
    Psp(PspDecoder),
    Fpn(FpnDecoder),
    LinkNet(LinkNetDecoder),
    MaNet(MaNetDecoder),
}

/// Anything that turns an image into a per-pixel probability map.
pub trait MaskPredictor {
    fn predict_map(&self, image: &RgbImage) -> Result<ProbabilityMap>;
}

#[derive(Debug)]
pub struct SegmentationModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

pub fn build_model(config: &ModelConfig) -> Result<SegmentationModel> {
    config.validate()?;
    let mut ps = ParamStore::new(config.seed);
    let enc = &config.encoder_channels;
    let dec = &config.decoder_channels;
    let encoder = Encoder::new(&mut ps, enc, config.blocks_per_stage, config.arch.encoder_depth())?;
    let decoder = match config.arch {
        ArchitectureKind::UNet => Decoder::UNet(UNetDecoder::new(&mut ps, enc, dec)?),
        ArchitectureKind::PSPNet => Decoder::Psp(PspDecoder::new(&mut ps, enc, dec[0])?),
        ArchitectureKind::FPN => Decoder::Fpn(FpnDecoder::new(&mut ps, enc, dec[0], dec[1])?),
        ArchitectureKind::LinkNet => Decoder::LinkNet(LinkNetDecoder::new(&mut ps, enc, dec[0])?),
        ArchitectureKind::MANet => Decoder::MaNet(MaNetDecoder::new(&mut ps, enc, dec)?),
    };
    let model = SegmentationModel { config: config.clone(), params: ps, encoder, decoder };
    if let Some(path) = &config.pretrained_encoder_path {
        model.load_encoder_weights(path)?;
    }
    Ok(model)
}

impl SegmentationModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> ArchitectureKind {
        self.config.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.vars()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn set_half_precision(&self, on: bool) {
        self.params.set_half_precision(on);
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::shape("N×3×H×W", format!("{dims:?}")));
        }
        check_input_dims(dims[2], dims[3])
    }

    pub fn encode(&self, x: &Tensor) -> Result<EncoderFeatures> {
        self.check_batch(x)?;
        self.encoder.forward(x)
    }

    fn run(&self, x: &Tensor, trace: &mut Tracer) -> Result<Tensor> {
        let features = self.encode(x)?;
        match &self.decoder {
            Decoder::UNet(d) => d.forward(&features, trace),
            Decoder::Psp(d) => d.forward(&features, trace),
            Decoder::Fpn(d) => d.forward(&features, trace),
            Decoder::LinkNet(d) => d.forward(&features, trace),
            Decoder::MaNet(d) => d.forward(&features, trace),
        }
    }

    /// Raw, unclamped logits. Training computes its losses from these.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, &mut Tracer::default())
    }

    /// Probabilities strictly inside `(0, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.forward_logits(x)?;
        sigmoid(&logits.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)?)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<Trace>)> {
        let mut tracer = Tracer::on();
        let logits = self.run(x, &mut tracer)?;
        let probs = sigmoid(&logits.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)?)?;
        Ok((probs, tracer.events.unwrap_or_default()))
    }

    /// Replaces every `encoder.*` parameter from a parameter blob; the
    /// decoder is left untouched.
    pub fn load_encoder_weights(&self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.params.load_bytes(&bytes, "encoder.")?;
        Ok(())
    }

    /// Replaces every parameter from a blob produced by [`ParamStore::to_bytes`].
    pub fn load_all_weights(&self, bytes: &[u8]) -> Result<()> {
        self.params.load_bytes(bytes, "")?;
        Ok(())
    }
}

pub fn image_to_batch(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape(format!("{h}x{w}"), format!("{:?}", img.dims())));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &candle_core::Device::Cpu)?)
}

impl MaskPredictor for SegmentationModel {
    fn predict_map(&self, image: &RgbImage) -> Result<ProbabilityMap> {
        let (h, w) = image.dims();
        let probs = self.forward(&image_to_batch(&[image])?)?;
        let data = probs.flatten_all()?.to_vec1::<f32>()?;
        ProbabilityMap::from_vec(h, w, data)
    }
}
