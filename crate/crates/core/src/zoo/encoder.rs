use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{Conv2d, ConvBlock, ConvSpec, GroupNorm, ParamStore};

/// ResNet basic block: two 3×3 convolutions with a projected shortcut when
/// the shape changes.
#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBlock,
    conv2: Conv2d,
    norm2: GroupNorm,
    shortcut: Option<(Conv2d, GroupNorm)>,
}

impl BasicBlock {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || cin != cout {
            Some((
                ps.conv2d(&format!("{name}.down.conv"), ConvSpec::new(cin, cout, 1).stride(stride).no_bias())?,
                ps.group_norm(&format!("{name}.down.norm"), cout)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: ps.conv_block(&format!("{name}.a"), cin, cout, 3, stride)?,
            conv2: ps.conv2d(&format!("{name}.b.conv"), ConvSpec::new(cout, cout, 3).no_bias())?,
            norm2: ps.group_norm(&format!("{name}.b.norm"), cout)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.norm2.forward(&self.conv2.forward(&self.conv1.forward(x)?)?)?;
        let skip = match &self.shortcut {
            Some((conv, norm)) => norm.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// Feature maps at strides 2, 4, 8, 16, 32 (fewer for truncated encoders).
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    pub maps: Vec<Tensor>,
}

impl EncoderFeatures {
    pub const STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

    pub fn stride(level: usize) -> usize {
        Self::STRIDES[level]
    }
}

/// Residual encoder mirroring ResNet's five-level layout: a stride-2 stem
/// followed by four stages that each halve the resolution.
#[derive(Debug, Clone)]
pub struct Encoder {
    stem: [ConvBlock; 2],
    stages: Vec<Vec<BasicBlock>>,
    channels: Vec<usize>,
}

impl Encoder {
    /// `depth` counts the stem as level 1; a depth of 5 gives all five maps.
    pub fn new(ps: &mut ParamStore, channels: &[usize], blocks_per_stage: usize, depth: usize) -> Result<Self> {
        let stem = [
            ps.conv_block("encoder.stem.0", 3, channels[0], 3, 2)?,
            ps.conv_block("encoder.stem.1", channels[0], channels[0], 3, 1)?,
        ];
        let mut stages = Vec::new();
        for s in 1..depth {
            let mut blocks = Vec::with_capacity(blocks_per_stage);
            for b in 0..blocks_per_stage {
                let (cin, stride) = if b == 0 { (channels[s - 1], 2) } else { (channels[s], 1) };
                blocks.push(BasicBlock::new(ps, &format!("encoder.stage{s}.{b}"), cin, channels[s], stride)?);
            }
            stages.push(blocks);
        }
        Ok(Encoder { stem, stages, channels: channels[..depth].to_vec() })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<EncoderFeatures> {
        let mut h = self.stem[1].forward(&self.stem[0].forward(x)?)?;
        let mut maps = vec![h.clone()];
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h)?;
            }
            maps.push(h.clone());
        }
        Ok(EncoderFeatures { maps })
    }
}
