//! The five decoder heads. Each consumes [`EncoderFeatures`] and returns
//! single-channel logits at input resolution.

use candle_core::{Tensor, D};

use super::encoder::EncoderFeatures;
use super::{GateKind, Trace, Tracer};
use crate::error::Result;
use crate::nn::{resample, sigmoid, upsample_nearest, Conv2d, ConvBlock, ConvSpec, ParamStore, Resample};

fn value_range(t: &Tensor) -> Result<(f32, f32)> {
    let flat = t.flatten_all()?;
    Ok((flat.min(0)?.to_scalar()?, flat.max(0)?.to_scalar()?))
}

fn head(ps: &mut ParamStore, cin: usize) -> Result<Conv2d> {
    ps.conv2d("decoder.head", ConvSpec::new(cin, 1, 3).gain(0.5))
}

/// U-Net: upsample, concatenate the same-resolution encoder map, two convs.
#[derive(Debug, Clone)]
pub struct UNetDecoder {
    blocks: Vec<(ConvBlock, ConvBlock)>,
    head: Conv2d,
}

impl UNetDecoder {
    pub fn new(ps: &mut ParamStore, enc: &[usize], dec: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut prev = enc[4];
        for (i, &out) in dec.iter().enumerate() {
            let skip = if i < 4 { enc[3 - i] } else { 0 };
            blocks.push((
                ps.conv_block(&format!("decoder.block{i}.0"), prev + skip, out, 3, 1)?,
                ps.conv_block(&format!("decoder.block{i}.1"), out, out, 3, 1)?,
            ));
            prev = out;
        }
        Ok(UNetDecoder { blocks, head: head(ps, prev)? })
    }

    pub fn forward(&self, f: &EncoderFeatures, trace: &mut Tracer) -> Result<Tensor> {
        let mut x = f.maps[4].clone();
        for (i, (c0, c1)) in self.blocks.iter().enumerate() {
            x = upsample_nearest(&x, 2)?;
            if i < 4 {
                let skip = &f.maps[3 - i];
                let (dc, sc) = (x.dim(1)?, skip.dim(1)?);
                x = Tensor::cat(&[&x, skip], 1)?;
                trace.push(|| Trace::ConcatSkip {
                    level: 3 - i,
                    decoder_channels: dc,
                    skip_channels: sc,
                    merged_channels: dc + sc,
                });
            }
            x = c1.forward(&c0.forward(&x)?)?;
        }
        self.head.forward(&x)
    }
}

/// LinkNet block: 1×1 reduce, upsample + 3×3, 1×1 expand.
#[derive(Debug, Clone)]
struct LinkBlock {
    reduce: ConvBlock,
    mid: ConvBlock,
    expand: ConvBlock,
}

impl LinkBlock {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let q = (cin / 4).max(8);
        Ok(LinkBlock {
            reduce: ps.conv_block(&format!("{name}.reduce"), cin, q, 1, 1)?,
            mid: ps.conv_block(&format!("{name}.mid"), q, q, 3, 1)?,
            expand: ps.conv_block(&format!("{name}.expand"), q, cout, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.reduce.forward(x)?;
        let x = self.mid.forward(&upsample_nearest(&x, 2)?)?;
        self.expand.forward(&x)
    }
}

/// LinkNet: lightweight decoder blocks whose outputs are added to the
/// encoder map of the same resolution.
#[derive(Debug, Clone)]
pub struct LinkNetDecoder {
    blocks: Vec<LinkBlock>,
    head: Conv2d,
}

impl LinkNetDecoder {
    pub fn new(ps: &mut ParamStore, enc: &[usize], prefinal: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        for i in 0..4 {
            blocks.push(LinkBlock::new(ps, &format!("decoder.block{i}"), enc[4 - i], enc[3 - i])?);
        }
        blocks.push(LinkBlock::new(ps, "decoder.block4", enc[0], prefinal)?);
        Ok(LinkNetDecoder { blocks, head: head(ps, prefinal)? })
    }

    pub fn forward(&self, f: &EncoderFeatures, trace: &mut Tracer) -> Result<Tensor> {
        let mut x = f.maps[4].clone();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if i < 4 {
                let skip = &f.maps[3 - i];
                x = (x + skip)?;
                let channels = skip.dim(1)?;
                trace.push(|| Trace::AdditiveSkip { level: 3 - i, channels });
            }
        }
        self.head.forward(&x)
    }
}

pub const PSP_BINS: [usize; 4] = [1, 2, 3, 6];

/// PSPNet: pyramid pooling over the stride-8 map, then a bilinear upsample
/// of the logits to input resolution.
#[derive(Debug, Clone)]
pub struct PspDecoder {
    branches: Vec<Conv2d>,
    fuse: ConvBlock,
    head: Conv2d,
}

impl PspDecoder {
    pub fn new(ps: &mut ParamStore, enc: &[usize], out: usize) -> Result<Self> {
        let c = enc[2];
        let q = (c / 4).max(1);
        let branches = PSP_BINS
            .iter()
            .map(|b| ps.conv2d(&format!("decoder.pool{b}"), ConvSpec::new(c, q, 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PspDecoder { branches, fuse: ps.conv_block("decoder.fuse", c + 4 * q, out, 3, 1)?, head: head(ps, out)? })
    }

    pub fn forward(&self, f: &EncoderFeatures, trace: &mut Tracer) -> Result<Tensor> {
        let x = &f.maps[2];
        let (_, _, h, w) = x.dims4()?;
        let mut parts = vec![x.clone()];
        for (conv, &bins) in self.branches.iter().zip(&PSP_BINS) {
            let pooled = resample(x, bins, bins, Resample::AdaptiveAvg)?;
            let y = conv.forward(&pooled)?.relu()?;
            parts.push(resample(&y, h, w, Resample::Linear)?);
        }
        trace.push(|| Trace::PyramidPool { bins: PSP_BINS.to_vec(), input_size: (h, w) });
        let fused = self.fuse.forward(&Tensor::cat(&parts, 1)?)?;
        let logits = self.head.forward(&fused)?;
        resample(&logits, h * 8, w * 8, Resample::Linear)
    }
}

/// FPN: 1×1 lateral projections, nearest top-down merge by addition,
/// per-level segmentation branches summed at stride 4.
#[derive(Debug, Clone)]
pub struct FpnDecoder {
    laterals: Vec<Conv2d>,
    branches: Vec<Vec<ConvBlock>>,
    head: Conv2d,
}

impl FpnDecoder {
    pub fn new(ps: &mut ParamStore, enc: &[usize], pyramid: usize, seg: usize) -> Result<Self> {
        let mut laterals = Vec::new();
        let mut branches = Vec::new();
        // Levels 4 (stride 32) down to 1 (stride 4).
        for level in (1..=4).rev() {
            laterals.push(ps.conv2d(&format!("decoder.lateral{level}"), ConvSpec::new(enc[level], pyramid, 1))?);
            let ups = level - 1;
            let mut convs = vec![ps.conv_block(&format!("decoder.seg{level}.0"), pyramid, seg, 3, 1)?];
            for u in 1..ups.max(1) {
                convs.push(ps.conv_block(&format!("decoder.seg{level}.{u}"), seg, seg, 3, 1)?);
            }
            branches.push(convs);
        }
        Ok(FpnDecoder { laterals, branches, head: head(ps, seg)? })
    }

    pub fn forward(&self, f: &EncoderFeatures, trace: &mut Tracer) -> Result<Tensor> {
        let mut pyramid: Vec<Tensor> = Vec::with_capacity(4);
        for (k, lateral) in self.laterals.iter().enumerate() {
            let level = 4 - k;
            let projected = lateral.forward(&f.maps[level])?;
            let kernel = lateral.kernel_size();
            let channels = projected.dim(1)?;
            trace.push(|| Trace::LateralProjection { level, kernel, channels });
            let p = match pyramid.last() {
                Some(coarser) => {
                    trace.push(|| Trace::TopDownMerge { level });
                    (projected + upsample_nearest(coarser, 2)?)?
                }
                None => projected,
            };
            pyramid.push(p);
        }
        let mut total: Option<Tensor> = None;
        for (k, (p, convs)) in pyramid.iter().zip(&self.branches).enumerate() {
            let ups = 3 - k;
            let mut x = p.clone();
            for (i, conv) in convs.iter().enumerate() {
                x = conv.forward(&x)?;
                if i < ups {
                    x = upsample_nearest(&x, 2)?;
                }
            }
            total = Some(match total {
                Some(t) => (t + x)?,
                None => x,
            });
        }
        trace.push(|| Trace::PyramidAggregate { levels: pyramid.len() });
        let fused = total.expect("four pyramid levels");
        let logits = self.head.forward(&fused)?;
        let (_, _, h, w) = logits.dims4()?;
        resample(&logits, h * 4, w * 4, Resample::Linear)
    }
}

/// Channel gate (pooled bottleneck) followed by a spatial gate; both
/// multiply the features by logistic weights.
#[derive(Debug, Clone)]
struct AttentionGate {
    squeeze: Conv2d,
    excite: Conv2d,
    spatial: Conv2d,
}

impl AttentionGate {
    fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        let r = (c / 4).max(4);
        Ok(AttentionGate {
            squeeze: ps.conv2d(&format!("{name}.squeeze"), ConvSpec::new(c, r, 1))?,
            excite: ps.conv2d(&format!("{name}.excite"), ConvSpec::new(r, c, 1))?,
            spatial: ps.conv2d(&format!("{name}.spatial"), ConvSpec::new(c, 1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor, level: usize, trace: &mut Tracer) -> Result<Tensor> {
        let pooled = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
        let channel_w = sigmoid(&self.excite.forward(&self.squeeze.forward(&pooled)?.relu()?)?)?;
        let x = x.broadcast_mul(&channel_w)?;
        if trace.enabled() {
            let (min, max) = value_range(&channel_w)?;
            trace.push(|| Trace::AttentionGate { level, kind: GateKind::Channel, min, max });
        }
        let spatial_w = sigmoid(&self.spatial.forward(&x)?)?;
        let y = x.broadcast_mul(&spatial_w)?;
        if trace.enabled() {
            let (min, max) = value_range(&spatial_w)?;
            trace.push(|| Trace::AttentionGate { level, kind: GateKind::Spatial, min, max });
        }
        Ok(y)
    }
}

/// MANet-style decoder: U-Net skeleton with multiplicative attention gates
/// in every block.
#[derive(Debug, Clone)]
pub struct MaNetDecoder {
    blocks: Vec<(ConvBlock, AttentionGate, ConvBlock)>,
    head: Conv2d,
}

impl MaNetDecoder {
    pub fn new(ps: &mut ParamStore, enc: &[usize], dec: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut prev = enc[4];
        for (i, &out) in dec.iter().enumerate() {
            let skip = if i < 4 { enc[3 - i] } else { 0 };
            blocks.push((
                ps.conv_block(&format!("decoder.block{i}.0"), prev + skip, out, 3, 1)?,
                AttentionGate::new(ps, &format!("decoder.block{i}.gate"), out)?,
                ps.conv_block(&format!("decoder.block{i}.1"), out, out, 3, 1)?,
            ));
            prev = out;
        }
        Ok(MaNetDecoder { blocks, head: head(ps, prev)? })
    }

    pub fn forward(&self, f: &EncoderFeatures, trace: &mut Tracer) -> Result<Tensor> {
        let mut x = f.maps[4].clone();
        for (i, (c0, gate, c1)) in self.blocks.iter().enumerate() {
            x = upsample_nearest(&x, 2)?;
            if i < 4 {
                x = Tensor::cat(&[&x, &f.maps[3 - i]], 1)?;
            }
            let level = 4usize.saturating_sub(i + 1);
            x = c1.forward(&gate.forward(&c0.forward(&x)?, level, trace)?)?;
        }
        self.head.forward(&x)
    }
}
