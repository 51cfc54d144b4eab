//! Small layer toolkit over candle: a seeded parameter store and the
//! handful of layers the detector and the segmentation zoo share.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named trainable tensors with deterministic, seed-keyed initialization.
///
/// Parameters are created in program order from a single ChaCha stream, so
/// constructing the same network twice with the same seed yields identical
/// weights. Layers hold clones of the underlying tensors; optimizer updates
/// through [`Var::set`] are visible to them.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
    half: Arc<AtomicBool>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
            half: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Runs convolutions in f16 (parameters stay f32) while set.
    pub fn set_half_precision(&self, on: bool) {
        self.half.store(on, Ordering::Relaxed);
    }

    fn create(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::invalid(format!("parameter {name} defined twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.create(name, shape, values)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.create(name, shape, vec![value; n])
    }

    pub fn conv2d(&mut self, name: &str, spec: ConvSpec) -> Result<Conv2d> {
        let fan_in = (spec.cin * spec.k * spec.k) as f32;
        let bound = (6.0 / fan_in).sqrt() * spec.gain;
        let weight = self.uniform(&format!("{name}.weight"), &[spec.cout, spec.cin, spec.k, spec.k], bound)?;
        let bias =
            if spec.bias { Some(self.constant(&format!("{name}.bias"), &[spec.cout], spec.bias_init)?) } else { None };
        Ok(Conv2d { weight, bias, stride: spec.stride, padding: spec.k / 2, half: self.half.clone() })
    }

    pub fn group_norm(&mut self, name: &str, channels: usize) -> Result<GroupNorm> {
        Ok(GroupNorm {
            gamma: self.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            groups: gcd(channels, 8),
        })
    }

    /// Convolution followed by group norm and ReLU.
    pub fn conv_block(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<ConvBlock> {
        Ok(ConvBlock {
            conv: self.conv2d(&format!("{name}.conv"), ConvSpec::new(cin, cout, k).stride(stride).no_bias())?,
            norm: self.group_norm(&format!("{name}.norm"), cout)?,
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn param_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Serialized parameter blob: every tensor in name order as
    /// `name_len:u32 | name | ndim:u32 | dims:u64* | f32 LE data`, after a magic header.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = BLOB_MAGIC.to_vec();
        out.extend_from_slice(&(self.vars.len() as u32).to_le_bytes());
        for (name, var) in &self.vars {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(var.dims().len() as u32).to_le_bytes());
            for &d in var.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Replaces parameter values from a blob. Every parameter of this store
    /// whose name starts with `prefix` must be present with the same shape;
    /// the first offender is named in the error.
    pub fn load_bytes(&self, bytes: &[u8], prefix: &str) -> Result<usize> {
        let tensors = parse_blob(bytes)?;
        let mut replaced = 0;
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            let (dims, data) = tensors.get(name).ok_or_else(|| Error::shape(format!("tensor {name}"), "missing"))?;
            if dims.as_slice() != var.dims() {
                return Err(Error::shape(format!("{name} {:?}", var.dims()), format!("{dims:?}")));
            }
            var.set(&Tensor::from_vec(data.clone(), dims.as_slice(), &self.device)?)?;
            replaced += 1;
        }
        Ok(replaced)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

const BLOB_MAGIC: &[u8; 8] = b"PSEGPAR1";

type BlobTensors = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

fn parse_blob(bytes: &[u8]) -> Result<BlobTensors> {
    let corrupt = |what: &str| Error::Corrupt(format!("parameter blob: {what}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != BLOB_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("name not utf-8"))?;
        let ndim = u32_at(take(4)?);
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
        }
        let n: usize = dims.iter().product();
        let data = take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.insert(name, (dims, data));
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub bias: bool,
    pub gain: f32,
    pub bias_init: f32,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, k: usize) -> Self {
        ConvSpec { cin, cout, k, stride: 1, bias: true, gain: 1.0, bias_init: 0.0 }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn gain(mut self, gain: f32) -> Self {
        self.gain = gain;
        self
    }

    pub fn bias_init(mut self, value: f32) -> Self {
        self.bias_init = value;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    half: Arc<AtomicBool>,
}

impl Conv2d {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if self.half.load(Ordering::Relaxed) {
            x.to_dtype(DType::F16)?
                .conv2d(&self.weight.to_dtype(DType::F16)?, self.padding, self.stride, 1, 1)?
                .to_dtype(DType::F32)?
        } else {
            x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims()[2]
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
}

impl GroupNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = x.reshape((n, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?.reshape((n, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Row-stochastic `out × in` matrix for 1-D resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Linear interpolation with half-pixel centers (no corner alignment).
    Linear,
    /// Adaptive average pooling: bin `i` averages `[floor(i·in/out), ceil((i+1)·in/out))`.
    AdaptiveAvg,
}

pub fn resample_matrix(input: usize, output: usize, mode: Resample) -> Vec<f32> {
    let mut m = vec![0.0f32; output * input];
    match mode {
        Resample::Linear => {
            let scale = input as f32 / output as f32;
            for o in 0..output {
                let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let t = src - i0 as f32;
                m[o * input + i0] += 1.0 - t;
                m[o * input + i1] += t;
            }
        }
        Resample::AdaptiveAvg => {
            for o in 0..output {
                let start = (o * input) / output;
                let end = ((o + 1) * input).div_ceil(output);
                let inv = 1.0 / (end - start) as f32;
                for i in start..end {
                    m[o * input + i] = inv;
                }
            }
        }
    }
    m
}

/// Separable resampling of an `N×C×h×w` tensor to `N×C×H×W`.
pub fn resample(x: &Tensor, out_h: usize, out_w: usize, mode: Resample) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) && mode == Resample::Linear {
        return Ok(x.clone());
    }
    let dev = x.device();
    let mw = Tensor::from_vec(resample_matrix(w, out_w, mode), (out_w, w), dev)?;
    let mh = Tensor::from_vec(resample_matrix(h, out_h, mode), (out_h, h), dev)?;
    let y = x.contiguous()?.reshape((n * c * h, w))?.matmul(&mw.t()?)?.reshape((n, c, h, out_w))?;
    let y = y
        .transpose(2, 3)?
        .contiguous()?
        .reshape((n * c * out_w, h))?
        .matmul(&mh.t()?)?
        .reshape((n, c, out_w, out_h))?
        .transpose(2, 3)?
        .contiguous()?;
    Ok(y)
}

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(h * factor, w * factor)?)
}

/// Numerically stable mean binary cross-entropy on logits.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let pos = logits.relu()?;
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((pos - logits.mul(targets)?)?.add(&softplus)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut ps = ParamStore::new(seed);
            ps.conv2d("a", ConvSpec::new(3, 4, 3)).unwrap();
            ps.group_norm("n", 4).unwrap();
            ps.to_bytes().unwrap()
        };
        assert_eq!(build(1), build(1));
        assert_ne!(build(1), build(2));
    }

    #[test]
    fn adaptive_pool_rows_average_overlapping_bins() {
        let m = resample_matrix(8, 3, Resample::AdaptiveAvg);
        // bins [0,3), [2,6), [5,8)
        assert_eq!(&m[0..8], &[1. / 3., 1. / 3., 1. / 3., 0., 0., 0., 0., 0.]);
        assert_eq!(&m[8..16], &[0., 0., 0.25, 0.25, 0.25, 0.25, 0., 0.]);
        for row in m.chunks(8) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_resample_preserves_constants() {
        let x = Tensor::full(0.25f32, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let y = resample(&x, 16, 16, Resample::Linear).unwrap();
        assert_eq!(y.dims(), &[1, 2, 16, 16]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&a| (a - 0.25).abs() < 1e-6));
    }

    #[test]
    fn group_norm_normalizes() {
        let mut ps = ParamStore::new(0);
        let gn = ps.group_norm("g", 16).unwrap();
        let x = Tensor::rand(0f32, 5.0, (2, 16, 4, 4), &Device::Cpu).unwrap();
        let y = gn.forward(&x).unwrap();
        let m: f32 = y.mean_all().unwrap().to_scalar().unwrap();
        assert!(m.abs() < 1e-4);
    }

    #[test]
    fn blob_round_trip() {
        let mut a = ParamStore::new(3);
        a.conv2d("enc.c", ConvSpec::new(3, 4, 3)).unwrap();
        let mut b = ParamStore::new(4);
        b.conv2d("enc.c", ConvSpec::new(3, 4, 3)).unwrap();
        assert_ne!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(b.load_bytes(&a.to_bytes().unwrap(), "").unwrap(), 2);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn bce_logits_matches_direct_formula() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[-3.0f32, 0.0, 2.5], &dev).unwrap();
        let t = Tensor::new(&[0.0f32, 1.0, 1.0], &dev).unwrap();
        let got: f32 = bce_with_logits(&x, &t).unwrap().to_scalar().unwrap();
        let p = |z: f32| 1.0 / (1.0 + (-z).exp());
        let want = (-(1.0 - p(-3.0)).ln() - p(0.0).ln() - p(2.5).ln()) / 3.0;
        assert!((got - want).abs() < 1e-6);
    }
}
