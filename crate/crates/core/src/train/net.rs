//! Small fully convolutional image-to-splatter-image predictor with manual
//! backpropagation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, ParseErrorKind, Result};
use crate::render::Image;
use crate::splatter::{channel_count, ByteReader, SplatterImage};

pub const SPNT_MAGIC: &[u8; 4] = b"SPNT";
pub const SPNT_VERSION: u32 = 1;
pub const HIDDEN_CHANNELS: usize = 32;
pub const LEAKY_SLOPE: f64 = 0.01;

/// One 3x3, stride 1, zero-padded convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `(out, in, 3, 3)` order.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * in_ch * 9],
            biases: vec![0.0; out_ch],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn random(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((in_ch * 9) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            weights: (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
            biases: (0..out_ch).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }

    /// Channel-major input `(in, h, w)` to channel-major output.
    fn forward(&self, input: &[f64], (h, w): (usize, usize)) -> Vec<f64> {
        let plane = h * w;
        let mut out = vec![0.0; self.out_ch * plane];
        out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
            dst.fill(self.biases[o]);
            for i in 0..self.in_ch {
                let src = &input[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        shifted_axpy(self.w(o, i, ky, kx), src, dst, (h, w), (ky, kx));
                    }
                }
            }
        });
        out
    }
}

/// `dst[y, x] += a * src[y + ky - 1, x + kx - 1]` over the in-bounds region.
fn shifted_axpy(a: f64, src: &[f64], dst: &mut [f64], (h, w): (usize, usize), (ky, kx): (usize, usize)) {
    let (y0, y1) = (usize::from(ky == 0), h - usize::from(ky == 2));
    let (x0, x1) = (usize::from(kx == 0), w - usize::from(kx == 2));
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = y + ky - 1;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += a * sv;
        }
    }
}

/// `sum over (y, x) of a[y, x] * b[y + ky - 1, x + kx - 1]`.
fn shifted_dot(a: &[f64], b: &[f64], (h, w): (usize, usize), (ky, kx): (usize, usize)) -> f64 {
    let (y0, y1) = (usize::from(ky == 0), h - usize::from(ky == 2));
    let (x0, x1) = (usize::from(kx == 0), w - usize::from(kx == 2));
    let mut acc = 0.0;
    if y0 >= y1 || x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = y + ky - 1;
        let ar = &a[y * w + x0..y * w + x1];
        let br = &b[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        acc += ar.iter().zip(br).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    dims: (usize, usize),
    /// Input of each layer, channel-major.
    inputs: Vec<Vec<f64>>,
    /// Output of each layer before its nonlinearity.
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Raw output as an `H x W x C` pixel-interleaved grid.
    pub fn output(&self) -> Vec<f64> {
        let out = self.pre.last().expect("at least one layer");
        let plane = self.dims.0 * self.dims.1;
        to_interleaved(out, out.len() / plane.max(1), self.dims)
    }
}

/// Convolutional layers `3 -> 32 -> 32 -> 32 -> 12 + k_c` with leaky ReLU
/// between them and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNet {
    layers: Vec<ConvLayer>,
}

impl PredictorNet {
    /// Random weights; the head's biases are set to `head_bias` so that an
    /// untrained net starts near that raw pixel everywhere.
    pub fn new(k_c: usize, head_bias: &[f64], seed: u64) -> Result<Self> {
        let out = channel_count(k_c);
        if head_bias.len() != out {
            return Err(Error::DimensionMismatch(format!(
                "head bias has {} entries, the net outputs {out} channels",
                head_bias.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            ConvLayer::random(3, HIDDEN_CHANNELS, &mut rng),
            ConvLayer::random(HIDDEN_CHANNELS, HIDDEN_CHANNELS, &mut rng),
            ConvLayer::random(HIDDEN_CHANNELS, HIDDEN_CHANNELS, &mut rng),
            ConvLayer::random(HIDDEN_CHANNELS, out, &mut rng),
        ];
        layers[3].biases.copy_from_slice(head_bias);
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::invalid("a net needs at least one layer"));
        };
        if first.in_ch != 3 {
            return Err(Error::invalid(format!("first layer takes {} channels, expected 3", first.in_ch)));
        }
        for pair in layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::DimensionMismatch(format!(
                    "layer outputs {} channels, next layer takes {}",
                    pair[0].out_ch, pair[1].in_ch
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.out_ch * l.in_ch * 9 || l.biases.len() != l.out_ch {
                return Err(Error::DimensionMismatch("layer tensor sizes".into()));
            }
        }
        let out = layers.last().expect("non-empty").out_ch;
        if out < 12 || crate::sh::order_for_count(out - 12).is_err() {
            return Err(Error::invalid(format!("head outputs {out} channels, expected 15 or 24")));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn k_c(&self) -> usize {
        self.output_channels() - 12
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().expect("validated").out_ch
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a net with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Forward pass keeping intermediates. The result's last `pre` entry is
    /// the raw output, channel-major.
    pub fn forward_trace(&self, image: &Image) -> ForwardTrace {
        let dims = (image.height(), image.width());
        let plane = dims.0 * dims.1;
        let mut x = vec![0.0; 3 * plane];
        for (p, rgb) in image.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                x[c * plane + p] = f64::from(rgb[c]);
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let y = l.forward(&x, dims);
            inputs.push(x);
            x = if k + 1 < self.layers.len() {
                y.iter().map(|&v| leaky(v)).collect()
            } else {
                Vec::new()
            };
            pre.push(y);
        }
        ForwardTrace { dims, inputs, pre }
    }

    /// Raw output as an `H x W x (12 + k_c)` pixel-interleaved grid.
    pub fn forward(&self, image: &Image) -> Vec<f64> {
        self.forward_trace(image).output()
    }

    /// Parameter gradients (same order as [`params`](Self::params)) given the
    /// gradient of the raw output grid, pixel-interleaved.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Vec<f64>> {
        let dims = trace.dims;
        let plane = dims.0 * dims.1;
        let c_out = self.output_channels();
        if upstream.len() != plane * c_out || trace.pre.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "upstream has {} values, expected {}",
                upstream.len(),
                plane * c_out
            )));
        }
        let mut d_y = vec![0.0; c_out * plane];
        for p in 0..plane {
            for c in 0..c_out {
                d_y[c * plane + p] = upstream[p * c_out + c];
            }
        }
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let x = &trace.inputs[k];
            let mut g = vec![0.0; l.param_count()];
            let (gw, gb) = g.split_at_mut(l.weights.len());
            gw.par_chunks_mut(l.in_ch * 9)
                .zip(gb.par_iter_mut())
                .enumerate()
                .for_each(|(o, (gw_o, gb_o))| {
                    let dy = &d_y[o * plane..(o + 1) * plane];
                    *gb_o = dy.iter().sum();
                    for i in 0..l.in_ch {
                        let xi = &x[i * plane..(i + 1) * plane];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                gw_o[(i * 3 + ky) * 3 + kx] = shifted_dot(dy, xi, dims, (ky, kx));
                            }
                        }
                    }
                });
            per_layer[k] = g;
            if k == 0 {
                break;
            }
            // Gradient into this layer's input, then through the previous
            // layer's nonlinearity.
            let mut d_x = vec![0.0; l.in_ch * plane];
            d_x.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
                for o in 0..l.out_ch {
                    let dy = &d_y[o * plane..(o + 1) * plane];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            // Transposed convolution: flip the kernel.
                            shifted_axpy(l.w(o, i, ky, kx), dy, dst, dims, (2 - ky, 2 - kx));
                        }
                    }
                }
            });
            for (d, &z) in d_x.iter_mut().zip(&trace.pre[k - 1]) {
                if z <= 0.0 {
                    *d *= LEAKY_SLOPE;
                }
            }
            d_y = d_x;
        }
        Ok(per_layer.concat())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.layers.len() + 4 * self.param_count());
        out.extend_from_slice(SPNT_MAGIC);
        out.extend_from_slice(&SPNT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.in_ch as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_ch as u32).to_le_bytes());
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != SPNT_MAGIC {
            return Err(Error::parse(0, ParseErrorKind::BadMagic));
        }
        let version = r.u32()?;
        if version != SPNT_VERSION {
            return Err(Error::parse(4, ParseErrorKind::UnsupportedVersion(version)));
        }
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let at = r.pos;
            let in_ch = r.u32()? as usize;
            let out_ch = r.u32()? as usize;
            let n = out_ch
                .checked_mul(in_ch)
                .and_then(|v| v.checked_mul(9))
                .filter(|&v| v <= r.remaining() / 4)
                .ok_or_else(|| Error::parse(at, ParseErrorKind::Truncated))?;
            let mut read = |count: usize| -> Result<Vec<f64>> {
                (0..count)
                    .map(|_| {
                        let off = r.pos;
                        let v = r.f32()?;
                        if v.is_finite() {
                            Ok(f64::from(v))
                        } else {
                            Err(Error::parse(off, ParseErrorKind::NonFinite))
                        }
                    })
                    .collect()
            };
            let weights = read(n)?;
            let biases = read(out_ch)?;
            layers.push(ConvLayer {
                in_ch,
                out_ch,
                weights,
                biases,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::parse(r.pos, ParseErrorKind::Invalid("trailing bytes".into())));
        }
        Self::from_layers(layers).map_err(|e| Error::parse(8, ParseErrorKind::Invalid(e.to_string())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn to_interleaved(planes: &[f64], channels: usize, (h, w): (usize, usize)) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; plane * channels];
    for c in 0..channels {
        for p in 0..plane {
            out[p * channels + c] = planes[c * plane + p];
        }
    }
    out
}

/// Predict a splatter image for `image`, stored with `depth_range`.
pub fn predictor_forward(net: &PredictorNet, image: &Image, depth_range: (f64, f64)) -> Result<SplatterImage> {
    let raw = net.forward(image);
    SplatterImage::from_f64(image.height(), image.width(), net.k_c(), &raw, depth_range)
}

pub fn predictor_backward(net: &PredictorNet, image: &Image, upstream: &[f64]) -> Result<Vec<f64>> {
    net.backward(&net.forward_trace(image), upstream)
}
