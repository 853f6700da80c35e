//! Deterministic convolution kernels.
//!
//! Every output element is accumulated in a fixed loop order (bias, then input
//! channel, kernel row, kernel column), so identical inputs and weights give
//! bit-identical outputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Strided convolution, output `ceil(H / stride)`.
    Down,
    /// Transposed convolution, output `H * stride`.
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    LeakyRelu,
}

/// One convolution layer. Weights are laid out `[out][in][kh][kw]` for both modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub mode: Mode,
    pub activation: Activation,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        mode: Mode,
        activation: Activation,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let layer = Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            mode,
            activation,
            weights,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Layer with all weights and biases zero.
    pub fn zeroed(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        mode: Mode,
        activation: Activation,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            mode,
            activation,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.out_channels == 0 || self.in_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let expected = self.weight_len();
        if self.weights.len() != expected {
            return Err(Error::Shape(format!(
                "layer has {} weights, expected {expected}",
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "layer has {} biases, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Output spatial size for an input of `height` x `width`.
    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        match self.mode {
            Mode::Down => (height.div_ceil(self.stride), width.div_ceil(self.stride)),
            Mode::Up => (height * self.stride, width * self.stride),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            Mode::Down => conv2d(x, self),
            Mode::Up => deconv2d(x, self),
        }
    }
}

fn check_input(x: &Tensor, layer: &ConvLayer) -> Result<()> {
    if x.channels() != layer.in_channels {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, got {}",
            layer.in_channels,
            x.channels()
        )));
    }
    Ok(())
}

fn finish(mut out: Tensor, activation: Activation) -> Result<Tensor> {
    if activation == Activation::LeakyRelu {
        for v in out.data_mut() {
            *v = leaky(*v, LEAKY_SLOPE);
        }
    }
    out.check_finite()?;
    Ok(out)
}

/// Range of output indices `o` such that `o * stride + k - pad` lies in `0..len`.
#[inline]
fn valid_range(out_len: usize, len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let limit = len + pad;
    let hi = if limit > k { ((limit - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

/// Split a row-major plane into `s` column phases: `phase[r][y][j] = plane[y][j * s + r]`.
fn split_columns(plane: &[f32], h: usize, w: usize, s: usize) -> Vec<Vec<f32>> {
    (0..s)
        .map(|r| {
            let pw = phase_width(w, s, r);
            let mut out = Vec::with_capacity(h * pw);
            for y in 0..h {
                out.extend(plane[y * w + r..(y + 1) * w].iter().step_by(s));
            }
            out
        })
        .collect()
}

#[inline]
fn phase_width(w: usize, s: usize, r: usize) -> usize {
    if r >= w {
        0
    } else {
        (w - r).div_ceil(s)
    }
}

/// `kx - pad` as `a * s + r` with `0 <= r < s`.
#[inline]
fn tap_phase(kx: usize, pad: usize, s: usize) -> (isize, usize) {
    let t = kx as isize - pad as isize;
    (t.div_euclid(s as isize), t.rem_euclid(s as isize) as usize)
}

/// Strided convolution with "same" zero padding of `floor(k / 2)`.
pub fn conv2d(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    if layer.mode != Mode::Down {
        return Err(Error::Config("conv2d needs a down-mode layer".into()));
    }
    check_input(x, layer)?;
    let (_, h, w) = x.shape();
    let (oh, ow) = layer.output_size(h, w);
    let (ph, pw) = (layer.kernel_h / 2, layer.kernel_w / 2);
    let s = layer.stride;
    let phases: Vec<Vec<Vec<f32>>> = (0..layer.in_channels).map(|i| split_columns(x.channel(i), h, w, s)).collect();
    let mut out = Tensor::zeros(layer.out_channels, oh, ow);
    for o in 0..layer.out_channels {
        let plane = out.channel_mut(o);
        plane.fill(layer.bias[o]);
        for (i, input) in phases.iter().enumerate() {
            for ky in 0..layer.kernel_h {
                let (y_lo, y_hi) = valid_range(oh, h, s, ky, ph);
                for kx in 0..layer.kernel_w {
                    let wgt = layer.weight(o, i, ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let (x_lo, x_hi) = valid_range(ow, w, s, kx, pw);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let (a, r) = tap_phase(kx, pw, s);
                    let src_w = phase_width(w, s, r);
                    let (c_lo, c_hi) = ((x_lo as isize + a) as usize, (x_hi as isize + a) as usize);
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - ph;
                        let src = &input[r][iy * src_w + c_lo..iy * src_w + c_hi];
                        let dst = &mut plane[oy * ow + x_lo..oy * ow + x_hi];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
    }
    finish(out, layer.activation)
}

/// Transposed convolution: input sample `q` scatters into `q * stride + k - floor(k / 2)`,
/// keeping only positions inside the `H * stride` output.
pub fn deconv2d(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    if layer.mode != Mode::Up {
        return Err(Error::Config("deconv2d needs an up-mode layer".into()));
    }
    check_input(x, layer)?;
    let (_, h, w) = x.shape();
    let (oh, ow) = layer.output_size(h, w);
    let (ph, pw) = (layer.kernel_h / 2, layer.kernel_w / 2);
    let s = layer.stride;
    let mut out = Tensor::zeros(layer.out_channels, oh, ow);
    // accumulate in column phases of the output, then interleave
    let mut acc: Vec<Vec<f32>> = (0..s).map(|r| vec![0.0; oh * phase_width(ow, s, r)]).collect();
    for o in 0..layer.out_channels {
        for buf in acc.iter_mut() {
            buf.fill(layer.bias[o]);
        }
        for i in 0..layer.in_channels {
            let input = x.channel(i);
            for ky in 0..layer.kernel_h {
                // input rows q with 0 <= q*s + ky - ph < oh
                let (q_lo, q_hi) = valid_range(h, oh, s, ky, ph);
                for kx in 0..layer.kernel_w {
                    let wgt = layer.weight(o, i, ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let (r_lo, r_hi) = valid_range(w, ow, s, kx, pw);
                    if r_lo >= r_hi {
                        continue;
                    }
                    let (a, r) = tap_phase(kx, pw, s);
                    let dst_w = phase_width(ow, s, r);
                    let (c_lo, c_hi) = ((r_lo as isize + a) as usize, (r_hi as isize + a) as usize);
                    for qy in q_lo..q_hi {
                        let oy = qy * s + ky - ph;
                        let src = &input[qy * w + r_lo..qy * w + r_hi];
                        let dst = &mut acc[r][oy * dst_w + c_lo..oy * dst_w + c_hi];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
        let plane = out.channel_mut(o);
        for (r, buf) in acc.iter().enumerate() {
            let pw_r = phase_width(ow, s, r);
            for oy in 0..oh {
                for j in 0..pw_r {
                    plane[oy * ow + j * s + r] = buf[oy * pw_r + j];
                }
            }
        }
    }
    finish(out, layer.activation)
}

#[inline]
fn leaky(v: f32, slope: f32) -> f32 {
    v.max(slope * v)
}

/// Elementwise `max(x, slope * x)`.
pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| leaky(v, slope))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f32) -> f32 {
    let x = x as f64;
    (x.max(0.0) + (-x.abs()).exp().ln_1p()) as f32
}
