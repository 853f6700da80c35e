//! Spatially-displaced convolution: a per-pixel separable kernel applied at a
//! flow-displaced, bilinearly sampled location of the reference frame.
//!
//! ```text
//! out_c(p) = sum_{i,j} kv[i](p) * ku[j](p) * B(ref_c, p + flow(p) + (j, i))
//! ```
//!
//! `i` and `j` run over `-K/2..=K/2`; tap `t` of a kernel field holds offset
//! `t - K/2`. `B` is bilinear sampling with clamp-to-edge addressing.

use num_traits::Float;

use super::flow::FlowField;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIMPLEX_TOLERANCE: f32 = 1e-4;

/// Horizontal and vertical per-pixel kernels, `(K, H, W)` each.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    kernels_u: Tensor,
    kernels_v: Tensor,
}

impl KernelField {
    /// Validates shape and simplex membership (within [`SIMPLEX_TOLERANCE`]).
    pub fn new(kernels_u: Tensor, kernels_v: Tensor) -> Result<Self> {
        let field = Self::new_unchecked(kernels_u, kernels_v)?;
        field.check_simplex(SIMPLEX_TOLERANCE)?;
        Ok(field)
    }

    /// Shape checks only. Useful for perturbation studies that leave the simplex.
    pub fn new_unchecked(kernels_u: Tensor, kernels_v: Tensor) -> Result<Self> {
        if kernels_u.shape() != kernels_v.shape() {
            return Err(Error::Shape(format!(
                "kernel fields differ: {:?} vs {:?}",
                kernels_u.shape(),
                kernels_v.shape()
            )));
        }
        if kernels_u.channels() % 2 == 0 {
            return Err(Error::Shape(format!("kernel size must be odd, got {}", kernels_u.channels())));
        }
        Ok(Self { kernels_u, kernels_v })
    }

    /// A single centre tap of weight 1.
    pub fn delta(taps: usize, height: usize, width: usize) -> Result<Self> {
        let mut k = Tensor::zeros(taps, height, width);
        if taps % 2 == 1 {
            k.channel_mut(taps / 2).fill(1.0);
        }
        Self::new(k.clone(), k)
    }

    pub fn uniform(taps: usize, height: usize, width: usize) -> Result<Self> {
        let k = Tensor::filled(taps, height, width, 1.0 / taps as f32);
        Self::new(k.clone(), k)
    }

    pub fn taps(&self) -> usize {
        self.kernels_u.channels()
    }

    pub fn height(&self) -> usize {
        self.kernels_u.height()
    }

    pub fn width(&self) -> usize {
        self.kernels_u.width()
    }

    pub fn kernels_u(&self) -> &Tensor {
        &self.kernels_u
    }

    pub fn kernels_v(&self) -> &Tensor {
        &self.kernels_v
    }

    pub fn check_simplex(&self, tolerance: f32) -> Result<()> {
        let (k, h, w) = self.kernels_u.shape();
        for (axis, field) in [("u", &self.kernels_u), ("v", &self.kernels_v)] {
            for p in 0..h * w {
                let mut sum = 0.0f32;
                for t in 0..k {
                    let value = field.channel(t)[p];
                    if !(value >= -tolerance) {
                        return Err(Error::Contract(format!(
                            "kernels_{axis} tap {t} at pixel {p} is {value}, expected nonnegative"
                        )));
                    }
                    sum += value;
                }
                if (sum - 1.0).abs() > tolerance {
                    return Err(Error::Contract(format!("kernels_{axis} at pixel {p} sums to {sum}")));
                }
            }
        }
        Ok(())
    }
}

/// Borrowed planar inputs for the generic warp kernels.
#[derive(Debug, Clone, Copy)]
pub struct WarpInputs<'a, T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub taps: usize,
    /// `channels * height * width`
    pub reference: &'a [T],
    /// `2 * height * width`, u plane then v plane
    pub flow: &'a [T],
    /// `taps * height * width`
    pub kernels_u: &'a [T],
    /// `taps * height * width`
    pub kernels_v: &'a [T],
}

/// Gradients of `<upstream, warp(...)>`, laid out like the corresponding inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGradients<T> {
    pub reference: Vec<T>,
    pub flow: Vec<T>,
    pub kernels_u: Vec<T>,
    pub kernels_v: Vec<T>,
}

impl<T: Float> WarpInputs<'_, T> {
    fn check(&self) -> Result<()> {
        let n = self.height * self.width;
        let ok = self.reference.len() == self.channels * n
            && self.flow.len() == 2 * n
            && self.kernels_u.len() == self.taps * n
            && self.kernels_v.len() == self.taps * n;
        if !ok {
            return Err(Error::Shape(format!(
                "warp buffers do not match {}x{}x{} with {} taps",
                self.channels, self.height, self.width, self.taps
            )));
        }
        if self.taps % 2 == 0 || n == 0 {
            return Err(Error::Shape(format!("bad warp geometry: {} taps over {n} pixels", self.taps)));
        }
        Ok(())
    }
}

/// Bilinear footprint of a real coordinate along one axis.
struct Axis<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

#[inline]
fn axis<T: Float>(pos: T, len: usize) -> Axis<T> {
    let base = pos.floor();
    let frac = pos - base;
    let last = (len - 1) as isize;
    let b = base.to_isize().unwrap_or(if base > T::zero() { isize::MAX } else { isize::MIN });
    Axis {
        lo: b.clamp(0, last) as usize,
        hi: b.saturating_add(1).clamp(0, last) as usize,
        frac,
    }
}

/// Forward warp in any float type. No simplex check is made.
pub fn warp_planes<T: Float>(inputs: &WarpInputs<'_, T>) -> Result<Vec<T>> {
    inputs.check()?;
    let WarpInputs { channels, height: h, width: w, taps, reference, flow, kernels_u, kernels_v } = *inputs;
    let n = h * w;
    let half = (taps / 2) as isize;
    let mut out = vec![T::zero(); channels * n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (u, v) = (flow[p], flow[n + p]);
            for ti in 0..taps {
                let kv = kernels_v[ti * n + p];
                let ay = axis(T::from(y as isize + ti as isize - half).unwrap() + v, h);
                for tj in 0..taps {
                    let weight = kv * kernels_u[tj * n + p];
                    let ax = axis(T::from(x as isize + tj as isize - half).unwrap() + u, w);
                    for c in 0..channels {
                        let plane = &reference[c * n..(c + 1) * n];
                        let s = sample(plane, w, &ax, &ay);
                        out[c * n + p] = out[c * n + p] + weight * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn sample<T: Float>(plane: &[T], w: usize, ax: &Axis<T>, ay: &Axis<T>) -> T {
    let one = T::one();
    let top = plane[ay.lo * w + ax.lo] * (one - ax.frac) + plane[ay.lo * w + ax.hi] * ax.frac;
    let bot = plane[ay.hi * w + ax.lo] * (one - ax.frac) + plane[ay.hi * w + ax.hi] * ax.frac;
    top * (one - ay.frac) + bot * ay.frac
}

/// Vector-Jacobian product of [`warp_planes`]. At integer sample coordinates
/// the right-hand derivative of the bilinear interpolant is used.
pub fn warp_planes_vjp<T: Float>(inputs: &WarpInputs<'_, T>, upstream: &[T]) -> Result<WarpGradients<T>> {
    inputs.check()?;
    let WarpInputs { channels, height: h, width: w, taps, reference, flow, kernels_u, kernels_v } = *inputs;
    let n = h * w;
    if upstream.len() != channels * n {
        return Err(Error::Shape(format!("upstream has {} values, expected {}", upstream.len(), channels * n)));
    }
    let half = (taps / 2) as isize;
    let zero = T::zero();
    let one = T::one();
    let mut grads = WarpGradients {
        reference: vec![zero; channels * n],
        flow: vec![zero; 2 * n],
        kernels_u: vec![zero; taps * n],
        kernels_v: vec![zero; taps * n],
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (u, v) = (flow[p], flow[n + p]);
            let (mut gu, mut gv) = (zero, zero);
            for ti in 0..taps {
                let kv = kernels_v[ti * n + p];
                let ay = axis(T::from(y as isize + ti as isize - half).unwrap() + v, h);
                for tj in 0..taps {
                    let ku = kernels_u[tj * n + p];
                    let weight = kv * ku;
                    let ax = axis(T::from(x as isize + tj as isize - half).unwrap() + u, w);
                    for c in 0..channels {
                        let g = upstream[c * n + p];
                        let plane = &reference[c * n..(c + 1) * n];
                        let (a, b) = (plane[ay.lo * w + ax.lo], plane[ay.lo * w + ax.hi]);
                        let (d, e) = (plane[ay.hi * w + ax.lo], plane[ay.hi * w + ax.hi]);
                        let top = a * (one - ax.frac) + b * ax.frac;
                        let bot = d * (one - ax.frac) + e * ax.frac;
                        let s = top * (one - ay.frac) + bot * ay.frac;

                        grads.kernels_u[tj * n + p] = grads.kernels_u[tj * n + p] + g * kv * s;
                        grads.kernels_v[ti * n + p] = grads.kernels_v[ti * n + p] + g * ku * s;

                        // a coordinate clamped on both corners does not move the sample
                        if ax.lo != ax.hi {
                            let ds_dx = (b - a) * (one - ay.frac) + (e - d) * ay.frac;
                            gu = gu + g * weight * ds_dx;
                        }
                        if ay.lo != ay.hi {
                            gv = gv + g * weight * (bot - top);
                        }

                        let gr = &mut grads.reference[c * n..(c + 1) * n];
                        let gw = g * weight;
                        gr[ay.lo * w + ax.lo] = gr[ay.lo * w + ax.lo] + gw * (one - ax.frac) * (one - ay.frac);
                        gr[ay.lo * w + ax.hi] = gr[ay.lo * w + ax.hi] + gw * ax.frac * (one - ay.frac);
                        gr[ay.hi * w + ax.lo] = gr[ay.hi * w + ax.lo] + gw * (one - ax.frac) * ay.frac;
                        gr[ay.hi * w + ax.hi] = gr[ay.hi * w + ax.hi] + gw * ax.frac * ay.frac;
                    }
                }
            }
            grads.flow[p] = gu;
            grads.flow[n + p] = gv;
        }
    }
    Ok(grads)
}

/// Gradients of an [`sdc_warp`] call with respect to each of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SdcGradients {
    pub flow: Tensor,
    pub kernels_u: Tensor,
    pub kernels_v: Tensor,
    pub reference: Tensor,
}

fn inputs<'a>(reference: &'a Tensor, flow: &'a FlowField, kernels: &'a KernelField) -> Result<WarpInputs<'a, f32>> {
    let (c, h, w) = reference.shape();
    if (flow.height(), flow.width()) != (h, w) || (kernels.height(), kernels.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "reference {h}x{w}, flow {}x{}, kernels {}x{}",
            flow.height(),
            flow.width(),
            kernels.height(),
            kernels.width()
        )));
    }
    kernels.check_simplex(SIMPLEX_TOLERANCE)?;
    Ok(WarpInputs {
        channels: c,
        height: h,
        width: w,
        taps: kernels.taps(),
        reference: reference.data(),
        flow: flow.as_tensor().data(),
        kernels_u: kernels.kernels_u().data(),
        kernels_v: kernels.kernels_v().data(),
    })
}

pub fn sdc_warp(reference: &Tensor, flow: &FlowField, kernels: &KernelField) -> Result<Tensor> {
    let (c, h, w) = reference.shape();
    let out = warp_planes(&inputs(reference, flow, kernels)?)?;
    Tensor::from_vec(c, h, w, out)
}

pub fn sdc_warp_vjp(
    reference: &Tensor,
    flow: &FlowField,
    kernels: &KernelField,
    upstream: &Tensor,
) -> Result<SdcGradients> {
    if upstream.shape() != reference.shape() {
        return Err(Error::Shape(format!(
            "upstream {:?} vs reference {:?}",
            upstream.shape(),
            reference.shape()
        )));
    }
    let (c, h, w) = reference.shape();
    let k = kernels.taps();
    let g = warp_planes_vjp(&inputs(reference, flow, kernels)?, upstream.data())?;
    Ok(SdcGradients {
        flow: Tensor::from_vec(2, h, w, g.flow)?,
        kernels_u: Tensor::from_vec(k, h, w, g.kernels_u)?,
        kernels_v: Tensor::from_vec(k, h, w, g.kernels_v)?,
        reference: Tensor::from_vec(c, h, w, g.reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identity_warp() {
        let r = random(3, 12, 10, 1);
        let out = sdc_warp(&r, &FlowField::zeros(12, 10), &KernelField::delta(5, 12, 10).unwrap()).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn integer_shift() {
        let r = random(3, 16, 16, 2);
        let out = sdc_warp(&r, &FlowField::uniform(16, 16, -2.0, 0.0), &KernelField::delta(5, 16, 16).unwrap()).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 2..16 {
                    assert_eq!(out.get(c, y, x), r.get(c, y, x - 2));
                }
            }
        }
    }

    #[test]
    fn uniform_kernels_are_box_filter() {
        let r = random(3, 16, 16, 3);
        let out = sdc_warp(&r, &FlowField::zeros(16, 16), &KernelField::uniform(5, 16, 16).unwrap()).unwrap();
        for c in 0..3 {
            for y in 0..16isize {
                for x in 0..16isize {
                    let mut acc = 0.0f64;
                    for dy in -2..=2 {
                        for dx in -2..=2 {
                            let sy = (y + dy).clamp(0, 15) as usize;
                            let sx = (x + dx).clamp(0, 15) as usize;
                            acc += r.get(c, sy, sx) as f64;
                        }
                    }
                    let got = out.get(c, y as usize, x as usize) as f64;
                    assert!((got - acc / 25.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn non_simplex_rejected() {
        let k = Tensor::filled(5, 2, 2, 0.3);
        assert!(matches!(KernelField::new(k.clone(), k.clone()), Err(Error::Contract(_))));
        let field = KernelField::new_unchecked(k.clone(), k).unwrap();
        let r = Tensor::zeros(3, 2, 2);
        assert!(matches!(sdc_warp(&r, &FlowField::zeros(2, 2), &field), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_reference_has_zero_flow_gradient() {
        let r = Tensor::filled(3, 8, 8, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Tensor::from_vec(2, 8, 8, (0..128).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let up = random(3, 8, 8, 5);
        let g = sdc_warp_vjp(&r, &FlowField::new(f).unwrap(), &KernelField::uniform(5, 8, 8).unwrap(), &up).unwrap();
        assert!(g.flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centre_tap_gradient_is_reference_sum() {
        let r = random(3, 6, 6, 6);
        let up = Tensor::filled(3, 6, 6, 1.0);
        let g = sdc_warp_vjp(&r, &FlowField::zeros(6, 6), &KernelField::delta(5, 6, 6).unwrap(), &up).unwrap();
        for p in 0..36 {
            let expect: f32 = (0..3).map(|c| r.channel(c)[p]).sum();
            assert!((g.kernels_u.channel(2)[p] - expect).abs() < 1e-6);
            assert!((g.kernels_v.channel(2)[p] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_gradient_is_adjoint() {
        // <up, warp(r)> == <vjp_ref(up), r> since the warp is linear in r
        let r = random(3, 8, 8, 7);
        let up = random(3, 8, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Tensor::from_vec(2, 8, 8, (0..128).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let flow = FlowField::new(f).unwrap();
        let k = KernelField::uniform(3, 8, 8).unwrap();
        let out = sdc_warp(&r, &flow, &k).unwrap();
        let g = sdc_warp_vjp(&r, &flow, &k, &up).unwrap();
        let lhs: f64 = out.data().iter().zip(up.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rhs: f64 = g.reference.data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }
}
