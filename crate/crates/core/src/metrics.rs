//! Quality metrics: multi-scale SSIM on luma and PSNR.

use crate::error::{Error, Result};
use crate::frame_io::{Frame420, Frame444};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Number of scales evaluated; below 5 when the image is too small.
    pub scales: usize,
}

impl MsSsim {
    pub fn reduced(&self) -> bool {
        self.scales < MS_SSIM_WEIGHTS.len()
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_bytes(bytes: &[u8], w: usize, h: usize) -> Self {
        Self { w, h, data: bytes.iter().map(|&b| b as f64).collect() }
    }

    /// Valid-mode separable filtering.
    fn filter(&self, g: &[f64; WINDOW]) -> Plane {
        let ow = self.w - WINDOW + 1;
        let oh = self.h - WINDOW + 1;
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                let mut acc = 0.0;
                for k in 0..WINDOW {
                    acc += g[k] * row[x + k];
                }
                tmp[y * ow + x] = acc;
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for k in 0..WINDOW {
                    acc += g[k] * tmp[(y + k) * ow + x];
                }
                out[y * ow + x] = acc;
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    fn product(&self, other: &Plane) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }

    /// 2x2 mean; a trailing odd row or column is dropped.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let at = |yy: usize, xx: usize| self.data[yy * self.w + xx];
                data[y * w + x] = (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)) / 4.0;
            }
        }
        Plane { w, h, data }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(a: &Plane, b: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let mx = a.filter(g);
    let my = b.filter(g);
    let xx = a.product(a).filter(g);
    let yy = b.product(b).filter(g);
    let xy = a.product(b).filter(g);
    let n = mx.data.len();
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..n {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = xx.data[i] - ux * ux;
        let vy = yy.data[i] - uy * uy;
        let cov = xy.data[i] - ux * uy;
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        let l = (2.0 * (ux * uy) + C1) / (ux * ux + uy * uy + C1);
        ssim += l * c;
        cs += c;
    }
    (ssim / n as f64, cs / n as f64)
}

/// Number of dyadic scales whose coarsest level still fits the window.
pub fn scale_count(width: usize, height: usize) -> usize {
    let mut m = MS_SSIM_WEIGHTS.len();
    while m > 0 && width.min(height) >> (m - 1) < WINDOW {
        m -= 1;
    }
    m
}

/// MS-SSIM of two 8-bit luma planes.
pub fn ms_ssim_plane(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<MsSsim> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::Shape(format!(
            "planes of {} and {} samples for {width}x{height}",
            a.len(),
            b.len()
        )));
    }
    let scales = scale_count(width, height);
    if scales == 0 {
        return Err(Error::Dimension(format!("{width}x{height} is smaller than the {WINDOW}-tap window")));
    }
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let g = gaussian_window();
    let mut pa = Plane::from_bytes(a, width, height);
    let mut pb = Plane::from_bytes(b, width, height);
    let mut value = 1.0;
    for s in 0..scales {
        let weight = MS_SSIM_WEIGHTS[s] / total;
        let (ssim, cs) = ssim_terms(&pa, &pb, &g);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(weight);
        if s + 1 < scales {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(MsSsim { value, scales })
}

fn check_dims(aw: usize, ah: usize, bw: usize, bh: usize) -> Result<()> {
    if (aw, ah) != (bw, bh) {
        return Err(Error::Shape(format!("frames differ: {aw}x{ah} vs {bw}x{bh}")));
    }
    Ok(())
}

pub fn ms_ssim_detailed(a: &Frame444, b: &Frame444) -> Result<MsSsim> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    ms_ssim_plane(a.y_plane(), b.y_plane(), a.width(), a.height())
}

pub fn ms_ssim(a: &Frame444, b: &Frame444) -> Result<f64> {
    Ok(ms_ssim_detailed(a, b)?.value)
}

fn psnr_planes(a: &[&[u8]], b: &[&[u8]]) -> f64 {
    let mut sse = 0u64;
    let mut count = 0usize;
    for (pa, pb) in a.iter().zip(b) {
        for (&x, &y) in pa.iter().zip(pb.iter()) {
            let d = x as i64 - y as i64;
            sse += (d * d) as u64;
        }
        count += pa.len();
    }
    if sse == 0 {
        return f64::INFINITY;
    }
    let mse = sse as f64 / count as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// PSNR over all three 4:4:4 planes; identical frames give `+inf`.
pub fn psnr(a: &Frame444, b: &Frame444) -> Result<f64> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    Ok(psnr_planes(&a.planes(), &b.planes()))
}

/// PSNR over the native 4:2:0 planes.
pub fn psnr_420(a: &Frame420, b: &Frame420) -> Result<f64> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    Ok(psnr_planes(&[a.y_plane(), a.u_plane(), a.v_plane()], &[b.y_plane(), b.u_plane(), b.v_plane()]))
}
