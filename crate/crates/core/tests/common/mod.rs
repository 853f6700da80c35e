//! Synthetic inputs shared by the integration tests.
#![allow(dead_code)]

use mvres::Frame420;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn clamp_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Smooth texture: a few random sinusoids over a gradient, plus mild noise.
pub fn textured_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.0..6.3), rng.gen_range(10.0..50.0)))
        .collect();
    let (gx, gy) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let noise = rng.gen_range(0.0..6.0);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = 128.0 + gx * (xf - w as f64 / 2.0) + gy * (yf - h as f64 / 2.0);
            for &(fx, fy, ph, amp) in &waves {
                v += amp * (fx * xf + fy * yf + ph).sin();
            }
            v += noise * (rng.gen::<f64>() - 0.5);
            out.push(clamp_byte(v));
        }
    }
    out
}

pub fn textured_frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame420 {
    let y = textured_plane(w, h, rng);
    let u = textured_plane(w / 2, h / 2, rng);
    let v = textured_plane(w / 2, h / 2, rng);
    Frame420::new(w, h, y, u, v).unwrap()
}

pub fn noise_frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame420 {
    let mut plane = |n: usize| (0..n).map(|_| rng.gen::<u8>()).collect::<Vec<u8>>();
    let (y, u, v) = (plane(w * h), plane(w * h / 4), plane(w * h / 4));
    Frame420::new(w, h, y, u, v).unwrap()
}

fn shift_plane(src: &[u8], w: usize, h: usize, dx: isize, dy: isize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let sx = (x + dx).clamp(0, w as isize - 1) as usize;
            let sy = (y + dy).clamp(0, h as isize - 1) as usize;
            let v = src[sy * w + sx] as f64 + noise * (rng.gen::<f64>() - 0.5);
            out.push(clamp_byte(v));
        }
    }
    out
}

/// `frame` sampled at `(x + dx, y + dy)` with edge clamping, plus uniform noise.
pub fn shifted_frame(frame: &Frame420, dx: isize, dy: isize, noise: f64, rng: &mut ChaCha8Rng) -> Frame420 {
    let (w, h) = (frame.width(), frame.height());
    let y = shift_plane(frame.y_plane(), w, h, dx, dy, noise, rng);
    let u = shift_plane(frame.u_plane(), w / 2, h / 2, dx / 2, dy / 2, noise, rng);
    let v = shift_plane(frame.v_plane(), w / 2, h / 2, dx / 2, dy / 2, noise, rng);
    Frame420::new(w, h, y, u, v).unwrap()
}

/// A reference/target pair of one of several kinds, chosen by `rng`.
pub fn frame_pair(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (Frame420, Frame420) {
    match rng.gen_range(0..10) {
        0 => (noise_frame(w, h, rng), noise_frame(w, h, rng)),
        1 => {
            let r = textured_frame(w, h, rng);
            (r.clone(), r)
        }
        2 => {
            let r = textured_frame(w, h, rng);
            let t = textured_frame(w, h, rng);
            (r, t)
        }
        _ => {
            let r = textured_frame(w, h, rng);
            let (dx, dy) = (rng.gen_range(-6..=6), rng.gen_range(-6..=6));
            let noise = rng.gen_range(0.0..12.0);
            let t = shifted_frame(&r, dx, dy, noise, rng);
            (r, t)
        }
    }
}
