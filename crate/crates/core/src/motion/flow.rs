use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magic float at the start of a `.flo` file ("PIEH" read as little-endian f32).
pub const FLO_MAGIC: f32 = 202021.25;
pub const DEFAULT_MAX_DISPLACEMENT: f32 = 64.0;

/// Backward-warping displacement field: the prediction at `p` samples the
/// reference at `p + (u, v)`. Channel 0 is `u` (horizontal), channel 1 is `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    field: Tensor,
}

impl FlowField {
    pub fn new(field: Tensor) -> Result<Self> {
        Self::with_bound(field, DEFAULT_MAX_DISPLACEMENT)
    }

    pub fn with_bound(field: Tensor, max_displacement: f32) -> Result<Self> {
        if field.channels() != 2 {
            return Err(Error::Shape(format!("flow needs 2 channels, got {}", field.channels())));
        }
        field.check_finite()?;
        if let Some(i) = field.data().iter().position(|v| v.abs() > max_displacement) {
            return Err(Error::Domain(format!(
                "flow component {} at flat index {i} exceeds bound {max_displacement}",
                field.data()[i]
            )));
        }
        Ok(Self { field })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { field: Tensor::zeros(2, height, width) }
    }

    /// Constant displacement everywhere.
    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Self {
        let mut field = Tensor::zeros(2, height, width);
        field.channel_mut(0).fill(u);
        field.channel_mut(1).fill(v);
        Self { field }
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    pub fn u(&self) -> &[f32] {
        self.field.channel(0)
    }

    pub fn v(&self) -> &[f32] {
        self.field.channel(1)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.field
    }

    pub fn into_tensor(self) -> Tensor {
        self.field
    }

    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(12 + 8 * h * w);
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(w as i32).to_le_bytes());
        out.extend_from_slice(&(h as i32).to_le_bytes());
        for (u, v) in self.u().iter().zip(self.v()) {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_flo_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated(format!("flo header needs 12 bytes, got {}", bytes.len())));
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
        let magic = f32::from_le_bytes(word(0));
        if magic != FLO_MAGIC {
            return Err(Error::Format(format!("bad flo magic {magic}, expected {FLO_MAGIC}")));
        }
        let w = i32::from_le_bytes(word(4));
        let h = i32::from_le_bytes(word(8));
        if w <= 0 || h <= 0 {
            return Err(Error::Format(format!("bad flo dimensions {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let need = 12 + 8 * w * h;
        if bytes.len() < need {
            return Err(Error::Truncated(format!("flo {w}x{h} needs {need} bytes, got {}", bytes.len())));
        }
        if bytes.len() > need {
            return Err(Error::Format(format!("flo {w}x{h} has {} trailing bytes", bytes.len() - need)));
        }
        let mut field = Tensor::zeros(2, h, w);
        for i in 0..w * h {
            let u = f32::from_le_bytes(word(12 + 8 * i));
            let v = f32::from_le_bytes(word(16 + 8 * i));
            field.channel_mut(0)[i] = u;
            field.channel_mut(1)[i] = v;
        }
        field.check_finite()?;
        Ok(Self { field })
    }
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    FlowField::from_flo_bytes(&std::fs::read(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, flow.to_flo_bytes())?;
    Ok(())
}

/// Exhaustive integer block matching on the first (luma) channel.
///
/// For every `block` x `block` target block, the displacement in
/// `[-radius, radius]^2` with the smallest sum of absolute differences wins;
/// ties go to the smallest `|u| + |v|`, then the smallest `v`, then `u`. Reference
/// samples outside the frame are clamped to the edge. Block vectors are then
/// bilinearly interpolated between block centres to give a per-pixel field.
pub fn block_matching_flow(reference: &Tensor, target: &Tensor, block: usize, radius: usize) -> Result<FlowField> {
    if reference.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "reference {:?} and target {:?} differ",
            reference.shape(),
            target.shape()
        )));
    }
    let (_, h, w) = target.shape();
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not a multiple of block size {block}")));
    }
    let to_bytes = |t: &Tensor| -> Vec<i32> {
        t.channel(0).iter().map(|&v| crate::frame_io::unit_to_byte(v) as i32).collect()
    };
    let ref_y = to_bytes(reference);
    let tgt_y = to_bytes(target);
    let r = radius as isize;
    let (bh, bw) = (h / block, w / block);

    let mut candidates: Vec<(isize, isize)> = Vec::with_capacity((2 * radius + 1).pow(2));
    for v in -r..=r {
        for u in -r..=r {
            candidates.push((u, v));
        }
    }
    candidates.sort_by_key(|&(u, v)| (u.abs() + v.abs(), v, u));

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut vectors = vec![(0.0f32, 0.0f32); bh * bw];
    for by in 0..bh {
        for bx in 0..bw {
            let (y0, x0) = (by * block, bx * block);
            let mut best = (u64::MAX, 0isize, 0isize);
            for &(u, v) in &candidates {
                let mut sad = 0u64;
                for y in y0..y0 + block {
                    let sy = clamp(y as isize + v, h);
                    let trow = &tgt_y[y * w..(y + 1) * w];
                    let rrow = &ref_y[sy * w..(sy + 1) * w];
                    for x in x0..x0 + block {
                        let sx = clamp(x as isize + u, w);
                        sad += (trow[x] - rrow[sx]).unsigned_abs() as u64;
                    }
                    if sad >= best.0 {
                        break;
                    }
                }
                // candidates are in tie-break order, so only strict improvements count
                if sad < best.0 {
                    best = (sad, u, v);
                }
            }
            vectors[by * bw + bx] = (best.1 as f32, best.2 as f32);
        }
    }

    let mut field = Tensor::zeros(2, h, w);
    let half = (block as f32 - 1.0) / 2.0;
    let grid = |p: usize, n: usize| -> (usize, usize, f32) {
        let g = ((p as f32 - half) / block as f32).clamp(0.0, (n - 1) as f32);
        let g0 = g.floor() as usize;
        let g1 = (g0 + 1).min(n - 1);
        (g0, g1, g - g0 as f32)
    };
    for y in 0..h {
        let (gy0, gy1, fy) = grid(y, bh);
        for x in 0..w {
            let (gx0, gx1, fx) = grid(x, bw);
            for (c, pick) in [(0usize, 0usize), (1, 1)] {
                let at = |gy: usize, gx: usize| {
                    let v = vectors[gy * bw + gx];
                    if pick == 0 { v.0 } else { v.1 }
                };
                let top = at(gy0, gx0) * (1.0 - fx) + at(gy0, gx1) * fx;
                let bot = at(gy1, gx0) * (1.0 - fx) + at(gy1, gx1) * fx;
                field.set(c, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(FlowField { field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen_range(0..=255) as f32 / 255.0).collect();
        Tensor::from_vec(3, h, w, data).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let t = textured(32, 32, 1);
        let f = block_matching_flow(&t, &t, 8, 16).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&v| v == 0.0));
        let flat = Tensor::filled(3, 16, 16, 0.3);
        let f = block_matching_flow(&flat, &flat, 8, 4).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&v| v == 0.0));
    }

    /// Exhaustive SAD oracle for a single block, with no early exit.
    fn oracle_block(r: &Tensor, t: &Tensor, by: usize, bx: usize, radius: isize) -> (isize, isize) {
        let (_, h, w) = t.shape();
        let byte = |v: f32| (v * 255.0).round() as i64;
        let mut best: Option<(i64, isize, isize, isize)> = None;
        for v in -radius..=radius {
            for u in -radius..=radius {
                let mut sad = 0;
                for y in by * 8..by * 8 + 8 {
                    for x in bx * 8..bx * 8 + 8 {
                        let sy = (y as isize + v).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + u).clamp(0, w as isize - 1) as usize;
                        sad += (byte(t.get(0, y, x)) - byte(r.get(0, sy, sx))).abs();
                    }
                }
                let key = (sad, u.abs() + v.abs(), v, u);
                if best.map_or(true, |b| key < b) {
                    best = Some(key);
                }
            }
        }
        let b = best.unwrap();
        (b.3, b.2)
    }

    #[test]
    fn horizontal_shift_recovered() {
        let r = textured(32, 32, 7);
        let mut t = Tensor::zeros(3, 32, 32);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    t.set(c, y, x, r.get(c, y, x.saturating_sub(2)));
                }
            }
        }
        let f = block_matching_flow(&r, &t, 8, 16).unwrap();
        for by in 0..4 {
            for bx in 1..4 {
                assert_eq!(oracle_block(&r, &t, by, bx, 16), (-2, 0));
            }
        }
        // interior pixels sit between interior block centres
        for y in 4..28 {
            for x in 12..28 {
                assert_eq!(f.u()[y * 32 + x], -2.0);
                assert_eq!(f.v()[y * 32 + x], 0.0);
            }
        }
    }

    #[test]
    fn flo_roundtrip_and_size() {
        let field = Tensor::from_vec(2, 2, 2, vec![0.5, -1.25, 3.0, 0.0, 1e-3, 2.0, -7.5, 9.0]).unwrap();
        let flow = FlowField::new(field).unwrap();
        let bytes = flow.to_flo_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 2 * 2 * 2 * 4);
        assert_eq!(FlowField::from_flo_bytes(&bytes).unwrap(), flow);
    }

    #[test]
    fn flo_errors() {
        let mut bytes = FlowField::zeros(2, 2).to_flo_bytes();
        assert!(matches!(FlowField::from_flo_bytes(&bytes[..20]), Err(Error::Truncated(_))));
        bytes[..4].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(FlowField::from_flo_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bound_enforced() {
        let t = Tensor::filled(2, 1, 1, 65.0);
        assert!(FlowField::new(t.clone()).is_err());
        assert!(FlowField::with_bound(t, 100.0).is_ok());
    }
}
