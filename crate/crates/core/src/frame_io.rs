//! Raw planar YUV I/O, chroma resampling between 4:2:0 and 4:4:4, and
//! conversion to normalized tensors.
//!
//! Bytes are produced with round-half-away-from-zero everywhere; for the
//! nonnegative quantities handled here that is round-half-up.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A planar 4:2:0 frame with 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame420 {
    width: usize,
    height: usize,
    y: Vec<u8>,
    u: Vec<u8>,
    v: Vec<u8>,
}

/// A planar 4:4:4 frame with 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame444 {
    width: usize,
    height: usize,
    y: Vec<u8>,
    u: Vec<u8>,
    v: Vec<u8>,
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::Dimension(format!(
            "4:2:0 frames need even, positive dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

impl Frame420 {
    pub fn new(width: usize, height: usize, y: Vec<u8>, u: Vec<u8>, v: Vec<u8>) -> Result<Self> {
        check_even(width, height)?;
        let luma = width * height;
        let chroma = luma / 4;
        if y.len() != luma || u.len() != chroma || v.len() != chroma {
            return Err(Error::Format(format!(
                "plane sizes {}/{}/{} do not match {width}x{height} (expected {luma}/{chroma}/{chroma})",
                y.len(),
                u.len(),
                v.len()
            )));
        }
        Ok(Self { width, height, y, u, v })
    }

    /// Frame with every sample of each plane set to the given value.
    pub fn filled(width: usize, height: usize, y: u8, u: u8, v: u8) -> Result<Self> {
        check_even(width, height)?;
        let luma = width * height;
        Self::new(width, height, vec![y; luma], vec![u; luma / 4], vec![v; luma / 4])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn y_plane(&self) -> &[u8] {
        &self.y
    }

    pub fn u_plane(&self) -> &[u8] {
        &self.u
    }

    pub fn v_plane(&self) -> &[u8] {
        &self.v
    }

    /// Size in bytes of a raw 4:2:0 frame.
    pub fn byte_len(width: usize, height: usize) -> usize {
        width * height * 3 / 2
    }
}

impl Frame444 {
    pub fn new(width: usize, height: usize, y: Vec<u8>, u: Vec<u8>, v: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty frame {width}x{height}")));
        }
        let n = width * height;
        if y.len() != n || u.len() != n || v.len() != n {
            return Err(Error::Format(format!(
                "plane sizes {}/{}/{} do not match {width}x{height}",
                y.len(),
                u.len(),
                v.len()
            )));
        }
        Ok(Self { width, height, y, u, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn y_plane(&self) -> &[u8] {
        &self.y
    }

    pub fn u_plane(&self) -> &[u8] {
        &self.u
    }

    pub fn v_plane(&self) -> &[u8] {
        &self.v
    }

    pub fn planes(&self) -> [&[u8]; 3] {
        [&self.y, &self.u, &self.v]
    }
}

/// Slice a raw Y, U, V byte buffer into a [`Frame420`].
pub fn read_yuv420(bytes: &[u8], width: usize, height: usize) -> Result<Frame420> {
    check_even(width, height)?;
    let expected = Frame420::byte_len(width, height);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raw 4:2:0 frame {width}x{height} needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let luma = width * height;
    let chroma = luma / 4;
    let (y, rest) = bytes.split_at(luma);
    let (u, v) = rest.split_at(chroma);
    Frame420::new(width, height, y.to_vec(), u.to_vec(), v.to_vec())
}

pub fn write_yuv420(frame: &Frame420) -> Vec<u8> {
    let mut out = Vec::with_capacity(Frame420::byte_len(frame.width, frame.height));
    out.extend_from_slice(&frame.y);
    out.extend_from_slice(&frame.u);
    out.extend_from_slice(&frame.v);
    out
}

pub fn read_yuv420_file(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Frame420> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    read_yuv420(&bytes, width, height)
        .map_err(|e| e.context(format!("reading {}", path.display())))
}

/// Nearest-neighbour chroma upsampling: each chroma sample fills its 2x2 block.
pub fn upsample_420_to_444(frame: &Frame420) -> Frame444 {
    let (w, h) = (frame.width, frame.height);
    let cw = w / 2;
    let up = |plane: &[u8]| -> Vec<u8> {
        let mut out = vec![0u8; w * h];
        for (row, out_row) in out.chunks_exact_mut(w).enumerate() {
            let src = &plane[(row / 2) * cw..(row / 2 + 1) * cw];
            for (x, px) in out_row.iter_mut().enumerate() {
                *px = src[x / 2];
            }
        }
        out
    };
    Frame444 {
        width: w,
        height: h,
        y: frame.y.clone(),
        u: up(&frame.u),
        v: up(&frame.v),
    }
}

/// Replace every 2x2 chroma block by its mean, rounded half up.
pub fn downsample_444_to_420(frame: &Frame444) -> Result<Frame420> {
    let (w, h) = (frame.width, frame.height);
    check_even(w, h)?;
    let (cw, ch) = (w / 2, h / 2);
    let down = |plane: &[u8]| -> Vec<u8> {
        let mut out = Vec::with_capacity(cw * ch);
        for cy in 0..ch {
            let r0 = &plane[2 * cy * w..(2 * cy + 1) * w];
            let r1 = &plane[(2 * cy + 1) * w..(2 * cy + 2) * w];
            for cx in 0..cw {
                let sum = r0[2 * cx] as u32
                    + r0[2 * cx + 1] as u32
                    + r1[2 * cx] as u32
                    + r1[2 * cx + 1] as u32;
                out.push(((sum + 2) / 4) as u8);
            }
        }
        out
    };
    Frame420::new(w, h, frame.y.clone(), down(&frame.u), down(&frame.v))
}

/// Map bytes to `[0, 1]` as a (3, H, W) tensor in Y, U, V channel order.
pub fn frame_to_tensor(frame: &Frame444) -> Tensor {
    let mut data = Vec::with_capacity(3 * frame.width * frame.height);
    for plane in frame.planes() {
        data.extend(plane.iter().map(|&b| b as f32 / 255.0));
    }
    Tensor::from_vec(3, frame.height, frame.width, data).expect("plane sizes are consistent")
}

/// Quantize a single normalized sample back to a byte.
pub fn unit_to_byte(value: f32) -> u8 {
    if value.is_nan() {
        return 0;
    }
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Inverse of [`frame_to_tensor`]: clamp to `[0, 1]`, scale by 255, round half up.
pub fn tensor_to_frame(tensor: &Tensor) -> Result<Frame444> {
    let (c, h, w) = tensor.shape();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let plane = |k: usize| tensor.channel(k).iter().copied().map(unit_to_byte).collect::<Vec<_>>();
    Frame444::new(w, h, plane(0), plane(1), plane(2))
}
