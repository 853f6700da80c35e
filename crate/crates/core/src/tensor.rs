use crate::error::{Error, Result};

/// Dense channel-major (C, H, W) array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values do not fill a ({channels}, {height}, {width}) tensor",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { channels, height, width, data })
    }

    /// (channels, height, width)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stack tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}x{} with {}x{}",
                    h, w, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { channels, height: h, width: w, data })
    }

    /// Copy out channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.channels {
            return Err(Error::Shape(format!(
                "channel range {start}..{end} outside 0..{}",
                self.channels
            )));
        }
        let n = self.plane_len();
        Ok(Tensor {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    /// Reflect-pad the spatial dims up to (`height`, `width`); the edge sample is not repeated.
    pub fn pad_reflect(&self, height: usize, width: usize) -> Result<Tensor> {
        if height < self.height || width < self.width {
            return Err(Error::Shape(format!(
                "cannot pad {}x{} down to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut out = Tensor::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                let sy = reflect_index(y, self.height);
                for x in 0..width {
                    let sx = reflect_index(x, self.width);
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        Ok(out)
    }

    /// Top-left spatial crop.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        if height > self.height || width > self.width {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            let plane = self.channel(c);
            for y in 0..height {
                data.extend_from_slice(&plane[y * self.width..y * self.width + width]);
            }
        }
        Ok(Tensor { channels: self.channels, height, width, data })
    }
}

/// Mirror an index into `0..len` without repeating the edge sample; wraps for any offset.
pub fn reflect_index(i: usize, len: usize) -> usize {
    if len <= 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_non_finite() {
        assert!(matches!(Tensor::from_vec(1, 2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::from_vec(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!((0..7).map(|i| reflect_index(i, 3)).collect::<Vec<_>>(), [0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(5, 1), 0);
        let t = Tensor::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = t.pad_reflect(2, 5).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(p.crop(1, 3).unwrap(), t);
    }

    #[test]
    fn concat_and_slice_channels() {
        let a = Tensor::filled(1, 2, 2, 1.0);
        let b = Tensor::filled(2, 2, 2, 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (3, 2, 2));
        assert_eq!(c.slice_channels(1, 3).unwrap(), b);
        assert!(Tensor::concat_channels(&[&a, &Tensor::zeros(1, 3, 2)]).is_err());
    }
}
