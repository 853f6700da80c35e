//! Latent quantization and the discrete probability models used for coding.
//!
//! Each latent `ŷ_i` is modelled as a Laplace(μ_i, σ_i) density convolved with a
//! unit-width uniform, i.e. `P(k) = F(k + ½) − F(k − ½)`. The side information
//! `ẑ` uses a per-channel non-parametric CDF with the same half-integer
//! discretisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default coding alphabet for `ŷ`.
pub const LATENT_MIN: i32 = -255;
pub const LATENT_MAX: i32 = 255;

/// Knot range of the default factorized prior; `ẑ` is clamped to it.
pub const PRIOR_MIN: i32 = -16;
pub const PRIOR_MAX: i32 = 16;

/// Lower bound added to the predicted scale.
pub const SCALE_FLOOR: f32 = 1e-6;

/// Integer-valued latent tensor with its alphabet bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentGrid {
    shape: (usize, usize, usize),
    values: Vec<i32>,
    min: i32,
    max: i32,
}

impl LatentGrid {
    pub fn new(shape: (usize, usize, usize), values: Vec<i32>, min: i32, max: i32) -> Result<Self> {
        if min > max {
            return Err(Error::Domain(format!("empty alphabet [{min}, {max}]")));
        }
        if values.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Shape(format!(
                "{} values do not fill {:?}",
                values.len(),
                shape
            )));
        }
        if let Some(i) = values.iter().position(|v| *v < min || *v > max) {
            return Err(Error::Domain(format!(
                "value {} at index {i} outside [{min}, {max}]",
                values[i]
            )));
        }
        Ok(Self { shape, values, min, max })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn bounds(&self) -> (i32, i32) {
        (self.min, self.max)
    }

    pub fn alphabet_size(&self) -> usize {
        (self.max - self.min) as usize + 1
    }

    /// Integer to real cast.
    pub fn to_tensor(&self) -> Tensor {
        let (c, h, w) = self.shape;
        Tensor::from_vec(c, h, w, self.values.iter().map(|&v| v as f32).collect())
            .expect("shape checked at construction")
    }
}

/// Round half away from zero, then clamp to `[min, max]`.
pub fn quantize_round(x: &Tensor, min: i32, max: i32) -> LatentGrid {
    let values = x
        .data()
        .iter()
        .map(|&v| (v.round() as f64).clamp(min as f64, max as f64) as i32)
        .collect();
    LatentGrid { shape: x.shape(), values, min, max }
}

/// Differentiable surrogate for rounding: a softmax-weighted mix of cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQuantizer {
    centers: Vec<f64>,
    temperature: f64,
}

impl SoftQuantizer {
    pub const DEFAULT_CLUSTERS: usize = 200;

    pub fn new(centers: Vec<f64>, temperature: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Domain("soft quantizer needs at least one center".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
        }
        if centers.windows(2).any(|w| !(w[0] < w[1])) || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("centers must be finite and strictly increasing".into()));
        }
        Ok(Self { centers, temperature })
    }

    /// 200 integer centers `-100..=99`.
    pub fn integer_centers(temperature: f64) -> Result<Self> {
        let half = (Self::DEFAULT_CLUSTERS / 2) as i32;
        Self::new((-half..half).map(f64::from).collect(), temperature)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn quantize_value(&self, x: f64) -> f64 {
        let logits = self.centers.iter().map(|c| -(x - c).abs() / self.temperature);
        let peak = logits.clone().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut acc = 0.0;
        for (logit, c) in logits.zip(&self.centers) {
            let w = (logit - peak).exp();
            norm += w;
            acc += w * c;
        }
        acc / norm
    }
}

pub fn soft_quantize(x: &Tensor, q: &SoftQuantizer) -> Tensor {
    x.map(|v| q.quantize_value(v as f64) as f32)
}

/// Laplace(μ, σ) mass of the unit interval centred on `k`.
pub fn laplace_pmf(k: i32, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::Domain(format!("laplace needs finite mu and sigma > 0, got ({mu}, {sigma})")));
    }
    Ok(laplace_mass(k as f64, mu, sigma))
}

#[inline]
pub(crate) fn laplace_mass(k: f64, mu: f64, sigma: f64) -> f64 {
    let lo = k - 0.5 - mu;
    let hi = k + 0.5 - mu;
    if lo >= 0.0 {
        // both edges in the upper tail: 0.5 (e^{-lo/σ} - e^{-hi/σ})
        0.5 * ((-lo / sigma).exp() - (-hi / sigma).exp())
    } else if hi <= 0.0 {
        0.5 * ((hi / sigma).exp() - (lo / sigma).exp())
    } else {
        1.0 - 0.5 * (-hi / sigma).exp() - 0.5 * (lo / sigma).exp()
    }
}

/// Piecewise-linear CDF for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCdf {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl ChannelCdf {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Domain(format!(
                "cdf needs matching knot/value arrays of length >= 2, got {}/{}",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("cdf knots must be strictly increasing".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("cdf values must be nondecreasing".into()));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::Domain("cdf must start at exactly 0 and end at exactly 1".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return 0.0;
        }
        if x >= self.knots[n - 1] {
            return 1.0;
        }
        // first knot strictly greater than x
        let hi = self.knots.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let t = (x - self.knots[lo]) / (self.knots[hi] - self.knots[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }

    pub fn pmf(&self, k: i32) -> f64 {
        self.eval(k as f64 + 0.5) - self.eval(k as f64 - 0.5)
    }
}

/// Fully factorized density for `ẑ`: one CDF per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    channels: Vec<ChannelCdf>,
}

impl FactorizedPrior {
    pub fn new(channels: Vec<ChannelCdf>) -> Self {
        Self { channels }
    }

    pub fn channels(&self) -> &[ChannelCdf] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Seeded stand-in for a learned prior: 33 knots over [-16, 16] with a
    /// Laplace-like mass profile of per-channel random width.
    pub fn seeded_default(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5f_0f1e_11d2_c0de);
        let knots: Vec<f64> = (PRIOR_MIN..=PRIOR_MAX).map(f64::from).collect();
        let list = (0..channels)
            .map(|_| {
                let width = rng.gen_range(0.6..3.0);
                let mut increments: Vec<f64> = knots[1..]
                    .iter()
                    .map(|x| {
                        let mid = x - 0.5;
                        (-(mid.abs()) / width).exp() * rng.gen_range(0.5..1.5) + 1e-4
                    })
                    .collect();
                let total: f64 = increments.iter().sum();
                increments.iter_mut().for_each(|v| *v /= total);
                let mut values = Vec::with_capacity(knots.len());
                let mut acc = 0.0;
                values.push(0.0);
                for inc in &increments[..increments.len() - 1] {
                    acc += inc;
                    // kept f32-representable so the prior survives a weight-file roundtrip
                    values.push(acc.min(1.0) as f32 as f64);
                }
                values.push(1.0);
                ChannelCdf::new(knots.clone(), values).expect("constructed monotone")
            })
            .collect();
        Self { channels: list }
    }
}

pub fn factorized_pmf(k: i32, prior: &FactorizedPrior, channel: usize) -> Result<f64> {
    let cdf = prior.channels.get(channel).ok_or_else(|| {
        Error::Index(format!("channel {channel} out of range 0..{}", prior.channels.len()))
    })?;
    Ok(cdf.pmf(k))
}

/// Per-element probability source for [`rate_bits`].
pub trait PmfProvider {
    /// Probability of `value` at flat position `index` of the grid.
    fn pmf(&self, index: usize, value: i32) -> Result<f64>;
}

impl<F> PmfProvider for F
where
    F: Fn(usize, i32) -> Result<f64>,
{
    fn pmf(&self, index: usize, value: i32) -> Result<f64> {
        self(index, value)
    }
}

/// Per-latent Laplace parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianField {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl LaplacianField {
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::Shape(format!(
                "mu {:?} and sigma {:?} differ",
                mu.shape(),
                sigma.shape()
            )));
        }
        if let Some(i) = sigma.data().iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Domain(format!("sigma at {i} is not positive")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mu.shape()
    }

    #[inline]
    pub fn params(&self, index: usize) -> (f64, f64) {
        (self.mu.data()[index] as f64, self.sigma.data()[index] as f64)
    }
}

impl PmfProvider for LaplacianField {
    fn pmf(&self, index: usize, value: i32) -> Result<f64> {
        let (mu, sigma) = self.params(index);
        laplace_pmf(value, mu, sigma)
    }
}

/// Factorized prior bound to a grid layout, so flat indices map to channels.
pub struct ChannelPrior<'a> {
    pub prior: &'a FactorizedPrior,
    pub plane_len: usize,
}

impl PmfProvider for ChannelPrior<'_> {
    fn pmf(&self, index: usize, value: i32) -> Result<f64> {
        factorized_pmf(value, self.prior, index / self.plane_len.max(1))
    }
}

/// Ideal code length `Σ −log2 p(value_i)` in bits.
pub fn rate_bits(grid: &LatentGrid, provider: &impl PmfProvider) -> Result<f64> {
    let mut bits = 0.0;
    for (index, &value) in grid.values.iter().enumerate() {
        let p = provider.pmf(index, value)?;
        if !(p > 0.0) {
            return Err(Error::ZeroProbability { index, value });
        }
        bits -= p.log2();
    }
    Ok(bits)
}
