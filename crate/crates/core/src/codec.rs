//! End-to-end P-frame encoder and decoder, plus the on-disk weight directory.
//!
//! A weight directory holds `arch.cfg` and one `q<N>.mvrw` file per quality
//! index `N` in `0..5`.

use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};

use crate::arch::ArchitectureConfig;
use crate::container::Container;
use crate::entropy::{
    factorized_pmf, laplace_pmf, quantize_round, rate_bits, FactorizedPrior, LaplacianField, LatentGrid,
    LATENT_MAX, LATENT_MIN, PRIOR_MAX, PRIOR_MIN,
};
use crate::error::{Error, Result, ResultExt};
use crate::frame_io::{
    downsample_444_to_420, frame_to_tensor, tensor_to_frame, upsample_420_to_444, Frame420,
};
use crate::metrics;
use crate::motion::{block_matching_flow, sdc_warp, FlowField};
use crate::mvres_net::Model;
use crate::range_coder::{build_cdf, CdfTable, RangeDecoder, RangeEncoder, PROB_TOTAL};
use crate::rate_control::{lambda_for_quality, QUALITY_LEVELS};
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, Precision};

pub const ARCH_FILE: &str = "arch.cfg";
/// Container flag: the encoder used an externally supplied flow field.
pub const FLAG_EXTERNAL_FLOW: u8 = 1;

pub fn weights_path(dir: impl AsRef<Path>, quality: u8) -> PathBuf {
    dir.as_ref().join(format!("q{quality}.mvrw"))
}

pub fn check_quality(quality: u8) -> Result<()> {
    if quality >= QUALITY_LEVELS {
        return Err(Error::Usage(format!("quality {quality} out of range 0..={}", QUALITY_LEVELS - 1)));
    }
    Ok(())
}

/// Write `arch.cfg` and seeded weights for every quality level.
pub fn init_weight_dir(dir: impl AsRef<Path>, arch: &ArchitectureConfig, seed: u64, precision: Precision) -> Result<()> {
    let dir = dir.as_ref();
    arch.validate()?;
    std::fs::create_dir_all(dir)?;
    arch.save(dir.join(ARCH_FILE))?;
    for q in 0..QUALITY_LEVELS {
        let mut w = arch.seeded_weights(seed, q);
        if precision == Precision::F16 {
            w = w.quantized_to_f16();
            w.precision = Precision::F16;
        }
        w.save(weights_path(dir, q))?;
    }
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>, quality: u8) -> Result<Model> {
    check_quality(quality)?;
    let dir = dir.as_ref();
    let arch = ArchitectureConfig::load(dir.join(ARCH_FILE))?;
    let path = weights_path(dir, quality);
    let weights = ModelWeights::load(&path)?;
    if weights.quality != quality {
        return Err(Error::Config(format!(
            "{} holds quality {}, expected {quality}",
            path.display(),
            weights.quality
        )));
    }
    Model::new(arch, weights).context(format!("loading {}", path.display()))
}

/// Block-matching parameters used when no external flow is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionSearch {
    pub block: usize,
    pub radius: usize,
}

impl Default for MotionSearch {
    fn default() -> Self {
        Self { block: 8, radius: 16 }
    }
}

fn serialize_finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

/// Per-frame encoder statistics, reported as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodeStats {
    pub q: u8,
    pub lambda: f64,
    /// Model estimate of the latent rate.
    pub rate_y_bits: f64,
    /// Model estimate of the side-information rate.
    pub rate_z_bits: f64,
    pub estimated_bytes: f64,
    pub y_bytes: usize,
    pub z_bytes: usize,
    pub payload_bytes: usize,
    pub container_bytes: usize,
    pub msssim: f64,
    pub msssim_scales: usize,
    #[serde(serialize_with = "serialize_finite_or_inf")]
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub container: Container,
    pub y_hat: LatentGrid,
    pub z_hat: LatentGrid,
    /// The decoder's output, reproduced on the encoder side.
    pub reconstruction: Frame420,
    pub stats: EncodeStats,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub y_hat: LatentGrid,
    pub z_hat: LatentGrid,
    pub frame: Frame420,
}

/// Padded working size for a frame under `arch`.
pub fn padded_size(arch: &ArchitectureConfig, width: usize, height: usize) -> (usize, usize) {
    let m = arch.frame_multiple();
    (width.div_ceil(m) * m, height.div_ceil(m) * m)
}

fn frame_tensor(frame: &Frame420, arch: &ArchitectureConfig) -> Result<Tensor> {
    let (pw, ph) = padded_size(arch, frame.width(), frame.height());
    frame_to_tensor(&upsample_420_to_444(frame)).pad_reflect(ph, pw)
}

fn z_tables(prior: &FactorizedPrior) -> Result<Vec<CdfTable>> {
    prior
        .channels()
        .iter()
        .map(|cdf| {
            let pmf: Vec<f64> = (PRIOR_MIN..=PRIOR_MAX).map(|k| cdf.pmf(k)).collect();
            build_cdf(&pmf)
        })
        .collect()
}

/// Smallest probability the coder grants any symbol.
const MIN_CODED_PROB: f64 = 1.0 / PROB_TOTAL as f64;

/// Beyond the support edge the truncated distribution no longer depends on `mu`.
fn clamp_mu(mu: f64) -> f64 {
    if mu.is_finite() {
        mu.clamp(LATENT_MIN as f64 - 0.5, LATENT_MAX as f64 + 0.5)
    } else {
        mu
    }
}

fn laplace_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x < mu {
        0.5 * ((x - mu) / sigma).exp()
    } else {
        1.0 - 0.5 * (-(x - mu) / sigma).exp()
    }
}

/// Probability of `value` under the distribution a latent is coded with: the
/// Laplace truncated to the alphabet, floored at the coder's minimum.
pub fn coded_probability(value: i32, mu: f64, sigma: f64) -> Result<f64> {
    let mu = clamp_mu(mu);
    let p = laplace_pmf(value, mu, sigma)?;
    let mass = laplace_cdf(LATENT_MAX as f64 + 0.5, mu, sigma) - laplace_cdf(LATENT_MIN as f64 - 0.5, mu, sigma);
    Ok((p / mass).max(MIN_CODED_PROB))
}

/// Coding table for one latent: the Laplace masses over the alphabet,
/// renormalized to the truncated support.
/// `mu` is clamped to the support edge so the edge mass cannot underflow.
pub fn laplace_table(mu: f64, sigma: f64, pmf: &mut Vec<f64>) -> Result<CdfTable> {
    let mu = clamp_mu(mu);
    pmf.clear();
    for k in LATENT_MIN..=LATENT_MAX {
        pmf.push(laplace_pmf(k, mu, sigma)?);
    }
    let total: f64 = pmf.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric(format!("Laplace({mu}, {sigma}) has no mass on the alphabet")));
    }
    pmf.iter_mut().for_each(|p| *p /= total);
    build_cdf(pmf)
}

fn encode_z(z_hat: &LatentGrid, tables: &[CdfTable]) -> Result<Vec<u8>> {
    let plane = z_hat.shape().1 * z_hat.shape().2;
    let mut enc = RangeEncoder::new();
    for (i, &v) in z_hat.values().iter().enumerate() {
        enc.encode((v - PRIOR_MIN) as usize, &tables[i / plane])?;
    }
    Ok(enc.finish())
}

fn decode_z(bytes: &[u8], tables: &[CdfTable], shape: (usize, usize, usize)) -> Result<LatentGrid> {
    let plane = shape.1 * shape.2;
    let mut dec = RangeDecoder::new(bytes)?;
    let mut values = Vec::with_capacity(shape.0 * plane);
    for i in 0..shape.0 * plane {
        values.push(dec.decode(&tables[i / plane])? as i32 + PRIOR_MIN);
    }
    LatentGrid::new(shape, values, PRIOR_MIN, PRIOR_MAX)
}

fn encode_y(y_hat: &LatentGrid, field: &LaplacianField) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    let mut scratch = Vec::with_capacity((LATENT_MAX - LATENT_MIN + 1) as usize);
    for (i, &v) in y_hat.values().iter().enumerate() {
        let (mu, sigma) = field.params(i);
        let table = laplace_table(mu, sigma, &mut scratch)?;
        enc.encode((v - LATENT_MIN) as usize, &table)?;
    }
    Ok(enc.finish())
}

fn decode_y(bytes: &[u8], field: &LaplacianField) -> Result<LatentGrid> {
    let shape = field.shape();
    let n = shape.0 * shape.1 * shape.2;
    let mut dec = RangeDecoder::new(bytes)?;
    let mut scratch = Vec::with_capacity((LATENT_MAX - LATENT_MIN + 1) as usize);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let (mu, sigma) = field.params(i);
        let table = laplace_table(mu, sigma, &mut scratch)?;
        values.push(dec.decode(&table)? as i32 + LATENT_MIN);
    }
    LatentGrid::new(shape, values, LATENT_MIN, LATENT_MAX)
}

/// Decoder-side synthesis shared by encoder and decoder so both agree bit for bit.
fn synthesize(model: &Model, reference: &Tensor, y_hat: &LatentGrid, width: usize, height: usize) -> Result<Frame420> {
    let mr = model.decode_motion_residual(y_hat)?;
    let mut recon = sdc_warp(reference, &mr.flow, &mr.kernels).context("motion compensation")?;
    for (r, &d) in recon.data_mut().iter_mut().zip(mr.residual.data()) {
        *r += d;
    }
    let out = model.postprocess(&recon)?.crop(height, width)?;
    downsample_444_to_420(&tensor_to_frame(&out)?)
}

fn check_pair(reference: &Frame420, target: &Frame420) -> Result<()> {
    if (reference.width(), reference.height()) != (target.width(), target.height()) {
        return Err(Error::Shape(format!(
            "reference {}x{} and target {}x{} differ",
            reference.width(),
            reference.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

/// Encode `target` predicted from `reference`.
///
/// With `flow == None` the encoder-side flow comes from block matching.
pub fn encode_frame(
    model: &Model,
    reference: &Frame420,
    target: &Frame420,
    flow: Option<&FlowField>,
    search: MotionSearch,
) -> Result<Encoded> {
    check_pair(reference, target)?;
    let (w, h) = (target.width(), target.height());
    let arch = model.arch();
    let ref_t = frame_tensor(reference, arch)?;
    let tgt_t = frame_tensor(target, arch)?;
    let (ph, pw) = (ref_t.height(), ref_t.width());
    let flow_t = match flow {
        Some(f) => {
            if (f.width(), f.height()) != (w, h) {
                return Err(Error::Shape(format!(
                    "flow is {}x{}, frames are {w}x{h}",
                    f.width(),
                    f.height()
                )));
            }
            f.as_tensor().pad_reflect(ph, pw)?
        }
        None => block_matching_flow(&ref_t, &tgt_t, search.block, search.radius)
            .context("block matching")?
            .into_tensor(),
    };

    let y = model.encode_latent(&ref_t, &tgt_t, &flow_t)?;
    let z = model.hyper_encode(&y)?;
    let z_hat = quantize_round(&z, PRIOR_MIN, PRIOR_MAX);
    let tables = z_tables(model.z_prior())?;
    let z_payload = encode_z(&z_hat, &tables).context("coding hyper latent")?;
    let field = model.hyper_decode(&z_hat)?;
    let y_hat = quantize_round(&y, LATENT_MIN, LATENT_MAX);
    let y_payload = encode_y(&y_hat, &field).context("coding latent")?;

    // estimates use the coded distributions, whose probabilities never drop below the coder floor
    let z_plane = z_hat.shape().1 * z_hat.shape().2;
    let z_prob = |i: usize, v: i32| Ok(factorized_pmf(v, model.z_prior(), i / z_plane)?.max(MIN_CODED_PROB));
    let rate_z_bits = rate_bits(&z_hat, &z_prob).context("hyper latent rate")?;
    let y_prob = |i: usize, v: i32| {
        let (mu, sigma) = field.params(i);
        coded_probability(v, mu, sigma)
    };
    let rate_y_bits = rate_bits(&y_hat, &y_prob).context("latent rate")?;

    let reconstruction = synthesize(model, &ref_t, &y_hat, w, h)?;
    let container = Container {
        width: w as u32,
        height: h as u32,
        quality: model.quality(),
        flags: if flow.is_some() { FLAG_EXTERNAL_FLOW } else { 0 },
        z_payload,
        y_payload,
    };
    let target_444 = upsample_420_to_444(target);
    let recon_444 = upsample_420_to_444(&reconstruction);
    let quality = metrics::ms_ssim_detailed(&target_444, &recon_444)?;
    let stats = EncodeStats {
        q: model.quality(),
        lambda: lambda_for_quality(model.quality()),
        rate_y_bits,
        rate_z_bits,
        estimated_bytes: (rate_y_bits + rate_z_bits) / 8.0,
        y_bytes: container.y_payload.len(),
        z_bytes: container.z_payload.len(),
        payload_bytes: container.y_payload.len() + container.z_payload.len(),
        container_bytes: container.to_bytes().len(),
        msssim: quality.value,
        msssim_scales: quality.scales,
        psnr: metrics::psnr(&target_444, &recon_444)?,
    };
    Ok(Encoded { container, y_hat, z_hat, reconstruction, stats })
}

pub fn decode_frame(model: &Model, container: &Container, reference: &Frame420) -> Result<Decoded> {
    if container.quality != model.quality() {
        return Err(Error::Config(format!(
            "stream was coded at quality {}, model is quality {}",
            container.quality,
            model.quality()
        )));
    }
    let (w, h) = (container.width as usize, container.height as usize);
    if (reference.width(), reference.height()) != (w, h) {
        return Err(Error::Shape(format!(
            "reference is {}x{}, stream is {w}x{h}",
            reference.width(),
            reference.height()
        )));
    }
    let arch = model.arch();
    let ref_t = frame_tensor(reference, arch)?;
    let (pw, ph) = padded_size(arch, w, h);
    let zf = arch.frame_multiple();
    let z_shape = (arch.hyper_channels, ph / zf, pw / zf);
    let z_hat = decode_z(&container.z_payload, &z_tables(model.z_prior())?, z_shape).context("decoding hyper latent")?;
    let field = model.hyper_decode(&z_hat)?;
    let y_hat = decode_y(&container.y_payload, &field).context("decoding latent")?;
    let frame = synthesize(model, &ref_t, &y_hat, w, h)?;
    Ok(Decoded { y_hat, z_hat, frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(w: usize, h: usize, seed: u64) -> Frame420 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plane = |n: usize| (0..n).map(|_| rng.gen::<u8>()).collect::<Vec<u8>>();
        let y = plane(w * h);
        let u = plane(w * h / 4);
        let v = plane(w * h / 4);
        Frame420::new(w, h, y, u, v).unwrap()
    }

    #[test]
    fn roundtrip_non_multiple_size() {
        let arch = ArchitectureConfig::compact();
        let model = Model::new(arch.clone(), arch.seeded_weights(5, 2)).unwrap();
        let r = random_frame(70, 50, 1);
        let t = random_frame(70, 50, 2);
        let enc = encode_frame(&model, &r, &t, None, MotionSearch::default()).unwrap();
        let bytes = enc.container.to_bytes();
        let dec = decode_frame(&model, &Container::from_bytes(&bytes).unwrap(), &r).unwrap();
        assert_eq!(dec.y_hat, enc.y_hat);
        assert_eq!(dec.z_hat, enc.z_hat);
        assert_eq!(dec.frame, enc.reconstruction);
        assert_eq!((dec.frame.width(), dec.frame.height()), (70, 50));
    }

    #[test]
    fn quality_mismatch_rejected() {
        let arch = ArchitectureConfig::compact();
        let m0 = Model::new(arch.clone(), arch.seeded_weights(0, 0)).unwrap();
        let m1 = Model::new(arch.clone(), arch.seeded_weights(0, 1)).unwrap();
        let r = random_frame(64, 64, 3);
        let enc = encode_frame(&m0, &r, &r, None, MotionSearch::default()).unwrap();
        assert!(decode_frame(&m1, &enc.container, &r).is_err());
    }

    #[test]
    fn quality_range() {
        assert!(check_quality(4).is_ok());
        assert_eq!(check_quality(5).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn laplace_table_is_valid() {
        let mut scratch = Vec::new();
        for (mu, sigma) in [(0.0, 1e-6), (3.2, 0.7), (-250.0, 40.0), (0.0, 1e4), (282.0, 7e-6), (-1e9, 1e-6)] {
            let t = laplace_table(mu, sigma, &mut scratch).unwrap();
            assert_eq!(t.alphabet_size(), 511);
            assert!(t.frequencies().iter().all(|&f| f >= 1));
        }
        // past the edge the truncated shape is independent of mu
        let a = laplace_table(300.0, 2.0, &mut scratch).unwrap();
        let b = laplace_table(255.5, 2.0, &mut scratch).unwrap();
        assert_eq!(a, b);
        let edge = a.frequencies();
        // mu past the edge: half the Laplace mass falls on the alphabet
        let p = coded_probability(LATENT_MAX, 1e6, 1.0).unwrap();
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(coded_probability(4, 3.2, 1e-6).unwrap(), MIN_CODED_PROB);
        assert!((coded_probability(0, 0.0, 1.0).unwrap() - laplace_pmf(0, 0.0, 1.0).unwrap()).abs() < 1e-15);
        assert!(edge[510] > edge[509] && edge[509] > edge[508]);
    }
}
