//! The four coding networks: motion/residual analysis and synthesis plus the
//! hyperprior pair that predicts the latent entropy model.

use crate::arch::ArchitectureConfig;
use crate::entropy::{FactorizedPrior, LaplacianField, LatentGrid, SCALE_FLOOR};
use crate::error::{Error, Result, ResultExt};
use crate::motion::{FlowField, KernelField};
use crate::nn::{softplus, ConvLayer};
use crate::postproc;
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, HYPER_DECODER, HYPER_ENCODER, MV_DECODER, MV_ENCODER};

/// Decoded flow is `FLOW_SCALE * tanh(raw)`.
pub const FLOW_SCALE: f32 = 20.0;
/// Encoder flow input is given in pixels and multiplied by this before use.
pub const FLOW_INPUT_SCALE: f32 = 1.0 / 16.0;

/// Decoder output: per-pixel motion, separable kernels and an additive residual.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionResidual {
    pub flow: FlowField,
    pub kernels: KernelField,
    pub residual: Tensor,
}

/// Split raw decoder head output into flow, kernels and residual.
///
/// Channel layout: `[u, v | K kernel_u logits | K kernel_v logits | 3 residual]`.
pub fn split_heads(raw: &Tensor, taps: usize) -> Result<MotionResidual> {
    let expected = 2 + 2 * taps + 3;
    if raw.channels() != expected {
        return Err(Error::Config(format!(
            "decoder head has {} channels, expected {expected} for {taps} taps",
            raw.channels()
        )));
    }
    let flow = raw.slice_channels(0, 2)?.map(|v| FLOW_SCALE * v.tanh());
    let ku = softmax_channels(&raw.slice_channels(2, 2 + taps)?);
    let kv = softmax_channels(&raw.slice_channels(2 + taps, 2 + 2 * taps)?);
    let residual = raw.slice_channels(2 + 2 * taps, expected)?.map(f32::tanh);
    Ok(MotionResidual {
        flow: FlowField::new(flow)?,
        kernels: KernelField::new(ku, kv)?,
        residual,
    })
}

/// Softmax across channels at every pixel.
fn softmax_channels(logits: &Tensor) -> Tensor {
    let (k, h, w) = logits.shape();
    let n = h * w;
    let mut out = Tensor::zeros(k, h, w);
    let src = logits.data();
    let dst = out.data_mut();
    let mut buf = vec![0.0f64; k];
    for p in 0..n {
        let max = (0..k).map(|t| src[t * n + p]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0;
        for t in 0..k {
            buf[t] = (src[t * n + p] as f64 - max).exp();
            sum += buf[t];
        }
        for t in 0..k {
            dst[t * n + p] = (buf[t] / sum) as f32;
        }
    }
    out
}

fn run(layers: &[ConvLayer], x: &Tensor) -> Result<Tensor> {
    layers.iter().try_fold(x.clone(), |acc, layer| layer.forward(&acc))
}

/// An architecture bound to one quality level's weights.
#[derive(Debug, Clone)]
pub struct Model {
    arch: ArchitectureConfig,
    weights: ModelWeights,
    z_prior: FactorizedPrior,
}

impl Model {
    /// A missing `z_prior` section is replaced by the seeded default.
    pub fn new(arch: ArchitectureConfig, weights: ModelWeights) -> Result<Self> {
        arch.validate()?;
        arch.check_weights(&weights)?;
        let z_prior = match &weights.z_prior {
            Some(p) => p.clone(),
            None => FactorizedPrior::seeded_default(arch.hyper_channels, 0),
        };
        Ok(Self { arch, weights, z_prior })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn z_prior(&self) -> &FactorizedPrior {
        &self.z_prior
    }

    pub fn quality(&self) -> u8 {
        self.weights.quality
    }

    /// `[ref | target | flow]` through the motion/residual encoder; `flow` is in pixels.
    pub fn encode_latent(&self, reference: &Tensor, target: &Tensor, flow: &Tensor) -> Result<Tensor> {
        let (c, h, w) = target.shape();
        if c != 3 || reference.shape() != target.shape() || flow.shape() != (2, h, w) {
            return Err(Error::Shape(format!(
                "encode_latent needs ref/target (3,H,W) and flow (2,H,W), got {:?}, {:?}, {:?}",
                reference.shape(),
                target.shape(),
                flow.shape()
            )));
        }
        let m = self.arch.frame_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("frame {h}x{w} is not a positive multiple of {m}")));
        }
        let flow = flow.map(|v| v * FLOW_INPUT_SCALE);
        let x = Tensor::concat_channels(&[reference, target, &flow])?;
        run(self.weights.layers(MV_ENCODER)?, &x).context(MV_ENCODER)
    }

    pub fn hyper_encode(&self, y: &Tensor) -> Result<Tensor> {
        let (c, h, w) = y.shape();
        let m = self.arch.frame_multiple() / self.arch.latent_factor();
        if c != self.arch.latent_channels || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "latent {:?} needs {} channels and spatial multiples of {m}",
                y.shape(),
                self.arch.latent_channels
            )));
        }
        run(self.weights.layers(HYPER_ENCODER)?, y).context(HYPER_ENCODER)
    }

    /// Mean and scale of every latent element from the side information.
    pub fn hyper_decode(&self, z_hat: &LatentGrid) -> Result<LaplacianField> {
        if z_hat.shape().0 != self.arch.hyper_channels {
            return Err(Error::Shape(format!(
                "hyper latent has {} channels, expected {}",
                z_hat.shape().0,
                self.arch.hyper_channels
            )));
        }
        let raw = run(self.weights.layers(HYPER_DECODER)?, &z_hat.to_tensor()).context(HYPER_DECODER)?;
        entropy_params(&raw, self.arch.latent_channels)
    }

    pub fn decode_motion_residual(&self, y_hat: &LatentGrid) -> Result<MotionResidual> {
        if y_hat.shape().0 != self.arch.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {} channels, expected {}",
                y_hat.shape().0,
                self.arch.latent_channels
            )));
        }
        let raw = run(self.weights.layers(MV_DECODER)?, &y_hat.to_tensor()).context(MV_DECODER)?;
        split_heads(&raw, self.arch.sdc_taps)
    }

    pub fn postprocess(&self, recon: &Tensor) -> Result<Tensor> {
        postproc::postprocess(recon, &self.weights)
    }
}

/// First `latent_channels` channels are the mean; the rest give the scale.
pub fn entropy_params(raw: &Tensor, latent_channels: usize) -> Result<LaplacianField> {
    if raw.channels() != 2 * latent_channels {
        return Err(Error::Config(format!(
            "hyper decoder produced {} channels, expected {}",
            raw.channels(),
            2 * latent_channels
        )));
    }
    let mu = raw.slice_channels(0, latent_channels)?;
    let sigma = raw.slice_channels(latent_channels, 2 * latent_channels)?.map(|v| softplus(v) + SCALE_FLOOR);
    LaplacianField::new(mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{quantize_round, LATENT_MAX, LATENT_MIN};

    #[test]
    fn head_activations() {
        let raw = Tensor::from_vec(4, 1, 1, vec![1.5, -0.5, 0.0, -40.0]).unwrap();
        let field = entropy_params(&raw, 2).unwrap();
        assert_eq!(field.mu.data(), &[1.5, -0.5]);
        assert!((field.sigma.data()[0] - 0.693_148).abs() < 1e-6);
        assert!((field.sigma.data()[1] - 1e-6).abs() < 1e-9);
        assert!(entropy_params(&raw, 3).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_kernels() {
        let raw = Tensor::filled(15, 3, 4, 0.7);
        let mr = split_heads(&raw, 5).unwrap();
        assert!(mr.kernels.kernels_u().data().iter().all(|&k| (k - 0.2).abs() < 1e-7));
        assert!(split_heads(&Tensor::zeros(14, 1, 1), 5).is_err());
    }

    #[test]
    fn zero_weights_trace() {
        let arch = ArchitectureConfig::compact();
        let model = Model::new(arch.clone(), arch.zero_weights(0)).unwrap();
        let x = Tensor::filled(3, 64, 64, 0.5);
        let y = model.encode_latent(&x, &x, &Tensor::zeros(2, 64, 64)).unwrap();
        assert_eq!(y.shape(), (32, 4, 4));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let z = model.hyper_encode(&y).unwrap();
        assert_eq!(z.shape(), (16, 1, 1));
        let mr = model.decode_motion_residual(&quantize_round(&y, LATENT_MIN, LATENT_MAX)).unwrap();
        assert!(mr.flow.u().iter().chain(mr.flow.v()).all(|&v| v == 0.0));
        assert!(mr.residual.data().iter().all(|&v| v == 0.0));
        assert!(mr.kernels.kernels_v().data().iter().all(|&k| (k - 0.2).abs() < 1e-7));
    }

    #[test]
    fn shape_contract() {
        let arch = ArchitectureConfig::compact();
        let model = Model::new(arch.clone(), arch.seeded_weights(3, 1)).unwrap();
        let x = Tensor::filled(3, 64, 128, 0.25);
        let y = model.encode_latent(&x, &x, &Tensor::zeros(2, 64, 128)).unwrap();
        let z = quantize_round(&model.hyper_encode(&y).unwrap(), -16, 16);
        let field = model.hyper_decode(&z).unwrap();
        assert_eq!(field.shape(), y.shape());
        let mr = model.decode_motion_residual(&quantize_round(&y, LATENT_MIN, LATENT_MAX)).unwrap();
        assert_eq!(mr.residual.shape(), (3, 64, 128));
        assert!(mr.flow.u().iter().all(|v| v.abs() <= FLOW_SCALE));
        let bad = Tensor::filled(3, 48, 64, 0.0);
        assert!(matches!(model.encode_latent(&bad, &bad, &Tensor::zeros(2, 48, 64)), Err(Error::Shape(_))));
    }
}
