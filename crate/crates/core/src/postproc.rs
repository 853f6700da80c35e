//! Residual post-processing network applied to the decoded frame.

use crate::arch::POSTPROC_LAYERS;
use crate::error::{Error, Result, ResultExt};
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, POSTPROC};

/// `clamp(x + net(x), 0, 1)` with the 4-layer `postproc` network.
pub fn postprocess(recon: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let layers = weights.layers(POSTPROC)?;
    if layers.len() != POSTPROC_LAYERS {
        return Err(Error::Config(format!(
            "postproc needs {POSTPROC_LAYERS} layers, weights have {}",
            layers.len()
        )));
    }
    if recon.channels() != 3 {
        return Err(Error::Shape(format!("postproc input needs 3 channels, got {}", recon.channels())));
    }
    let mut x = recon.clone();
    for layer in layers {
        x = layer.forward(&x).context(POSTPROC)?;
    }
    if x.shape() != recon.shape() {
        return Err(Error::Config(format!("postproc changed shape {:?} -> {:?}", recon.shape(), x.shape())));
    }
    for (o, &r) in x.data_mut().iter_mut().zip(recon.data()) {
        *o = (r + *o).clamp(0.0, 1.0);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchitectureConfig;

    #[test]
    fn zero_weights_clamp_only() {
        let w = ArchitectureConfig::compact().zero_weights(0);
        let x = Tensor::from_vec(3, 1, 2, vec![-0.2, 0.3, 1.4, 0.5, 1.0, 0.0]).unwrap();
        let y = postprocess(&x, &w).unwrap();
        assert_eq!(y.data(), &[0.0, 0.3, 1.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn seeded_output_is_deterministic_and_in_range() {
        let w = ArchitectureConfig::compact().seeded_weights(11, 0);
        let x = Tensor::filled(3, 16, 16, 0.5);
        let a = postprocess(&x, &w).unwrap();
        assert_eq!(a.shape(), (3, 16, 16));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, postprocess(&x, &w).unwrap());
    }

    #[test]
    fn wrong_layer_count() {
        let mut w = ArchitectureConfig::compact().zero_weights(0);
        let net = w.networks.iter_mut().find(|n| n.name == POSTPROC).unwrap();
        net.layers.pop();
        assert!(matches!(postprocess(&Tensor::zeros(3, 2, 2), &w), Err(Error::Config(_))));
    }
}
