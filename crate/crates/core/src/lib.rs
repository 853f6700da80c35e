//! MV-Residual P-frame codec.
//!
//! A target frame is coded relative to a reference frame: an analysis network
//! maps `[reference | target | flow]` to a latent, a hyperprior predicts a
//! per-element Laplace model for it, and both are range coded. The decoder
//! predicts flow, separable kernels and a residual from the latent, warps the
//! reference with a spatially-displaced convolution and post-processes the
//! result. A dynamic-programming allocator picks per-frame quality levels under
//! a global byte budget.

pub mod arch;
pub mod codec;
pub mod container;
pub mod entropy;
pub mod error;
pub mod frame_io;
pub mod metrics;
pub mod motion;
pub mod mvres_net;
pub mod nn;
pub mod postproc;
pub mod range_coder;
pub mod rate_control;
pub mod tensor;
pub mod weights;

pub use arch::ArchitectureConfig;
pub use codec::{decode_frame, encode_frame, load_model, Decoded, Encoded, EncodeStats, MotionSearch};
pub use container::Container;
pub use entropy::{LaplacianField, LatentGrid};
pub use error::{Error, Result};
pub use frame_io::{Frame420, Frame444};
pub use motion::{FlowField, KernelField};
pub use mvres_net::{Model, MotionResidual};
pub use rate_control::{allocate, AllocationPlan, ConfigPoint};
pub use tensor::Tensor;
pub use weights::{ModelWeights, Precision};
