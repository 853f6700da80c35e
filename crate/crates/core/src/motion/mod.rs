//! Motion estimation, flow files and displaced-convolution warping.

pub mod flow;
pub mod sdc;

pub use flow::{block_matching_flow, read_flo, write_flo, FlowField, FLO_MAGIC};
pub use sdc::{sdc_warp, sdc_warp_vjp, warp_planes, warp_planes_vjp, KernelField, SdcGradients, WarpGradients, WarpInputs};
