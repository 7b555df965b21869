//! Input transformations: local binary patterns, the Haar wavelet pyramid
//! and assembly of the per-scenario network input stack.

mod lbp;
mod stack;
mod wavelet;

pub use lbp::{lbp_map, LbpMap};
pub use stack::{build_input_stack, FeatureStack};
pub use wavelet::{dwt2_haar, idwt2_haar, wavelet_pyramid, Subbands, WaveletPyramid};
