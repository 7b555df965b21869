//! Skin lesion segmentation pipeline.
//!
//! The crate is organised along the processing stages of the pipeline:
//!
//! * [`imaging`] raster types, preparation (resize, border, grayscale) and
//!   six-way augmentation.
//! * [`preprocess`] contrast stretching, hair removal and vignette correction.
//! * [`transforms`] local binary patterns, the Haar wavelet pyramid and the
//!   scenario-dependent network input stack.
//! * [`unet`] a small convolution/deconvolution network with hand-written
//!   reverse-mode gradients, batch normalisation and Adam.
//! * [`postprocess`] thresholding and largest-central-object selection.
//! * [`eval`] Jaccard index and the batched evaluation protocol.
//! * [`pipeline`] configuration, dataset ingestion, a synthetic dermoscopy
//!   generator and the end-to-end scenario driver.

pub mod error;
pub mod eval;
pub mod imaging;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod transforms;
pub mod unet;

pub use error::{Error, Result};
pub use imaging::{BinaryMask, GrayImage, RgbImage};
