//! Convolution/deconvolution segmentation network written from scratch.
//!
//! Contracting path: per level two `conv 3x3 -> batch-norm -> ReLU` blocks,
//! filters doubling per level, average pooling between levels. Expanding
//! path: learned transposed-convolution upsampling, concatenation with the
//! matching contracting level and another double block. A `1x1` convolution
//! produces two class logits per pixel followed by a softmax.
//!
//! All code is generic over [`Scalar`] so the same network runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod adam;
pub mod layers;
mod model;
mod scalar;
mod tensor;
mod train;
pub mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::adam_step;
pub use model::{backward, blend_running_stats, forward, update_running_stats, AdamState, ForwardPass, Grads, Mode, Param, UNetParams};
pub use scalar::Scalar;
pub use tensor::Tensor4;
pub use train::{
    batch_tensor, lesion_probability, predict, recalibrate_batch_norm, train, train_step, train_with_params, IterationRecord, TrainHistory,
    TrainSample,
};

/// Batch-norm running-statistics momentum (fraction of the old value kept).
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Resolution levels, including the bottleneck.
    pub levels: usize,
    /// Filters of the first level; doubled at every level below.
    pub base_filters: usize,
    pub conv_size: usize,
    pub pool_size: usize,
    pub in_channels: usize,
    pub out_classes: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_filters: 64,
            conv_size: 3,
            pool_size: 2,
            in_channels: 1,
            out_classes: 2,
        }
    }
}

impl UNetConfig {
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("network needs at least 2 levels".into()));
        }
        if self.conv_size.is_multiple_of(2) {
            return Err(Error::Config("convolution size must be odd".into()));
        }
        if self.pool_size < 2 {
            return Err(Error::Config("pool size must be at least 2".into()));
        }
        if self.base_filters == 0 || self.in_channels == 0 {
            return Err(Error::Config("filters and input channels must be positive".into()));
        }
        if self.out_classes != 2 {
            return Err(Error::Config("the network predicts exactly 2 classes".into()));
        }
        Ok(())
    }

    /// Spatial size must divide by `pool_size^(levels-1)`.
    pub fn validate_for(&self, size: usize) -> Result<()> {
        self.validate()?;
        let factor = self.pool_size.pow(self.levels as u32 - 1);
        if size == 0 || !size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "input size {size} is not divisible by {factor} (pool {}^{})",
                self.pool_size,
                self.levels - 1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    /// Batches used after training to re-estimate the batch-norm running
    /// statistics with the final weights (0 keeps the training-time
    /// moving averages).
    #[serde(default)]
    pub bn_recalibration_batches: usize,
    /// Seeds weight initialisation and batch sampling. Scenario files do not
    /// carry it; it is derived from the scenario's master seed.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            iterations_per_epoch: 32,
            batch_size: 16,
            bn_recalibration_batches: 8,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if self.epochs == 0 || self.iterations_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, iterations and batch size must be positive".into()));
        }
        Ok(())
    }
}
