use crate::error::{Error, Result};
use crate::imaging::{add_border, crop_border, Augmentation, GrayImage};
use crate::pipeline::config::{Scenario, ScenarioConfig};

use super::{lbp_map, WaveletPyramid};

/// Channel-major float input for the network, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FeatureStack {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("feature stack dimensions must be positive"));
        }
        if data.len() != channels * width * height {
            return Err(Error::invalid(format!(
                "feature stack {channels}x{height}x{width} needs {} samples, got {}",
                channels * width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature stack contains non-finite values"));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn augmented(&self, a: Augmentation) -> FeatureStack {
        let data = a.apply_planes(&self.data, self.channels, self.width, self.height);
        let (width, height) = match a {
            Augmentation::Rot90 | Augmentation::Rot270 => (self.height, self.width),
            _ => (self.width, self.height),
        };
        FeatureStack {
            channels: self.channels,
            width,
            height,
            data,
        }
    }
}

fn scaled(img: &GrayImage) -> impl Iterator<Item = f32> + '_ {
    img.data().iter().map(|&v| v as f32 / 255.0)
}

/// Network input for one prepared (and, for B-D, pre-processed) image.
///
/// * A, B: grayscale.
/// * C: grayscale and LBP codes.
/// * D: grayscale and the approximation image of each wavelet level. The
///   pyramid is computed on the border-free interior so that, after each
///   approximation is min-max normalised, resized back to the interior size
///   and given the same reflected border, it lines up with the grayscale
///   channel pixel for pixel.
pub fn build_input_stack(pre: &GrayImage, cfg: &ScenarioConfig) -> Result<FeatureStack> {
    let (w, h) = (pre.width(), pre.height());
    let mut data: Vec<f32> = scaled(pre).collect();
    let mut channels = 1;
    match cfg.scenario {
        Scenario::A | Scenario::B => {}
        Scenario::C => {
            data.extend(scaled(&lbp_map(pre)?.to_gray()));
            channels += 1;
        }
        Scenario::D => {
            let interior = crop_border(pre, cfg.border)?;
            let pyramid = WaveletPyramid::from_raster(&interior.to_float(), cfg.wavelet_levels())?;
            for approx in pyramid.approximations() {
                let resized = approx
                    .min_max_normalized()
                    .resize_bilinear(interior.width(), interior.height());
                let bordered = add_border(&resized, cfg.border)?;
                data.extend(bordered.data().iter().map(|&v| v.clamp(0.0, 1.0) as f32));
                channels += 1;
            }
        }
    }
    FeatureStack::new(channels, w, h, data)
}
