//! Synthetic dermoscopy-like images with exact ground truth: a dark
//! elliptical lesion on flat skin, optionally with dark hairs, ink marks
//! near the image edge, a circular vignette frame and a global contrast
//! squeeze.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::io::{write_mask, write_rgb};
use crate::imaging::{BinaryMask, RgbImage};

use super::dataset::{ingest, DatasetManifest};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub size: usize,
    pub hair_probability: f64,
    pub mark_probability: f64,
    pub vignette_probability: f64,
    pub low_contrast_probability: f64,
}

impl SynthOptions {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            hair_probability: 0.5,
            mark_probability: 0.5,
            vignette_probability: 0.5,
            low_contrast_probability: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub hairs: usize,
    pub marks: usize,
    pub vignette: bool,
    pub low_contrast: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// Centre (row, col) in pixels.
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }

    pub fn rasterize(&self, size: usize) -> BinaryMask {
        BinaryMask::from_fn(size, size, |r, c| self.contains(r as f64, c as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub lesion: Ellipse,
    pub artifacts: Artifacts,
}

/// Fraction of the image side used as field-of-view radius when a vignette
/// is drawn.
const VIGNETTE_RADIUS: (f64, f64) = (0.43, 0.46);

/// Sample `first + i` uses its own RNG stream, so any subset of a dataset
/// can be regenerated independently.
pub fn generate_samples(n: usize, seed: u64, first: usize, opts: &SynthOptions) -> Vec<SynthSample> {
    (first..first + n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_one(format!("synth_{i:04}"), &mut rng, opts)
        })
        .collect()
}

fn generate_one(id: String, rng: &mut ChaCha8Rng, opts: &SynthOptions) -> SynthSample {
    let n = opts.size;
    let s = n as f64;
    let skin = [
        rng.random_range(185.0..230.0),
        rng.random_range(135.0..175.0),
        rng.random_range(105.0..150.0),
    ];
    let darkness = rng.random_range(0.4..0.7);
    let lesion_rgb = [skin[0] * darkness, skin[1] * darkness * 0.85, skin[2] * darkness * 0.75];
    let lesion = Ellipse {
        center: (rng.random_range(0.38..0.62) * s, rng.random_range(0.38..0.62) * s),
        semi_axes: (rng.random_range(0.12..0.24) * s, rng.random_range(0.12..0.24) * s),
        angle: rng.random_range(0.0..PI),
    };
    let mask = lesion.rasterize(n);
    let mut px: Vec<[f64; 3]> = mask.data().iter().map(|&m| if m == 1 { lesion_rgb } else { skin }).collect();

    let mut artifacts = Artifacts::default();
    if rng.random_bool(opts.mark_probability) {
        for _ in 0..rng.random_range(1..=2) {
            artifacts.marks += draw_mark(&mut px, n, &lesion, skin, rng) as usize;
        }
    }
    if rng.random_bool(opts.hair_probability) {
        artifacts.hairs = rng.random_range(1..=4);
        for _ in 0..artifacts.hairs {
            draw_hair(&mut px, n, rng);
        }
    }
    if rng.random_bool(opts.low_contrast_probability) {
        artifacts.low_contrast = true;
        let k = rng.random_range(0.3..0.5);
        let mean = 128.0;
        for p in &mut px {
            for v in p.iter_mut() {
                *v = mean + (*v - mean) * k;
            }
        }
    }
    if rng.random_bool(opts.vignette_probability) {
        artifacts.vignette = true;
        let radius = rng.random_range(VIGNETTE_RADIUS.0..VIGNETTE_RADIUS.1) * s;
        let outer = rng.random_range(0.0..3.0);
        let c = (s - 1.0) / 2.0;
        for (i, p) in px.iter_mut().enumerate() {
            let (r, col) = ((i / n) as f64, (i % n) as f64);
            if (r - c).powi(2) + (col - c).powi(2) > radius * radius {
                *p = [outer; 3];
            }
        }
    }

    let image = RgbImage::from_fn(n, n, |r, c| px[r * n + c].map(|v| v.round().clamp(0.0, 255.0) as u8));
    SynthSample {
        id,
        image,
        mask,
        lesion,
        artifacts,
    }
}

/// A dark disc close to the image edge, clear of the lesion. Returns
/// whether a free spot was found.
fn draw_mark(px: &mut [[f64; 3]], n: usize, lesion: &Ellipse, skin: [f64; 3], rng: &mut ChaCha8Rng) -> bool {
    let s = n as f64;
    let radius = rng.random_range(0.05..0.09) * s;
    let reach = lesion.semi_axes.0.max(lesion.semi_axes.1);
    for _ in 0..10 {
        let inset = rng.random_range(0.08..0.16) * s;
        let along = rng.random_range(inset..s - inset);
        let (y, x) = match rng.random_range(0..4) {
            0 => (inset, along),
            1 => (s - 1.0 - inset, along),
            2 => (along, inset),
            _ => (along, s - 1.0 - inset),
        };
        let gap = ((y - lesion.center.0).powi(2) + (x - lesion.center.1).powi(2)).sqrt();
        if gap < reach + radius + 2.0 {
            continue;
        }
        let k = rng.random_range(0.3..0.6);
        let tone = skin.map(|v| v * k);
        for (i, p) in px.iter_mut().enumerate() {
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            if (r - y).powi(2) + (c - x).powi(2) <= radius * radius {
                *p = tone;
            }
        }
        return true;
    }
    false
}

/// A dark polyline of 1-2 px width entering from a random edge.
fn draw_hair(px: &mut [[f64; 3]], n: usize, rng: &mut ChaCha8Rng) {
    let s = n as f64;
    let tone = rng.random_range(20.0..55.0);
    let width = rng.random_range(1..=2);
    let (mut y, mut x) = match rng.random_range(0..4) {
        0 => (0.0, rng.random_range(0.0..s)),
        1 => (s - 1.0, rng.random_range(0.0..s)),
        2 => (rng.random_range(0.0..s), 0.0),
        _ => (rng.random_range(0.0..s), s - 1.0),
    };
    let towards = (s / 2.0 - y).atan2(s / 2.0 - x);
    let mut heading: f64 = towards + rng.random_range(-0.6..0.6);
    let segments = rng.random_range(3..6);
    let seg_len = s * rng.random_range(0.15..0.3);
    for _ in 0..segments {
        let steps = (seg_len * 2.0) as usize;
        for _ in 0..steps {
            y += heading.sin() * 0.5;
            x += heading.cos() * 0.5;
            for d in 0..width {
                let (r, c) = (y.round() as isize, x.round() as isize + d as isize);
                if (0..n as isize).contains(&r) && (0..n as isize).contains(&c) {
                    px[r as usize * n + c as usize] = [tone; 3];
                }
            }
        }
        heading += rng.random_range(-0.5..0.5);
    }
}

/// Writes `n_train` + `n_test` samples as `train/` and `test/` PNG pairs
/// under `root` and ingests the result.
pub fn synth_dataset(root: &Path, n_train: usize, n_test: usize, seed: u64, size: usize) -> Result<DatasetManifest> {
    if n_train == 0 || size < 8 {
        return Err(Error::invalid("synthetic dataset needs at least one training image of side >= 8"));
    }
    let opts = SynthOptions::new(size);
    let write = |split: &str, samples: Vec<SynthSample>| -> Result<()> {
        samples.par_iter().try_for_each(|smp| {
            let dir = root.join(split);
            write_rgb(&dir.join(format!("{}.png", smp.id)), &smp.image)?;
            write_mask(&dir.join(format!("{}_mask.png", smp.id)), &smp.mask)
        })
    };
    write("train", generate_samples(n_train, seed, 0, &opts))?;
    write("test", generate_samples(n_test, seed, n_train, &opts))?;
    ingest(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{add_border, crop_border, prepare_image};
    use crate::preprocess::{preprocess, PreprocessParams};

    #[test]
    fn deterministic_and_independent_streams() {
        let opts = SynthOptions::new(32);
        let a = generate_samples(5, 11, 0, &opts);
        assert_eq!(a, generate_samples(5, 11, 0, &opts));
        assert_eq!(a[3..], generate_samples(2, 11, 3, &opts)[..]);
        assert_ne!(a, generate_samples(5, 12, 0, &opts));
    }

    #[test]
    fn mask_is_the_rasterised_ellipse() {
        for s in generate_samples(10, 3, 0, &SynthOptions::new(40)) {
            assert_eq!(s.mask, s.lesion.rasterize(40));
            assert!(s.mask.area() > 0);
        }
    }

    #[test]
    fn vignette_samples_trigger_correction() {
        let opts = SynthOptions {
            vignette_probability: 1.0,
            ..SynthOptions::new(64)
        };
        let params = PreprocessParams::default();
        for s in generate_samples(6, 5, 0, &opts) {
            let prepared = prepare_image(&s.image, 48, 8).unwrap();
            let interior = crop_border(&prepared, 8).unwrap();
            let (_, report) = preprocess(&interior, &params).unwrap();
            assert!(!report.vignette.corrected_iterations.is_empty(), "{}", s.id);
            assert!(add_border(&interior, 8).is_ok());
        }
    }

    #[test]
    fn written_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(dir.path(), 3, 2, 1, 24).unwrap();
        assert_eq!(m.entries.len(), 5);
        let ds = m.load().unwrap();
        let fresh = generate_samples(3, 1, 0, &SynthOptions::new(24));
        assert_eq!(ds.train[0].image, fresh[0].image);
        assert_eq!(ds.train[2].mask, fresh[2].mask);
    }
}
