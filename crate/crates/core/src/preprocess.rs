//! Contrast stretching, hair removal and vignette-frame correction, applied
//! in that order to the prepared (bordered) grayscale image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{round_u8, BinaryMask, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastParams {
    /// Fraction of pixels clipped at each histogram tail.
    pub clip_fraction: f64,
}

impl Default for ContrastParams {
    fn default() -> Self {
        Self {
            clip_fraction: 0.02,
        }
    }
}

impl ContrastParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.clip_fraction) {
            return Err(Error::Config(format!(
                "clip_fraction must lie in [0, 0.5), got {}",
                self.clip_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VignetteParams {
    pub max_iterations: usize,
    /// Radius of the first tested circle is `height / 2 - base_margin`.
    pub base_margin: f64,
    /// Radius growth per iteration.
    pub step: f64,
    /// Outer-region mean below which the region is treated as vignette.
    pub darkness_threshold: f64,
}

impl Default for VignetteParams {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            base_margin: 20.0,
            step: 5.0,
            darkness_threshold: 6.0,
        }
    }
}

impl VignetteParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("vignette max_iterations must be at least 1".into()));
        }
        let fields = [self.base_margin, self.step, self.darkness_threshold];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("vignette parameters must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Intensity cut-offs used by [`contrast_stretch`], `None` when the
/// histogram is degenerate (`hi <= lo`).
pub fn contrast_cutoffs(img: &GrayImage, p: &ContrastParams) -> Option<(u8, u8)> {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    // At least one pixel must sit at or beyond each cut-off, so a zero clip
    // fraction degrades to the plain min/max stretch.
    let need = (p.clip_fraction * img.data().len() as f64).max(1.0);

    let mut acc = 0usize;
    let lo = (0..256).find(|&v| {
        acc += hist[v];
        acc as f64 >= need
    })?;
    acc = 0;
    let hi = (0..256).rev().find(|&v| {
        acc += hist[v];
        acc as f64 >= need
    })?;
    (hi > lo).then_some((lo as u8, hi as u8))
}

/// Percentile contrast stretch: the `clip_fraction` tails are saturated and
/// the remaining range is remapped linearly onto `0..=255`.
pub fn contrast_stretch(img: &GrayImage, p: &ContrastParams) -> GrayImage {
    let Some((lo, hi)) = contrast_cutoffs(img, p) else {
        return img.clone();
    };
    let scale = 255.0 / (hi as f64 - lo as f64);
    let lut: Vec<u8> = (0..256)
        .map(|v| round_u8((v as f64 - lo as f64) * scale))
        .collect();
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = lut[*v as usize];
    }
    out
}

/// High-pass "find edges" filter: 3x3 kernel with centre weight 8 and all
/// eight neighbours -1, clamped to `0..=255` and binarised at `> 0`.
/// Only pixels brighter than their neighbourhood respond, so a dark line
/// yields a one-pixel silhouette on each side. The 1-pixel frame is 0.
pub fn detect_edges(img: &GrayImage) -> BinaryMask {
    let (w, h) = (img.width(), img.height());
    let mut mask = BinaryMask::zeros(w, h);
    if w < 3 || h < 3 {
        return mask;
    }
    let d = img.data();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut sum = 0i32;
            for rr in r - 1..=r + 1 {
                for cc in c - 1..=c + 1 {
                    sum += d[rr * w + cc] as i32;
                }
            }
            let centre = d[r * w + c] as i32;
            let response = 9 * centre - sum;
            if response > 0 {
                mask.set(r, c, true);
            }
        }
    }
    mask
}

/// Binary dilation with a 3x3 square structuring element.
pub fn dilate3x3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |r, c| {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        (r0..=r1).any(|rr| (c0..=c1).any(|cc| mask.get(rr, cc)))
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HairReport {
    pub edge_pixels: usize,
    pub filled_pixels: usize,
}

/// Hair removal: edge pixels, grown by one pixel, are painted white.
pub fn remove_hair(img: &GrayImage) -> GrayImage {
    remove_hair_with_report(img).0
}

pub fn remove_hair_with_report(img: &GrayImage) -> (GrayImage, HairReport) {
    let edges = detect_edges(img);
    let fill = dilate3x3(&edges);
    let mut out = img.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(fill.data()) {
        if m != 0 {
            *v = 255;
        }
    }
    let report = HairReport {
        edge_pixels: edges.area(),
        filled_pixels: fill.area(),
    };
    (out, report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VignetteReport {
    /// Iterations whose outer region was dark enough to be filled.
    pub corrected_iterations: Vec<usize>,
}

/// Iterative vignette-frame correction.
///
/// Iteration `i` tests the circle of radius `h/2 - base_margin + i*step`
/// centred on the image. When the mean of the pixels outside it is below
/// `darkness_threshold`, those pixels are replaced by the (rounded) mean of
/// the pixels inside. All iterations run; corrections compound.
pub fn remove_vignette(img: &GrayImage, p: &VignetteParams) -> Result<GrayImage> {
    remove_vignette_with_report(img, p).map(|(out, _)| out)
}

pub fn remove_vignette_with_report(img: &GrayImage, p: &VignetteParams) -> Result<(GrayImage, VignetteReport)> {
    let (w, h) = (img.width(), img.height());
    if w != h {
        return Err(Error::invalid(format!("vignette correction needs a square image, got {w}x{h}")));
    }
    p.validate()?;

    // Squared distance of every pixel centre from the image centre.
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let dist2: Vec<f64> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2))
        .collect();

    let mut out = img.clone();
    let mut report = VignetteReport::default();
    for i in 0..p.max_iterations {
        let radius = h as f64 / 2.0 - p.base_margin + i as f64 * p.step;
        if radius < 0.0 {
            continue;
        }
        let r2 = radius * radius;
        let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0u64, 0u64, 0u64, 0u64);
        for (&v, &d) in out.data().iter().zip(&dist2) {
            if d <= r2 {
                in_sum += v as u64;
                in_n += 1;
            } else {
                out_sum += v as u64;
                out_n += 1;
            }
        }
        if in_n == 0 || out_n == 0 {
            continue;
        }
        let outer_mean = out_sum as f64 / out_n as f64;
        if outer_mean < p.darkness_threshold {
            let fill = round_u8(in_sum as f64 / in_n as f64);
            for (v, &d) in out.data_mut().iter_mut().zip(&dist2) {
                if d > r2 {
                    *v = fill;
                }
            }
            report.corrected_iterations.push(i);
        }
    }
    Ok((out, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub contrast: ContrastParams,
    pub vignette: VignetteParams,
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        self.contrast.validate()?;
        self.vignette.validate()
    }
}

/// What each pre-processing step did to one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub contrast_cutoffs: Option<(u8, u8)>,
    pub hair: HairReport,
    pub vignette: VignetteReport,
}

/// Contrast stretch, then hair removal, then vignette correction.
pub fn preprocess(img: &GrayImage, p: &PreprocessParams) -> Result<(GrayImage, PreprocessReport)> {
    p.validate()?;
    let cutoffs = contrast_cutoffs(img, &p.contrast);
    let stretched = contrast_stretch(img, &p.contrast);
    let (clean, hair) = remove_hair_with_report(&stretched);
    let (out, vignette) = remove_vignette_with_report(&clean, &p.vignette)?;
    Ok((
        out,
        PreprocessReport {
            contrast_cutoffs: cutoffs,
            hair,
            vignette,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disc_fixture(n: usize, inside: u8, radius: f64) -> GrayImage {
        let c = (n as f64 - 1.0) / 2.0;
        GrayImage::from_fn(n, n, |r, col| {
            let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
            if d2 <= radius * radius {
                inside
            } else {
                0
            }
        })
    }

    #[test]
    fn stretch_constant_is_unchanged() {
        let img = GrayImage::filled(10, 10, 77);
        assert_eq!(contrast_stretch(&img, &ContrastParams::default()), img);
    }

    #[test]
    fn stretch_two_valued() {
        let img = GrayImage::from_fn(10, 10, |r, _| if r < 5 { 10 } else { 200 });
        let out = contrast_stretch(&img, &ContrastParams::default());
        for (a, b) in img.data().iter().zip(out.data()) {
            assert_eq!(*b, if *a == 10 { 0 } else { 255 });
        }
    }

    #[test]
    fn stretch_clips_tails() {
        // 100 pixels 0..=99; 2% tails -> lo = 1, hi = 98
        let img = GrayImage::from_fn(10, 10, |r, c| (r * 10 + c) as u8);
        assert_eq!(contrast_cutoffs(&img, &ContrastParams::default()), Some((1, 98)));
        let out = contrast_stretch(&img, &ContrastParams::default());
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(0, 1), 0);
        assert_eq!(out.get(9, 8), 255);
        assert_eq!(out.get(9, 9), 255);
    }

    #[test]
    fn contrast_params_validation() {
        assert!(ContrastParams { clip_fraction: 0.5 }.validate().is_err());
        assert!(ContrastParams { clip_fraction: -0.1 }.validate().is_err());
        assert!(ContrastParams { clip_fraction: 0.0 }.validate().is_ok());
    }

    #[test]
    fn edges_of_constant_are_empty() {
        assert_eq!(detect_edges(&GrayImage::filled(6, 6, 90)).area(), 0);
    }

    #[test]
    fn edges_single_bright_pixel() {
        // Centre response 8*255 > 0; each neighbour sees -255 -> clamped to 0.
        let mut img = GrayImage::filled(5, 5, 0);
        img.set(2, 2, 255);
        let e = detect_edges(&img);
        assert_eq!(e.area(), 1);
        assert!(e.get(2, 2));
    }

    #[test]
    fn edges_step_marks_bright_side() {
        // Left half black, right half white, split between columns 2 and 3.
        // Column 3 responds 8*255 - 5*255 > 0, column 2 responds -3*255.
        let img = GrayImage::from_fn(6, 6, |_, c| if c < 3 { 0 } else { 255 });
        let e = detect_edges(&img);
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(e.get(r, c), c == 3 && (1..5).contains(&r), "({r},{c})");
            }
        }
    }

    #[test]
    fn hair_line_is_whitened() {
        // 7x7, bright 200 background, dark 1-px line on row 3.
        let img = GrayImage::from_fn(7, 7, |r, _| if r == 3 { 20 } else { 200 });
        // Edges: rows 2 and 4 (cols 1..=5); dilation grows that to rows 1..=5,
        // cols 0..=6. Row 3 is covered by dilation from both sides.
        let out = remove_hair(&img);
        for r in 0..7 {
            for c in 0..7 {
                let expect = if (1..=5).contains(&r) { 255 } else { 200 };
                assert_eq!(out.get(r, c), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn hair_on_constant_is_noop() {
        let img = GrayImage::filled(9, 9, 128);
        assert_eq!(remove_hair(&img), img);
    }

    #[test]
    fn vignette_fixture_corrected_at_first_iteration() {
        let n = 64;
        let radius = n as f64 / 2.0 - 20.0;
        let img = disc_fixture(n, 200, radius);
        let (out, report) = remove_vignette_with_report(&img, &VignetteParams::default()).unwrap();
        assert_eq!(report.corrected_iterations.first(), Some(&0));
        assert!(out.data().iter().all(|&v| v == 200));
    }

    #[test]
    fn vignette_bright_ring_untouched() {
        let img = GrayImage::from_fn(40, 40, |r, c| (r * 3 + c) as u8 + 10);
        let (out, report) = remove_vignette_with_report(&img, &VignetteParams::default()).unwrap();
        assert!(report.corrected_iterations.is_empty());
        assert_eq!(out, img);
    }

    #[test]
    fn vignette_all_zero_stays_zero() {
        let img = GrayImage::filled(32, 32, 0);
        assert_eq!(remove_vignette(&img, &VignetteParams::default()).unwrap(), img);
    }

    #[test]
    fn vignette_rejects_non_square() {
        assert!(remove_vignette(&GrayImage::filled(4, 5, 0), &VignetteParams::default()).is_err());
    }

    fn arb_gray() -> impl Strategy<Value = GrayImage> {
        (3usize..16, 3usize..16).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
        })
    }

    fn arb_square() -> impl Strategy<Value = GrayImage> {
        (8usize..48).prop_flat_map(|n| {
            proptest::collection::vec(0u8..12, n * n).prop_map(move |d| GrayImage::new(n, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn stretch_is_monotone_and_spans(img in arb_gray()) {
            let p = ContrastParams::default();
            let out = contrast_stretch(&img, &p);
            let mut pairs: Vec<(u8, u8)> = img.data().iter().copied().zip(out.data().iter().copied()).collect();
            pairs.sort();
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            if contrast_cutoffs(&img, &p).is_some() {
                prop_assert_eq!(*out.data().iter().min().unwrap(), 0);
                prop_assert_eq!(*out.data().iter().max().unwrap(), 255);
                let twice = contrast_stretch(&out, &p);
                for (a, b) in out.data().iter().zip(twice.data()) {
                    prop_assert!((*a as i32 - *b as i32).abs() <= 1);
                }
            }
        }

        #[test]
        fn hair_removal_never_darkens(img in arb_gray()) {
            let out = remove_hair(&img);
            prop_assert!(img.data().iter().zip(out.data()).all(|(a, b)| b >= a));
        }

        #[test]
        fn vignette_keeps_inner_disc(img in arb_square()) {
            let p = VignetteParams::default();
            let out = remove_vignette(&img, &p).unwrap();
            let n = img.width();
            let radius = n as f64 / 2.0 - p.base_margin;
            let c = (n as f64 - 1.0) / 2.0;
            for r in 0..n {
                for col in 0..n {
                    let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
                    if radius >= 0.0 && d2 <= radius * radius {
                        prop_assert_eq!(out.get(r, col), img.get(r, col));
                    }
                }
            }
        }

        #[test]
        fn chain_is_deterministic(img in arb_square()) {
            let p = PreprocessParams::default();
            let a = preprocess(&img, &p).unwrap();
            let b = preprocess(&img, &p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
