//! Orthonormal Haar (Daubechies-1) analysis and synthesis.
//!
//! Rows are filtered first, then columns. Low-pass taps are
//! `(1/sqrt2, 1/sqrt2)` and high-pass taps `(1/sqrt2, -1/sqrt2)`, so the
//! transform preserves energy exactly.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::imaging::{FloatRaster, GrayImage};

/// One level of decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    /// Approximation.
    pub ll: FloatRaster,
    /// Horizontal detail: low-pass along rows, high-pass down columns.
    pub lh: FloatRaster,
    /// Vertical detail: high-pass along rows, low-pass down columns.
    pub hl: FloatRaster,
    /// Diagonal detail.
    pub hh: FloatRaster,
    /// Size of the analysed raster before edge-replication to even size.
    pub source_width: usize,
    pub source_height: usize,
}

impl Subbands {
    pub fn details(&self) -> [&FloatRaster; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn padded(&self) -> bool {
        self.source_width % 2 == 1 || self.source_height % 2 == 1
    }
}

fn padded_sample(img: &FloatRaster, row: usize, col: usize) -> f64 {
    img.get(row.min(img.height() - 1), col.min(img.width() - 1))
}

/// Single-level 2-D Haar analysis. Odd dimensions are padded to even by
/// replicating the last row/column; the original size is recorded.
pub fn dwt2_haar(img: &FloatRaster) -> Result<Subbands> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot transform an empty raster"));
    }
    let (hw, hh) = (w.div_ceil(2), h.div_ceil(2));
    let mut ll = FloatRaster::zeros(hw, hh);
    let mut lh = FloatRaster::zeros(hw, hh);
    let mut hl = FloatRaster::zeros(hw, hh);
    let mut d = FloatRaster::zeros(hw, hh);
    let s = FRAC_1_SQRT_2;
    for r in 0..hh {
        for c in 0..hw {
            let a = padded_sample(img, 2 * r, 2 * c);
            let b = padded_sample(img, 2 * r, 2 * c + 1);
            let e = padded_sample(img, 2 * r + 1, 2 * c);
            let f = padded_sample(img, 2 * r + 1, 2 * c + 1);
            // row pass
            let (top_lo, top_hi) = ((a + b) * s, (a - b) * s);
            let (bot_lo, bot_hi) = ((e + f) * s, (e - f) * s);
            // column pass
            ll.set(r, c, (top_lo + bot_lo) * s);
            lh.set(r, c, (top_lo - bot_lo) * s);
            hl.set(r, c, (top_hi + bot_hi) * s);
            d.set(r, c, (top_hi - bot_hi) * s);
        }
    }
    Ok(Subbands {
        ll,
        lh,
        hl,
        hh: d,
        source_width: w,
        source_height: h,
    })
}

/// Inverse of [`dwt2_haar`], cropping any padding.
pub fn idwt2_haar(bands: &Subbands) -> FloatRaster {
    let (w, h) = (bands.source_width, bands.source_height);
    let mut out = FloatRaster::zeros(2 * bands.ll.width(), 2 * bands.ll.height());
    let s = FRAC_1_SQRT_2;
    for r in 0..bands.ll.height() {
        for c in 0..bands.ll.width() {
            let (ll, lh, hl, hh) = (
                bands.ll.get(r, c),
                bands.lh.get(r, c),
                bands.hl.get(r, c),
                bands.hh.get(r, c),
            );
            let top_lo = (ll + lh) * s;
            let bot_lo = (ll - lh) * s;
            let top_hi = (hl + hh) * s;
            let bot_hi = (hl - hh) * s;
            out.set(2 * r, 2 * c, (top_lo + top_hi) * s);
            out.set(2 * r, 2 * c + 1, (top_lo - top_hi) * s);
            out.set(2 * r + 1, 2 * c, (bot_lo + bot_hi) * s);
            out.set(2 * r + 1, 2 * c + 1, (bot_lo - bot_hi) * s);
        }
    }
    if out.width() == w && out.height() == h {
        return out;
    }
    let data = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| out.get(r, c))
        .collect();
    FloatRaster::new(w, h, data).expect("crop of a valid raster")
}

/// Multi-level decomposition; level `k` analyses the approximation of
/// level `k - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    levels: Vec<Subbands>,
}

impl WaveletPyramid {
    pub fn from_raster(img: &FloatRaster, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("wavelet pyramid needs at least one level"));
        }
        let need = 1usize << levels;
        if img.width() < need || img.height() < need {
            return Err(Error::invalid(format!(
                "{}x{} raster is too small for {levels} levels",
                img.width(),
                img.height()
            )));
        }
        let mut out = Vec::with_capacity(levels);
        let mut current = img.clone();
        for _ in 0..levels {
            let bands = dwt2_haar(&current)?;
            current = bands.ll.clone();
            out.push(bands);
        }
        Ok(Self { levels: out })
    }

    pub fn levels(&self) -> &[Subbands] {
        &self.levels
    }

    /// Approximation image of each level, finest first.
    pub fn approximations(&self) -> impl Iterator<Item = &FloatRaster> {
        self.levels.iter().map(|l| &l.ll)
    }

    /// Stored coefficients: every detail band plus the coarsest approximation.
    pub fn coefficient_count(&self) -> usize {
        let details: usize = self
            .levels
            .iter()
            .flat_map(|l| l.details())
            .map(|b| b.data().len())
            .sum();
        details + self.levels.last().map_or(0, |l| l.ll.data().len())
    }

    pub fn energy(&self) -> f64 {
        let details: f64 = self
            .levels
            .iter()
            .flat_map(|l| l.details())
            .map(FloatRaster::sum_of_squares)
            .sum();
        details + self.levels.last().map_or(0.0, |l| l.ll.sum_of_squares())
    }

    /// Synthesises the original raster from the coarsest approximation and
    /// all detail bands.
    pub fn reconstruct(&self) -> FloatRaster {
        let mut approx = self.levels.last().expect("pyramid has levels").ll.clone();
        for level in self.levels.iter().rev() {
            let bands = Subbands {
                ll: approx,
                ..level.clone()
            };
            approx = idwt2_haar(&bands);
        }
        approx
    }
}

pub fn wavelet_pyramid(img: &GrayImage, levels: usize) -> Result<WaveletPyramid> {
    WaveletPyramid::from_raster(&img.to_float(), levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize, d: &[f64]) -> FloatRaster {
        FloatRaster::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn constant_two_by_two() {
        let b = dwt2_haar(&raster(2, 2, &[3.0; 4])).unwrap();
        assert!((b.ll.get(0, 0) - 6.0).abs() < 1e-12);
        for d in b.details() {
            assert!(d.get(0, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn worked_two_by_two() {
        // [[4,2],[2,0]] -> rows: (6,2)/sqrt2, (2,2)/sqrt2 -> columns:
        // LL = 8/2, LH = 4/2, HL = 4/2, HH = 0
        let b = dwt2_haar(&raster(2, 2, &[4.0, 2.0, 2.0, 0.0])).unwrap();
        for (got, want) in [(b.ll.get(0, 0), 4.0), (b.lh.get(0, 0), 2.0), (b.hl.get(0, 0), 2.0), (b.hh.get(0, 0), 0.0)] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn horizontal_detail_distinguishes_axes() {
        // Rows differ, columns equal within a row: only LH sees it.
        let b = dwt2_haar(&raster(2, 2, &[1.0, 1.0, 3.0, 3.0])).unwrap();
        assert!(b.lh.get(0, 0).abs() > 1.0);
        assert!(b.hl.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn odd_sizes_round_trip() {
        let img = FloatRaster::new(5, 3, (0..15).map(|v| (v * v) as f64).collect()).unwrap();
        let b = dwt2_haar(&img).unwrap();
        assert!(b.padded());
        assert_eq!((b.ll.width(), b.ll.height()), (3, 2));
        let back = idwt2_haar(&b);
        for (a, z) in img.data().iter().zip(back.data()) {
            assert!((a - z).abs() < 1e-9);
        }
    }

    #[test]
    fn paper_pyramid_sizes() {
        let img = GrayImage::from_fn(256, 256, |r, c| ((r * 7 + c * 3) % 256) as u8);
        let p = wavelet_pyramid(&img, 3).unwrap();
        let sizes: Vec<_> = p.approximations().map(|a| (a.width(), a.height())).collect();
        assert_eq!(sizes, vec![(128, 128), (64, 64), (32, 32)]);
        assert_eq!(p.coefficient_count(), 256 * 256);
    }

    #[test]
    fn constant_has_no_detail() {
        let p = wavelet_pyramid(&GrayImage::filled(32, 32, 90), 3).unwrap();
        for level in p.levels() {
            for d in level.details() {
                assert!(d.data().iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(wavelet_pyramid(&GrayImage::filled(7, 16, 0), 3).is_err());
        assert!(wavelet_pyramid(&GrayImage::filled(16, 16, 0), 0).is_err());
    }
}
