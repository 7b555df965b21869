//! Raster types and geometric preparation.
//!
//! All rasters are row-major. Geometry (borders, crops, rotations, mirrors)
//! is written once against the [`Raster`] trait and shared by grayscale
//! images, binary masks and floating-point planes.

mod augment;
pub mod io;

pub use augment::{augment_six, Augmentation};

use crate::error::{Error, Result};

/// Row-major single-plane raster. Implemented by every image-like type in
/// the crate so geometric operations can be shared.
pub trait Raster: Sized {
    type Pixel: Copy;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[Self::Pixel];
    /// Builds a raster without re-validating pixel values. Callers only pass
    /// pixels taken from an already valid raster of the same type.
    fn from_pixels_unchecked(width: usize, height: usize, data: Vec<Self::Pixel>) -> Self;

    fn at(&self, row: usize, col: usize) -> Self::Pixel {
        self.pixels()[row * self.width() + col]
    }
}

macro_rules! impl_raster {
    ($ty:ty, $px:ty) => {
        impl Raster for $ty {
            type Pixel = $px;
            fn width(&self) -> usize {
                self.width
            }
            fn height(&self) -> usize {
                self.height
            }
            fn pixels(&self) -> &[$px] {
                &self.data
            }
            fn from_pixels_unchecked(width: usize, height: usize, data: Vec<$px>) -> Self {
                debug_assert_eq!(data.len(), width * height);
                Self {
                    width,
                    height,
                    data,
                }
            }
        }
    };
}

fn check_dims(width: usize, height: usize, len: usize, per_pixel: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    if len != width * height * per_pixel {
        return Err(Error::invalid(format!(
            "expected {} samples for {width}x{height}x{per_pixel}, got {len}",
            width * height * per_pixel
        )));
    }
    Ok(())
}

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear resize applied per channel.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> RgbImage {
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let src: Vec<f64> = self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
                bilinear(&src, self.width, self.height, width, height)
            })
            .collect();
        let mut data = Vec::with_capacity(width * height * 3);
        for i in 0..width * height {
            for plane in &planes {
                data.push(round_u8(plane[i]));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }
}

/// 8-bit single-channel intensity image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl_raster!(GrayImage, u8);

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        let data = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn to_float(&self) -> FloatRaster {
        FloatRaster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Per-pixel lesion labels, 1 = lesion, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl_raster!(BinaryMask, u8);

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        let data = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c) as u8)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Binarizes an 8-bit image stored as 0/255 (values above 127 are lesion).
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| (v > 127) as u8).collect(),
        }
    }

    /// 0/255 encoding used on disk.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    /// Number of lesion pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        let data = nearest(&self.data, self.width, self.height, width, height);
        BinaryMask {
            width,
            height,
            data,
        }
    }
}

/// Floating-point plane used by the wavelet transform and feature stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl_raster!(FloatRaster, f64);

impl FloatRaster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> FloatRaster {
        FloatRaster {
            width,
            height,
            data: bilinear(&self.data, self.width, self.height, width, height),
        }
    }

    /// Affine rescale to [0,1]; a constant plane maps to all zeros.
    pub fn min_max_normalized(&self) -> FloatRaster {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        FloatRaster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Round half up, then clamp into the 8-bit range.
pub(crate) fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rec. 601 luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let weighted = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Bilinear resampling with pixel-centre alignment (source coordinate
/// `(x + 0.5) * in / out - 0.5`, clamped to the source extent).
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let data = bilinear(&src, img.width, img.height, width, height)
        .into_iter()
        .map(round_u8)
        .collect();
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

fn bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let cols: Vec<_> = (0..dw).map(|x| sample_axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (r0, r1, fy) = sample_axis(y, sh, dh);
        let row0 = &src[r0 * sw..(r0 + 1) * sw];
        let row1 = &src[r1 * sw..(r1 + 1) * sw];
        for &(c0, c1, fx) in &cols {
            let top = row0[c0] + (row0[c1] - row0[c0]) * fx;
            let bottom = row1[c0] + (row1[c1] - row1[c0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

fn nearest<T: Copy>(src: &[T], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<T> {
    let pick = |d: usize, s: usize, dl: usize| (((d as f64 + 0.5) * s as f64 / dl as f64) as usize).min(s - 1);
    let cols: Vec<usize> = (0..dw).map(|x| pick(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let r = pick(y, sh, dh);
        out.extend(cols.iter().map(|&c| src[r * sw + c]));
    }
    out
}

/// Mirror index into `0..len` without repeating the edge sample
/// (`-1 -> 1`, `len -> len - 2`).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Pads every side by `t` pixels, filling by mirror reflection of the
/// interior (edge row/column not repeated).
pub fn add_border<R: Raster>(img: &R, t: usize) -> Result<R> {
    let (w, h) = (img.width(), img.height());
    if t > w.min(h) {
        return Err(Error::invalid(format!(
            "border {t} exceeds the smaller image side ({})",
            w.min(h)
        )));
    }
    if t == 0 {
        return Ok(R::from_pixels_unchecked(w, h, img.pixels().to_vec()));
    }
    let (ow, oh) = (w + 2 * t, h + 2 * t);
    let cols: Vec<usize> = (0..ow).map(|c| reflect_index(c as isize - t as isize, w)).collect();
    let src = img.pixels();
    let mut data = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        let sr = reflect_index(r as isize - t as isize, h);
        let row = &src[sr * w..(sr + 1) * w];
        data.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(R::from_pixels_unchecked(ow, oh, data))
}

/// Removes `t` pixels from every side; the inverse of [`add_border`].
pub fn crop_border<R: Raster>(img: &R, t: usize) -> Result<R> {
    let (w, h) = (img.width(), img.height());
    if w <= 2 * t || h <= 2 * t {
        return Err(Error::invalid(format!("cannot crop {t} pixels from a {w}x{h} raster")));
    }
    let (ow, oh) = (w - 2 * t, h - 2 * t);
    let src = img.pixels();
    let mut data = Vec::with_capacity(ow * oh);
    for r in t..t + oh {
        data.extend_from_slice(&src[r * w + t..r * w + t + ow]);
    }
    Ok(R::from_pixels_unchecked(ow, oh, data))
}

/// Preparation stage for one image: resize, add the reflected border, then
/// convert to grayscale.
pub fn prepare_image(img: &RgbImage, size: usize, border: usize) -> Result<GrayImage> {
    if size == 0 {
        return Err(Error::invalid("prepared size must be positive"));
    }
    let resized = img.resize_bilinear(size, size);
    // Grayscale is per-pixel, so bordering the RGB image and then converting
    // is the same as converting first; the cheaper order is used.
    add_border(&to_grayscale(&resized), border)
}

/// Ground truth follows its image through preparation with nearest-neighbour
/// resizing and no border (targets are compared against the cropped output).
pub fn prepare_mask(mask: &BinaryMask, size: usize) -> BinaryMask {
    mask.resize_nearest(size, size)
}
