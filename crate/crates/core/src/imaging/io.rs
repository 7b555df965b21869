//! PNG ingestion and output. Masks are stored as 0/255 and read back with
//! values above 127 mapped to lesion.

use std::path::Path;

use super::{BinaryMask, GrayImage, RgbImage};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    GrayImage::new(w as usize, h as usize, img.into_raw())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&read_gray(path)?))
}

fn save(path: &Path, data: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    image::save_buffer_with_format(path, data, w as u32, h as u32, color, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    save(path, img.data(), img.width(), img.height(), image::ExtendedColorType::L8)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    save(path, img.data(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray(path, &mask.to_gray())
}

/// Gray image with the mask outline (lesion pixels with a background
/// 4-neighbour) painted red.
pub fn contour_overlay(img: &GrayImage, mask: &BinaryMask) -> Result<RgbImage> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::invalid("overlay image and mask sizes differ"));
    }
    let (w, h) = (mask.width(), mask.height());
    let on_edge = |r: usize, c: usize| {
        mask.get(r, c)
            && (r == 0
                || c == 0
                || r == h - 1
                || c == w - 1
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1))
    };
    Ok(RgbImage::from_fn(w, h, |r, c| {
        if on_edge(r, c) {
            [255, 0, 0]
        } else {
            let v = img.get(r, c);
            [v, v, v]
        }
    }))
}
