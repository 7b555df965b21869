use super::{BinaryMask, GrayImage, Raster};
use crate::error::{Error, Result};

/// The six dataset variants: the original, three counter-clockwise
/// rotations and two mirrors.
///
/// `MirrorX` flips across the horizontal axis (rows reversed); `MirrorY`
/// flips across the vertical axis (columns reversed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    MirrorX,
    MirrorY,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::Rot90,
        Augmentation::Rot180,
        Augmentation::Rot270,
        Augmentation::MirrorX,
        Augmentation::MirrorY,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Augmentation::Identity => "orig",
            Augmentation::Rot90 => "rot90",
            Augmentation::Rot180 => "rot180",
            Augmentation::Rot270 => "rot270",
            Augmentation::MirrorX => "mirx",
            Augmentation::MirrorY => "miry",
        }
    }

    /// Source coordinate for output pixel `(row, col)` given the source
    /// dimensions. Output dimensions are swapped for quarter turns.
    fn source(self, row: usize, col: usize, w: usize, h: usize) -> (usize, usize) {
        match self {
            Augmentation::Identity => (row, col),
            // counter-clockwise: the top-right source corner lands top-left
            Augmentation::Rot90 => (col, w - 1 - row),
            Augmentation::Rot180 => (h - 1 - row, w - 1 - col),
            Augmentation::Rot270 => (h - 1 - col, row),
            Augmentation::MirrorX => (h - 1 - row, col),
            Augmentation::MirrorY => (row, w - 1 - col),
        }
    }

    pub fn apply<R: Raster>(self, img: &R) -> R {
        let (w, h) = (img.width(), img.height());
        let (ow, oh) = match self {
            Augmentation::Rot90 | Augmentation::Rot270 => (h, w),
            _ => (w, h),
        };
        let src = img.pixels();
        let mut data = Vec::with_capacity(ow * oh);
        for row in 0..oh {
            for col in 0..ow {
                let (sr, sc) = self.source(row, col, w, h);
                data.push(src[sr * w + sc]);
            }
        }
        R::from_pixels_unchecked(ow, oh, data)
    }

    /// Applies the transform to a channel-major stack of equally sized planes.
    pub fn apply_planes<T: Copy>(self, data: &[T], channels: usize, w: usize, h: usize) -> Vec<T> {
        let plane = w * h;
        assert_eq!(data.len(), channels * plane);
        let (ow, oh) = match self {
            Augmentation::Rot90 | Augmentation::Rot270 => (h, w),
            _ => (w, h),
        };
        let mut out = Vec::with_capacity(data.len());
        for ch in 0..channels {
            let src = &data[ch * plane..(ch + 1) * plane];
            for row in 0..oh {
                for col in 0..ow {
                    let (sr, sc) = self.source(row, col, w, h);
                    out.push(src[sr * w + sc]);
                }
            }
        }
        out
    }
}

/// Returns `[original, rot90, rot180, rot270, mirror-x, mirror-y]`, each
/// mask transformed exactly like its image.
pub fn augment_six(img: &GrayImage, mask: &BinaryMask) -> Result<Vec<(GrayImage, BinaryMask)>> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::invalid(format!(
            "image {}x{} and mask {}x{} differ",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    if img.width() != img.height() {
        return Err(Error::invalid("augmentation requires a square image"));
    }
    Ok(Augmentation::ALL
        .iter()
        .map(|a| (a.apply(img), a.apply(mask)))
        .collect())
}
