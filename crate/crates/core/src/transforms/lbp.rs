use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Per-pixel 8-bit local binary pattern codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LbpMap {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl LbpMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.width + col]
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.codes.clone()).expect("dimensions come from a valid image")
    }
}

// Ring offsets clockwise from the top-left neighbour; the first entry is
// the most significant bit.
const RING: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

/// Basic radius-1 LBP: a neighbour at least as bright as the centre sets its
/// bit. Pixels on the 1-pixel image frame get code 0.
pub fn lbp_map(img: &GrayImage) -> Result<LbpMap> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!("LBP needs at least a 3x3 image, got {w}x{h}")));
    }
    let d = img.data();
    let mut codes = vec![0u8; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let centre = d[r * w + c];
            let mut code = 0u8;
            for &(dr, dc) in &RING {
                let n = d[(r as isize + dr) as usize * w + (c as isize + dc) as usize];
                code = (code << 1) | (n >= centre) as u8;
            }
            codes[r * w + c] = code;
        }
    }
    Ok(LbpMap {
        width: w,
        height: h,
        codes,
    })
}
