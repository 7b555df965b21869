//! Thresholding of the lesion probability map and selection of the single
//! lesion object: among the three largest connected components, the one
//! whose centroid lies farthest from the image edge wins.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, FloatRaster};

/// Pixel is lesion iff its probability is strictly greater than `tau`.
pub fn threshold_prob(prob: &FloatRaster, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} is outside (0, 1)")));
    }
    let data = prob.data().iter().map(|&p| (p > tau) as u8).collect();
    BinaryMask::new(prob.width(), prob.height(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub label: u32,
    pub area: usize,
    /// Mean (row, col) of the component's pixels.
    pub centroid: (f64, f64),
}

/// 8-connected component labelling. Labels run `1..=K` in raster order of
/// each component's first pixel; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledComponents {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl LabeledComponents {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        let data = self.labels.iter().map(|&l| (l == label && label != 0) as u8).collect();
        BinaryMask::new(self.width, self.height, data).expect("dimensions from a valid mask")
    }
}

pub fn connected_components(mask: &BinaryMask) -> LabeledComponents {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let (mut area, mut sr, mut sc) = (0usize, 0.0f64, 0.0f64);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            area += 1;
            sr += r as f64;
            sc += c as f64;
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = nr * w + nc;
                    if mask.data()[j] != 0 && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        components.push(Component {
            label,
            area,
            centroid: (sr / area as f64, sc / area as f64),
        });
    }
    LabeledComponents {
        width: w,
        height: h,
        labels,
        components,
    }
}

/// Distance from a point to the nearest image edge.
pub fn edge_distance(centroid: (f64, f64), width: usize, height: usize) -> f64 {
    let (r, c) = centroid;
    r.min(c).min(height as f64 - 1.0 - r).min(width as f64 - 1.0 - c)
}

/// Picks the lesion among the three largest components (fewer if fewer
/// exist) by maximal centroid-to-edge distance. Ties in area or distance go
/// to the smaller label. No components gives an empty mask.
pub fn select_lesion(comps: &LabeledComponents) -> BinaryMask {
    let mut ranked: Vec<&Component> = comps.components.iter().collect();
    ranked.sort_by(|a, b| b.area.cmp(&a.area).then(a.label.cmp(&b.label)));
    ranked.truncate(3);
    let mut best: Option<(&Component, f64)> = None;
    for c in ranked {
        let d = edge_distance(c.centroid, comps.width, comps.height);
        let better = match best {
            None => true,
            Some((b, bd)) => d > bd || (d == bd && c.label < b.label),
        };
        if better {
            best = Some((c, d));
        }
    }
    match best {
        Some((c, _)) => comps.mask_of(c.label),
        None => BinaryMask::zeros(comps.width, comps.height),
    }
}

/// Threshold, then (optionally) keep only the selected lesion object.
pub fn postprocess(prob: &FloatRaster, tau: f64, select: bool) -> Result<BinaryMask> {
    let mask = threshold_prob(prob, tau)?;
    Ok(if select {
        select_lesion(&connected_components(&mask))
    } else {
        mask
    })
}
