//! Box-prompted accessory masks: binarization, union, and morphological
//! refinement (one 3x3 erosion, then a 5x5 median).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, BoundingBox, Detection, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub binarize_threshold: f32,
    /// Candidates with a lower backend quality score are not accepted.
    pub min_quality: f32,
    /// Dilation applied to the final mask before inpainting; 0 disables it.
    pub dilation_radius: u32,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            min_quality: 0.5,
            dilation_radius: 0,
        }
    }
}

/// Per-pixel foreground scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub width: u32,
    pub height: u32,
    pub scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub mask: SoftMask,
    pub quality: f32,
}

/// Promptable segmenter: turns a box prompt into one or more scored masks.
pub trait SegmenterBackend {
    fn name(&self) -> String;

    fn segment(&mut self, image: &RasterImage, prompt: &BoundingBox, multi_mask: bool) -> Result<Vec<MaskCandidate>>;
}

pub fn binarize(soft: &SoftMask, threshold: f32) -> BinaryMask {
    let bits = soft.scores.iter().map(|&s| s >= threshold).collect();
    BinaryMask::from_bits(soft.width, soft.height, bits).expect("soft mask length matches its dims")
}

/// Pixel-wise OR; an empty list yields the all-background mask.
pub fn merge_masks(masks: &[BinaryMask], dims: (u32, u32)) -> Result<BinaryMask> {
    let mut out = BinaryMask::empty(dims.0, dims.1);
    for (i, m) in masks.iter().enumerate() {
        if m.dims() != dims {
            return Err(Error::Masking(format!(
                "mask {i} is {}x{}, expected {}x{}",
                m.width(),
                m.height(),
                dims.0,
                dims.1
            )));
        }
        let merged: Vec<bool> = out.bits().iter().zip(m.bits()).map(|(a, b)| *a || *b).collect();
        out = BinaryMask::from_bits(dims.0, dims.1, merged)?;
    }
    Ok(out)
}

/// Erosion with a full 3x3 element; pixels outside the image count as background.
pub fn erode3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let src = mask.bits();
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            horiz[y * w + x] = x > 0 && x + 1 < w && row[x - 1] && row[x] && row[x + 1];
        }
    }
    let mut out = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 0..w {
            out[y * w + x] = horiz[(y - 1) * w + x] && horiz[y * w + x] && horiz[(y + 1) * w + x];
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out).expect("dims preserved")
}

/// 5x5 binary median (majority of 25) with edge replication.
pub fn median5(mask: &BinaryMask) -> BinaryMask {
    const R: isize = 2;
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let src = mask.bits();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut c = 0u8;
            for dx in -R..=R {
                c += src[y * w + clamp(x as isize + dx, w)] as u8;
            }
            horiz[y * w + x] = c;
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut c = 0u8;
            for dy in -R..=R {
                c += horiz[clamp(y as isize + dy, h) * w + x];
            }
            out[y * w + x] = c >= 13;
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out).expect("dims preserved")
}

/// One 3x3 erosion followed by a 5x5 median filter.
pub fn refine_mask(mask: &BinaryMask) -> BinaryMask {
    median5(&erode3(mask))
}

/// Dilation with a (2r+1)x(2r+1) square, clipped at the borders.
pub fn dilate_mask(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = radius as usize;
    let src = mask.bits();

    // sliding-window counts along rows, then along columns
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut prefix = vec![0u32; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as u32;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            horiz[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    let mut prefix = vec![0u32; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz[y * w + x] as u32;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out).expect("dims preserved")
}

/// Converts filtered detections into one refined accessory mask.
///
/// Each box is segmented with multi-mask output; candidates meeting
/// `min_quality` are binarized and OR-ed together, and the union is refined
/// once. No detections, or an empty union, gives the empty mask.
pub fn build_accessory_mask(
    image: &RasterImage,
    detections: &[Detection],
    segmenter: &mut dyn SegmenterBackend,
    binarize_threshold: f32,
    min_quality: f32,
) -> Result<BinaryMask> {
    let dims = image.dims();
    let mut accepted = Vec::new();
    for d in detections {
        let candidates = segmenter
            .segment(image, &d.bbox, true)
            .map_err(|e| Error::Masking(format!("segmenter {} failed: {e}", segmenter.name())))?;
        for c in candidates.into_iter().filter(|c| c.quality >= min_quality) {
            if (c.mask.width, c.mask.height) != dims {
                return Err(Error::Masking(format!(
                    "segmenter {} returned a {}x{} mask for a {}x{} image",
                    segmenter.name(),
                    c.mask.width,
                    c.mask.height,
                    dims.0,
                    dims.1
                )));
            }
            accepted.push(binarize(&c.mask, binarize_threshold));
        }
    }
    let union = merge_masks(&accepted, dims)?;
    if union.is_empty() {
        return Ok(union);
    }
    Ok(refine_mask(&union))
}
