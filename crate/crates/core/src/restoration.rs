//! Masked restoration through an inpainting backend.
//!
//! Inputs are normalized to three channels and masks conformed to the image
//! size before the backend runs; afterwards every background pixel is copied
//! back from the input, so a backend can only ever change masked pixels.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, RasterImage};

pub trait InpainterBackend {
    fn name(&self) -> String;

    /// Receives a 3-channel image and a mask of the same size.
    fn inpaint(&mut self, image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage>;
}

/// Grayscale is replicated to three channels, alpha is dropped, RGB passes through.
pub fn normalize_input(image: &RasterImage) -> Result<RasterImage> {
    let (w, h) = image.dims();
    match image.channels() {
        3 => Ok(image.clone()),
        1 => RasterImage::new(w, h, 3, image.data().iter().flat_map(|&v| [v, v, v]).collect()),
        4 => RasterImage::new(
            w,
            h,
            3,
            image.data().chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ),
        c => Err(Error::Restoration(format!("unsupported channel count {c}"))),
    }
}

/// Nearest-neighbour resize to `target` (identity when sizes already match).
pub fn conform_mask(mask: &BinaryMask, target: (u32, u32)) -> BinaryMask {
    if mask.dims() == target {
        return mask.clone();
    }
    let (sw, sh) = mask.dims();
    let (tw, th) = target;
    let src_index = |i: u32, s: u32, t: u32| -> u32 {
        // centre of target pixel i, mapped back into the source grid
        let v = ((u64::from(i) * 2 + 1) * u64::from(s)) / (2 * u64::from(t));
        (v as u32).min(s - 1)
    };
    BinaryMask::from_fn(tw, th, |x, y| mask.get(src_index(x, sw, tw), src_index(y, sh, th)))
}

/// Inpaints the masked region of `image`.
///
/// An empty mask returns the normalized input untouched.
pub fn restore(image: &RasterImage, mask: &BinaryMask, backend: &mut dyn InpainterBackend) -> Result<RasterImage> {
    let input = normalize_input(image)?;
    let mask = conform_mask(mask, input.dims());
    if mask.is_empty() {
        return Ok(input);
    }
    let painted = backend
        .inpaint(&input, &mask)
        .map_err(|e| Error::Restoration(format!("inpainter {} failed: {e}", backend.name())))?;
    if painted.dims() != input.dims() || painted.channels() != 3 {
        return Err(Error::Restoration(format!(
            "inpainter {} returned {}x{}x{}, expected {}x{}x3",
            backend.name(),
            painted.width(),
            painted.height(),
            painted.channels(),
            input.width(),
            input.height()
        )));
    }
    let mut out = input.into_data();
    for (i, (px, fg)) in out.chunks_exact_mut(3).zip(mask.bits()).enumerate() {
        if *fg {
            px.copy_from_slice(&painted.data()[i * 3..i * 3 + 3]);
        }
    }
    RasterImage::new(mask.width(), mask.height(), 3, out)
}

/// Deterministic diffusion-style fill: masked pixels start at the mean of the
/// known pixels and are relaxed toward the average of their 4-neighbours
/// (Gauss-Seidel, row-major) until the largest update is below `tolerance`
/// or `max_sweeps` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryAverageInpainter {
    pub max_sweeps: usize,
    pub tolerance: f32,
}

impl Default for BoundaryAverageInpainter {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            tolerance: 0.5,
        }
    }
}

impl BoundaryAverageInpainter {
    /// Fill value used where the image has no unmasked pixel at all.
    pub const EMPTY_CONTEXT_FILL: f32 = 128.0;
}

impl InpainterBackend for BoundaryAverageInpainter {
    fn name(&self) -> String {
        format!("boundary_average(sweeps={},tol={})", self.max_sweeps, self.tolerance)
    }

    fn inpaint(&mut self, image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let ch = image.channels() as usize;
        let bits = mask.bits();
        let mut buf: Vec<f32> = image.data().iter().map(|&v| f32::from(v)).collect();

        for c in 0..ch {
            let (sum, n) = (0..w * h)
                .filter(|&i| !bits[i])
                .fold((0.0f64, 0usize), |(s, n), i| (s + f64::from(buf[i * ch + c]), n + 1));
            let init = if n == 0 {
                Self::EMPTY_CONTEXT_FILL
            } else {
                (sum / n as f64) as f32
            };
            for i in (0..w * h).filter(|&i| bits[i]) {
                buf[i * ch + c] = init;
            }
        }

        let masked: Vec<usize> = (0..w * h).filter(|&i| bits[i]).collect();
        for _ in 0..self.max_sweeps {
            let mut max_delta = 0.0f32;
            for &i in &masked {
                let (x, y) = (i % w, i / w);
                let mut nbrs = [usize::MAX; 4];
                let mut k = 0;
                if x > 0 {
                    nbrs[k] = i - 1;
                    k += 1;
                }
                if x + 1 < w {
                    nbrs[k] = i + 1;
                    k += 1;
                }
                if y > 0 {
                    nbrs[k] = i - w;
                    k += 1;
                }
                if y + 1 < h {
                    nbrs[k] = i + w;
                    k += 1;
                }
                if k == 0 {
                    continue;
                }
                for c in 0..ch {
                    let avg = nbrs[..k].iter().map(|&j| buf[j * ch + c]).sum::<f32>() / k as f32;
                    max_delta = max_delta.max((avg - buf[i * ch + c]).abs());
                    buf[i * ch + c] = avg;
                }
            }
            if max_delta < self.tolerance {
                break;
            }
        }
        let data = buf.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        RasterImage::new(image.width(), image.height(), image.channels(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let gray = RasterImage::filled(3, 2, 1, 77).unwrap();
        let n = normalize_input(&gray).unwrap();
        assert_eq!(n.channels(), 3);
        assert!(n.data().iter().all(|&v| v == 77));

        let rgba = RasterImage::from_fn(2, 2, 4, |x, y, c| (x * 50 + y * 20 + c as u32 * 3) as u8).unwrap();
        let n = normalize_input(&rgba).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(n.pixel(x, y), &rgba.pixel(x, y)[..3]);
            }
        }
        let rgb = RasterImage::from_fn(4, 3, 3, |x, y, c| (x + y + c as u32) as u8).unwrap();
        assert_eq!(normalize_input(&rgb).unwrap(), rgb);
    }

    #[test]
    fn conform_examples() {
        let m = BinaryMask::from_fn(8, 6, |x, y| x > 2 && y < 3);
        assert_eq!(conform_mask(&m, (8, 6)), m);
        let rect = BinaryMask::from_fn(20, 20, |x, y| (4..12).contains(&x) && (6..10).contains(&y));
        let half = conform_mask(&rect, (10, 10));
        assert_eq!(half, BinaryMask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (3..5).contains(&y)));
        assert!(conform_mask(&BinaryMask::empty(5, 5), (50, 40)).is_empty());
    }

    struct Paint(u8);

    impl InpainterBackend for Paint {
        fn name(&self) -> String {
            "paint".into()
        }
        fn inpaint(&mut self, image: &RasterImage, _: &BinaryMask) -> Result<RasterImage> {
            RasterImage::filled(image.width(), image.height(), 3, self.0)
        }
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = RasterImage::from_fn(6, 5, 1, |x, y, _| (x * 9 + y) as u8).unwrap();
        let out = restore(&img, &BinaryMask::empty(6, 5), &mut Paint(3)).unwrap();
        assert_eq!(out, normalize_input(&img).unwrap());
    }

    #[test]
    fn composite_keeps_background() {
        let img = RasterImage::from_fn(10, 10, 3, |x, y, c| (x * 20 + y + c as u32) as u8).unwrap();
        let m = BinaryMask::from_fn(10, 10, |x, y| (3..6).contains(&x) && (2..8).contains(&y));
        let out = restore(&img, &m, &mut Paint(9)).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                if m.get(x, y) {
                    assert_eq!(out.pixel(x, y), &[9, 9, 9]);
                } else {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn mask_is_conformed_to_image() {
        let img = RasterImage::filled(10, 10, 3, 50).unwrap();
        let small = BinaryMask::from_fn(5, 5, |x, y| x == 0 && y == 0);
        let out = restore(&img, &small, &mut Paint(1)).unwrap();
        assert_eq!(out.pixel(1, 1), &[1, 1, 1]);
        assert_eq!(out.pixel(2, 2), &[50, 50, 50]);
    }

    #[test]
    fn full_mask_mock_fill_is_constant() {
        let img = RasterImage::from_fn(8, 8, 3, |x, y, _| (x * y) as u8).unwrap();
        let out = restore(&img, &BinaryMask::full(8, 8), &mut BoundaryAverageInpainter::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn mock_fill_interpolates_smooth_context() {
        // constant surround: the fill must converge to that constant
        let img = RasterImage::from_fn(20, 20, 3, |x, y, _| {
            if (8..12).contains(&x) && (8..12).contains(&y) {
                255
            } else {
                60
            }
        })
        .unwrap();
        let m = BinaryMask::from_fn(20, 20, |x, y| (8..12).contains(&x) && (8..12).contains(&y));
        let out = restore(&img, &m, &mut BoundaryAverageInpainter::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 60));
    }
}
