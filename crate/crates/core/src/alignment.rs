//! Geometric normalization of ear images.
//!
//! The ear's vertical axis is estimated from straight segments on the mask
//! boundary, the image is rotated so the axis is upright, cropped to the mask
//! and resized to a fixed square.
//!
//! Angles are in degrees, measured counterclockwise (as displayed, with the y
//! axis pointing down) from the image's vertical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::restoration::{conform_mask, normalize_input};
use crate::types::{BinaryMask, BoundingBox, RasterImage, ALIGNED_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadFill {
    #[default]
    Black,
    Replicate,
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    /// Number of longest boundary segments used for the axis.
    pub k: usize,
    pub pad_fill: PadFill,
    pub out_size: u32,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            k: 5,
            pad_fill: PadFill::Black,
            out_size: ALIGNED_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisEstimate {
    /// In (-90, 90].
    pub angle: f64,
    pub support: usize,
    pub confidence: f64,
}

/// A straight run of boundary pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub length: f64,
    /// Orientation in (-90, 90], same convention as [`AxisEstimate::angle`].
    pub angle: f64,
}

/// Tuning for the boundary line extractor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    /// Number of sampled outward normal directions over the full circle.
    pub directions: usize,
    /// Depth of the band below a supporting line, as a fraction of the
    /// mask's larger extent (never below half a pixel).
    pub band_fraction: f64,
    /// Largest gap bridged inside one segment, pixels.
    pub max_gap: f64,
    /// Minimum segment length as a fraction of the mask's larger extent.
    pub min_length_fraction: f64,
    /// Two segments need normals at least this far apart, degrees.
    pub min_separation: f64,
    /// Directions whose run is at least this fraction of the peak run
    /// contribute to the segment's orientation.
    pub peak_fraction: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            directions: 720,
            band_fraction: 0.04,
            max_gap: 2.5,
            min_length_fraction: 0.5,
            min_separation: 10.0,
            peak_fraction: 0.8,
        }
    }
}

/// Sub-pixel boundary of the mask: the 0.5 level crossings of the mask
/// blurred with a small Gaussian, sampled along pixel rows and columns.
/// Off-image pixels count as background, so the contour always closes.
pub fn edge_points(mask: &BinaryMask) -> Vec<(f64, f64)> {
    const SIGMA: f64 = 1.0;
    const RADIUS: i64 = 3;
    let (w, h) = (i64::from(mask.width()), i64::from(mask.height()));
    // padded grid with a border of RADIUS + 1 background pixels
    let pad = RADIUS + 1;
    let (pw, ph) = ((w + 2 * pad) as usize, (h + 2 * pad) as usize);
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-RADIUS..=RADIUS)
            .map(|d| (-(d * d) as f64 / (2.0 * SIGMA * SIGMA)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.into_iter().map(|v| v / sum).collect()
    };
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x as u32, y as u32) {
                grid[(y + pad) as usize * pw + (x + pad) as usize] = 1.0;
            }
        }
    }
    let mut tmp = vec![0.0f64; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let xx = x as i64 + i as i64 - RADIUS;
                if (0..pw as i64).contains(&xx) {
                    acc += kv * grid[y * pw + xx as usize];
                }
            }
            tmp[y * pw + x] = acc;
        }
    }
    for y in 0..ph {
        for x in 0..pw {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = y as i64 + i as i64 - RADIUS;
                if (0..ph as i64).contains(&yy) {
                    acc += kv * tmp[yy as usize * pw + x];
                }
            }
            grid[y * pw + x] = acc;
        }
    }

    let mut out = Vec::new();
    let off = pad as f64;
    for y in 0..ph {
        for x in 0..pw {
            let a = grid[y * pw + x];
            if x + 1 < pw {
                let b = grid[y * pw + x + 1];
                if (a - 0.5) * (b - 0.5) < 0.0 {
                    let t = (0.5 - a) / (b - a);
                    out.push((x as f64 + t - off, y as f64 - off));
                }
            }
            if y + 1 < ph {
                let b = grid[(y + 1) * pw + x];
                if (a - 0.5) * (b - 0.5) < 0.0 {
                    let t = (0.5 - a) / (b - a);
                    out.push((x as f64 - off, y as f64 + t - off));
                }
            }
        }
    }
    out
}

/// Maps an image-space direction vector to a doubled-angle unit vector.
fn doubled(vx: f64, vy: f64) -> (f64, f64) {
    // counterclockwise-from-up angle of (vx, vy) in y-down coordinates
    let theta = (-vx).atan2(-vy);
    ((2.0 * theta).cos(), (2.0 * theta).sin())
}

fn undouble(c: f64, s: f64) -> f64 {
    let a = s.atan2(c).to_degrees() / 2.0;
    normalize_angle(a)
}

/// Wraps an orientation into (-90, 90].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % 180.0;
    if a <= -90.0 {
        a += 180.0;
    } else if a > 90.0 {
        a -= 180.0;
    }
    a
}

/// Principal direction of a point set as a unit vector.
fn principal_direction(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let alpha = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (alpha.cos(), alpha.sin())
}

/// Extracts straight boundary segments with a supporting-line transform.
///
/// For every sampled outward normal, the edge points lying within a thin band
/// of the mask's extremal line in that direction are collected and their
/// longest gap-free run measured. Local maxima of that run length over the
/// direction are the segments, so straight or flat stretches of the outline
/// produce them while uniformly curved outlines (a disk) do not.
pub fn extract_segments(mask: &BinaryMask, params: &LineParams) -> Vec<LineSegment> {
    let Some((x0, y0, x1, y1)) = mask.bounds() else {
        return Vec::new();
    };
    let extent = f64::from((x1 - x0).max(y1 - y0));
    let min_len = params.min_length_fraction * extent;
    let band = (params.band_fraction * extent).max(0.5);
    let points = edge_points(mask);
    let n = params.directions.max(4);
    if points.len() < 2 {
        return Vec::new();
    }

    let runs: Vec<(f64, Vec<usize>)> = (0..n)
        .map(|j| {
            let psi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let (c, s) = (psi.cos(), psi.sin());
            let proj: Vec<f64> = points.iter().map(|p| p.0 * c + p.1 * s).collect();
            let top = proj.iter().copied().fold(f64::MIN, f64::max);
            let mut inband: Vec<(f64, usize)> = (0..points.len())
                .filter(|&i| top - proj[i] <= band)
                .map(|i| (-points[i].0 * s + points[i].1 * c, i))
                .collect();
            inband.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            longest_run(&inband, params.max_gap)
        })
        .collect();

    let window = ((params.min_separation / 360.0 * n as f64).round() as usize).max(1);
    let dist = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d)
    };
    let mut order: Vec<usize> = (0..n).filter(|&j| runs[j].0 >= min_len).collect();
    order.sort_by(|&a, &b| runs[b].0.total_cmp(&runs[a].0).then(a.cmp(&b)));

    let mut taken: Vec<usize> = Vec::new();
    let mut segments = Vec::new();
    for j in order {
        if taken.iter().any(|&t| dist(t, j) <= window) {
            continue;
        }
        // shoulders of a wider peak are not segments of their own
        if (1..=window).any(|d| runs[(j + d) % n].0 > runs[j].0 || runs[(j + n - d) % n].0 > runs[j].0) {
            continue;
        }
        // run length is symmetric about the normal of a flat stretch, so its
        // weighted centroid over the peak is a stable estimate of that normal
        let len = runs[j].0;
        let floor = params.peak_fraction * len;
        let (mut cx, mut cy) = (0.0, 0.0);
        for step in 0..2 {
            for d in 0..=window {
                if step == 1 && d == 0 {
                    continue;
                }
                let k = if step == 0 { (j + d) % n } else { (j + n - d) % n };
                let wgt = runs[k].0 - floor;
                if wgt <= 0.0 {
                    break;
                }
                let psi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                cx += wgt * psi.cos();
                cy += wgt * psi.sin();
            }
        }
        let psi = cy.atan2(cx);
        let (dc, ds) = doubled(-psi.sin(), psi.cos());
        taken.push(j);
        segments.push(LineSegment {
            length: len,
            angle: undouble(dc, ds),
        });
    }
    segments.sort_by(|a, b| b.length.total_cmp(&a.length));
    segments
}

/// Longest gap-free run of points already sorted by position along a line,
/// as (length, point indices).
fn longest_run(sorted: &[(f64, usize)], max_gap: f64) -> (f64, Vec<usize>) {
    if sorted.len() < 2 {
        return (0.0, Vec::new());
    }
    let mut best = (0usize, 0usize);
    let mut start = 0;
    for j in 1..=sorted.len() {
        if j == sorted.len() || sorted[j].0 - sorted[j - 1].0 > max_gap {
            if sorted[j - 1].0 - sorted[start].0 > sorted[best.1].0 - sorted[best.0].0 {
                best = (start, j - 1);
            }
            start = j;
        }
    }
    let (a, b) = best;
    (sorted[b].0 - sorted[a].0, sorted[a..=b].iter().map(|&(_, i)| i).collect())
}

/// Major-axis orientation from second-order central moments.
pub fn moment_axis(mask: &BinaryMask) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .map(|(x, y)| (f64::from(x), f64::from(y)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let (vx, vy) = principal_direction(&pts);
    let (c, s) = doubled(vx, vy);
    Some(undouble(c, s))
}

/// Length-weighted mean orientation of the `k` longest boundary segments.
///
/// Falls back to the moment axis with zero confidence when no segment qualifies.
pub fn estimate_vertical_axis(ear_mask: &BinaryMask, k: usize) -> Result<AxisEstimate> {
    estimate_vertical_axis_with(ear_mask, k, &LineParams::default())
}

pub fn estimate_vertical_axis_with(ear_mask: &BinaryMask, k: usize, params: &LineParams) -> Result<AxisEstimate> {
    if k == 0 {
        return Err(Error::Alignment("k must be at least 1".into()));
    }
    if ear_mask.is_empty() {
        return Err(Error::Alignment("no ear region".into()));
    }
    let segments = extract_segments(ear_mask, params);
    if segments.is_empty() {
        let angle = moment_axis(ear_mask).expect("mask is non-empty");
        return Ok(AxisEstimate {
            angle,
            support: 0,
            confidence: 0.0,
        });
    }
    let used = &segments[..segments.len().min(k)];
    let (mut c, mut s) = (0.0, 0.0);
    for seg in used {
        let a = seg.angle.to_radians() * 2.0;
        c += seg.length * a.cos();
        s += seg.length * a.sin();
    }
    Ok(AxisEstimate {
        angle: undouble(c, s),
        support: used.len(),
        confidence: used.len() as f64 / k as f64,
    })
}

/// Size of the canvas holding a `w x h` image rotated by `degrees`.
pub fn rotated_canvas(w: u32, h: u32, degrees: f64) -> (u32, u32) {
    let (s, c) = degrees.to_radians().sin_cos();
    let fit = |v: f64| ((v - 1e-6).ceil().max(1.0)) as u32;
    let (w, h) = (f64::from(w), f64::from(h));
    (fit(w * c.abs() + h * s.abs()), fit(w * s.abs() + h * c.abs()))
}

/// Rotation about the image centre; `ccw_degrees` turns content
/// counterclockwise as displayed.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rotation {
    cos: f64,
    sin: f64,
    src_center: (f64, f64),
    dst_center: (f64, f64),
    dst: (u32, u32),
}

impl Rotation {
    fn new(src: (u32, u32), ccw_degrees: f64) -> Self {
        let dst = rotated_canvas(src.0, src.1, ccw_degrees);
        let (sin, cos) = ccw_degrees.to_radians().sin_cos();
        Self {
            cos,
            sin,
            src_center: ((f64::from(src.0) - 1.0) / 2.0, (f64::from(src.1) - 1.0) / 2.0),
            dst_center: ((f64::from(dst.0) - 1.0) / 2.0, (f64::from(dst.1) - 1.0) / 2.0),
            dst,
        }
    }

    /// Source position sampled by destination pixel `(x, y)`.
    fn source_of(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.dst_center.0;
        let dy = y - self.dst_center.1;
        let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
        (
            snap(self.src_center.0 + dx * self.cos - dy * self.sin),
            snap(self.src_center.1 + dx * self.sin + dy * self.cos),
        )
    }

    /// Destination position of source pixel `(x, y)`.
    fn dest_of(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.src_center.0;
        let dy = y - self.src_center.1;
        (
            self.dst_center.0 + dx * self.cos + dy * self.sin,
            self.dst_center.1 - dx * self.sin + dy * self.cos,
        )
    }
}

fn reflect101(i: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - m
    }
}

/// Bilinear sample of channel `c` at a fractional position.
fn sample_bilinear(img: &RasterImage, x: f64, y: f64, c: u8, pad: PadFill) -> f64 {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |xi: i64, yi: i64| -> f64 {
        let (xi, yi) = match pad {
            PadFill::Black => {
                if xi < 0 || yi < 0 || xi >= w || yi >= h {
                    return 0.0;
                }
                (xi, yi)
            }
            PadFill::Replicate => (xi.clamp(0, w - 1), yi.clamp(0, h - 1)),
            PadFill::Reflect => (reflect101(xi, w), reflect101(yi, h)),
        };
        f64::from(img.get(xi as u32, yi as u32, c))
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let mut v = 0.0;
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let wgt = wx * wy;
            if wgt != 0.0 {
                v += wgt * fetch(xi + dx, yi + dy);
            }
        }
    }
    v
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Rotates content counterclockwise by `ccw_degrees` onto a canvas that holds
/// all of it, with bilinear resampling.
pub fn rotate_image(image: &RasterImage, ccw_degrees: f64, pad: PadFill) -> RasterImage {
    if ccw_degrees == 0.0 {
        return image.clone();
    }
    let rot = Rotation::new(image.dims(), ccw_degrees);
    let (w, h) = rot.dst;
    let (w_in, h_in) = (f64::from(image.width()), f64::from(image.height()));
    RasterImage::from_fn(w, h, image.channels(), |x, y, c| {
        let (sx, sy) = rot.source_of(f64::from(x), f64::from(y));
        if pad == PadFill::Black && (sx <= -1.0 || sy <= -1.0 || sx >= w_in || sy >= h_in) {
            return 0;
        }
        to_u8(sample_bilinear(image, sx, sy, c, pad))
    })
    .expect("dims are valid")
}

/// Rotates by `-angle`, making an axis at `angle` upright.
pub fn rotate_upright(image: &RasterImage, angle: f64, pad: PadFill) -> RasterImage {
    rotate_image(image, -angle, pad)
}

/// Nearest-neighbour mask rotation; off-image samples are background.
pub fn rotate_mask(mask: &BinaryMask, ccw_degrees: f64) -> BinaryMask {
    if ccw_degrees == 0.0 {
        return mask.clone();
    }
    let rot = Rotation::new(mask.dims(), ccw_degrees);
    let (w, h) = rot.dst;
    BinaryMask::from_fn(w, h, |x, y| {
        let (sx, sy) = rot.source_of(f64::from(x), f64::from(y));
        let (xi, yi) = (sx.round(), sy.round());
        xi >= 0.0
            && yi >= 0.0
            && xi < f64::from(mask.width())
            && yi < f64::from(mask.height())
            && mask.get(xi as u32, yi as u32)
    })
}

/// Bilinear resize with pixel-centre alignment and edge replication.
pub fn resize_bilinear(image: &RasterImage, out_w: u32, out_h: u32) -> RasterImage {
    if image.dims() == (out_w, out_h) {
        return image.clone();
    }
    let sx = f64::from(image.width()) / f64::from(out_w);
    let sy = f64::from(image.height()) / f64::from(out_h);
    let max_x = f64::from(image.width() - 1);
    let max_y = f64::from(image.height() - 1);
    RasterImage::from_fn(out_w, out_h, image.channels(), |x, y, c| {
        let fx = ((f64::from(x) + 0.5) * sx - 0.5).clamp(0.0, max_x);
        let fy = ((f64::from(y) + 0.5) * sy - 0.5).clamp(0.0, max_y);
        to_u8(sample_bilinear(image, fx, fy, c, PadFill::Replicate))
    })
    .expect("dims are valid")
}

fn crop(image: &RasterImage, x0: u32, y0: u32, x1: u32, y1: u32) -> RasterImage {
    RasterImage::from_fn(x1 - x0, y1 - y0, image.channels(), |x, y, c| image.get(x0 + x, y0 + y, c))
        .expect("crop inside image")
}

/// Crops to the mask's tight bounding box, then resizes to `out_size`.
pub fn crop_and_resize(image: &RasterImage, ear_mask: &BinaryMask, out_size: (u32, u32)) -> Result<RasterImage> {
    crop_and_resize_with_box(image, ear_mask, out_size).map(|(img, _)| img)
}

fn crop_and_resize_with_box(
    image: &RasterImage,
    ear_mask: &BinaryMask,
    out_size: (u32, u32),
) -> Result<(RasterImage, [u32; 4])> {
    if ear_mask.dims() != image.dims() {
        return Err(Error::Alignment(format!(
            "mask {}x{} does not match image {}x{}",
            ear_mask.width(),
            ear_mask.height(),
            image.width(),
            image.height()
        )));
    }
    if out_size.0 == 0 || out_size.1 == 0 {
        return Err(Error::Alignment("output size must be positive".into()));
    }
    let (x0, y0, x1, y1) = ear_mask
        .bounds()
        .ok_or_else(|| Error::Alignment("no ear region".into()))?;
    let cropped = crop(image, x0, y0, x1, y1);
    Ok((resize_bilinear(&cropped, out_size.0, out_size.1), [x0, y0, x1, y1]))
}

/// Sidecar written next to each aligned image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSidecar {
    pub angle: f64,
    pub support: usize,
    pub confidence: f64,
    /// Crop rectangle on the rotated canvas, `[x0, y0, x1, y1]`, max exclusive.
    pub crop_box: [u32; 4],
    pub source_dims: [u32; 2],
    pub out_size: [u32; 2],
}

impl AlignmentSidecar {
    fn rotation(&self) -> Rotation {
        Rotation::new((self.source_dims[0], self.source_dims[1]), -self.angle)
    }

    /// Maps a source-image point (pixel-index coordinates) into the aligned image.
    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (rx, ry) = self.rotation().dest_of(x, y);
        let [cx0, cy0, cx1, cy1] = self.crop_box;
        let sx = f64::from(cx1 - cx0) / f64::from(self.out_size[0]);
        let sy = f64::from(cy1 - cy0) / f64::from(self.out_size[1]);
        ((rx - f64::from(cx0) + 0.5) / sx - 0.5, (ry - f64::from(cy0) + 0.5) / sy - 0.5)
    }

    /// Maps a source box into the aligned image as the bounding box of its
    /// transformed corners, clamped to the output.
    pub fn map_box(&self, b: &BoundingBox) -> Option<BoundingBox> {
        let corners = [
            (b.x_min, b.y_min),
            (b.x_max, b.y_min),
            (b.x_min, b.y_max),
            (b.x_max, b.y_max),
        ];
        let mapped: Vec<(f64, f64)> = corners
            .iter()
            // box edges sit half a pixel outside the centres they enclose
            .map(|&(x, y)| self.map_point(f64::from(x) - 0.5, f64::from(y) - 0.5))
            .map(|(x, y)| (x + 0.5, y + 0.5))
            .collect();
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
            mapped.iter().map(sel).fold(init, f)
        };
        BoundingBox {
            x_min: fold(f64::min, f64::MAX, |p| p.0) as f32,
            y_min: fold(f64::min, f64::MAX, |p| p.1) as f32,
            x_max: fold(f64::max, f64::MIN, |p| p.0) as f32,
            y_max: fold(f64::max, f64::MIN, |p| p.1) as f32,
        }
        .clamp_to(self.out_size[0], self.out_size[1])
    }

    /// Warps a source-aligned mask the same way as the image (nearest neighbour).
    pub fn map_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let rotated = rotate_mask(mask, -self.angle);
        let [x0, y0, x1, y1] = self.crop_box;
        let cropped = BinaryMask::from_fn(x1 - x0, y1 - y0, |x, y| rotated.get(x0 + x, y0 + y));
        conform_mask(&cropped, (self.out_size[0], self.out_size[1]))
    }
}

#[derive(Debug, Clone)]
pub struct AlignedImage {
    pub image: RasterImage,
    pub sidecar: AlignmentSidecar,
}

/// Estimates the axis, rotates upright, crops to the ear and resizes.
/// The result always has three channels.
pub fn align_image(image: &RasterImage, ear_mask: &BinaryMask, cfg: &AlignmentConfig) -> Result<AlignedImage> {
    if ear_mask.dims() != image.dims() {
        return Err(Error::Alignment(format!(
            "ear mask {}x{} does not match image {}x{}",
            ear_mask.width(),
            ear_mask.height(),
            image.width(),
            image.height()
        )));
    }
    let axis = estimate_vertical_axis(ear_mask, cfg.k)?;
    let rgb = normalize_input(image).map_err(|e| Error::Alignment(e.to_string()))?;
    let rotated = rotate_upright(&rgb, axis.angle, cfg.pad_fill);
    let rotated_mask = rotate_mask(ear_mask, -axis.angle);
    let (out, crop_box) = crop_and_resize_with_box(&rotated, &rotated_mask, (cfg.out_size, cfg.out_size))?;
    Ok(AlignedImage {
        image: out,
        sidecar: AlignmentSidecar {
            angle: axis.angle,
            support: axis.support,
            confidence: axis.confidence,
            crop_box,
            source_dims: [image.width(), image.height()],
            out_size: [cfg.out_size, cfg.out_size],
        },
    })
}

/// Filled ellipse with semi-axes `(semi_w, semi_h)` rotated counterclockwise
/// by `ccw_degrees` about `center`.
pub fn ellipse_mask(w: u32, h: u32, center: (f64, f64), semi_w: f64, semi_h: f64, ccw_degrees: f64) -> BinaryMask {
    let (s, c) = ccw_degrees.to_radians().sin_cos();
    BinaryMask::from_fn(w, h, |x, y| {
        let dx = f64::from(x) - center.0;
        let dy = f64::from(y) - center.1;
        let u = dx * c - dy * s;
        let v = dx * s + dy * c;
        (u / semi_w).powi(2) + (v / semi_h).powi(2) <= 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle_diff(a: f64, b: f64) -> f64 {
        normalize_angle(a - b).abs()
    }

    #[test]
    fn upright_rectangle_is_zero() {
        let m = BinaryMask::from_fn(60, 80, |x, y| (20..40).contains(&x) && (10..70).contains(&y));
        let est = estimate_vertical_axis(&m, 5).unwrap();
        assert!(est.angle.abs() < 1e-6, "{est:?}");
        assert!(est.support >= 2 && est.support <= 5);
        assert!((est.confidence - est.support as f64 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_ellipse_recovers_angle() {
        for theta in [-30.0, -15.0, 15.0, 30.0] {
            let m = ellipse_mask(120, 120, (60.0, 60.0), 15.0, 45.0, theta);
            let est = estimate_vertical_axis(&m, 5).unwrap();
            assert!(angle_diff(est.angle, theta) <= 2.0, "theta {theta}: {est:?}");
            assert!(est.confidence > 0.0);
        }
    }

    #[test]
    fn disk_falls_back_to_moments() {
        let m = ellipse_mask(80, 80, (40.0, 40.0), 25.0, 25.0, 0.0);
        let est = estimate_vertical_axis(&m, 5).unwrap();
        assert_eq!(est.support, 0);
        assert_eq!(est.confidence, 0.0);
        assert!(est.angle > -90.0 && est.angle <= 90.0);
    }

    #[test]
    fn empty_mask_errors() {
        let err = estimate_vertical_axis(&BinaryMask::empty(10, 10), 5).unwrap_err();
        assert!(err.to_string().contains("no ear region"));
        assert!(estimate_vertical_axis(&BinaryMask::full(10, 10), 0).is_err());
    }

    #[test]
    fn moment_axis_follows_elongation() {
        let m = ellipse_mask(100, 100, (50.0, 50.0), 10.0, 40.0, 20.0);
        assert!(angle_diff(moment_axis(&m).unwrap(), 20.0) < 0.5);
    }

    #[test]
    fn rotation_identity_and_canvas() {
        let img = RasterImage::from_fn(7, 5, 3, |x, y, c| (x * 30 + y * 5 + c as u32) as u8).unwrap();
        assert_eq!(rotate_upright(&img, 0.0, PadFill::Black), img);
        assert_eq!(rotated_canvas(7, 5, 90.0), (5, 7));
        assert_eq!(rotated_canvas(7, 5, 0.0), (7, 5));
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let img = RasterImage::from_fn(9, 6, 1, |x, y, _| (x * 25 + y * 3) as u8).unwrap();
        let twice = rotate_image(&rotate_image(&img, 90.0, PadFill::Black), 90.0, PadFill::Black);
        assert_eq!(twice.dims(), (9, 6));
        for y in 1..5 {
            for x in 1..8 {
                assert_eq!(twice.get(x, y, 0), img.get(8 - x, 5 - y, 0), "({x},{y})");
            }
        }
    }

    #[test]
    fn black_padding_in_corners() {
        let img = RasterImage::filled(40, 40, 3, 200).unwrap();
        let r = rotate_upright(&img, 30.0, PadFill::Black);
        let (w, h) = r.dims();
        for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
            assert_eq!(r.pixel(x, y), &[0, 0, 0]);
        }
        let rep = rotate_upright(&img, 30.0, PadFill::Replicate);
        assert_eq!(rep.pixel(0, 0), &[200, 200, 200]);
        let refl = rotate_upright(&img, 30.0, PadFill::Reflect);
        assert_eq!(refl.pixel(0, 0), &[200, 200, 200]);
    }

    #[test]
    fn crop_matches_mask_box() {
        let img = RasterImage::from_fn(100, 100, 3, |x, y, _| ((x + y) % 256) as u8).unwrap();
        let m = BinaryMask::from_fn(100, 100, |x, y| (30..40).contains(&x) && (50..70).contains(&y));
        let (out, b) = crop_and_resize_with_box(&img, &m, (112, 112)).unwrap();
        assert_eq!(out.dims(), (112, 112));
        assert_eq!(b, [30, 50, 40, 70]);
        let expected = resize_bilinear(&crop(&img, 30, 50, 40, 70), 112, 112);
        assert_eq!(out, expected);
        // full mask: pure resize
        let full = crop_and_resize(&img, &BinaryMask::full(100, 100), (112, 112)).unwrap();
        assert_eq!(full, resize_bilinear(&img, 112, 112));
        // border-touching mask
        let edge = BinaryMask::from_fn(100, 100, |x, y| x >= 90 && y < 5);
        let (_, b) = crop_and_resize_with_box(&img, &edge, (112, 112)).unwrap();
        assert_eq!(b, [90, 0, 100, 5]);
        assert!(crop_and_resize(&img, &BinaryMask::empty(100, 100), (112, 112)).is_err());
    }

    #[test]
    fn sidecar_maps_boxes_consistently_with_masks() {
        let img = RasterImage::filled(120, 140, 3, 90).unwrap();
        let ear = ellipse_mask(120, 140, (60.0, 70.0), 20.0, 55.0, 20.0);
        let aligned = align_image(&img, &ear, &AlignmentConfig::default()).unwrap();
        assert_eq!(aligned.image.dims(), (112, 112));
        assert_eq!(aligned.image.channels(), 3);
        let sc = &aligned.sidecar;
        let spot = BinaryMask::from_fn(120, 140, |x, y| (50..62).contains(&x) && (90..102).contains(&y));
        let warped = sc.map_mask(&spot);
        let (x0, y0, x1, y1) = warped.bounds().unwrap();
        let b = sc
            .map_box(&BoundingBox::new(50.0, 90.0, 62.0, 102.0).unwrap())
            .unwrap();
        // the warped mask sits inside the mapped box (allowing a pixel of resampling slack)
        assert!(f64::from(x0) >= f64::from(b.x_min) - 1.0 && f64::from(x1) <= f64::from(b.x_max) + 1.0);
        assert!(f64::from(y0) >= f64::from(b.y_min) - 1.0 && f64::from(y1) <= f64::from(b.y_max) + 1.0);
    }
}
