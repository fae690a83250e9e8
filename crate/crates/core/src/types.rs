//! Shared domain types: images, masks, boxes, detections and embeddings.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dimension of every identity embedding.
pub const EMBEDDING_DIM: usize = 512;

/// Side length of aligned images fed to the embedder.
pub const ALIGNED_SIZE: u32 = 112;

/// An 8-bit, row-major, interleaved pixel grid with 1, 3 or 4 channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", format!("zero dimension {width}x{height}")));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::invalid("image", format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::invalid(
                "image",
                format!("buffer length {} != {expected}", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, value: u8) {
        let o = self.offset(x, y);
        self.data[o + c as usize] = value;
    }

    /// All channel values of the pixel at `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    /// SHA-256 over dimensions, channel count and samples.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels]);
        h.update(&self.data);
        hex::encode(h.finalize())
    }
}

/// Per-pixel boolean membership grid.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        if self.width <= 32 && self.height <= 32 {
            for y in 0..self.height {
                let row: String = (0..self.width)
                    .map(|x| if self.get(x, y) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(
                "mask",
                format!("{} bits for {width}x{height}", bits.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight foreground bounds as `(x_min, y_min, x_max, y_max)`, max exclusive.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out = Some(match out {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        out
    }

    /// Foreground = 255, background = 0.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    /// Any non-zero sample is foreground.
    pub fn from_gray_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        Self::from_bits(width, height, bytes.iter().map(|&v| v != 0).collect())
    }
}

/// Axis-aligned box in pixel coordinates, serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 4]", into = "[f32; 4]")]
pub struct BoundingBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl From<[f32; 4]> for BoundingBox {
    fn from(v: [f32; 4]) -> Self {
        Self {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        }
    }
}

impl From<BoundingBox> for [f32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BoundingBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.is_valid() {
            return Err(Error::invalid("bounding box", format!("{:?}", <[f32; 4]>::from(b))));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Clamps to `[0, width] x [0, height]`; `None` if nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<Self> {
        let b = Self {
            x_min: self.x_min.clamp(0.0, width as f32),
            y_min: self.y_min.clamp(0.0, height as f32),
            x_max: self.x_max.clamp(0.0, width as f32),
            y_max: self.y_max.clamp(0.0, height as f32),
        };
        b.is_valid().then_some(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSource {
    Supervised,
    ZeroShot,
}

/// A scored, labeled accessory proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_alignment: Option<f32>,
    pub source: DetectorSource,
    pub label: String,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if !self.bbox.is_valid() {
            return Err(Error::invalid("detection", "degenerate box"));
        }
        if !unit(self.confidence) {
            return Err(Error::invalid("detection", format!("confidence {}", self.confidence)));
        }
        match (self.source, self.text_alignment) {
            (DetectorSource::ZeroShot, Some(t)) if unit(t) => Ok(()),
            (DetectorSource::ZeroShot, Some(t)) => {
                Err(Error::invalid("detection", format!("text alignment {t}")))
            }
            (DetectorSource::ZeroShot, None) => {
                Err(Error::invalid("detection", "zero-shot detection without text alignment"))
            }
            (DetectorSource::Supervised, Some(_)) => {
                Err(Error::invalid("detection", "supervised detection with text alignment"))
            }
            (DetectorSource::Supervised, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Unknown,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Unknown => "unknown",
        }
    }
}

/// Which processing stage produced an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Aligned,
    Inpainted,
}

/// A 512-D identity feature vector for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f32>,
    record_key: String,
}

impl Embedding {
    pub fn new(record_key: impl Into<String>, vector: Vec<f32>) -> Result<Self> {
        let record_key = record_key.into();
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Embedding {
                record: record_key,
                message: format!("dimension {} != {EMBEDDING_DIM}", vector.len()),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Embedding {
                record: record_key,
                message: "non-finite component".into(),
            });
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(Error::Embedding {
                record: record_key,
                message: "zero-norm vector".into(),
            });
        }
        Ok(Self { vector, record_key })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn record_key(&self) -> &str {
        &self.record_key
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_buffers() {
        assert!(RasterImage::new(2, 2, 3, vec![0; 12]).is_ok());
        assert!(RasterImage::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(RasterImage::new(0, 2, 1, vec![]).is_err());
        assert!(RasterImage::new(1, 1, 2, vec![0; 2]).is_err());
    }

    #[test]
    fn box_clamps_into_image() {
        let b = BoundingBox::new(-5.0, 2.0, 50.0, 8.0).unwrap();
        let c = b.clamp_to(20, 10).unwrap();
        assert_eq!(<[f32; 4]>::from(c), [0.0, 2.0, 20.0, 8.0]);
        let outside = BoundingBox::new(30.0, 0.0, 40.0, 5.0).unwrap();
        assert!(outside.clamp_to(20, 10).is_none());
        assert!(BoundingBox::new(3.0, 0.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn detection_text_score_tracks_source() {
        let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut d = Detection {
            bbox,
            confidence: 0.9,
            text_alignment: None,
            source: DetectorSource::Supervised,
            label: "earring".into(),
        };
        assert!(d.validate().is_ok());
        d.source = DetectorSource::ZeroShot;
        assert!(d.validate().is_err());
        d.text_alignment = Some(0.4);
        assert!(d.validate().is_ok());
        d.confidence = 1.2;
        assert!(d.validate().is_err());
    }

    #[test]
    fn detection_json_uses_box_array() {
        let d = Detection {
            bbox: BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap(),
            confidence: 0.5,
            text_alignment: None,
            source: DetectorSource::Supervised,
            label: "earbud".into(),
        };
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(
            s,
            r#"{"box":[1.0,2.0,3.0,4.0],"confidence":0.5,"source":"supervised","label":"earbud"}"#
        );
        let back: Detection = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn embedding_invariants() {
        assert!(Embedding::new("a", vec![0.0; EMBEDDING_DIM]).is_err());
        assert!(Embedding::new("a", vec![1.0; 10]).is_err());
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[3] = f32::NAN;
        assert!(Embedding::new("a", v.clone()).is_err());
        v[3] = 2.0;
        let e = Embedding::new("a", v).unwrap();
        assert_eq!(e.norm(), 2.0);
    }

    #[test]
    fn mask_bounds() {
        let mut m = BinaryMask::empty(10, 10);
        assert_eq!(m.bounds(), None);
        m.set(2, 3, true);
        m.set(7, 5, true);
        assert_eq!(m.bounds(), Some((2, 3, 8, 6)));
        assert_eq!(m.count(), 2);
    }
}
