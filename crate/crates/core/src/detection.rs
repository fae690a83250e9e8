//! Accessory localization: prompt formatting, score/area filtering and the
//! union of the supervised and zero-shot detector backends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Detection, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub max_area_ratio: f64,
    pub prompt_terms: Vec<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            box_threshold: 0.35,
            text_threshold: 0.25,
            max_area_ratio: 0.8,
            prompt_terms: vec![
                "earring".into(),
                "wireless earbud".into(),
                "hearing aid".into(),
            ],
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.box_threshold) || !unit(self.text_threshold) {
            return Err(Error::Config(format!(
                "detector thresholds must lie in [0,1] (box {}, text {})",
                self.box_threshold, self.text_threshold
            )));
        }
        if !(self.max_area_ratio > 0.0 && self.max_area_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "max_area_ratio must lie in (0,1], got {}",
                self.max_area_ratio
            )));
        }
        format_text_prompt(&self.prompt_terms).map(|_| ())
    }
}

/// A source of accessory proposals.
///
/// Implementations may return boxes outside the image; callers clamp them.
pub trait DetectorBackend {
    /// Short identity used in error messages and cache keys.
    fn name(&self) -> String;

    fn detect(&mut self, image: &RasterImage, prompt: Option<&str>) -> Result<Vec<Detection>>;
}

/// Backend that never fires.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopDetector;

impl DetectorBackend for NoopDetector {
    fn name(&self) -> String {
        "noop".into()
    }

    fn detect(&mut self, _image: &RasterImage, _prompt: Option<&str>) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

/// Lowercases and trims each phrase, then joins them as `"a. b."`.
pub fn format_text_prompt<S: AsRef<str>>(terms: &[S]) -> Result<String> {
    if terms.is_empty() {
        return Err(Error::Config("prompt term list is empty".into()));
    }
    let mut out = String::new();
    for t in terms {
        let t = t.as_ref().trim();
        if t.is_empty() {
            return Err(Error::Config("blank prompt term".into()));
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&t.to_lowercase());
        out.push('.');
    }
    Ok(out)
}

/// Keeps detections passing the confidence, text-alignment and area-ratio
/// tests. The text test only applies to detections that carry a text score.
pub fn filter_detections(dets: &[Detection], cfg: &DetectorConfig, image_dims: (u32, u32)) -> Vec<Detection> {
    let image_area = image_dims.0 as f64 * image_dims.1 as f64;
    dets.iter()
        .filter(|d| {
            let conf_ok = d.confidence >= cfg.box_threshold as f32;
            let text_ok = d.text_alignment.map_or(true, |t| t >= cfg.text_threshold as f32);
            let area_ok = f64::from(d.bbox.area()) / image_area <= cfg.max_area_ratio;
            conf_ok && text_ok && area_ok
        })
        .cloned()
        .collect()
}

fn clamp_all(dets: Vec<Detection>, image: &RasterImage) -> Vec<Detection> {
    let (w, h) = image.dims();
    dets.into_iter()
        .filter_map(|mut d| {
            d.bbox = d.bbox.clamp_to(w, h)?;
            Some(d)
        })
        .collect()
}

/// Supervised detections followed by zero-shot detections, each clamped to
/// the image and filtered. Overlaps are left for the mask union to absorb.
pub fn detect_accessories(
    image: &RasterImage,
    supervised: &mut dyn DetectorBackend,
    zero_shot: &mut dyn DetectorBackend,
    cfg: &DetectorConfig,
) -> Result<Vec<Detection>> {
    let prompt = format_text_prompt(&cfg.prompt_terms)?;
    let wrap = |backend: &dyn DetectorBackend, e: Error| Error::Detection {
        backend: backend.name(),
        message: e.to_string(),
    };

    let sup = supervised.detect(image, None).map_err(|e| wrap(supervised, e))?;
    let zs = zero_shot.detect(image, Some(&prompt)).map_err(|e| wrap(zero_shot, e))?;

    let dims = image.dims();
    let mut out = filter_detections(&clamp_all(sup, image), cfg, dims);
    out.extend(filter_detections(&clamp_all(zs, image), cfg, dims));
    Ok(out)
}

/// Per-image detection dump, also the sidecar format replayed by the mock detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDump {
    pub image: String,
    pub detections: Vec<Detection>,
}
