use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::detection::DetectorConfig;
use crate::embedding::{EmbedderDescriptor, EmbedderFamily};
use crate::error::{Error, Result};
use crate::io;
use crate::masking::MaskingConfig;
use crate::verification::ImpostorSubsample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    SideSplit,
    Align,
    Detect,
    Mask,
    Inpaint,
    Embed,
    Evaluate,
    Report,
}

impl StageName {
    /// Canonical order.
    pub const ALL: [StageName; 9] = [
        StageName::Ingest,
        StageName::SideSplit,
        StageName::Align,
        StageName::Detect,
        StageName::Mask,
        StageName::Inpaint,
        StageName::Embed,
        StageName::Evaluate,
        StageName::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::SideSplit => "side_split",
            StageName::Align => "align",
            StageName::Detect => "detect",
            StageName::Mask => "mask",
            StageName::Inpaint => "inpaint",
            StageName::Embed => "embed",
            StageName::Evaluate => "evaluate",
            StageName::Report => "report",
        }
    }

    fn rank(&self) -> usize {
        Self::ALL.iter().position(|s| s == self).expect("listed")
    }

    /// Stages that only exist in the inpainted condition.
    pub fn is_restoration(&self) -> bool {
        matches!(self, StageName::Detect | StageName::Mask | StageName::Inpaint)
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectorChoice {
    #[default]
    MockReplay,
    MockFixedBox,
    Noop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterChoice {
    #[default]
    MockEllipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InpainterChoice {
    #[default]
    MockBoundaryAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SideClassifierChoice {
    #[default]
    MockHalfMass,
}

/// One embedder to evaluate. Trial `t` uses seed `seed + t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    pub family: EmbedderFamily,
    pub patch_size: u32,
    #[serde(default)]
    pub seed: u64,
}

impl EmbedderSpec {
    pub fn descriptor(&self) -> Result<EmbedderDescriptor> {
        EmbedderDescriptor::new(self.family, self.patch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub supervised_detector: DetectorChoice,
    pub zero_shot_detector: DetectorChoice,
    /// Box returned by `mock_fixed_box` detectors, `[x_min, y_min, x_max, y_max]`.
    pub fixed_box: Option<[f32; 4]>,
    /// Replay jitter amplitude in pixels; 0 disables it.
    pub detector_jitter: f32,
    pub seed: u64,
    pub segmenter: SegmenterChoice,
    pub inpainter: InpainterChoice,
    pub inpainter_max_sweeps: usize,
    pub inpainter_tolerance: f32,
    pub side_classifier: SideClassifierChoice,
    pub embedders: Vec<EmbedderSpec>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            supervised_detector: DetectorChoice::MockReplay,
            zero_shot_detector: DetectorChoice::MockReplay,
            fixed_box: None,
            detector_jitter: 0.0,
            seed: 0,
            segmenter: SegmenterChoice::MockEllipse,
            inpainter: InpainterChoice::MockBoundaryAverage,
            inpainter_max_sweeps: 500,
            inpainter_tolerance: 0.5,
            side_classifier: SideClassifierChoice::MockHalfMass,
            embedders: [16, 28, 56]
                .into_iter()
                .map(|patch_size| EmbedderSpec {
                    family: EmbedderFamily::Mock,
                    patch_size,
                    seed: 0,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<StageName>,
    pub trials: usize,
    /// 0 means the available parallelism.
    pub workers: usize,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub subsample: Option<ImpostorSubsample>,
    pub detector: DetectorConfig,
    pub masking: MaskingConfig,
    pub alignment: AlignmentConfig,
    pub backends: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: StageName::ALL.to_vec(),
            trials: 5,
            workers: 0,
            cache_dir: None,
            subsample: None,
            detector: DetectorConfig::default(),
            masking: MaskingConfig::default(),
            alignment: AlignmentConfig::default(),
            backends: BackendConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        validate_stage_order(&self.stages)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.detector.validate().map_err(|e| Error::Config(e.to_string()))?;
        let m = &self.masking;
        for (name, v) in [("binarize_threshold", m.binarize_threshold), ("min_quality", m.min_quality)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("masking.{name} must be in [0, 1]")));
            }
        }
        if self.alignment.k == 0 || self.alignment.out_size == 0 {
            return Err(Error::Config("alignment.k and alignment.out_size must be positive".into()));
        }
        if let Some(s) = &self.subsample {
            if !(s.rate > 0.0 && s.rate <= 1.0) {
                return Err(Error::Config("subsample.rate must be in (0, 1]".into()));
            }
        }
        let b = &self.backends;
        if [b.supervised_detector, b.zero_shot_detector].contains(&DetectorChoice::MockFixedBox) {
            match b.fixed_box {
                Some([x0, y0, x1, y1]) if x0 < x1 && y0 < y1 => {}
                _ => return Err(Error::Config("mock_fixed_box needs a valid backends.fixed_box".into())),
            }
        }
        if !(b.detector_jitter >= 0.0) {
            return Err(Error::Config("backends.detector_jitter must be non-negative".into()));
        }
        let needs_embedders = self
            .stages
            .iter()
            .any(|s| matches!(s, StageName::Embed | StageName::Evaluate));
        if needs_embedders && b.embedders.is_empty() {
            return Err(Error::Config("at least one embedder is required".into()));
        }
        for e in &b.embedders {
            e.descriptor().map_err(|err| Error::Config(err.to_string()))?;
            if e.family != EmbedderFamily::Mock {
                return Err(Error::Config(format!(
                    "embedder family {} needs trained weights, which this build cannot load; use family \"mock\"",
                    e.family
                )));
            }
        }
        for (i, a) in b.embedders.iter().enumerate() {
            if b.embedders[..i].iter().any(|p| p.family == a.family && p.patch_size == a.patch_size) {
                return Err(Error::Config(format!(
                    "embedder {}_p{} listed twice",
                    a.family, a.patch_size
                )));
            }
        }
        Ok(())
    }

    /// Hash of every field that affects outputs. Worker count and cache
    /// location are excluded; keys are serialized in sorted order.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
            obj.remove("cache_dir");
        }
        io::hash_bytes(v.to_string().as_bytes())
    }

    /// Canonical JSON of a config section, used in stage cache keys.
    pub(crate) fn section_json<T: Serialize>(section: &T) -> String {
        serde_json::to_value(section).expect("section serializes").to_string()
    }
}

/// Stages must follow the canonical order, except that `align` may also come
/// after the restoration stages (inpainting before alignment).
pub fn validate_stage_order(stages: &[StageName]) -> Result<()> {
    let without_align: Vec<StageName> = stages.iter().copied().filter(|s| *s != StageName::Align).collect();
    for w in without_align.windows(2) {
        if w[0].rank() >= w[1].rank() {
            return Err(Error::Config(format!(
                "stage {} cannot follow {}; order must be a subsequence of {}",
                w[1].as_str(),
                w[0].as_str(),
                StageName::ALL.map(|s| s.as_str()).join(", ")
            )));
        }
    }
    let aligns: Vec<usize> = stages
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == StageName::Align)
        .map(|(i, _)| i)
        .collect();
    if aligns.len() > 1 {
        return Err(Error::Config("stage align listed twice".into()));
    }
    if let Some(&i) = aligns.first() {
        let before_ok = stages[..i].iter().all(|s| s.rank() < StageName::Embed.rank());
        let after_ok = stages[i + 1..]
            .iter()
            .all(|s| s.rank() > StageName::SideSplit.rank());
        if !before_ok || !after_ok {
            return Err(Error::Config(
                "align must come after ingest/side_split and before embed".into(),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn stage_order_rules() {
        use StageName::*;
        validate_stage_order(&StageName::ALL).unwrap();
        validate_stage_order(&[Align, Embed, Evaluate]).unwrap();
        validate_stage_order(&[Detect, Mask, Inpaint, Align, Embed]).unwrap();
        assert!(validate_stage_order(&[Embed, Align]).is_err());
        assert!(validate_stage_order(&[Mask, Detect]).is_err());
        assert!(validate_stage_order(&[Align, Align]).is_err());
        assert!(validate_stage_order(&[Align, SideSplit]).is_err());
        assert!(validate_stage_order(&[Embed, Embed]).is_err());
    }

    #[test]
    fn parse_errors_and_rejections() {
        assert!(PipelineConfig::from_toml_str("trials = 0").is_err());
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml_str("stages = [\"embed\", \"align\"]").is_err());
        let vit = "[[backends.embedders]]\nfamily = \"ViT_B\"\npatch_size = 16\n";
        assert!(PipelineConfig::from_toml_str(vit).unwrap_err().to_string().contains("weights"));
        let fixed = "[backends]\nsupervised_detector = \"mock_fixed_box\"\n";
        assert!(PipelineConfig::from_toml_str(fixed).is_err());
        let cfg = PipelineConfig::from_toml_str("trials = 2\n[detector]\nbox_threshold = 0.4\n").unwrap();
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.detector.box_threshold, 0.4);
    }

    #[test]
    fn fingerprint_ignores_runtime_knobs() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.workers = 7;
        b.cache_dir = Some("/tmp/x".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.masking.dilation_radius = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
