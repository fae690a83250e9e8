//! Dataset manifests: image records grouped into verification identities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::types::{Side, Stage};

/// One image of one subject, plus optional per-record sidecar files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub subject_id: String,
    pub side: Side,
    pub stage: Stage,
    pub path: PathBuf,
    pub source_dataset: String,
    /// Ear segmentation mask used by alignment.
    pub ear_mask: Option<PathBuf>,
    /// Detection-dump sidecar replayed by the mock detector.
    pub annotation: Option<PathBuf>,
    /// Detection dump written by the detect stage.
    pub detections: Option<PathBuf>,
    /// Accessory mask written by the mask stage.
    pub mask: Option<PathBuf>,
}

impl ImageRecord {
    pub fn new(subject_id: impl Into<String>, side: Side, path: impl Into<PathBuf>) -> Self {
        Self {
            subject_id: subject_id.into(),
            side,
            stage: Stage::Raw,
            path: path.into(),
            source_dataset: String::new(),
            ear_mask: None,
            annotation: None,
            detections: None,
            mask: None,
        }
    }

    /// File stem up to the first dot, so `a.inpainted.png` and `a.png` share a stem.
    pub fn base_stem(&self) -> String {
        let name = self
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.split('.').next().unwrap_or_default().to_string()
    }

    /// Stable key for this image across processing stages.
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.base_stem())
    }
}

/// Key of the verification identity a record belongs to.
pub fn identity_key(subject_id: &str, side: Side, side_split: bool) -> String {
    if side_split {
        format!("{subject_id}/{}", side.as_str())
    } else {
        subject_id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub side_split: bool,
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record {
            Some(r) => write!(f, "{r}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, side_split: bool, records: Vec<ImageRecord>) -> Self {
        Self {
            name: name.into(),
            side_split,
            records,
        }
    }

    /// Identity key of a record, or `None` when side splitting excludes it.
    pub fn identity_of(&self, record: &ImageRecord) -> Option<String> {
        if self.side_split && record.side == Side::Unknown {
            None
        } else {
            Some(identity_key(&record.subject_id, record.side, self.side_split))
        }
    }

    /// Identity key to record indices, keys sorted, indices in manifest order.
    pub fn identities(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if let Some(k) = self.identity_of(r) {
                map.entry(k).or_default().push(i);
            }
        }
        map
    }

    /// Records that take part in verification, grouped by identity.
    pub fn identity_groups(&self) -> Vec<(String, Vec<&ImageRecord>)> {
        self.identities()
            .into_iter()
            .map(|(k, idx)| (k, idx.into_iter().map(|i| &self.records[i]).collect()))
            .collect()
    }

    /// Non-fatal notes, e.g. records dropped by side splitting.
    pub fn warnings(&self) -> Vec<Violation> {
        self.records
            .iter()
            .filter(|r| self.side_split && r.side == Side::Unknown)
            .map(|r| Violation {
                record: Some(r.key()),
                message: "side unknown; excluded from side-split identities".into(),
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ManifestFile = io::read_json(path)
            .map_err(|e| Error::Ingestion(format!("cannot read manifest: {e}")))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(file.into_manifest(base))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        io::write_json(&ManifestFile::from_manifest(self, base), path)
    }

    pub fn to_json(&self, base: &Path) -> String {
        serde_json::to_string_pretty(&ManifestFile::from_manifest(self, base))
            .expect("manifest serialization is infallible")
    }
}

/// Checks the manifest invariants; an empty list means it is usable for verification.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut keys = BTreeSet::new();
    for r in &manifest.records {
        let key = r.key();
        if r.subject_id.trim().is_empty() {
            out.push(Violation {
                record: Some(io::path_string(&r.path)),
                message: "empty subject id".into(),
            });
        }
        if !r.path.is_file() {
            out.push(Violation {
                record: Some(key.clone()),
                message: format!("image file missing: {}", r.path.display()),
            });
        }
        for (what, p) in [("ear mask", &r.ear_mask), ("annotation", &r.annotation), ("detections", &r.detections), ("mask", &r.mask)] {
            if let Some(p) = p {
                if !p.is_file() {
                    out.push(Violation {
                        record: Some(key.clone()),
                        message: format!("{what} file missing: {}", p.display()),
                    });
                }
            }
        }
        if !keys.insert(key.clone()) {
            out.push(Violation {
                record: Some(key),
                message: "duplicate record key".into(),
            });
        }
    }
    if manifest.identities().len() < 2 {
        out.push(Violation {
            record: None,
            message: "verification requires N ≥ 2".into(),
        });
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    #[serde(default)]
    side_split: bool,
    records: Vec<RecordFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordFile {
    subject_id: String,
    #[serde(default = "unknown_side")]
    side: Side,
    #[serde(default = "raw_stage")]
    stage: Stage,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ear_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

fn unknown_side() -> Side {
    Side::Unknown
}

fn raw_stage() -> Stage {
    Stage::Raw
}

impl ManifestFile {
    fn into_manifest(self, base: &Path) -> DatasetManifest {
        let resolve = |p: &str| io::normalize_path(&base.join(p));
        let name = self.name;
        let records = self
            .records
            .into_iter()
            .map(|r| ImageRecord {
                subject_id: r.subject_id,
                side: r.side,
                stage: r.stage,
                path: resolve(&r.path),
                source_dataset: r.source_dataset.unwrap_or_else(|| name.clone()),
                ear_mask: r.ear_mask.as_deref().map(resolve),
                annotation: r.annotation.as_deref().map(resolve),
                detections: r.detections.as_deref().map(resolve),
                mask: r.mask.as_deref().map(resolve),
            })
            .collect();
        DatasetManifest {
            name,
            side_split: self.side_split,
            records,
        }
    }

    fn from_manifest(m: &DatasetManifest, base: &Path) -> Self {
        let rel = |p: &Path| io::path_string(&io::relative_to(p, base));
        Self {
            name: m.name.clone(),
            side_split: m.side_split,
            records: m
                .records
                .iter()
                .map(|r| RecordFile {
                    subject_id: r.subject_id.clone(),
                    side: r.side,
                    stage: r.stage,
                    path: rel(&r.path),
                    source_dataset: (r.source_dataset != m.name && !r.source_dataset.is_empty())
                        .then(|| r.source_dataset.clone()),
                    ear_mask: r.ear_mask.as_deref().map(rel),
                    annotation: r.annotation.as_deref().map(rel),
                    detections: r.detections.as_deref().map(rel),
                    mask: r.mask.as_deref().map(rel),
                })
                .collect(),
        }
    }
}
