use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRecord, Violation};
use crate::types::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    /// `root/<subject>/<image>` with one folder per identity.
    SubjectFolders,
    /// Images anywhere under root, listed in `root/index.csv` with columns
    /// `path,subject_id[,side]`.
    FlatWithIndex,
}

impl FromStr for DatasetLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject_folders" => Ok(Self::SubjectFolders),
            "flat_with_index" => Ok(Self::FlatWithIndex),
            _ => Err(Error::Ingestion(format!(
                "unknown layout {s:?} (expected subject_folders or flat_with_index)"
            ))),
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", dir.display())))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Builds a manifest from a dataset directory. Records are in lexicographic
/// order; identities without images are skipped with a warning.
pub fn ingest_dataset(root: &Path, layout: DatasetLayout) -> Result<(DatasetManifest, Vec<Violation>)> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!("{} is not a readable directory", root.display())));
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    match layout {
        DatasetLayout::SubjectFolders => {
            for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
                let subject = dir.file_name().expect("entry has a name").to_string_lossy().into_owned();
                let images: Vec<PathBuf> = sorted_entries(&dir)?
                    .into_iter()
                    .filter(|p| p.is_file() && is_image(p))
                    .collect();
                if images.is_empty() {
                    warnings.push(Violation {
                        record: Some(subject.clone()),
                        message: "folder has no images; identity skipped".into(),
                    });
                    continue;
                }
                for path in images {
                    let mut r = ImageRecord::new(subject.clone(), Side::Unknown, path);
                    r.source_dataset = name.clone();
                    records.push(r);
                }
            }
        }
        DatasetLayout::FlatWithIndex => {
            let index = root.join("index.csv");
            let mut reader = csv::Reader::from_path(&index)
                .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", index.display())))?;
            #[derive(Deserialize)]
            struct Row {
                path: String,
                subject_id: String,
                #[serde(default)]
                side: Option<String>,
            }
            for (line, row) in reader.deserialize::<Row>().enumerate() {
                let row = row.map_err(|e| Error::Ingestion(format!("{} row {}: {e}", index.display(), line + 1)))?;
                let side = match row.side.as_deref().map(str::trim) {
                    None | Some("") | Some("unknown") => Side::Unknown,
                    Some("left") => Side::Left,
                    Some("right") => Side::Right,
                    Some(other) => {
                        return Err(Error::Ingestion(format!(
                            "{} row {}: unknown side {other:?}",
                            index.display(),
                            line + 1
                        )))
                    }
                };
                let mut r = ImageRecord::new(row.subject_id.trim(), side, root.join(row.path.trim()));
                r.source_dataset = name.clone();
                records.push(r);
            }
            records.sort_by(|a, b| a.path.cmp(&b.path));
        }
    }
    if records.is_empty() {
        return Err(Error::Ingestion(format!("no images found under {}", root.display())));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((DatasetManifest::new(name, false, records), warnings))
}
