//! Identity embeddings and ear-side labels from pluggable backends, plus the
//! on-disk embedding cache.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::restoration::normalize_input;
use crate::types::{Embedding, RasterImage, Side, ALIGNED_SIZE, EMBEDDING_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmbedderFamily {
    #[serde(rename = "ViT_T")]
    VitT,
    #[serde(rename = "ViT_S")]
    VitS,
    #[serde(rename = "ViT_B")]
    VitB,
    #[serde(rename = "ViT_L")]
    VitL,
    #[serde(rename = "mock")]
    Mock,
}

impl EmbedderFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbedderFamily::VitT => "ViT_T",
            EmbedderFamily::VitS => "ViT_S",
            EmbedderFamily::VitB => "ViT_B",
            EmbedderFamily::VitL => "ViT_L",
            EmbedderFamily::Mock => "mock",
        }
    }
}

impl fmt::Display for EmbedderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const PATCH_SIZES: [u32; 3] = [16, 28, 56];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub family: EmbedderFamily,
    pub patch_size: u32,
}

impl EmbedderDescriptor {
    pub fn new(family: EmbedderFamily, patch_size: u32) -> Result<Self> {
        if !PATCH_SIZES.contains(&patch_size) {
            return Err(Error::Config(format!(
                "patch size {patch_size} not in {PATCH_SIZES:?}"
            )));
        }
        Ok(Self { family, patch_size })
    }

    /// `<family>_p<patch>`, the stem of cache files.
    pub fn tag(&self) -> String {
        format!("{}_p{}", self.family, self.patch_size)
    }
}

pub trait EmbedderBackend {
    fn descriptor(&self) -> EmbedderDescriptor;

    /// Identity of the weights or seed; a change invalidates cached vectors.
    fn fingerprint(&self) -> String;

    /// Maps a 112x112x3 image to a 512-D vector.
    fn embed(&mut self, image: &RasterImage) -> Result<Vec<f32>>;
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Entry `(row, col)` of the mock projection for `seed`, uniform in [-1, 1).
pub fn mock_projection_entry(seed: u64, row: usize, col: usize) -> f32 {
    let h = splitmix64(splitmix64(seed) ^ ((row as u64) << 32) ^ col as u64);
    ((h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
}

/// Deterministic stand-in for a trained embedder.
///
/// The image is average-pooled over `patch_size/4`-pixel cells (scaled to
/// [0,1]), the pooled vector is mean-centred and extended with one constant
/// `MOCK_BIAS` feature, multiplied by a 512-row matrix whose entries come from
/// [`mock_projection_entry`], and scaled to unit length.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    descriptor: EmbedderDescriptor,
    seed: u64,
    projection: std::sync::Arc<Vec<f32>>,
}

pub const MOCK_BIAS: f32 = 1e-3;

impl MockEmbedder {
    pub fn new(patch_size: u32, seed: u64) -> Result<Self> {
        let descriptor = EmbedderDescriptor::new(EmbedderFamily::Mock, patch_size)?;
        let cols = Self::feature_len(patch_size) + 1;
        let mut projection = Vec::with_capacity(EMBEDDING_DIM * cols);
        for r in 0..EMBEDDING_DIM {
            for c in 0..cols {
                projection.push(mock_projection_entry(seed, r, c));
            }
        }
        Ok(Self {
            descriptor,
            seed,
            projection: std::sync::Arc::new(projection),
        })
    }

    pub fn pool(patch_size: u32) -> u32 {
        patch_size / 4
    }

    pub fn feature_len(patch_size: u32) -> usize {
        let g = (ALIGNED_SIZE / Self::pool(patch_size)) as usize;
        g * g * 3
    }

    /// Pooled, mean-centred features plus the bias entry.
    pub fn features(&self, image: &RasterImage) -> Vec<f32> {
        let p = Self::pool(self.descriptor.patch_size);
        let g = ALIGNED_SIZE / p;
        let mut v = Vec::with_capacity(Self::feature_len(self.descriptor.patch_size) + 1);
        for gy in 0..g {
            for gx in 0..g {
                for c in 0..3u8 {
                    let mut s = 0u32;
                    for y in gy * p..(gy + 1) * p {
                        for x in gx * p..(gx + 1) * p {
                            s += u32::from(image.get(x, y, c));
                        }
                    }
                    v.push(s as f32 / (p * p) as f32 / 255.0);
                }
            }
        }
        let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64;
        for x in &mut v {
            *x -= mean as f32;
        }
        v.push(MOCK_BIAS);
        v
    }
}

impl EmbedderBackend for MockEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        self.descriptor
    }

    fn fingerprint(&self) -> String {
        format!("mock:p{}:seed{}", self.descriptor.patch_size, self.seed)
    }

    fn embed(&mut self, image: &RasterImage) -> Result<Vec<f32>> {
        if image.dims() != (ALIGNED_SIZE, ALIGNED_SIZE) || image.channels() != 3 {
            return Err(Error::invalid(
                "embedder input",
                format!(
                    "expected {ALIGNED_SIZE}x{ALIGNED_SIZE}x3, got {}x{}x{}",
                    image.width(),
                    image.height(),
                    image.channels()
                ),
            ));
        }
        let f = self.features(image);
        let cols = f.len();
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(cols)
            .map(|row| row.iter().zip(&f).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum())
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut out {
            *v /= norm;
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Record key to embedding.
pub type EmbeddingTable = BTreeMap<String, Embedding>;

/// Record-keyed vector store backed by `<tag>.emb` (little-endian f32) and
/// `<tag>.idx.json`.
#[derive(Debug)]
pub struct EmbeddingCache {
    emb_path: PathBuf,
    idx_path: PathBuf,
    fingerprint: String,
    entries: BTreeMap<String, (String, Vec<f32>)>,
    hits: usize,
    dirty: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheIndex {
    descriptor: EmbedderDescriptor,
    fingerprint: String,
    dim: usize,
    entries: BTreeMap<String, CacheEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    /// Byte offset into the `.emb` file.
    offset: u64,
    content_hash: String,
}

impl EmbeddingCache {
    /// Opens (or starts) the cache for `backend` inside `dir`. Caches written
    /// by a different backend fingerprint are ignored.
    pub fn open(dir: &Path, backend: &dyn EmbedderBackend) -> Result<Self> {
        let tag = backend.descriptor().tag();
        let emb_path = dir.join(format!("{tag}.emb"));
        let idx_path = dir.join(format!("{tag}.idx.json"));
        let fingerprint = backend.fingerprint();
        let mut entries = BTreeMap::new();
        if emb_path.is_file() && idx_path.is_file() {
            let idx: CacheIndex = io::read_json(&idx_path)?;
            if idx.fingerprint == fingerprint && idx.dim == EMBEDDING_DIM {
                let raw = fs::read(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
                for (key, e) in idx.entries {
                    let start = e.offset as usize;
                    let end = start + EMBEDDING_DIM * 4;
                    let Some(bytes) = raw.get(start..end) else {
                        log::warn!("embedding cache {} truncated at {key}", emb_path.display());
                        continue;
                    };
                    let v = bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    entries.insert(key, (e.content_hash, v));
                }
            }
        }
        Ok(Self {
            emb_path,
            idx_path,
            fingerprint,
            entries,
            hits: 0,
            dirty: false,
        })
    }

    pub fn get(&mut self, key: &str, content_hash: &str) -> Option<Vec<f32>> {
        let hit = self
            .entries
            .get(key)
            .filter(|(h, _)| h == content_hash)
            .map(|(_, v)| v.clone());
        if hit.is_some() {
            self.hits += 1;
        }
        hit
    }

    pub fn insert(&mut self, key: String, content_hash: String, vector: Vec<f32>) {
        self.entries.insert(key, (content_hash, vector));
        self.dirty = true;
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&mut self, descriptor: EmbedderDescriptor) -> Result<()> {
        if !self.dirty && self.emb_path.is_file() {
            return Ok(());
        }
        let mut raw = Vec::with_capacity(self.entries.len() * EMBEDDING_DIM * 4);
        let mut index = BTreeMap::new();
        for (key, (hash, v)) in &self.entries {
            index.insert(
                key.clone(),
                CacheEntry {
                    offset: raw.len() as u64,
                    content_hash: hash.clone(),
                },
            );
            for x in v {
                raw.extend_from_slice(&x.to_le_bytes());
            }
        }
        io::write_bytes(&self.emb_path, &raw)?;
        io::write_json(
            &CacheIndex {
                descriptor,
                fingerprint: self.fingerprint.clone(),
                dim: EMBEDDING_DIM,
                entries: index,
            },
            &self.idx_path,
        )?;
        self.dirty = false;
        Ok(())
    }
}

fn load_for_embedding(record: &ImageRecord) -> Result<(RasterImage, String)> {
    let err = |message: String| Error::Embedding {
        record: record.key(),
        message,
    };
    let img = io::load_image(&record.path).map_err(|e| err(e.to_string()))?;
    if img.dims() != (ALIGNED_SIZE, ALIGNED_SIZE) {
        return Err(err(format!(
            "expected {ALIGNED_SIZE}x{ALIGNED_SIZE} input, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let img = normalize_input(&img).map_err(|e| err(e.to_string()))?;
    let hash = img.content_hash();
    Ok((img, hash))
}

fn embed_one(backend: &mut dyn EmbedderBackend, record: &ImageRecord, img: &RasterImage) -> Result<Embedding> {
    let v = backend.embed(img).map_err(|e| Error::Embedding {
        record: record.key(),
        message: e.to_string(),
    })?;
    Embedding::new(record.key(), v)
}

/// Embeds every record of the manifest, reusing cached vectors whose image
/// content is unchanged.
pub fn embed_manifest(
    manifest: &DatasetManifest,
    backend: &mut dyn EmbedderBackend,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new();
    for record in &manifest.records {
        let (img, hash) = load_for_embedding(record)?;
        let key = record.key();
        if let Some(v) = cache.as_deref_mut().and_then(|c| c.get(&key, &hash)) {
            table.insert(key.clone(), Embedding::new(key, v)?);
            continue;
        }
        let e = embed_one(backend, record, &img)?;
        if let Some(c) = cache.as_deref_mut() {
            c.insert(key.clone(), hash, e.vector().to_vec());
        }
        table.insert(key, e);
    }
    Ok(table)
}

/// Parallel variant of [`embed_manifest`]: each worker owns a backend built by
/// `make_backend`; cache updates happen on the calling thread.
pub fn embed_manifest_par<B, F>(
    manifest: &DatasetManifest,
    make_backend: F,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<(EmbeddingTable, usize)>
where
    B: EmbedderBackend,
    F: Fn() -> B + Sync,
{
    let loaded: Vec<(&ImageRecord, RasterImage, String)> = manifest
        .records
        .par_iter()
        .map(|r| load_for_embedding(r).map(|(img, h)| (r, img, h)))
        .collect::<Result<_>>()?;

    let mut table = EmbeddingTable::new();
    let mut todo = Vec::new();
    for (r, img, hash) in loaded {
        let key = r.key();
        match cache.as_deref_mut().and_then(|c| c.get(&key, &hash)) {
            Some(v) => {
                table.insert(key.clone(), Embedding::new(key, v)?);
            }
            None => todo.push((r, img, hash)),
        }
    }
    let computed: Vec<(Embedding, String)> = todo
        .par_iter()
        .map_init(&make_backend, |backend, (r, img, hash)| {
            embed_one(backend, r, img).map(|e| (e, hash.clone()))
        })
        .collect::<Result<_>>()?;
    let executed = computed.len();
    for (e, hash) in computed {
        if let Some(c) = cache.as_deref_mut() {
            c.insert(e.record_key().to_string(), hash, e.vector().to_vec());
        }
        table.insert(e.record_key().to_string(), e);
    }
    Ok((table, executed))
}

pub trait SideClassifierBackend {
    fn name(&self) -> String;

    fn classify(&mut self, image: &RasterImage) -> Result<Side>;
}

/// Labels an image `left` when its left half is at least as bright as its right half.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockSideClassifier;

impl SideClassifierBackend for MockSideClassifier {
    fn name(&self) -> String {
        "mock_half_mass".into()
    }

    fn classify(&mut self, image: &RasterImage) -> Result<Side> {
        let half = image.width() / 2;
        let (mut left, mut right) = (0u64, 0u64);
        for y in 0..image.height() {
            for x in 0..image.width() {
                let s: u64 = image.pixel(x, y).iter().map(|&v| u64::from(v)).sum();
                if x < half {
                    left += s;
                } else if x >= image.width() - half {
                    right += s;
                }
            }
        }
        Ok(if left >= right { Side::Left } else { Side::Right })
    }
}

/// Labels every unknown-side record and switches the manifest to side-split
/// identities. Records that already carry a side are left alone.
pub fn split_by_side(manifest: &DatasetManifest, classifier: &mut dyn SideClassifierBackend) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    out.side_split = true;
    for r in out.records.iter_mut().filter(|r| r.side == Side::Unknown) {
        let key = r.key();
        let err = |message: String| Error::SideSplit {
            record: key.clone(),
            message,
        };
        let img = io::load_image(&r.path).map_err(|e| err(e.to_string()))?;
        r.side = classifier
            .classify(&img)
            .map_err(|e| err(format!("classifier {} failed: {e}", classifier.name())))?;
        if r.side == Side::Unknown {
            return Err(err("classifier returned no side".into()));
        }
    }
    Ok(out)
}
