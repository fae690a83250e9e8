//! Deterministic stand-ins for the heavy backends and a synthetic dataset
//! generator, so the whole pipeline runs without model weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::ellipse_mask;
use crate::detection::{DetectionDump, DetectorBackend};
use crate::embedding::splitmix64;
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::masking::{MaskCandidate, SegmenterBackend, SoftMask};
use crate::types::{BinaryMask, BoundingBox, Detection, DetectorSource, RasterImage, Side};

/// Confidence attached to every replayed box.
pub const REPLAY_CONFIDENCE: f32 = 0.9;
/// Text-alignment score attached to replayed zero-shot boxes.
pub const REPLAY_TEXT_ALIGNMENT: f32 = 0.8;

/// Replays annotated boxes for images it has seen, keyed by image content.
#[derive(Debug, Clone)]
pub struct MockReplayDetector {
    source: DetectorSource,
    boxes: Arc<HashMap<String, Vec<BoundingBox>>>,
    /// Max absolute per-coordinate jitter in pixels, and its seed.
    jitter: Option<(f32, u64)>,
}

impl MockReplayDetector {
    pub fn new(source: DetectorSource, boxes: Arc<HashMap<String, Vec<BoundingBox>>>) -> Self {
        Self {
            source,
            boxes,
            jitter: None,
        }
    }

    pub fn with_jitter(mut self, amplitude: f32, seed: u64) -> Self {
        self.jitter = (amplitude > 0.0).then_some((amplitude, seed));
        self
    }

    /// Content hash -> annotated boxes for every record with an annotation sidecar.
    pub fn table_from_manifest(manifest: &DatasetManifest) -> Result<HashMap<String, Vec<BoundingBox>>> {
        let mut table = HashMap::new();
        for r in &manifest.records {
            let Some(ann) = &r.annotation else { continue };
            let dump: DetectionDump = io::read_json(ann)?;
            let hash = io::load_image(&r.path)?.content_hash();
            table.insert(hash, dump.detections.into_iter().map(|d| d.bbox).collect());
        }
        Ok(table)
    }

    fn jittered(&self, b: BoundingBox, hash: &str, index: usize) -> BoundingBox {
        let Some((amp, seed)) = self.jitter else { return b };
        let mut state = seed ^ u64::from_str_radix(&hash[..16], 16).unwrap_or(0) ^ (index as u64) << 32;
        let mut next = || {
            state = splitmix64(state);
            ((state >> 40) as f32 / (1u64 << 24) as f32 * 2.0 - 1.0) * amp
        };
        let (dx0, dy0, dx1, dy1) = (next(), next(), next(), next());
        let (x0, x1) = (b.x_min + dx0, b.x_max + dx1);
        let (y0, y1) = (b.y_min + dy0, b.y_max + dy1);
        BoundingBox::new(x0.min(x1 - 1.0), y0.min(y1 - 1.0), x1.max(x0 + 1.0), y1.max(y0 + 1.0)).unwrap_or(b)
    }
}

impl DetectorBackend for MockReplayDetector {
    fn name(&self) -> String {
        match self.jitter {
            Some((a, s)) => format!("mock_replay({:?},jitter={a},seed={s})", self.source),
            None => format!("mock_replay({:?})", self.source),
        }
    }

    fn detect(&mut self, image: &RasterImage, _prompt: Option<&str>) -> Result<Vec<Detection>> {
        let hash = image.content_hash();
        let Some(boxes) = self.boxes.get(&hash) else {
            return Ok(Vec::new());
        };
        Ok(boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Detection {
                bbox: self.jittered(*b, &hash, i),
                confidence: REPLAY_CONFIDENCE,
                text_alignment: (self.source == DetectorSource::ZeroShot).then_some(REPLAY_TEXT_ALIGNMENT),
                source: self.source,
                label: "accessory".into(),
            })
            .collect())
    }
}

/// Returns the same box for every image.
#[derive(Debug, Clone, Copy)]
pub struct MockFixedBoxDetector {
    pub bbox: BoundingBox,
    pub source: DetectorSource,
}

impl DetectorBackend for MockFixedBoxDetector {
    fn name(&self) -> String {
        format!("mock_fixed_box({:?})", self.source)
    }

    fn detect(&mut self, _image: &RasterImage, _prompt: Option<&str>) -> Result<Vec<Detection>> {
        Ok(vec![Detection {
            bbox: self.bbox,
            confidence: REPLAY_CONFIDENCE,
            text_alignment: (self.source == DetectorSource::ZeroShot).then_some(REPLAY_TEXT_ALIGNMENT),
            source: self.source,
            label: "accessory".into(),
        }])
    }
}

/// Segments a box prompt as the ellipse inscribed in it.
///
/// Scores fall from 1 at the centre to 0.5 on the ellipse and 0 outside. With
/// multi-mask enabled it also returns a shrunken ellipse and the full box with
/// lower quality, which the default quality threshold partly rejects.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEllipseSegmenter;

impl MockEllipseSegmenter {
    pub const QUALITIES: [f32; 3] = [0.92, 0.55, 0.35];

    fn ellipse(dims: (u32, u32), b: &BoundingBox, scale: f32) -> SoftMask {
        let (w, h) = dims;
        let (cx, cy) = ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0);
        let (ax, ay) = ((b.width() / 2.0 * scale).max(0.5), (b.height() / 2.0 * scale).max(0.5));
        let mut scores = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let u = (x as f32 + 0.5 - cx) / ax;
                let v = (y as f32 + 0.5 - cy) / ay;
                let q = u * u + v * v;
                scores.push(if q <= 1.0 { 1.0 - 0.5 * q } else { 0.0 });
            }
        }
        SoftMask {
            width: w,
            height: h,
            scores,
        }
    }

    fn rectangle(dims: (u32, u32), b: &BoundingBox) -> SoftMask {
        let (w, h) = dims;
        let mut scores = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let inside = px >= b.x_min && px <= b.x_max && py >= b.y_min && py <= b.y_max;
                scores.push(if inside { 0.75 } else { 0.0 });
            }
        }
        SoftMask {
            width: w,
            height: h,
            scores,
        }
    }
}

impl SegmenterBackend for MockEllipseSegmenter {
    fn name(&self) -> String {
        "mock_ellipse".into()
    }

    fn segment(&mut self, image: &RasterImage, prompt: &BoundingBox, multi_mask: bool) -> Result<Vec<MaskCandidate>> {
        let dims = image.dims();
        let [q0, q1, q2] = Self::QUALITIES;
        let mut out = vec![MaskCandidate {
            mask: Self::ellipse(dims, prompt, 1.0),
            quality: q0,
        }];
        if multi_mask {
            out.push(MaskCandidate {
                mask: Self::ellipse(dims, prompt, 0.6),
                quality: q1,
            });
            out.push(MaskCandidate {
                mask: Self::rectangle(dims, prompt),
                quality: q2,
            });
        }
        Ok(out)
    }
}

pub const SYNTH_WIDTH: u32 = 120;
pub const SYNTH_HEIGHT: u32 = 150;
/// Padding between the drawn accessory and its annotated box, pixels.
pub const SYNTH_BOX_PAD: f32 = 3.0;

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    /// Record keys of the occluded images.
    pub occluded: Vec<String>,
    /// Ground-truth accessory mask per record key, in source image coordinates.
    pub ground_truth: HashMap<String, PathBuf>,
}

struct Blob {
    u: f64,
    v: f64,
    sigma: f64,
    amp: f64,
}

struct Template {
    semi: (f64, f64),
    tone: [f64; 3],
    blobs: Vec<Blob>,
}

fn rng_for(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed ^ stream) ^ a) ^ b);
    ChaCha8Rng::seed_from_u64(s)
}

impl Template {
    fn generate(seed: u64, identity: usize) -> Self {
        let mut rng = rng_for(seed, 1, identity as u64, 0);
        let a = rng.gen_range(19.0..23.0);
        let b = rng.gen_range(56.0..62.0);
        let tone = [
            rng.gen_range(175.0..215.0),
            rng.gen_range(130.0..165.0),
            rng.gen_range(105.0..135.0),
        ];
        let blobs = (0..8)
            .map(|_| Blob {
                u: rng.gen_range(-0.8..0.8) * a,
                v: rng.gen_range(-0.85..0.85) * b,
                sigma: rng.gen_range(4.0..10.0),
                amp: rng.gen_range(-70.0..70.0),
            })
            .collect();
        Self {
            semi: (a, b),
            tone,
            blobs,
        }
    }

    /// Ear colour at ear-local coordinates `(u, v)`.
    fn shade(&self, u: f64, v: f64, c: usize) -> f64 {
        let (a, b) = self.semi;
        let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
        let rim = if r > 0.8 { -40.0 * (r - 0.8) / 0.2 } else { 0.0 };
        let texture: f64 = self
            .blobs
            .iter()
            .map(|bl| bl.amp * (-((u - bl.u).powi(2) + (v - bl.v).powi(2)) / (2.0 * bl.sigma * bl.sigma)).exp())
            .sum();
        let gain = [1.0, 0.85, 0.75][c];
        self.tone[c] + gain * (texture + rim)
    }
}

/// Writes a synthetic ear dataset under `root`.
///
/// Every identity gets an elongated-ellipse ear with its own tone and blob
/// texture; each image adds a small rotation and shift, a brightness offset and
/// pixel noise. Exactly `round(occlusion_rate * total)` images, chosen by the
/// seed, get a saturated disk "accessory" on the lower ear, with its box
/// recorded as a detection sidecar and its pixels as a ground-truth mask.
///
/// Layout: `images/sNNN/sNNN_MM.png`, and per image under `annotations/sNNN/`
/// the `.det.json` sidecar, the `.ear.png` ear mask and the `.gt.mask.png`
/// accessory mask; `manifest.json` at the root.
pub fn synth_dataset(
    root: &Path,
    n_identities: usize,
    images_per_identity: usize,
    occlusion_rate: f64,
    seed: u64,
) -> Result<SynthDataset> {
    if n_identities == 0 || images_per_identity == 0 {
        return Err(Error::invalid("synthetic dataset", "counts must be at least 1"));
    }
    if !(0.0..=1.0).contains(&occlusion_rate) {
        return Err(Error::invalid("synthetic dataset", "occlusion rate must be in [0, 1]"));
    }
    let total = n_identities * images_per_identity;
    let n_occluded = (occlusion_rate * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    // Fisher-Yates with the dataset seed
    let mut rng = rng_for(seed, 2, 0, 0);
    for i in (1..total).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut occluded_idx = vec![false; total];
    for &i in &order[..n_occluded] {
        occluded_idx[i] = true;
    }

    let mut records = Vec::with_capacity(total);
    let mut occluded = Vec::new();
    let mut ground_truth = HashMap::new();
    for id in 0..n_identities {
        let template = Template::generate(seed, id);
        let subject = format!("s{id:03}");
        for k in 0..images_per_identity {
            let stem = format!("{subject}_{k:02}");
            let index = id * images_per_identity + k;
            let sample = render_sample(&template, seed, id, k, occluded_idx[index])?;

            let image_path = root.join("images").join(&subject).join(format!("{stem}.png"));
            let ann_dir = root.join("annotations").join(&subject);
            let ear_path = ann_dir.join(format!("{stem}.ear.png"));
            let det_path = ann_dir.join(format!("{stem}.det.json"));
            let gt_path = ann_dir.join(format!("{stem}.gt.mask.png"));
            io::save_image(&sample.image, &image_path)?;
            io::save_mask(&sample.ear, &ear_path)?;
            io::save_mask(&sample.accessory, &gt_path)?;
            let detections = sample
                .accessory_box
                .map(|bbox| Detection {
                    bbox,
                    confidence: 1.0,
                    text_alignment: None,
                    source: DetectorSource::Supervised,
                    label: "earring".into(),
                })
                .into_iter()
                .collect();
            let key = format!("{subject}/{stem}");
            io::write_json(
                &DetectionDump {
                    image: key.clone(),
                    detections,
                },
                &det_path,
            )?;

            let mut rec = ImageRecord::new(subject.clone(), Side::Left, image_path);
            rec.source_dataset = "synthetic".into();
            rec.ear_mask = Some(ear_path);
            rec.annotation = Some(det_path);
            if sample.accessory_box.is_some() {
                occluded.push(key.clone());
            }
            ground_truth.insert(key, gt_path);
            records.push(rec);
        }
    }
    let manifest = DatasetManifest::new("synthetic", false, records);
    let manifest_path = root.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(SynthDataset {
        root: root.to_path_buf(),
        manifest_path,
        manifest,
        occluded,
        ground_truth,
    })
}

struct Sample {
    image: RasterImage,
    ear: BinaryMask,
    accessory: BinaryMask,
    accessory_box: Option<BoundingBox>,
}

fn render_sample(template: &Template, seed: u64, id: usize, k: usize, occlude: bool) -> Result<Sample> {
    let mut rng = rng_for(seed, 3, id as u64, k as u64);
    let (w, h) = (SYNTH_WIDTH, SYNTH_HEIGHT);
    let angle: f64 = rng.gen_range(-12.0..12.0);
    let center = (
        f64::from(w) / 2.0 + rng.gen_range(-4.0..4.0),
        f64::from(h) / 2.0 + rng.gen_range(-4.0..4.0),
    );
    let brightness: f64 = rng.gen_range(-12.0..12.0);
    let background: f64 = rng.gen_range(80.0..100.0);
    let (a, b) = template.semi;
    let ear = ellipse_mask(w, h, center, a, b, angle);
    let (s, c) = angle.to_radians().sin_cos();

    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let dx = f64::from(x) - center.0;
            let dy = f64::from(y) - center.1;
            let (u, v) = (dx * c - dy * s, dx * s + dy * c);
            for ch in 0..3 {
                let base = if ear.get(x, y) {
                    template.shade(u, v, ch)
                } else {
                    background + 0.1 * f64::from(y) - 5.0 * ch as f64
                };
                let noise: f64 = rng.gen_range(-12.0..12.0);
                data.push((base + brightness + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let mut image = RasterImage::new(w, h, 3, data)?;

    let mut accessory = BinaryMask::empty(w, h);
    let mut accessory_box = None;
    if occlude {
        let u = rng.gen_range(-0.15..0.15) * a;
        let v = rng.gen_range(0.3..0.5) * b;
        let r: f64 = rng.gen_range(8.0..11.0);
        // ear-local to image coordinates (pixel centres at integer + 0.5)
        let cx = center.0 + u * c + v * s + 0.5;
        let cy = center.1 - u * s + v * c + 0.5;
        accessory = BinaryMask::from_fn(w, h, |x, y| {
            (f64::from(x) + 0.5 - cx).powi(2) + (f64::from(y) + 0.5 - cy).powi(2) <= r * r
        });
        for y in 0..h {
            for x in 0..w {
                if accessory.get(x, y) {
                    for ch in 0..3 {
                        image.set(x, y, ch, 255);
                    }
                }
            }
        }
        let pad = f64::from(SYNTH_BOX_PAD);
        let bbox = BoundingBox::new(
            (cx - r - pad) as f32,
            (cy - r - pad) as f32,
            (cx + r + pad) as f32,
            (cy + r + pad) as f32,
        )?;
        accessory_box = bbox.clamp_to(w, h);
    }
    Ok(Sample {
        image,
        ear,
        accessory,
        accessory_box,
    })
}
