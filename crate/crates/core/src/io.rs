//! File helpers: PNG codec for images and masks, JSON documents, hashing.

use std::fs;
use std::path::{Component, Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, RasterImage};

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width(), img.height());
    match img {
        DynamicImage::ImageLuma8(b) => RasterImage::new(w, h, 1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => RasterImage::new(w, h, 3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => RasterImage::new(w, h, 4, b.into_raw()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => {
            RasterImage::new(w, h, 4, img.to_rgba8().into_raw())
        }
        DynamicImage::ImageLuma16(_) => RasterImage::new(w, h, 1, img.to_luma8().into_raw()),
        _ => RasterImage::new(w, h, 3, img.to_rgb8().into_raw()),
    }
}

pub fn save_image(image: &RasterImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = image.dims();
    let data = image.data().to_vec();
    let res = match image.channels() {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, data).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, data).map(|b| b.save(path)),
        _ => ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, data).map(|b| b.save(path)),
    };
    match res {
        Some(r) => r.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        }),
        None => Err(Error::invalid("image", "buffer size mismatch")),
    }
}

/// Single-channel PNG, foreground 255.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let img = RasterImage::new(mask.width(), mask.height(), 1, mask.to_gray_bytes())?;
    save_image(&img, path)
}

/// Any non-zero sample of the first channel counts as foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let c = img.channels() as usize;
    let first: Vec<u8> = img.data().iter().step_by(c).copied().collect();
    BinaryMask::from_gray_bytes(img.width(), img.height(), &first)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Lexical normalization: drops `.` and folds `..` where possible.
pub fn normalize_path(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// Expresses `target` relative to directory `base`. Both are normalized lexically
/// and made absolute against the current directory first.
pub fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| {
        if p.is_absolute() {
            normalize_path(p)
        } else {
            let cwd = std::env::current_dir().unwrap_or_default();
            normalize_path(&cwd.join(p))
        }
    };
    let target = abs(target);
    let base = abs(base);
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out
}

/// Path with forward slashes, for stable serialized output.
pub fn path_string(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
