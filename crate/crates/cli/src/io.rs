//! Image and mask files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{GrayImage, ImageFormat, RgbImage};
use promptmine_core::{BinaryMask, Image, SoftMask};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

pub fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes any supported file as 8-bit RGB, normalized to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_rgb8(w as usize, h as usize, img.as_raw())?)
}

/// Ground truth: grayscale, foreground where the value exceeds 127.
pub fn read_gt(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v > 127).collect();
    Ok(BinaryMask::new(w as usize, h as usize, data)?)
}

/// Soft mask stored as 8-bit grayscale.
pub fn read_mask(path: &Path) -> Result<SoftMask> {
    let img = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(SoftMask::from_gray8(w as usize, h as usize, img.as_raw())?)
}

pub fn write_png_rgb(path: &Path, image: &Image) -> Result<()> {
    let (w, h) = image.dims();
    let buf = RgbImage::from_raw(w as u32, h as u32, image.to_rgb8())
        .context("image buffer has the wrong length")?;
    write_atomic(path, |tmp| Ok(buf.save_with_format(tmp, ImageFormat::Png)?))
}

/// Writes `round(255 * m)` per pixel as a grayscale PNG.
pub fn write_mask(path: &Path, mask: &SoftMask) -> Result<()> {
    let (w, h) = mask.dims();
    let buf = GrayImage::from_raw(w as u32, h as u32, mask.to_gray8())
        .context("mask buffer has the wrong length")?;
    write_atomic(path, |tmp| Ok(buf.save_with_format(tmp, ImageFormat::Png)?))
}

pub fn write_gt(path: &Path, gt: &BinaryMask) -> Result<()> {
    write_mask(path, &gt.to_soft())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |tmp| Ok(fs::write(tmp, text)?))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

/// Writes through a sibling temp file and renames it into place, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_path(path);
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e.context(format!("writing {}", path.display())));
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}
