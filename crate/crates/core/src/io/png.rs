//! Lossless raster files: 16-bit grayscale for probability maps, 8-bit for
//! frames and masks.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::frame::RgbImage;
use crate::map::{BinaryMask, ImageShape, ProbMap};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub(crate) fn quantize_u16(v: f64) -> u16 {
    (v * 65535.0).round().clamp(0.0, 65535.0) as u16
}

/// Writes `round(p * 65535)` as a 16-bit grayscale PNG.
pub fn save_prob_map(path: &Path, map: &ProbMap) -> Result<()> {
    ensure_parent(path)?;
    let shape = map.shape();
    let raw: Vec<u16> = map.values().iter().map(|v| quantize_u16(*v)).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(shape.width as u32, shape.height as u32, raw)
            .expect("buffer length matches shape");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Reads a grayscale PNG as a probability map (`value / max`).
pub fn load_prob_map(path: &Path) -> Result<ProbMap> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray = img.to_luma16();
    let shape = ImageShape::new(gray.height() as usize, gray.width() as usize)?;
    let values = gray.as_raw().iter().map(|v| f64::from(*v) / 65535.0).collect();
    ProbMap::new(shape, values)
}

pub fn save_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    rgb.to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn load_rgb8(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

/// Masks are stored as 8-bit grayscale, 0 or 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    ensure_parent(path)?;
    let shape = mask.shape();
    let raw: Vec<u8> = mask.values().iter().map(|v| v * 255).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(shape.width as u32, shape.height as u32, raw)
            .expect("buffer length matches shape");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn load_gray8(path: &Path) -> Result<image::GrayImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_luma8())
}
