//! File formats: PFM float maps, 8/16-bit PNG rasters, JSON documents.

mod pfm;

pub use pfm::{read_pfm, write_pfm, Pfm};

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RasterImage, ScalarField};

/// KITTI stores depth as `u16` metres × 256.
pub const DEFAULT_DEPTH_SCALE: f64 = 256.0;

/// Version tag carried by every machine-readable report and sidecar.
pub const SCHEMA_VERSION: &str = "haze/v1";

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn is_pfm(path: &Path) -> bool {
    extension(path) == "pfm"
}

/// Loads an RGB image. PFM samples are taken as-is; 8-bit and 16-bit
/// integer images are divided by their maximum code value.
pub fn load_raster(path: &Path) -> Result<RasterImage> {
    if is_pfm(path) {
        let pfm = read_pfm(path)?;
        if pfm.channels != 3 {
            return Err(Error::format(path, "expected a three-channel PFM"));
        }
        let data = pfm.data.iter().map(|&v| f64::from(v)).collect();
        return RasterImage::new(pfm.height, pfm.width, data)
            .map_err(|e| Error::format(path, e.to_string()));
    }
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .into_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        _ => img
            .into_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
    };
    RasterImage::new(h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_raster_pfm(path: &Path, image: &RasterImage) -> Result<()> {
    let pfm = Pfm {
        width: image.width(),
        height: image.height(),
        channels: 3,
        data: image.values().iter().map(|&v| v as f32).collect(),
    };
    write_pfm(path, &pfm)
}

/// Writes an 8-bit PNG (values rounded to the nearest code).
pub fn save_raster_png(path: &Path, image: &RasterImage) -> Result<()> {
    let raw: Vec<u8> = image
        .values()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_raster(path: &Path, image: &RasterImage) -> Result<()> {
    if is_pfm(path) {
        save_raster_pfm(path, image)
    } else {
        save_raster_png(path, image)
    }
}

pub fn load_scalar_pfm(path: &Path) -> Result<ScalarField> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(Error::format(path, "expected a single-channel PFM"));
    }
    let data = pfm.data.iter().map(|&v| f64::from(v)).collect();
    ScalarField::new(pfm.height, pfm.width, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_scalar_pfm(path: &Path, field: &ScalarField) -> Result<()> {
    let pfm = Pfm {
        width: field.width(),
        height: field.height(),
        channels: 1,
        data: field.values().iter().map(|&v| v as f32).collect(),
    };
    write_pfm(path, &pfm)
}

/// Scale sidecar for integer depth maps: metres = code / `depth_scale`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DepthScaleSidecar {
    pub depth_scale: f64,
}

/// Path of the scale sidecar for a PNG depth map (`foo.png` → `foo.json`).
pub fn depth_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a depth (or range) map in metres.
///
/// PFM files hold metres directly. 16-bit PNGs are divided by the scale in
/// their sidecar when one exists, else by `fallback_scale`. A zero code
/// marks a pixel without a measurement and stays zero.
pub fn load_depth(path: &Path, fallback_scale: f64) -> Result<ScalarField> {
    if is_pfm(path) {
        return load_scalar_pfm(path);
    }
    let sidecar = depth_sidecar_path(path);
    let scale = if sidecar.exists() {
        read_json::<DepthScaleSidecar>(&sidecar)?.depth_scale
    } else {
        fallback_scale
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::format(path, format!("invalid depth scale {scale}")));
    }
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / scale).collect(),
        _ => return Err(Error::format(path, "depth PNG must be single-channel 16-bit")),
    };
    ScalarField::new(h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a 16-bit depth PNG plus its scale sidecar.
pub fn save_depth_png16(path: &Path, depth: &ScalarField, scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth
        .values()
        .iter()
        .map(|&d| (d * scale).round().clamp(0.0, f64::from(u16::MAX)) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))?;
    write_json(&depth_sidecar_path(path), &DepthScaleSidecar { depth_scale: scale })
}

/// Writes a boolean mask as an 8-bit PNG (0 / 255).
pub fn save_mask_png(path: &Path, height: usize, width: usize, mask: &[bool]) -> Result<()> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::shape(format!("{height}x{width} mask"), format!("{} entries", mask.len())))?;
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let img = RasterImage::from_fn(3, 4, |i, j| [0.25 * i as f64, 0.125 * j as f64, 0.5]).unwrap();
        save_raster(&path, &img).unwrap();
        assert_eq!(load_raster(&path).unwrap(), img);
    }

    #[test]
    fn png8_quantizes_to_255ths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = RasterImage::from_fn(2, 2, |i, j| [0.3 * i as f64, 0.7 * j as f64, 1.0]).unwrap();
        save_raster(&path, &img).unwrap();
        let back = load_raster(&path).unwrap();
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn depth_png16_uses_sidecar_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = ScalarField::new(1, 3, vec![0.0, 1.5, 80.0]).unwrap();
        save_depth_png16(&path, &depth, 100.0).unwrap();
        let back = load_depth(&path, 1.0).unwrap();
        assert_eq!(back.values(), &[0.0, 1.5, 80.0]);

        std::fs::remove_file(depth_sidecar_path(&path)).unwrap();
        let fallback = load_depth(&path, 1000.0).unwrap();
        assert_eq!(fallback.values(), &[0.0, 0.15, 8.0]);
    }

    #[test]
    fn rejects_one_channel_pfm_as_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pfm");
        save_scalar_pfm(&path, &ScalarField::filled(2, 2, 1.0).unwrap()).unwrap();
        assert!(matches!(load_raster(&path), Err(Error::Format { .. })));
        assert_eq!(load_scalar_pfm(&path).unwrap().values(), &[1.0; 4]);
    }
}
