//! Pinhole back-projection: z-depth to ray length and back.
//!
//! Pixel `(i, j)` is sampled at its center, i.e. the homogeneous image point
//! `(j + 0.5, i + 0.5, 1)`. Back-projecting through `K⁻¹` and scaling by the
//! z-depth gives a camera-frame point whose Euclidean norm is the range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Zero-skew pinhole intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Image size the intrinsics were calibrated for, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width: None,
            height: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "principal point must be finite, got ({}, {})",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// `K⁻¹ · (j + 0.5, i + 0.5, 1)ᵀ` for the pixel at `(row, col)`.
    pub fn back_project(&self, row: usize, col: usize) -> [f64; 3] {
        [
            (col as f64 + 0.5 - self.cx) / self.fx,
            (row as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        ]
    }

    /// Length of the back-projected ray with unit z-component.
    pub fn ray_norm(&self, row: usize, col: usize) -> f64 {
        let [x, y, z] = self.back_project(row, col);
        (x * x + y * y + z * z).sqrt()
    }

    fn ray_norms(&self, height: usize, width: usize) -> impl Iterator<Item = f64> + '_ {
        (0..height * width).map(move |k| self.ray_norm(k / width, k % width))
    }
}

/// Converts z-depth to Euclidean range, pixel by pixel.
pub fn depth_to_range(depth: &ScalarField, intrinsics: &CameraIntrinsics) -> Result<ScalarField> {
    intrinsics.validate()?;
    depth.ensure_non_negative("depth")?;
    let (h, w) = depth.dims();
    let data = depth
        .values()
        .iter()
        .zip(intrinsics.ray_norms(h, w))
        .map(|(&d, n)| d * n)
        .collect();
    Ok(ScalarField::from_raw(h, w, data))
}

/// Inverse of [`depth_to_range`].
pub fn range_to_depth(range: &ScalarField, intrinsics: &CameraIntrinsics) -> Result<ScalarField> {
    intrinsics.validate()?;
    range.ensure_non_negative("range")?;
    let (h, w) = range.dims();
    let data = range
        .values()
        .iter()
        .zip(intrinsics.ray_norms(h, w))
        .map(|(&r, n)| r / n)
        .collect();
    Ok(ScalarField::from_raw(h, w, data))
}
