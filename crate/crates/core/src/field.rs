//! Dense raster containers shared by every module.
//!
//! Both types store row-major data. [`RasterImage`] interleaves its three
//! channels per pixel, so the sample at row `i`, column `j`, channel `c`
//! lives at `(i * width + j) * 3 + c`.

use crate::error::{Error, Result};

/// Single-channel field: depth, range, transmission or a per-pixel map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "field must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", data.len()),
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at pixel ({}, {})",
                k / width,
                k % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self::new(height, width, data)
    }

    /// Builds a field without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn ensure_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub(crate) fn ensure_non_negative(&self, what: &str) -> Result<()> {
        if let Some(k) = self.data.iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!(
                "negative {what} {} at pixel ({}, {})",
                self.data[k],
                k / self.width,
                k % self.width
            )));
        }
        Ok(())
    }
}

/// Three-channel image of linear light intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{} values for {height}x{width}x3", height * width * 3),
                format!("{} values", data.len()),
            ));
        }
        if let Some(k) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            let px = k / 3;
            return Err(Error::InvalidInput(format!(
                "intensity {} outside [0, 1] at pixel ({}, {}) channel {}",
                data[k],
                px / width,
                px % width,
                k % 3
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| color).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let data = (0..height * width)
            .flat_map(|k| f(k / width, k % width))
            .collect();
        Self::new(height, width, data)
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let k = (row * self.width + col) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    /// Interleaved RGB samples.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn ensure_same_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_intensity() {
        let err = RasterImage::new(1, 1, vec![0.2, 1.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            ScalarField::new(2, 2, vec![1.0; 3]),
            Err(Error::Shape { .. })
        ));
        assert!(ScalarField::new(0, 4, vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ScalarField::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn interleaved_layout() {
        let img = RasterImage::from_fn(2, 3, |i, j| [i as f64 / 2.0, j as f64 / 3.0, 0.5]).unwrap();
        assert_eq!(img.pixel(1, 2), [0.5, 2.0 / 3.0, 0.5]);
        assert_eq!(img.values()[(1 * 3 + 2) * 3 + 1], 2.0 / 3.0);
    }
}
