//! Haze synthesis and decomposition under Koschmieder's law.
//!
//! The forward direction renders a hazy image from a clear image, a range
//! field, an airlight colour and a visibility distance. The inverse
//! direction recovers range, airlight and visibility from a hazy/clear
//! pair by minimizing a photometric reconstruction loss directly, one
//! image at a time. Depth-evaluation metrics and a polynomial
//! visibility-to-PM2.5 calibration complete the toolkit.

pub mod decompose;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pm25;
pub mod rng;
pub mod scattering;
pub mod synthetic;

pub use error::{Error, Result};
pub use field::{RasterImage, ScalarField};
pub use geometry::CameraIntrinsics;
pub use scattering::ScatteringParams;
