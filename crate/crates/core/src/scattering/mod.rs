//! Forward haze physics under Koschmieder's law.
//!
//! A hazy observation is a per-pixel blend of the haze-free radiance and a
//! homogeneous airlight colour:
//!
//! ```text
//! I = I' · T + A · (1 − T),    T = exp(−β R),    β = −ln ε / V
//! ```
//!
//! where `R` is the range (ray length) of each pixel, `V` the meteorological
//! visibility and `ε` the minimal contrast an observer can still resolve.
//! At `R = V` the transmission equals `ε` exactly.

mod airlight;
mod dataset;

pub use airlight::{sample_airlight, sample_airlight_with_jitter, AirlightFamily};
pub use dataset::{
    make_visibility_dataset, AirlightSpec, DatasetConfig, DatasetManifest, DatasetRecord,
    DepthSource, SampleSidecar,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RasterImage, ScalarField};

/// Default minimal observable contrast (daylight convention).
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Default transmission floor for [`invert_haze`].
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Scene-wide scattering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringParams {
    pub airlight: [f64; 3],
    /// Visibility in meters.
    pub visibility: f64,
    pub epsilon: f64,
}

impl ScatteringParams {
    pub fn new(airlight: [f64; 3], visibility: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            airlight,
            visibility,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_visibility_epsilon(self.visibility, self.epsilon)?;
        if let Some(a) = self
            .airlight
            .iter()
            .find(|a| !a.is_finite() || !(0.0..=1.0).contains(*a))
        {
            return Err(Error::Domain(format!("airlight component {a} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        -self.epsilon.ln() / self.visibility
    }
}

fn validate_visibility_epsilon(visibility: f64, epsilon: f64) -> Result<()> {
    if !(visibility > 0.0 && visibility.is_finite()) {
        return Err(Error::Domain(format!("visibility must be positive, got {visibility}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Extinction coefficient `β = −ln ε / V`, in 1/m.
pub fn extinction_coefficient(visibility: f64, epsilon: f64) -> Result<f64> {
    validate_visibility_epsilon(visibility, epsilon)?;
    Ok(-epsilon.ln() / visibility)
}

/// Per-pixel transmission `exp(−β R)`.
pub fn transmission_map(range: &ScalarField, beta: f64) -> Result<ScalarField> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("extinction coefficient must be positive, got {beta}")));
    }
    range.ensure_non_negative("range")?;
    Ok(range.map(|r| (-beta * r).exp()))
}

/// Renders the hazy observation of `clear` seen through `range` metres of
/// homogeneous haze.
pub fn synthesize_haze(
    clear: &RasterImage,
    range: &ScalarField,
    params: &ScatteringParams,
) -> Result<RasterImage> {
    params.validate()?;
    let (h, w) = clear.dims();
    range.ensure_dims(h, w)?;
    let t = transmission_map(range, params.beta())?;
    let a = params.airlight;
    let data = clear
        .values()
        .chunks_exact(3)
        .zip(t.values())
        .flat_map(|(px, &t)| {
            let mix = |c: usize| koschmieder(px[c], a[c], t).clamp(0.0, 1.0);
            [mix(0), mix(1), mix(2)]
        })
        .collect();
    Ok(RasterImage::from_raw(h, w, data))
}

/// `I'·T + A·(1 − T)`, written so that `I' = A` and `T = 1` are exact
/// fixed points.
#[inline]
pub(crate) fn koschmieder(clear: f64, airlight: f64, t: f64) -> f64 {
    if t == 1.0 {
        clear
    } else {
        airlight + (clear - airlight) * t
    }
}

/// Options for [`invert_haze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertOptions {
    pub t_min: f64,
    /// Floor the transmission at `t_min` instead of failing.
    pub clamp_low_transmission: bool,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            t_min: DEFAULT_T_MIN,
            clamp_low_transmission: false,
        }
    }
}

/// Haze-free estimate plus diagnostics.
#[derive(Debug, Clone)]
pub struct Dehazed {
    pub image: RasterImage,
    /// Pixels where any channel left `[0, 1]` before clamping.
    pub clamped_pixels: usize,
    /// Pixels whose transmission was floored at `t_min`.
    pub floored_pixels: usize,
}

/// Solves Koschmieder's law for the clear image: `I' = (I − A(1 − T)) / T`.
pub fn invert_haze(
    hazy: &RasterImage,
    range: &ScalarField,
    params: &ScatteringParams,
    options: InvertOptions,
) -> Result<Dehazed> {
    params.validate()?;
    if !(options.t_min > 0.0 && options.t_min <= 1.0) {
        return Err(Error::Domain(format!("t_min must lie in (0, 1], got {}", options.t_min)));
    }
    let (h, w) = hazy.dims();
    range.ensure_dims(h, w)?;
    let t = transmission_map(range, params.beta())?;

    let low: Vec<f64> = t.values().iter().copied().filter(|&t| t < options.t_min).collect();
    if !low.is_empty() && !options.clamp_low_transmission {
        return Err(Error::LowTransmission {
            min_t: low.iter().copied().fold(f64::INFINITY, f64::min),
            t_min: options.t_min,
            count: low.len(),
        });
    }

    let a = params.airlight;
    let mut clamped_pixels = 0;
    let mut data = Vec::with_capacity(h * w * 3);
    for (px, &t) in hazy.values().chunks_exact(3).zip(t.values()) {
        let t = t.max(options.t_min);
        let mut out_of_range = false;
        for c in 0..3 {
            let v = (px[c] - a[c] * (1.0 - t)) / t;
            if !(0.0..=1.0).contains(&v) {
                out_of_range = true;
            }
            data.push(v.clamp(0.0, 1.0));
        }
        clamped_pixels += usize::from(out_of_range);
    }
    Ok(Dehazed {
        image: RasterImage::from_raw(h, w, data),
        clamped_pixels,
        floored_pixels: low.len(),
    })
}

/// Signed per-channel contrast against the airlight.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMap {
    pub height: usize,
    pub width: usize,
    /// Interleaved like [`RasterImage`].
    pub values: Vec<f64>,
}

/// `C = (I − A) / A` per channel.
pub fn contrast_map(image: &RasterImage, airlight: [f64; 3]) -> Result<ContrastMap> {
    if let Some(a) = airlight.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!(
            "contrast needs a strictly positive airlight, got channel value {a}"
        )));
    }
    let values = image
        .values()
        .chunks_exact(3)
        .flat_map(|px| {
            let c = |k: usize| (px[k] - airlight[k]) / airlight[k];
            [c(0), c(1), c(2)]
        })
        .collect();
    Ok(ContrastMap {
        height: image.height(),
        width: image.width(),
        values,
    })
}
