//! Procedural road scenes with known range, airlight and visibility.
//!
//! Used by tests, the gradient checker and the CLI's self-checks. The
//! camera looks down a flat road towards a smooth facade; the clear image is
//! coloured sinusoidal texture.

use rand::Rng;

use crate::error::Result;
use crate::field::{RasterImage, ScalarField};
use crate::geometry::{depth_to_range, CameraIntrinsics};
use crate::rng;
use crate::scattering::{sample_airlight, synthesize_haze, AirlightFamily, ScatteringParams};

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub clear: RasterImage,
    pub hazy: RasterImage,
    pub range: ScalarField,
    pub intrinsics: CameraIntrinsics,
    pub params: ScatteringParams,
    pub d_ref: f64,
    pub v_rel: f64,
}

/// Intrinsics with KITTI-like proportions for an image of the given size.
pub fn road_intrinsics(height: usize, width: usize) -> CameraIntrinsics {
    let f = 0.58 * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 * 0.45,
        width: Some(width),
        height: Some(height),
    }
}

const CAMERA_HEIGHT: f64 = 1.65;

/// Smooth z-depth: road plane below the horizon, a facade whose distance
/// varies across columns everywhere else.
pub fn road_depth(height: usize, width: usize, seed: u64) -> ScalarField {
    let k = road_intrinsics(height, width);
    let mut rng = rng::stream(seed, 0xD0);
    let base: f64 = rng.gen_range(25.0..45.0);
    let amp: f64 = rng.gen_range(3.0..10.0);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let wx = width as f64;
    ScalarField::from_raw(
        height,
        width,
        (0..height * width)
            .map(|q| {
                let (i, j) = (q / width, q % width);
                let wall = base + amp * (std::f64::consts::TAU * j as f64 / wx + phase).sin();
                let below = i as f64 + 0.5 - k.cy;
                if below > 0.0 {
                    (k.fy * CAMERA_HEIGHT / below).min(wall)
                } else {
                    wall
                }
            })
            .collect(),
    )
}

/// Coloured texture in [0.02, 0.98]: two region palettes plus a few
/// oriented sinusoids per channel.
pub fn textured_clear(height: usize, width: usize, seed: u64) -> RasterImage {
    let mut rng = rng::stream(seed, 0xC1);
    let horizon = height as f64 * 0.45;
    let palette: [[f64; 3]; 2] = [
        [rng.gen_range(0.15..0.55), rng.gen_range(0.15..0.55), rng.gen_range(0.15..0.55)],
        [rng.gen_range(0.15..0.55), rng.gen_range(0.15..0.55), rng.gen_range(0.15..0.55)],
    ];
    let waves: Vec<[(f64, f64, f64); 3]> = (0..5)
        .map(|_| {
            let mut wave = || {
                (
                    rng.gen_range(1.0..14.0) / width as f64,
                    rng.gen_range(1.0..10.0) / height as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            };
            [wave(), wave(), wave()]
        })
        .collect();
    let data = (0..height * width)
        .flat_map(|q| {
            let (i, j) = ((q / width) as f64, (q % width) as f64);
            let region = usize::from(i + 0.5 > horizon);
            std::array::from_fn::<f64, 3, _>(|c| {
                let tex: f64 = waves
                    .iter()
                    .map(|w| {
                        let (fx, fy, ph) = w[c];
                        (std::f64::consts::TAU * (fx * j + fy * i) + ph).sin()
                    })
                    .sum();
                (palette[region][c] + 0.12 * tex).clamp(0.02, 0.98)
            })
        })
        .collect();
    RasterImage::from_raw(height, width, data)
}

/// Scene with the given relative visibility and airlight family.
pub fn road_scene(
    height: usize,
    width: usize,
    seed: u64,
    v_rel: f64,
    family: AirlightFamily,
    epsilon: f64,
) -> Result<SyntheticScene> {
    let intrinsics = road_intrinsics(height, width);
    let range = depth_to_range(&road_depth(height, width, seed), &intrinsics)?;
    let clear = textured_clear(height, width, seed);
    let d_ref = range.max();
    let params = ScatteringParams::new(sample_airlight(family, rng::derive_seed(seed, 0xA0)), v_rel * d_ref, epsilon)?;
    let hazy = synthesize_haze(&clear, &range, &params)?;
    Ok(SyntheticScene {
        clear,
        hazy,
        range,
        intrinsics,
        params,
        d_ref,
        v_rel,
    })
}

/// Scene number `index` of a batch: relative visibility drawn from
/// [0.1, 1], airlight families cycled.
pub fn batch_scene(height: usize, width: usize, seed: u64, index: usize, epsilon: f64) -> Result<SyntheticScene> {
    let scene_seed = rng::derive_seed(seed, index as u64);
    let v_rel = rng::stream(scene_seed, 0xB0).gen_range(0.1..=1.0);
    let family = AirlightFamily::ALL[index % AirlightFamily::ALL.len()];
    road_scene(height, width, scene_seed, v_rel, family, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_valid() {
        let a = batch_scene(16, 48, 3, 2, 0.05).unwrap();
        let b = batch_scene(16, 48, 3, 2, 0.05).unwrap();
        assert_eq!(a.hazy, b.hazy);
        assert_eq!(a.range, b.range);
        assert!(a.range.min() > 0.0);
        assert!((0.1..=1.0).contains(&a.v_rel));
        assert_eq!(a.d_ref, a.range.max());
    }

    #[test]
    fn range_decreases_down_the_road() {
        let s = road_scene(32, 96, 1, 0.5, AirlightFamily::Grey, 0.05).unwrap();
        let col = 48;
        assert!(s.range.get(31, col) < s.range.get(20, col));
    }
}
