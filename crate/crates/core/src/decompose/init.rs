use super::{KnownParams, RangeAnchor};
use crate::error::{Error, Result};
use crate::field::{RasterImage, ScalarField};
use crate::metrics::median;
use crate::scattering::koschmieder;

/// Contrast against the airlight below which a pixel carries no range signal.
pub const IDENTIFIABLE_CONTRAST: f64 = 0.1;

pub const GRID_SIZE: usize = 16;

/// Starting point for the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseInit {
    pub range: ScalarField,
    pub airlight: [f64; 3],
    pub visibility: f64,
    /// `(candidate, loss)` pairs of the visibility scan; empty when visibility is known.
    pub grid: Vec<(f64, f64)>,
}

/// Mean colour of the brightest tenth of the pixels.
pub fn brightest_decile_airlight(hazy: &RasterImage) -> [f64; 3] {
    let v = hazy.values();
    let n = v.len() / 3;
    let brightness = |p: usize| v[3 * p] + v[3 * p + 1] + v[3 * p + 2];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| brightness(q).total_cmp(&brightness(p)).then(p.cmp(&q)));
    let top = n.div_ceil(10);
    let mut a = [0.0; 3];
    for &p in &order[..top] {
        for (c, acc) in a.iter_mut().enumerate() {
            *acc += v[3 * p + c];
        }
    }
    a.map(|s| s / top as f64)
}

/// Pixels whose clear colour differs from `airlight` by at least
/// [`IDENTIFIABLE_CONTRAST`] in some channel.
pub fn contrast_mask(clear: &RasterImage, airlight: [f64; 3]) -> Vec<bool> {
    clear
        .values()
        .chunks_exact(3)
        .map(|px| (0..3).any(|c| (px[c] - airlight[c]).abs() >= IDENTIFIABLE_CONTRAST))
        .collect()
}

/// Per-pixel transmission from the channel-wise ratio `(I − A)/(I' − A)`.
pub fn closed_form_transmission(hazy: &RasterImage, clear: &RasterImage, airlight: [f64; 3], t_min: f64) -> Vec<f64> {
    hazy.values()
        .chunks_exact(3)
        .zip(clear.values().chunks_exact(3))
        .map(|(i, c)| {
            let mut ratios: [f64; 3] = std::array::from_fn(|k| {
                let den = c[k] - airlight[k];
                if den.abs() < 1e-9 {
                    1.0
                } else {
                    ((i[k] - airlight[k]) / den).clamp(t_min, 1.0)
                }
            });
            median(&mut ratios)
        })
        .collect()
}

/// Log-spaced visibility candidates over `[0.05·d_max, 20·d_max]`.
pub fn visibility_grid(d_max: f64) -> Vec<f64> {
    let (lo, hi) = (0.05 * d_max, 20.0 * d_max);
    (0..GRID_SIZE)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID_SIZE - 1) as f64))
        .collect()
}

fn anchor_loss(hazy: &RasterImage, clear: &RasterImage, airlight: [f64; 3], anchors: &[RangeAnchor], k: f64) -> f64 {
    let mut sum = 0.0;
    for a in anchors {
        let t = (k * a.range).exp();
        let (i, c) = (hazy.pixel(a.row, a.col), clear.pixel(a.row, a.col));
        for ch in 0..3 {
            sum += (koschmieder(c[ch], airlight[ch], t) - i[ch]).abs();
        }
    }
    sum / (3 * anchors.len()) as f64
}

/// Initial airlight, visibility and range for [`decompose`](super::decompose).
///
/// Known values in `known` are used as given. Otherwise the airlight is the
/// brightest-decile colour and the visibility is the grid candidate that
/// best reproduces the hazy colour at the anchor pixels (smallest candidate
/// on ties). Ranges follow from the closed-form transmission; pixels
/// without contrast get the scene median.
pub fn coarse_init(
    hazy: &RasterImage,
    clear: &RasterImage,
    epsilon: f64,
    known: &KnownParams,
    t_min: f64,
) -> Result<CoarseInit> {
    let (h, w) = hazy.dims();
    clear.ensure_same_dims(h, w)?;
    let airlight = known.airlight.unwrap_or_else(|| brightest_decile_airlight(hazy));

    let mut grid = Vec::new();
    let visibility = match known.visibility {
        Some(v) => v,
        None => {
            if known.anchors.is_empty() {
                return Err(Error::InvalidInput(
                    "estimating visibility needs at least one range anchor".into(),
                ));
            }
            let d_max = known
                .d_ref
                .unwrap_or_else(|| known.anchors.iter().map(|a| a.range).fold(0.0, f64::max));
            let mut best = (f64::INFINITY, f64::NAN);
            for v in visibility_grid(d_max) {
                let loss = anchor_loss(hazy, clear, airlight, &known.anchors, epsilon.ln() / v);
                grid.push((v, loss));
                if loss < best.0 {
                    best = (loss, v);
                }
            }
            best.1
        }
    };

    let beta = -epsilon.ln() / visibility;
    let mask = contrast_mask(clear, airlight);
    let t = closed_form_transmission(hazy, clear, airlight, t_min);
    let mut r: Vec<f64> = t.iter().map(|t| -t.ln() / beta).collect();
    let mut signal: Vec<f64> = r.iter().zip(&mask).filter(|(_, m)| **m).map(|(r, _)| *r).collect();
    if signal.is_empty() {
        return Err(Error::Degenerate(
            "clear image matches the airlight everywhere, so no pixel constrains the range".into(),
        ));
    }
    let fill = median(&mut signal);
    for (rv, m) in r.iter_mut().zip(&mask) {
        if !m {
            *rv = fill;
        }
    }
    Ok(CoarseInit {
        range: ScalarField::from_raw(h, w, r),
        airlight,
        visibility,
        grid,
    })
}

/// `count` anchors read from a reference range field, one per evenly spaced
/// quantile of its values.
pub fn anchors_from_range_field(range: &ScalarField, count: usize) -> Vec<RangeAnchor> {
    let v = range.values();
    let w = range.width();
    let mut order: Vec<usize> = (0..v.len()).filter(|&p| v[p] > 0.0).collect();
    order.sort_by(|&p, &q| v[p].total_cmp(&v[q]).then(p.cmp(&q)));
    if order.is_empty() {
        return Vec::new();
    }
    let mut picks: Vec<usize> = (0..count)
        .map(|k| order[((k as f64 + 0.5) / count as f64 * order.len() as f64) as usize])
        .collect();
    picks.dedup();
    picks
        .into_iter()
        .map(|p| RangeAnchor {
            row: p / w,
            col: p % w,
            range: v[p],
        })
        .collect()
}
