//! Depth and scalar error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Crop {
    fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.bottom).contains(&row) && (self.left..self.right).contains(&col)
    }
}

impl std::str::FromStr for Crop {
    type Err = Error;

    /// `top,bottom,left,right`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidInput(format!("bad crop '{s}'")))?;
        match v.as_slice() {
            &[top, bottom, left, right] if top < bottom && left < right => Ok(Crop {
                top,
                bottom,
                left,
                right,
            }),
            _ => Err(Error::InvalidInput(format!(
                "crop must be top,bottom,left,right with top<bottom, left<right; got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    /// Rescale predictions by `median(gt) / median(pred)` first.
    pub median_scaling: bool,
    #[serde(default)]
    pub crop: Option<Crop>,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self {
            min_depth: 1e-3,
            max_depth: 80.0,
            median_scaling: false,
            crop: None,
        }
    }
}

/// Columns in the customary order: AbsRel, SqRel, RMS, RMSlog, δ₁, δ₂, δ₃.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log: f64,
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_3: f64,
    pub valid_pixel_count: usize,
}

impl DepthEvalReport {
    pub const HEADER: [&'static str; 7] = ["AbsRel", "SqRel", "RMS", "RMSlog", "d1", "d2", "d3"];

    pub fn columns(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rms,
            self.rms_log,
            self.delta_1,
            self.delta_2,
            self.delta_3,
        ]
    }

    /// Pixel-weighted mean of several reports.
    pub fn pooled(reports: &[DepthEvalReport]) -> Option<DepthEvalReport> {
        let n: usize = reports.iter().map(|r| r.valid_pixel_count).sum();
        if n == 0 {
            return None;
        }
        let wmean = |f: fn(&DepthEvalReport) -> f64| {
            reports.iter().map(|r| f(r) * r.valid_pixel_count as f64).sum::<f64>() / n as f64
        };
        let wrms = |f: fn(&DepthEvalReport) -> f64| {
            (reports.iter().map(|r| f(r).powi(2) * r.valid_pixel_count as f64).sum::<f64>() / n as f64).sqrt()
        };
        Some(DepthEvalReport {
            abs_rel: wmean(|r| r.abs_rel),
            sq_rel: wmean(|r| r.sq_rel),
            rms: wrms(|r| r.rms),
            rms_log: wrms(|r| r.rms_log),
            delta_1: wmean(|r| r.delta_1),
            delta_2: wmean(|r| r.delta_2),
            delta_3: wmean(|r| r.delta_3),
            valid_pixel_count: n,
        })
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Depth metrics over pixels with positive ground truth.
pub fn eval_depth(pred: &ScalarField, gt: &ScalarField, cfg: &DepthEvalConfig) -> Result<DepthEvalReport> {
    eval_depth_masked(pred, gt, None, cfg)
}

/// Like [`eval_depth`], additionally restricted to pixels where `mask` is true.
pub fn eval_depth_masked(
    pred: &ScalarField,
    gt: &ScalarField,
    mask: Option<&[bool]>,
    cfg: &DepthEvalConfig,
) -> Result<DepthEvalReport> {
    let (h, w) = gt.dims();
    pred.ensure_dims(h, w)?;
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(Error::shape(format!("{} mask entries", h * w), format!("{}", m.len())));
        }
    }
    if !(cfg.min_depth > 0.0 && cfg.min_depth < cfg.max_depth) {
        return Err(Error::InvalidInput(format!(
            "depth caps must satisfy 0 < min < max, got {} and {}",
            cfg.min_depth, cfg.max_depth
        )));
    }

    let valid: Vec<usize> = (0..h * w)
        .filter(|&k| gt.values()[k] > 0.0)
        .filter(|&k| mask.is_none_or(|m| m[k]))
        .filter(|&k| cfg.crop.is_none_or(|c| c.contains(k / w, k % w)))
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let g: Vec<f64> = valid.iter().map(|&k| gt.values()[k]).collect();
    let mut p: Vec<f64> = valid.iter().map(|&k| pred.values()[k]).collect();

    if cfg.median_scaling {
        let mg = median(&mut g.clone());
        let mp = median(&mut p.clone());
        if !(mp > 0.0) {
            return Err(Error::Domain("median scaling needs a positive prediction median".into()));
        }
        let s = mg / mp;
        p.iter_mut().for_each(|v| *v *= s);
    }
    let clamp = |v: f64| v.clamp(cfg.min_depth, cfg.max_depth);

    let n = valid.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for (&gv, &pv) in g.iter().zip(&p) {
        let (gv, pv) = (clamp(gv), clamp(pv));
        let diff = pv - gv;
        abs_rel += diff.abs() / gv;
        sq_rel += diff * diff / gv;
        sq += diff * diff;
        sq_log += (pv.ln() - gv.ln()).powi(2);
        let ratio = (pv / gv).max(gv / pv);
        for (hit, t) in hits.iter_mut().zip(thresholds) {
            *hit += usize::from(ratio < t);
        }
    }
    Ok(DepthEvalReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rms: (sq / n).sqrt(),
        rms_log: (sq_log / n).sqrt(),
        delta_1: hits[0] as f64 / n,
        delta_2: hits[1] as f64 / n,
        delta_3: hits[2] as f64 / n,
        valid_pixel_count: valid.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarErrors {
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
}

/// RMSE, MAE and MAPE (in percent) between paired predictions and truths.
pub fn eval_scalar(preds: &[f64], gts: &[f64]) -> Result<ScalarErrors> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!("{} predictions", gts.len()), format!("{}", preds.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let zeros: Vec<String> = gts
        .iter()
        .enumerate()
        .filter(|(_, g)| **g == 0.0)
        .map(|(i, _)| i.to_string())
        .collect();
    if !zeros.is_empty() {
        return Err(Error::Domain(format!(
            "MAPE undefined for zero ground truth at index {}",
            zeros.join(", ")
        )));
    }
    let n = preds.len() as f64;
    let (mut sq, mut abs, mut pct) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        let d = p - g;
        sq += d * d;
        abs += d.abs();
        pct += (d / g).abs();
    }
    Ok(ScalarErrors {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mape: 100.0 * pct / n,
    })
}
