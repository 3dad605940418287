//! Polynomial calibration from relative visibility to PM2.5 concentration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::eval_scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pm25Sample {
    /// Relative visibility in (0, 1].
    pub visibility: f64,
    /// µg/m³.
    pub pm25: f64,
    pub relative_humidity: f64,
}

impl Pm25Sample {
    pub fn validate(&self) -> Result<()> {
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return Err(Error::Domain(format!("visibility {} outside (0, 1]", self.visibility)));
        }
        if !(self.pm25 >= 0.0 && self.pm25.is_finite()) {
            return Err(Error::Domain(format!("pm25 {} must be finite and non-negative", self.pm25)));
        }
        if !(0.0..=1.0).contains(&self.relative_humidity) {
            return Err(Error::Domain(format!(
                "relative humidity {} outside [0, 1]",
                self.relative_humidity
            )));
        }
        Ok(())
    }
}

/// Humidity interval `[lo, hi)`; the topmost bin also admits `hi` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumidityBin {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub closed_above: bool,
}

impl HumidityBin {
    pub fn contains(&self, rh: f64) -> bool {
        rh >= self.lo && (rh < self.hi || (self.closed_above && rh == self.hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub samples: usize,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; absent when some training target is zero.
    pub mape: Option<f64>,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pm25Model {
    /// `c_0 .. c_k`, lowest power first.
    pub coefficients: Vec<f64>,
    pub order: usize,
    pub humidity_bin: Option<HumidityBin>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pm25: f64,
    pub raw: f64,
    /// Raw polynomial value was negative and has been clamped to zero.
    pub clamped: bool,
}

fn horner(coefficients: &[f64], v: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * v + c)
}

impl Pm25Model {
    /// Raw polynomial value, without clamping or domain checks.
    pub fn evaluate(&self, visibility: f64) -> f64 {
        horner(&self.coefficients, visibility)
    }
}

/// Least-squares polynomial fit of order `order`.
pub fn fit_pm25(samples: &[Pm25Sample], order: usize) -> Result<Pm25Model> {
    fit_with_bin(samples, order, None)
}

fn fit_with_bin(samples: &[Pm25Sample], order: usize, bin: Option<HumidityBin>) -> Result<Pm25Model> {
    for s in samples {
        s.validate()?;
    }
    let m = order + 1;
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.visibility).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < m {
        return Err(Error::SingularFit(format!(
            "order {order} needs {m} distinct visibilities, got {} ({} samples)",
            distinct.len(),
            samples.len()
        )));
    }

    let n = samples.len();
    let a = DMatrix::from_fn(n, m, |i, j| samples[i].visibility.powi(j as i32));
    let mut b = DVector::from_iterator(n, samples.iter().map(|s| s.pm25));
    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if r.diagonal().iter().any(|d| d.abs() <= diag_max * 1e-14) {
        return Err(Error::SingularFit(format!("design matrix of order {order} is rank deficient")));
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, m).into_owned();
    let c = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::SingularFit("triangular solve failed".into()))?;
    let coefficients: Vec<f64> = c.iter().copied().collect();
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularFit("non-finite coefficients".into()));
    }

    let preds: Vec<f64> = samples.iter().map(|s| horner(&coefficients, s.visibility)).collect();
    let gts: Vec<f64> = samples.iter().map(|s| s.pm25).collect();
    let sse = preds.iter().zip(&gts).map(|(p, g)| (p - g).powi(2)).sum::<f64>();
    let n_f = n as f64;
    let mae = preds.iter().zip(&gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / n_f;
    let mape = eval_scalar(&preds, &gts).ok().map(|e| e.mape);
    Ok(Pm25Model {
        coefficients,
        order,
        humidity_bin: bin,
        diagnostics: FitDiagnostics {
            samples: n,
            rmse: (sse / n_f).sqrt(),
            mae,
            mape,
            sse,
        },
    })
}

/// Evaluates the model at a relative visibility, clamping negative output to zero.
pub fn predict_pm25(model: &Pm25Model, visibility: f64) -> Result<Prediction> {
    if !(visibility > 0.0 && visibility <= 1.0) {
        return Err(Error::Domain(format!("visibility {visibility} outside (0, 1]")));
    }
    let raw = model.evaluate(visibility);
    Ok(Prediction {
        pm25: raw.max(0.0),
        raw,
        clamped: raw < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinWarning {
    pub bin: HumidityBin,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedFit {
    pub models: Vec<Pm25Model>,
    pub warnings: Vec<BinWarning>,
}

impl StratifiedFit {
    /// Model whose bin holds `rh`.
    pub fn model_for(&self, rh: f64) -> Option<&Pm25Model> {
        self.models
            .iter()
            .find(|m| m.humidity_bin.is_none_or(|b| b.contains(rh)))
    }
}

pub fn humidity_bins(edges: &[f64]) -> Result<Vec<HumidityBin>> {
    if edges.len() < 2 {
        return Err(Error::InvalidInput("need at least two humidity bin edges".into()));
    }
    if edges[0] < 0.0 || edges[edges.len() - 1] > 1.0 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(format!(
            "humidity edges must increase strictly within [0, 1], got {edges:?}"
        )));
    }
    let last = edges.len() - 2;
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| HumidityBin {
            lo: w[0],
            hi: w[1],
            closed_above: i == last && w[1] == 1.0,
        })
        .collect())
}

/// One fit per humidity bin. Empty bins are reported as warnings.
pub fn stratified_fit(samples: &[Pm25Sample], edges: &[f64], order: usize) -> Result<StratifiedFit> {
    let bins = humidity_bins(edges)?;
    let mut out = StratifiedFit {
        models: Vec::new(),
        warnings: Vec::new(),
    };
    for bin in bins {
        let members: Vec<Pm25Sample> = samples
            .iter()
            .filter(|s| bin.contains(s.relative_humidity))
            .copied()
            .collect();
        if members.is_empty() {
            out.warnings.push(BinWarning {
                bin,
                message: format!("no samples with {} <= RH < {}", bin.lo, bin.hi),
            });
            continue;
        }
        out.models.push(fit_with_bin(&members, order, Some(bin))?);
    }
    Ok(out)
}
