//! Per-image recovery of range, airlight and visibility from a hazy/clear
//! pair by direct minimization of the reconstruction objective.
//!
//! The objective depends on range and visibility only through their ratio,
//! so visibility (and the absolute range scale) cannot be read off the
//! image pair alone. Modes that estimate visibility therefore take a few
//! [`RangeAnchor`]s: pixels whose true range is known. The solver optimizes
//! the range field at a reference visibility and then fixes the common
//! scale from the anchors.

mod gradcheck;
mod init;

pub use gradcheck::{
    gradcheck_scene, gradient_check, GradCheckConfig, GradCheckEntry, GradCheckReport, GradScene, LossModel,
    TotalLossModel,
};
pub use init::{
    anchors_from_range_field, brightest_decile_airlight, closed_form_transmission, coarse_init, contrast_mask,
    visibility_grid, CoarseInit, IDENTIFIABLE_CONTRAST,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RasterImage, ScalarField};
use crate::io;
use crate::losses::{total_loss_with_grad, LossBreakdown, LossWeights, SceneParams};
use crate::metrics::median;

/// Transmission below which a pixel is treated as opaque haze.
pub const IDENTIFIABLE_TRANSMISSION: f64 = 0.02;

/// Which quantities are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecomposeMode {
    /// Range only; airlight and visibility known.
    #[serde(rename = "fix-av")]
    FixAV,
    /// Range and visibility; airlight known.
    #[serde(rename = "fix-a")]
    FixA,
    /// Range, airlight and visibility.
    #[serde(rename = "full")]
    Full,
}

impl DecomposeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecomposeMode::FixAV => "fix-av",
            DecomposeMode::FixA => "fix-a",
            DecomposeMode::Full => "full",
        }
    }
}

impl std::str::FromStr for DecomposeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix-av" => Ok(DecomposeMode::FixAV),
            "fix-a" => Ok(DecomposeMode::FixA),
            "full" => Ok(DecomposeMode::Full),
            _ => Err(Error::InvalidInput(format!(
                "unknown mode '{s}', expected fix-av, fix-a or full"
            ))),
        }
    }
}

/// A pixel with known range in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeAnchor {
    pub row: usize,
    pub col: usize,
    pub range: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnownParams {
    #[serde(default, rename = "A")]
    pub airlight: Option<[f64; 3]>,
    #[serde(default, rename = "V")]
    pub visibility: Option<f64>,
    #[serde(default)]
    pub anchors: Vec<RangeAnchor>,
    /// Upper end of the visibility scan's scale; defaults to the largest anchor range.
    #[serde(default)]
    pub d_ref: Option<f64>,
}

impl KnownParams {
    fn validate_for(&self, mode: DecomposeMode, height: usize, width: usize) -> Result<()> {
        let want_a = mode != DecomposeMode::Full;
        let want_v = mode == DecomposeMode::FixAV;
        if self.airlight.is_some() != want_a {
            return Err(Error::InvalidInput(format!(
                "mode {} {} a known airlight",
                mode.name(),
                if want_a { "requires" } else { "estimates airlight and must not be given" }
            )));
        }
        if self.visibility.is_some() != want_v {
            return Err(Error::InvalidInput(format!(
                "mode {} {} a known visibility",
                mode.name(),
                if want_v { "requires" } else { "estimates visibility and must not be given" }
            )));
        }
        if !want_v && self.anchors.is_empty() {
            return Err(Error::InvalidInput(format!(
                "mode {} needs range anchors to fix the absolute scale",
                mode.name()
            )));
        }
        if let Some(a) = self.airlight {
            if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Domain(format!("airlight {a:?} outside [0, 1]")));
            }
        }
        if let Some(v) = self.visibility {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("visibility must be positive, got {v}")));
            }
        }
        if let Some(d) = self.d_ref {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Domain(format!("reference distance must be positive, got {d}")));
            }
        }
        for a in &self.anchors {
            if a.row >= height || a.col >= width {
                return Err(Error::InvalidInput(format!(
                    "anchor ({}, {}) outside a {height}x{width} image",
                    a.row, a.col
                )));
            }
            if !(a.range > 0.0 && a.range.is_finite()) {
                return Err(Error::Domain(format!("anchor range must be positive, got {}", a.range)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Relative loss change below which the run counts as converged.
    pub tolerance: f64,
    /// Window, in iterations, over which `tolerance` is measured.
    pub patience: usize,
    /// Lower bound on range as a fraction of the reference visibility.
    pub range_floor: f64,
    /// Transmission floor of the initial closed-form estimate.
    pub t_min: f64,
    /// Recorded for reproducibility; the solver itself draws no random numbers.
    pub seed: u64,
    #[serde(skip)]
    pub weights: LossWeights,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            tolerance: 1e-6,
            patience: 20,
            range_floor: 1e-4,
            t_min: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        let positive = [
            ("step size", self.step_size),
            ("tolerance", self.tolerance),
            ("range floor", self.range_floor),
            ("t_min", self.t_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("moment decay rates must lie in [0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidInput("patience must be at least 1".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeResult {
    pub mode: DecomposeMode,
    /// Metres.
    pub range: ScalarField,
    pub airlight: [f64; 3],
    pub visibility: f64,
    /// Accepted loss after every iteration, starting with the initial point.
    pub loss_trace: Vec<f64>,
    pub final_loss: LossBreakdown,
    pub converged: bool,
    pub iterations: usize,
    pub identifiability_mask: Vec<bool>,
    /// Anchors that entered the scale estimate.
    pub anchors_used: usize,
}

impl DecomposeResult {
    pub fn transmission(&self, epsilon: f64) -> ScalarField {
        let k = epsilon.ln() / self.visibility;
        self.range.map(|r| (k * r).exp())
    }

    pub fn summary(&self, id: &str, epsilon: f64) -> DecomposeSummary {
        DecomposeSummary {
            schema: io::SCHEMA_VERSION.to_string(),
            id: id.to_string(),
            mode: self.mode,
            visibility: self.visibility,
            airlight: self.airlight,
            epsilon,
            converged: self.converged,
            iterations: self.iterations,
            final_loss: self.final_loss,
            anchors_used: self.anchors_used,
            identifiable_pixels: self.identifiability_mask.iter().filter(|m| **m).count(),
        }
    }
}

/// Machine-readable parameters of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeSummary {
    pub schema: String,
    pub id: String,
    pub mode: DecomposeMode,
    #[serde(rename = "V")]
    pub visibility: f64,
    #[serde(rename = "A")]
    pub airlight: [f64; 3],
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: LossBreakdown,
    pub anchors_used: usize,
    pub identifiable_pixels: usize,
}

/// Files written by [`write_decompose_artifacts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeArtifacts {
    pub range: PathBuf,
    pub params: PathBuf,
    pub mask: PathBuf,
}

/// Writes `{id}_range.pfm`, `{id}_params.json` and `{id}_mask.png` into `dir`.
pub fn write_decompose_artifacts(
    dir: &Path,
    id: &str,
    result: &DecomposeResult,
    epsilon: f64,
) -> Result<DecomposeArtifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = DecomposeArtifacts {
        range: dir.join(format!("{id}_range.pfm")),
        params: dir.join(format!("{id}_params.json")),
        mask: dir.join(format!("{id}_mask.png")),
    };
    io::save_scalar_pfm(&out.range, &result.range)?;
    io::write_json(&out.params, &result.summary(id, epsilon))?;
    let (h, w) = result.range.dims();
    io::save_mask_png(&out.mask, h, w, &result.identifiability_mask)?;
    Ok(out)
}

/// Largest absolute difference between two images of equal size.
fn max_abs_diff(a: &RasterImage, b: &RasterImage) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Latent parameters: softplus range latents, then logistic airlight
/// latents when the airlight is estimated.
struct Problem<'a> {
    hazy: &'a RasterImage,
    clear: &'a RasterImage,
    epsilon: f64,
    v_ref: f64,
    floor: f64,
    fixed_airlight: Option<[f64; 3]>,
    weights: LossWeights,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.hazy.height() * self.hazy.width()
    }

    fn airlight(&self, x: &[f64]) -> [f64; 3] {
        self.fixed_airlight.unwrap_or_else(|| {
            let n = self.n();
            [sigmoid(x[n]), sigmoid(x[n + 1]), sigmoid(x[n + 2])]
        })
    }

    fn range(&self, x: &[f64]) -> ScalarField {
        let (h, w) = self.hazy.dims();
        ScalarField::from_raw(
            h,
            w,
            x[..self.n()].iter().map(|&u| self.v_ref * (softplus(u) + self.floor)).collect(),
        )
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> Result<LossBreakdown> {
        let range = self.range(x);
        let airlight = self.airlight(x);
        let scene = SceneParams {
            airlight,
            visibility: self.v_ref,
            epsilon: self.epsilon,
        };
        let (loss, g) = total_loss_with_grad(self.hazy, self.clear, [&range, &range], scene, &self.weights)?;
        let n = self.n();
        for p in 0..n {
            grad[p] = (g.ranges[0][p] + g.ranges[1][p]) * self.v_ref * sigmoid(x[p]);
        }
        if self.fixed_airlight.is_none() {
            for c in 0..3 {
                grad[n + c] = g.airlight[c] * airlight[c] * (1.0 - airlight[c]);
            }
        }
        Ok(loss)
    }
}

/// Recovers range, airlight and visibility from a hazy image and its clear
/// counterpart.
///
/// `known` must hold exactly the quantities `mode` fixes; modes that
/// estimate visibility also need range anchors. The best iterate is
/// returned even when the solver stops before converging.
pub fn decompose(
    hazy: &RasterImage,
    clear: &RasterImage,
    epsilon: f64,
    mode: DecomposeMode,
    known: &KnownParams,
    config: &SolverConfig,
) -> Result<DecomposeResult> {
    let (h, w) = hazy.dims();
    clear.ensure_same_dims(h, w)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    config.validate()?;
    known.validate_for(mode, h, w)?;
    let diff = max_abs_diff(hazy, clear);
    if diff < 1e-4 {
        return Err(Error::Degenerate(format!(
            "hazy and clear images coincide (max difference {diff:.1e}); any range explains them once \
             transmission collapses to one or the airlight to the clear colour"
        )));
    }

    let init = coarse_init(hazy, clear, epsilon, known, config.t_min)?;
    let problem = Problem {
        hazy,
        clear,
        epsilon,
        v_ref: init.visibility,
        floor: config.range_floor,
        fixed_airlight: known.airlight,
        weights: config.weights,
    };
    let n = h * w;
    let dim = n + if known.airlight.is_none() { 3 } else { 0 };
    let mut x = Vec::with_capacity(dim);
    x.extend(
        init.range
            .values()
            .iter()
            .map(|r| inv_softplus((r / problem.v_ref - problem.floor).max(1e-6))),
    );
    if known.airlight.is_none() {
        x.extend(init.airlight.map(|a| logit(a.clamp(1e-3, 1.0 - 1e-3))));
    }

    let mut grad = vec![0.0; dim];
    let mut loss = problem.eval(&x, &mut grad)?;
    let mut trace = vec![loss.total];
    let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
    let (mut m_next, mut v_next) = (vec![0.0; dim], vec![0.0; dim]);
    let mut x_next = vec![0.0; dim];
    let mut grad_next = vec![0.0; dim];
    let mut lr = config.step_size;
    let mut steps = 0i32;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        let t = steps + 1;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for q in 0..dim {
            m_next[q] = config.beta1 * m[q] + (1.0 - config.beta1) * grad[q];
            v_next[q] = config.beta2 * v[q] + (1.0 - config.beta2) * grad[q] * grad[q];
            x_next[q] = x[q] - lr * (m_next[q] / c1) / ((v_next[q] / c2).sqrt() + 1e-12);
        }
        let candidate = problem.eval(&x_next, &mut grad_next)?;
        if candidate.total <= loss.total {
            std::mem::swap(&mut x, &mut x_next);
            std::mem::swap(&mut grad, &mut grad_next);
            std::mem::swap(&mut m, &mut m_next);
            std::mem::swap(&mut v, &mut v_next);
            loss = candidate;
            steps = t;
            lr = (lr * 1.05).min(config.step_size);
        } else {
            lr *= 0.5;
        }
        trace.push(loss.total);
        if trace.len() > config.patience {
            let old = trace[trace.len() - 1 - config.patience];
            if old - loss.total <= config.tolerance * loss.total.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }

    let airlight = problem.airlight(&x);
    let mut range = problem.range(&x);
    let k = epsilon.ln() / problem.v_ref;
    let contrast = contrast_mask(clear, airlight);
    let mask: Vec<bool> = range
        .values()
        .iter()
        .zip(&contrast)
        .map(|(&r, &c)| c && (k * r).exp() >= IDENTIFIABLE_TRANSMISSION)
        .collect();

    let (scale, anchors_used) = if mode == DecomposeMode::FixAV {
        (1.0, 0)
    } else {
        let ratios = |use_mask: bool| -> Vec<f64> {
            known
                .anchors
                .iter()
                .filter(|a| !use_mask || mask[a.row * w + a.col])
                .map(|a| a.range / range.get(a.row, a.col))
                .collect()
        };
        let mut r = ratios(true);
        if r.is_empty() {
            r = ratios(false);
        }
        let used = r.len();
        (median(&mut r), used)
    };
    if scale != 1.0 {
        range = range.map(|r| r * scale);
    }

    Ok(DecomposeResult {
        mode,
        range,
        airlight,
        visibility: problem.v_ref * scale,
        loss_trace: trace,
        final_loss: loss,
        converged,
        iterations,
        identifiability_mask: mask,
        anchors_used,
    })
}
