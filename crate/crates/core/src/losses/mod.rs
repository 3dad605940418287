//! Reconstruction objective for haze decomposition.
//!
//! * `Θ(x, y) = α·mean|x − y| + (1 − α)·(1 − SSIM(x, y)) / 2`
//! * reconstruction: `Σᵢ Θ(I_r,i, I)` over the two range branches
//! * consistency: `Θ(R₁, R₂)` on mean-normalized ranges
//! * smoothness: `β Σᵢ mean|∂ₓ r̂ᵢ| e^{−|∂ₓ I'|} + mean|∂ᵧ r̂ᵢ| e^{−|∂ᵧ I'|}`,
//!   where `r̂ᵢ` is the inverse range divided by its mean
//!
//! All terms are per-sample means. Every function has a companion that also
//! returns analytic gradients, which the solver and the gradient checker use.

mod ssim;

pub use ssim::{ssim, SsimConfig, SsimOutput};

use ssim::{ssim_plane_sum_and_grad, Scratch};

use crate::error::{Error, Result};
use crate::field::{RasterImage, ScalarField};
use crate::scattering::{koschmieder, ScatteringParams};

/// Mixing weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// L1 share of Θ.
    pub alpha: f64,
    /// Weight of the edge-aware smoothness term.
    pub beta_smooth: f64,
    /// Divide each range field by its mean before the consistency term.
    pub normalize_consistency: bool,
    pub ssim: SsimConfig,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            beta_smooth: 0.001,
            normalize_consistency: true,
            ssim: SsimConfig::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta_smooth >= 0.0 && self.beta_smooth.is_finite()) {
            return Err(Error::Domain(format!(
                "smoothness weight must be non-negative, got {}",
                self.beta_smooth
            )));
        }
        Ok(())
    }
}

/// Value of each term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub consistency: f64,
    pub smoothness: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(reconstruction: f64, consistency: f64, smoothness: f64) -> Self {
        Self {
            reconstruction,
            consistency,
            smoothness,
            total: reconstruction + consistency + smoothness,
        }
    }
}

// Plane buffers reused across calls; the solver evaluates Θ thousands of
// times on images of one size.
struct Workspace {
    dims: (usize, usize),
    scratch: Scratch,
    xs: Vec<f64>,
    ys: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Workspace {
    fn new(h: usize, w: usize) -> Self {
        Self {
            dims: (h, w),
            scratch: Scratch::new(h, w),
            xs: vec![0.0; h * w],
            ys: vec![0.0; h * w],
            gx: vec![0.0; h * w],
            gy: vec![0.0; h * w],
        }
    }
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<Option<Workspace>> = const { std::cell::RefCell::new(None) };
}

/// Θ over interleaved samples with `channels` planes.
///
/// When gradient buffers are supplied, `∂Θ/∂x` and `∂Θ/∂y` are added to them
/// after multiplication by `scale`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn theta_raw(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    alpha: f64,
    cfg: SsimConfig,
    scale: f64,
    mut grad_x: Option<&mut [f64]>,
    mut grad_y: Option<&mut [f64]>,
) -> f64 {
    let n = x.len() as f64;
    let l1 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    if grad_x.is_some() || grad_y.is_some() {
        let k = scale * alpha / n;
        for (q, (a, b)) in x.iter().zip(y).enumerate() {
            let s = k * sign(a - b);
            if let Some(g) = grad_x.as_deref_mut() {
                g[q] += s;
            }
            if let Some(g) = grad_y.as_deref_mut() {
                g[q] -= s;
            }
        }
    }

    // d/d(sum of SSIM over one plane) of (1 − α)(1 − mean)/2
    let plane_scale = -scale * (1.0 - alpha) / (2.0 * n);
    let want_x = grad_x.is_some();
    let want_y = grad_y.is_some();
    let ssim_sum = WORKSPACE.with(|cell| {
        let mut slot = cell.borrow_mut();
        let ws = match slot.as_mut() {
            Some(ws) if ws.dims == (h, w) => ws,
            _ => slot.insert(Workspace::new(h, w)),
        };
        let mut sum = 0.0;
        for c in 0..channels {
            for (k, (a, b)) in x.iter().skip(c).step_by(channels).zip(y.iter().skip(c).step_by(channels)).enumerate() {
                ws.xs[k] = *a;
                ws.ys[k] = *b;
            }
            ws.gx.iter_mut().for_each(|v| *v = 0.0);
            ws.gy.iter_mut().for_each(|v| *v = 0.0);
            sum += ssim_plane_sum_and_grad(
                &ws.xs,
                &ws.ys,
                h,
                w,
                cfg,
                plane_scale,
                &mut ws.scratch,
                want_x.then_some(ws.gx.as_mut_slice()),
                want_y.then_some(ws.gy.as_mut_slice()),
            );
            if let Some(g) = grad_x.as_deref_mut() {
                for (k, v) in ws.gx.iter().enumerate() {
                    g[k * channels + c] += v;
                }
            }
            if let Some(g) = grad_y.as_deref_mut() {
                for (k, v) in ws.gy.iter().enumerate() {
                    g[k * channels + c] += v;
                }
            }
        }
        sum
    });
    let mean_ssim = ssim_sum / n;
    alpha * l1 + (1.0 - alpha) * (1.0 - mean_ssim) / 2.0
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Photometric distance Θ between two RGB images.
pub fn photometric_theta(x: &RasterImage, y: &RasterImage, alpha: f64) -> Result<f64> {
    photometric_theta_with(x, y, alpha, SsimConfig::default())
}

pub fn photometric_theta_with(x: &RasterImage, y: &RasterImage, alpha: f64, cfg: SsimConfig) -> Result<f64> {
    let (h, w) = x.dims();
    y.ensure_same_dims(h, w)?;
    check_alpha(alpha)?;
    Ok(theta_raw(x.values(), y.values(), h, w, 3, alpha, cfg, 1.0, None, None))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `Σᵢ Θ(I_r,i, I)` over both reconstructions.
pub fn reconstruction_loss(reconstructions: [&RasterImage; 2], target: &RasterImage, alpha: f64) -> Result<f64> {
    reconstructions
        .iter()
        .map(|r| photometric_theta(r, target, alpha))
        .sum()
}

fn normalized(values: &[f64], enabled: bool) -> (Vec<f64>, f64) {
    if !enabled {
        return (values.to_vec(), 1.0);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| v / m).collect(), m)
}

fn ensure_positive_mean(field: &ScalarField, what: &str) -> Result<()> {
    if !(field.mean() > 0.0) {
        return Err(Error::Domain(format!("{what} must have a positive mean")));
    }
    Ok(())
}

/// Θ between two range fields, optionally after dividing each by its mean.
pub fn consistency_loss(r1: &ScalarField, r2: &ScalarField, alpha: f64, normalize: bool) -> Result<f64> {
    let (h, w) = r1.dims();
    r2.ensure_dims(h, w)?;
    check_alpha(alpha)?;
    if normalize {
        ensure_positive_mean(r1, "range field")?;
        ensure_positive_mean(r2, "range field")?;
    }
    let (a, _) = normalized(r1.values(), normalize);
    let (b, _) = normalized(r2.values(), normalize);
    Ok(theta_raw(&a, &b, h, w, 1, alpha, SsimConfig::default(), 1.0, None, None))
}

/// Edge weights `exp(−mean_c |Δ I'|)` along x and y.
struct EdgeWeights {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl EdgeWeights {
    fn new(clear: &RasterImage) -> Self {
        let (h, w) = clear.dims();
        let v = clear.values();
        let diff = |p: usize, q: usize| {
            let s: f64 = (0..3).map(|c| (v[p * 3 + c] - v[q * 3 + c]).abs()).sum();
            (-s / 3.0).exp()
        };
        let mut x = Vec::with_capacity(h * w.saturating_sub(1));
        for i in 0..h {
            for j in 0..w.saturating_sub(1) {
                x.push(diff(i * w + j + 1, i * w + j));
            }
        }
        let mut y = Vec::with_capacity(h.saturating_sub(1) * w);
        for i in 0..h.saturating_sub(1) {
            for j in 0..w {
                y.push(diff((i + 1) * w + j, i * w + j));
            }
        }
        Self { x, y }
    }
}

/// Smoothness of a single branch (without the weight β); adds
/// `scale · ∂/∂R` into `grad` when given.
fn smoothness_branch(
    range: &[f64],
    h: usize,
    w: usize,
    edges: &EdgeWeights,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = range.len();
    let inv: Vec<f64> = range.iter().map(|r| 1.0 / r).collect();
    let m = inv.iter().sum::<f64>() / n as f64;
    let nrm: Vec<f64> = inv.iter().map(|v| v / m).collect();

    let mut g_n = grad.as_ref().map(|_| vec![0.0; n]);
    let mut value = 0.0;
    if w > 1 {
        let count = (h * (w - 1)) as f64;
        let mut acc = 0.0;
        let mut e = 0;
        for i in 0..h {
            for j in 0..w - 1 {
                let (p, q) = (i * w + j, i * w + j + 1);
                let d = nrm[q] - nrm[p];
                acc += d.abs() * edges.x[e];
                if let Some(g) = g_n.as_mut() {
                    let s = sign(d) * edges.x[e] / count;
                    g[q] += s;
                    g[p] -= s;
                }
                e += 1;
            }
        }
        value += acc / count;
    }
    if h > 1 {
        let count = ((h - 1) * w) as f64;
        let mut acc = 0.0;
        let mut e = 0;
        for i in 0..h - 1 {
            for j in 0..w {
                let (p, q) = (i * w + j, (i + 1) * w + j);
                let d = nrm[q] - nrm[p];
                acc += d.abs() * edges.y[e];
                if let Some(g) = g_n.as_mut() {
                    let s = sign(d) * edges.y[e] / count;
                    g[q] += s;
                    g[p] -= s;
                }
                e += 1;
            }
        }
        value += acc / count;
    }

    if let (Some(grad), Some(g_n)) = (grad, g_n) {
        // n = inv / mean(inv); inv = 1 / R
        let dot: f64 = g_n.iter().zip(&nrm).map(|(g, v)| g * v).sum::<f64>() / (m * n as f64);
        for q in 0..n {
            let g_inv = g_n[q] / m - dot;
            grad[q] += scale * (-g_inv * inv[q] * inv[q]);
        }
    }
    value
}

fn ensure_positive(field: &ScalarField) -> Result<()> {
    if let Some(k) = field.values().iter().position(|&r| !(r > 0.0)) {
        return Err(Error::Domain(format!(
            "smoothness needs strictly positive range, got {} at pixel ({}, {})",
            field.values()[k],
            k / field.width(),
            k % field.width()
        )));
    }
    Ok(())
}

/// Edge-aware smoothness summed over both branches.
pub fn smoothness_loss(ranges: [&ScalarField; 2], clear: &RasterImage, beta_smooth: f64) -> Result<f64> {
    let (h, w) = clear.dims();
    let edges = EdgeWeights::new(clear);
    let mut total = 0.0;
    for r in ranges {
        r.ensure_dims(h, w)?;
        ensure_positive(r)?;
        total += smoothness_branch(r.values(), h, w, &edges, 1.0, None);
    }
    Ok(beta_smooth * total)
}

/// Scene quantities the objective is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub airlight: [f64; 3],
    pub visibility: f64,
    pub epsilon: f64,
}

impl From<ScatteringParams> for SceneParams {
    fn from(p: ScatteringParams) -> Self {
        Self {
            airlight: p.airlight,
            visibility: p.visibility,
            epsilon: p.epsilon,
        }
    }
}

/// Gradients of the total loss.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub visibility: f64,
    pub airlight: [f64; 3],
    /// One gradient field per range branch.
    pub ranges: [Vec<f64>; 2],
}

/// Renders `I' ⊙ T + A ⊙ (1 − T)` without clamping, where
/// `T = exp(ln ε · R / V)`.
pub fn reconstruct(clear: &RasterImage, range: &ScalarField, scene: &SceneParams) -> Result<RasterImage> {
    let (h, w) = clear.dims();
    range.ensure_dims(h, w)?;
    let k = scene.epsilon.ln() / scene.visibility;
    let a = scene.airlight;
    let data = clear
        .values()
        .chunks_exact(3)
        .zip(range.values())
        .flat_map(|(px, &r)| {
            let t = (k * r).exp();
            [
                koschmieder(px[0], a[0], t),
                koschmieder(px[1], a[1], t),
                koschmieder(px[2], a[2], t),
            ]
        })
        .collect();
    Ok(RasterImage::from_raw(h, w, data))
}

/// Assembles both reconstructions and sums the three terms.
pub fn total_loss(
    hazy: &RasterImage,
    clear: &RasterImage,
    ranges: [&ScalarField; 2],
    scene: SceneParams,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    evaluate(hazy, clear, ranges, scene, weights, false).map(|(b, _)| b)
}

/// [`total_loss`] plus its gradient with respect to visibility, airlight and
/// every range pixel of both branches.
pub fn total_loss_with_grad(
    hazy: &RasterImage,
    clear: &RasterImage,
    ranges: [&ScalarField; 2],
    scene: SceneParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGradient)> {
    evaluate(hazy, clear, ranges, scene, weights, true).map(|(b, g)| (b, g.expect("gradient requested")))
}

fn validate_scene(scene: &SceneParams) -> Result<()> {
    if !(scene.visibility > 0.0 && scene.visibility.is_finite()) {
        return Err(Error::Domain(format!("visibility must be positive, got {}", scene.visibility)));
    }
    if !(scene.epsilon > 0.0 && scene.epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {}", scene.epsilon)));
    }
    if scene.airlight.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("airlight must be finite".into()));
    }
    Ok(())
}

fn evaluate(
    hazy: &RasterImage,
    clear: &RasterImage,
    ranges: [&ScalarField; 2],
    scene: SceneParams,
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<LossGradient>)> {
    weights.validate()?;
    validate_scene(&scene)?;
    let (h, w) = hazy.dims();
    clear.ensure_same_dims(h, w)?;
    for r in ranges {
        r.ensure_dims(h, w)?;
        ensure_positive(r)?;
    }
    let shared = ranges[0].values() == ranges[1].values();
    let n = h * w;
    let k = scene.epsilon.ln() / scene.visibility;
    let a = scene.airlight;
    let edges = EdgeWeights::new(clear);

    let mut grad = with_grad.then(|| LossGradient {
        visibility: 0.0,
        airlight: [0.0; 3],
        ranges: [vec![0.0; n], vec![0.0; n]],
    });

    let mut reconstruction = 0.0;
    let mut smoothness = 0.0;
    let branch_count = if shared { 1 } else { 2 };
    let multiplicity = if shared { 2.0 } else { 1.0 };
    for b in 0..branch_count {
        let range = ranges[b].values();
        let t: Vec<f64> = range.iter().map(|r| (k * r).exp()).collect();
        let recon: Vec<f64> = clear
            .values()
            .chunks_exact(3)
            .zip(&t)
            .flat_map(|(px, &t)| {
                [
                    koschmieder(px[0], a[0], t),
                    koschmieder(px[1], a[1], t),
                    koschmieder(px[2], a[2], t),
                ]
            })
            .collect();

        let mut g_recon = with_grad.then(|| vec![0.0; n * 3]);
        reconstruction += multiplicity
            * theta_raw(
                &recon,
                hazy.values(),
                h,
                w,
                3,
                weights.alpha,
                weights.ssim,
                multiplicity,
                g_recon.as_deref_mut(),
                None,
            );

        let mut g_range = vec![0.0; if with_grad { n } else { 0 }];
        smoothness += multiplicity
            * weights.beta_smooth
            * smoothness_branch(
                range,
                h,
                w,
                &edges,
                multiplicity * weights.beta_smooth,
                with_grad.then_some(g_range.as_mut_slice()),
            );

        if let (Some(grad), Some(g_recon)) = (grad.as_mut(), g_recon) {
            let cv = clear.values();
            let mut d_vis = 0.0;
            for p in 0..n {
                let mut d_t = 0.0;
                for c in 0..3 {
                    let g = g_recon[p * 3 + c];
                    d_t += g * (cv[p * 3 + c] - a[c]);
                    grad.airlight[c] += g * (1.0 - t[p]);
                }
                // T = exp(k R), k = ln ε / V
                g_range[p] += d_t * t[p] * k;
                d_vis += d_t * t[p] * range[p] * (-k / scene.visibility);
            }
            grad.visibility += d_vis;
            grad.ranges[b] = g_range;
        }
    }

    let mut consistency = 0.0;
    if !shared {
        let norm = weights.normalize_consistency;
        if norm {
            ensure_positive_mean(ranges[0], "range field")?;
            ensure_positive_mean(ranges[1], "range field")?;
        }
        let (n1, m1) = normalized(ranges[0].values(), norm);
        let (n2, m2) = normalized(ranges[1].values(), norm);
        let mut g1 = vec![0.0; if with_grad { n } else { 0 }];
        let mut g2 = vec![0.0; if with_grad { n } else { 0 }];
        consistency = theta_raw(
            &n1,
            &n2,
            h,
            w,
            1,
            weights.alpha,
            weights.ssim,
            1.0,
            with_grad.then_some(g1.as_mut_slice()),
            with_grad.then_some(g2.as_mut_slice()),
        );
        if let Some(grad) = grad.as_mut() {
            for (b, (g, nv, m)) in [(g1, &n1, m1), (g2, &n2, m2)].into_iter().enumerate() {
                let correction = if norm {
                    g.iter().zip(nv.iter()).map(|(a, b)| a * b).sum::<f64>() / n as f64
                } else {
                    0.0
                };
                for q in 0..n {
                    grad.ranges[b][q] += (g[q] - correction) / m;
                }
            }
        }
    } else if let Some(grad) = grad.as_mut() {
        // the shared-field gradient covers both branches; split it evenly
        grad.ranges[0].iter_mut().for_each(|v| *v *= 0.5);
        grad.ranges[1] = grad.ranges[0].clone();
    }

    Ok((LossBreakdown::new(reconstruction, consistency, smoothness), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::new(h, w, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn theta_examples() {
        let x = random_image(4, 5, 0);
        assert!(photometric_theta(&x, &x, 0.15).unwrap().abs() < 1e-15);

        let y = RasterImage::new(4, 5, x.values().iter().map(|v| (v * 0.8 + 0.1).min(1.0)).collect()).unwrap();
        let shifted = RasterImage::new(4, 5, y.values().iter().map(|v| v - 0.1).collect::<Vec<_>>().iter().map(|v| v.max(0.0)).collect()).unwrap();
        // uniform 0.1 offset where no sample hits the lower bound
        assert!(y.values().iter().all(|&v| v >= 0.1));
        assert!((photometric_theta(&y, &shifted, 1.0).unwrap() - 0.1).abs() < 1e-12);

        let zeros = RasterImage::filled(3, 3, [0.0; 3]).unwrap();
        let ones = RasterImage::filled(3, 3, [1.0; 3]).unwrap();
        let v = photometric_theta_with(&zeros, &ones, 0.15, SsimConfig { c1: 1e-4, c2: 9e-4 }).unwrap();
        let s = 1e-4 / (1.0 + 1e-4);
        assert!((v - (0.15 + 0.85 * (1.0 - s) / 2.0)).abs() < 1e-12);
        assert!((v - 0.57496).abs() < 1e-5);
    }

    #[test]
    fn reconstruction_examples() {
        let target = random_image(4, 4, 1).values().iter().map(|v| v * 0.9).collect::<Vec<_>>();
        let target = RasterImage::new(4, 4, target).unwrap();
        assert_eq!(reconstruction_loss([&target, &target], &target, 0.15).unwrap(), 0.0);

        let off = RasterImage::new(4, 4, target.values().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((reconstruction_loss([&target, &off], &target, 1.0).unwrap() - 0.1).abs() < 1e-12);
        let single = photometric_theta(&off, &target, 0.15).unwrap();
        assert!((reconstruction_loss([&off, &off], &target, 0.15).unwrap() - 2.0 * single).abs() < 1e-15);
    }

    #[test]
    fn consistency_examples() {
        let r = ScalarField::from_fn(4, 4, |i, j| 1.0 + (i * 4 + j) as f64).unwrap();
        assert_eq!(consistency_loss(&r, &r, 0.15, true).unwrap(), 0.0);
        let r2 = r.map(|v| v + 0.7);
        assert!((consistency_loss(&r, &r2, 1.0, false).unwrap() - 0.7).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = ScalarField::new(5, 6, (0..30).map(|_| rng.gen_range(1.0..50.0)).collect()).unwrap();
            let b = ScalarField::new(5, 6, (0..30).map(|_| rng.gen_range(1.0..50.0)).collect()).unwrap();
            let ab = consistency_loss(&a, &b, 0.15, true).unwrap();
            let ba = consistency_loss(&b, &a, 0.15, true).unwrap();
            assert!((ab - ba).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothness_examples() {
        let img = RasterImage::filled(2, 2, [0.4; 3]).unwrap();
        let flat = ScalarField::filled(2, 2, 7.0).unwrap();
        assert_eq!(smoothness_loss([&flat, &flat], &img, 0.001).unwrap(), 0.0);

        // inverse range [[1, 0.5], [1, 0.5]], mean 0.75 → normalized
        // [[4/3, 2/3], ...]; |∂x| = 2/3 on both rows, ∂y = 0
        let step = ScalarField::new(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let one_branch = 0.001 * (2.0 / 3.0);
        let v = smoothness_loss([&step, &flat], &img, 0.001).unwrap();
        assert!((v - one_branch).abs() < 1e-15);
        let v = smoothness_loss([&step, &step], &img, 0.001).unwrap();
        assert!((v - 2.0 * one_branch).abs() < 1e-15);

        let doubled = step.map(|r| 2.0 * r);
        assert!((smoothness_loss([&doubled, &doubled], &img, 0.001).unwrap() - v).abs() < 1e-15);

        let zero = ScalarField::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(smoothness_loss([&zero, &flat], &img, 0.001), Err(Error::Domain(_))));
    }

    #[test]
    fn edges_downweight_range_gradients() {
        let flat_img = RasterImage::filled(2, 2, [0.4; 3]).unwrap();
        let edge_img = RasterImage::from_fn(2, 2, |_, j| if j == 0 { [0.0; 3] } else { [1.0; 3] }).unwrap();
        let step = ScalarField::new(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let a = smoothness_loss([&step, &step], &flat_img, 0.001).unwrap();
        let b = smoothness_loss([&step, &step], &edge_img, 0.001).unwrap();
        assert!((b - a * (-1.0f64).exp()).abs() < 1e-15);
    }

    fn scene(h: usize, w: usize, seed: u64) -> (RasterImage, ScalarField, SceneParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clear = random_image(h, w, seed + 1);
        let noise: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
        let range = ScalarField::from_fn(h, w, |i, j| 5.0 + 3.0 * i as f64 + 2.0 * j as f64 + noise[i * w + j]).unwrap();
        let p = ScatteringParams::new([0.8, 0.75, 0.7], 40.0, 0.05).unwrap();
        (clear, range, p.into())
    }

    #[test]
    fn truth_leaves_only_smoothness() {
        let (clear, range, p) = scene(6, 7, 2);
        let params = ScatteringParams::new(p.airlight, p.visibility, p.epsilon).unwrap();
        let hazy = crate::scattering::synthesize_haze(&clear, &range, &params).unwrap();
        let b = total_loss(&hazy, &clear, [&range, &range], p, &LossWeights::default()).unwrap();
        assert!(b.reconstruction.abs() < 1e-9);
        assert_eq!(b.consistency, 0.0);
        assert!(b.smoothness > 0.0);
        assert!((b.total - (b.reconstruction + b.consistency + b.smoothness)).abs() < 1e-15);

        let flat = ScalarField::filled(6, 7, 12.0).unwrap();
        let hazy = crate::scattering::synthesize_haze(&clear, &flat, &params).unwrap();
        let b = total_loss(&hazy, &clear, [&flat, &flat], p, &LossWeights::default()).unwrap();
        assert!(b.total.abs() < 1e-9);
    }

    /// Central differences of the total loss in raw parameters.
    fn fd_check(pair: bool) {
        let (h, w) = (5, 6);
        let (clear, range, p) = scene(h, w, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // residuals bounded away from zero keep |·| differentiable
        let hazy = RasterImage::new(
            h,
            w,
            crate::scattering::synthesize_haze(&clear, &range, &ScatteringParams::new(p.airlight, p.visibility, p.epsilon).unwrap())
                .unwrap()
                .values()
                .iter()
                .map(|v| (v + if rng.gen::<bool>() { 0.03 } else { -0.03 }).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap();
        let r2 = if pair {
            range.map(|r| r * 1.3 + 0.5)
        } else {
            range.clone()
        };
        let weights = LossWeights {
            beta_smooth: 0.05,
            ..LossWeights::default()
        };
        let (_, g) = total_loss_with_grad(&hazy, &clear, [&range, &r2], p, &weights).unwrap();
        let f = |r1: &ScalarField, r2: &ScalarField, s: SceneParams| total_loss(&hazy, &clear, [r1, r2], s, &weights).unwrap().total;

        let hv = 1e-5 * p.visibility;
        let mut sp = p;
        sp.visibility += hv;
        let mut sm = p;
        sm.visibility -= hv;
        let fd = (f(&range, &r2, sp) - f(&range, &r2, sm)) / (2.0 * hv);
        assert!((fd - g.visibility).abs() <= 1e-6 * fd.abs(), "V: fd={fd} an={}", g.visibility);

        for c in 0..3 {
            let mut sp = p;
            sp.airlight[c] += 1e-6;
            let mut sm = p;
            sm.airlight[c] -= 1e-6;
            let fd = (f(&range, &r2, sp) - f(&range, &r2, sm)) / 2e-6;
            assert!((fd - g.airlight[c]).abs() <= 1e-5 * fd.abs().max(1e-3), "A{c}: fd={fd} an={}", g.airlight[c]);
        }

        if pair {
            for q in [0, 7, 13, h * w - 1] {
                let hr = 1e-6 * range.values()[q];
                let mut up = range.values().to_vec();
                up[q] += hr;
                let mut dn = range.values().to_vec();
                dn[q] -= hr;
                let up = ScalarField::new(h, w, up).unwrap();
                let dn = ScalarField::new(h, w, dn).unwrap();
                let fd = (f(&up, &r2, p) - f(&dn, &r2, p)) / (2.0 * hr);
                assert!((fd - g.ranges[0][q]).abs() <= 1e-4 * fd.abs().max(1e-6), "R q={q}: fd={fd} an={}", g.ranges[0][q]);
            }
        } else {
            for q in [0, 7, 13, h * w - 1] {
                let hr = 1e-6 * range.values()[q];
                let mut up = range.values().to_vec();
                up[q] += hr;
                let mut dn = range.values().to_vec();
                dn[q] -= hr;
                let up = ScalarField::new(h, w, up).unwrap();
                let dn = ScalarField::new(h, w, dn).unwrap();
                let fd = (f(&up, &up, p) - f(&dn, &dn, p)) / (2.0 * hr);
                let an = g.ranges[0][q] + g.ranges[1][q];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-6), "shared R q={q}: fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn gradients_match_central_differences_two_branches() {
        fd_check(true);
    }

    #[test]
    fn gradients_match_central_differences_shared_branch() {
        fd_check(false);
    }
}
