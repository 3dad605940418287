//! Windowed SSIM with analytic gradients.
//!
//! Local statistics use a 3×3 uniform window with reflect padding (the edge
//! sample is not repeated), computed separably. Stabilizers default to
//! `c1 = 0.01²`, `c2 = 0.03²`.

use crate::error::{Error, Result};
use crate::field::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Mean SSIM and the per-sample map (interleaved like the inputs).
#[derive(Debug, Clone)]
pub struct SsimOutput {
    pub mean: f64,
    pub map: Vec<f64>,
}

/// SSIM between two RGB images, channel by channel.
pub fn ssim(x: &RasterImage, y: &RasterImage, config: SsimConfig) -> Result<SsimOutput> {
    if x.dims() != y.dims() {
        return Err(Error::Shape {
            expected: format!("{}x{}", x.height(), x.width()),
            actual: format!("{}x{}", y.height(), y.width()),
        });
    }
    let (h, w) = x.dims();
    let mut map = vec![0.0; h * w * 3];
    let mut scratch = Scratch::new(h, w);
    for c in 0..3 {
        let xs = channel(x.values(), 3, c);
        let ys = channel(y.values(), 3, c);
        scratch.local_stats(&xs, &ys);
        for k in 0..h * w {
            map[k * 3 + c] = scratch.stats(k).score(config);
        }
    }
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok(SsimOutput { mean, map })
}

pub(crate) fn channel(data: &[f64], channels: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(channels).copied().collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        0
    } else if i < 0 {
        (-i) as usize
    } else if i >= n {
        (2 * n - 2 - i) as usize
    } else {
        i as usize
    }
}

/// 3×3 box mean with reflect padding; `tmp` holds the horizontal pass.
fn box_filter(h: usize, w: usize, tmp: &mut [f64], src: &[f64], dst: &mut [f64]) {
    let third = 1.0 / 3.0;
    for (row, out) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        if w == 1 {
            out[0] = row[0];
            continue;
        }
        out[0] = (2.0 * row[1] + row[0]) * third;
        for j in 1..w - 1 {
            out[j] = (row[j - 1] + row[j] + row[j + 1]) * third;
        }
        out[w - 1] = (2.0 * row[w - 2] + row[w - 1]) * third;
    }
    for i in 0..h {
        let up = &tmp[reflect(i as isize - 1, h) * w..][..w];
        let mid = &tmp[i * w..][..w];
        let dn = &tmp[reflect(i as isize + 1, h) * w..][..w];
        let out = &mut dst[i * w..][..w];
        for j in 0..w {
            out[j] = (up[j] + mid[j] + dn[j]) * third;
        }
    }
}

/// Transpose of [`box_filter`], overwriting `dst`.
fn box_filter_adjoint(h: usize, w: usize, tmp: &mut [f64], src: &[f64], dst: &mut [f64]) {
    let third = 1.0 / 3.0;
    tmp.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..h {
        let g = &src[i * w..][..w];
        for r in [reflect(i as isize - 1, h), i, reflect(i as isize + 1, h)] {
            let t = &mut tmp[r * w..][..w];
            for j in 0..w {
                t[j] += g[j] * third;
            }
        }
    }
    dst.iter_mut().for_each(|v| *v = 0.0);
    for (t, out) in tmp.chunks_exact(w).zip(dst.chunks_exact_mut(w)) {
        if w == 1 {
            out[0] += t[0];
            continue;
        }
        for j in 0..w {
            let g = t[j] * third;
            out[reflect(j as isize - 1, w)] += g;
            out[j] += g;
            out[reflect(j as isize + 1, w)] += g;
        }
    }
}

/// Reusable buffers for one plane size.
pub(crate) struct Scratch {
    h: usize,
    w: usize,
    tmp: Vec<f64>,
    stage: Vec<f64>,
    mx: Vec<f64>,
    my: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
    d_mx: Vec<f64>,
    d_my: Vec<f64>,
    d_v: Vec<f64>,
    d_c: Vec<f64>,
    lin: Vec<f64>,
    bt_lin: Vec<f64>,
    bt_v: Vec<f64>,
    bt_c: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        let z = || vec![0.0; h * w];
        Self {
            h,
            w,
            tmp: z(),
            stage: z(),
            mx: z(),
            my: z(),
            exx: z(),
            eyy: z(),
            exy: z(),
            d_mx: z(),
            d_my: z(),
            d_v: z(),
            d_c: z(),
            lin: z(),
            bt_lin: z(),
            bt_v: z(),
            bt_c: z(),
        }
    }

    fn local_stats(&mut self, x: &[f64], y: &[f64]) {
        let (h, w) = (self.h, self.w);
        box_filter(h, w, &mut self.tmp, x, &mut self.mx);
        box_filter(h, w, &mut self.tmp, y, &mut self.my);
        for ((s, a), b) in self.stage.iter_mut().zip(x).zip(y) {
            *s = a * b;
        }
        box_filter(h, w, &mut self.tmp, &self.stage, &mut self.exy);
        for (s, a) in self.stage.iter_mut().zip(x) {
            *s = a * a;
        }
        box_filter(h, w, &mut self.tmp, &self.stage, &mut self.exx);
        for (s, b) in self.stage.iter_mut().zip(y) {
            *s = b * b;
        }
        box_filter(h, w, &mut self.tmp, &self.stage, &mut self.eyy);
    }

    #[inline]
    fn stats(&self, k: usize) -> LocalStats {
        let (mx, my) = (self.mx[k], self.my[k]);
        LocalStats {
            mx,
            my,
            vx: self.exx[k] - mx * mx,
            vy: self.eyy[k] - my * my,
            cxy: self.exy[k] - mx * my,
        }
    }

    /// Adds `Bᵀ(d_m − 2·d_v·m_own − d_c·m_other) + 2·own·Bᵀd_v + other·Bᵀd_c`
    /// into `grad`.
    fn accumulate(&mut self, own: &[f64], other: &[f64], x_side: bool, grad: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        let (d_m, m_own, m_other) = if x_side {
            (&self.d_mx, &self.mx, &self.my)
        } else {
            (&self.d_my, &self.my, &self.mx)
        };
        for k in 0..h * w {
            self.lin[k] = d_m[k] - 2.0 * self.d_v[k] * m_own[k] - self.d_c[k] * m_other[k];
        }
        box_filter_adjoint(h, w, &mut self.tmp, &self.lin, &mut self.bt_lin);
        box_filter_adjoint(h, w, &mut self.tmp, &self.d_v, &mut self.bt_v);
        box_filter_adjoint(h, w, &mut self.tmp, &self.d_c, &mut self.bt_c);
        for q in 0..h * w {
            grad[q] += self.bt_lin[q] + 2.0 * own[q] * self.bt_v[q] + other[q] * self.bt_c[q];
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LocalStats {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

impl LocalStats {
    fn terms(&self, cfg: SsimConfig) -> (f64, f64, f64, f64) {
        let n1 = 2.0 * self.mx * self.my + cfg.c1;
        let n2 = 2.0 * self.cxy + cfg.c2;
        let d1 = self.mx * self.mx + self.my * self.my + cfg.c1;
        let d2 = self.vx + self.vy + cfg.c2;
        (n1, n2, d1, d2)
    }

    pub(crate) fn score(&self, cfg: SsimConfig) -> f64 {
        let (n1, n2, d1, d2) = self.terms(cfg);
        (n1 * n2) / (d1 * d2)
    }
}

/// Sum of SSIM over one plane, with gradients of that sum.
///
/// Gradients are accumulated (`+=`) into `grad_x` / `grad_y` after scaling
/// by `scale`, so callers can fold in the outer chain-rule factor.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ssim_plane_sum_and_grad(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    cfg: SsimConfig,
    scale: f64,
    scratch: &mut Scratch,
    grad_x: Option<&mut [f64]>,
    grad_y: Option<&mut [f64]>,
) -> f64 {
    debug_assert_eq!((scratch.h, scratch.w), (h, w));
    scratch.local_stats(x, y);
    let want = grad_x.is_some() || grad_y.is_some();
    let mut sum = 0.0;
    for k in 0..h * w {
        let s = scratch.stats(k);
        let (n1, n2, d1, d2) = s.terms(cfg);
        let inv = 1.0 / (d1 * d2);
        let score = n1 * n2 * inv;
        sum += score;
        if want {
            // dS/dmx, dS/dmy, dS/dvx (= dS/dvy), dS/dcxy
            scratch.d_mx[k] = scale * (2.0 * s.my * n2 * inv - score * 2.0 * s.mx / d1);
            scratch.d_my[k] = scale * (2.0 * s.mx * n2 * inv - score * 2.0 * s.my / d1);
            scratch.d_v[k] = scale * (-score / d2);
            scratch.d_c[k] = scale * (2.0 * n1 * inv);
        }
    }
    // Window statistics are linear in x, x², xy; with vx = E[x²] − mx² and
    // cxy = E[xy] − mx·my the chain rule gives the expression in `accumulate`.
    if let Some(g) = grad_x {
        scratch.accumulate(x, y, true, g);
    }
    if let Some(g) = grad_y {
        scratch.accumulate(y, x, false, g);
    }
    sum
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
    fn identical_images_score_one() {
        let x = random_image(7, 9, 1);
        let out = ssim(&x, &x, SsimConfig::default()).unwrap();
        assert!((out.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let zeros = RasterImage::filled(5, 6, [0.0; 3]).unwrap();
        let ones = RasterImage::filled(5, 6, [1.0; 3]).unwrap();
        let out = ssim(&zeros, &ones, SsimConfig { c1: 1e-4, c2: 9e-4 }).unwrap();
        let expected = 1e-4 / (1.0 + 1e-4);
        for v in &out.map {
            assert!((v - expected).abs() < 1e-15);
        }
        assert!((out.mean - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn symmetric_and_bounded() {
        for seed in 0..10 {
            let x = random_image(6, 5, seed);
            let y = random_image(6, 5, seed + 100);
            let a = ssim(&x, &y, SsimConfig::default()).unwrap();
            let b = ssim(&y, &x, SsimConfig::default()).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-15);
            assert!(a.map.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = random_image(3, 3, 0);
        let y = random_image(3, 4, 0);
        assert!(matches!(ssim(&x, &y, SsimConfig::default()), Err(Error::Shape { .. })));
    }

    /// Brute-force window statistics with explicit reflect padding.
    fn naive_ssim(x: &[f64], y: &[f64], h: usize, w: usize, cfg: SsimConfig) -> Vec<f64> {
        let at = |v: &[f64], i: isize, j: isize| {
            let ri = if i < 0 { -i } else if i >= h as isize { 2 * h as isize - 2 - i } else { i };
            let rj = if j < 0 { -j } else if j >= w as isize { 2 * w as isize - 2 - j } else { j };
            v[ri as usize * w + rj as usize]
        };
        let mut out = Vec::new();
        for i in 0..h as isize {
            for j in 0..w as isize {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let a = at(x, i + di, j + dj);
                        let b = at(y, i + di, j + dj);
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / 9.0, sy / 9.0);
                let vx = sxx / 9.0 - mx * mx;
                let vy = syy / 9.0 - my * my;
                let c = sxy / 9.0 - mx * my;
                out.push(((2.0 * mx * my + cfg.c1) * (2.0 * c + cfg.c2)) / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2)));
            }
        }
        out
    }

    #[test]
    fn matches_naive_windows() {
        let (h, w) = (5, 7);
        let x = random_image(h, w, 3);
        let y = random_image(h, w, 4);
        let fast = ssim(&x, &y, SsimConfig::default()).unwrap();
        for c in 0..3 {
            let naive = naive_ssim(&channel(x.values(), 3, c), &channel(y.values(), 3, c), h, w, SsimConfig::default());
            for (k, v) in naive.iter().enumerate() {
                assert!((fast.map[k * 3 + c] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (h, w) = (5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
        let cfg = SsimConfig::default();
        let mut scratch = Scratch::new(h, w);
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        ssim_plane_sum_and_grad(&x, &y, h, w, cfg, 1.0, &mut scratch, Some(&mut gx), Some(&mut gy));
        let eval = |x: &[f64], y: &[f64]| naive_ssim(x, y, h, w, cfg).iter().sum::<f64>();
        let step = 1e-6;
        for q in 0..h * w {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[q] += step;
            xm[q] -= step;
            let fd = (eval(&xp, &y) - eval(&xm, &y)) / (2.0 * step);
            assert!((fd - gx[q]).abs() < 1e-6 * fd.abs().max(1.0), "x q={q} fd={fd} an={}", gx[q]);
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[q] += step;
            ym[q] -= step;
            let fd = (eval(&x, &yp) - eval(&x, &ym)) / (2.0 * step);
            assert!((fd - gy[q]).abs() < 1e-6 * fd.abs().max(1.0), "y q={q}");
        }
    }
}
