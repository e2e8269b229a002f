//! Moments of rectified Gaussians: `E[ReLU(f)]`, `Var[ReLU(f)]` for scalar
//! `f`, the bivariate normal distribution function with its first and second
//! derivatives, and the cross moment `E[ReLU(f₁)ReLU(f₂)]`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::special::{gauss_legendre, normal_cdf, normal_pdf};
use crate::numerics::{Rng, Tensor};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Below this standard deviation the rectified moments use the deterministic
/// limit `(max(μ, 0), 0)`.
pub const SIGMA_EPS: f64 = 1e-8;

/// Per-point moments of a layer's feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    pub q: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
}

/// Mean and variance of `ReLU(f)` for `f ~ N(mu, var)`.
pub fn relu_mean_var(mu: f64, var: f64) -> (f64, f64) {
    let sd = var.max(0.0).sqrt();
    if sd < SIGMA_EPS {
        return (mu.max(0.0), 0.0);
    }
    let z = mu / sd;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    let mean = sd * (z * cdf + pdf);
    // σ²·[Φ + z²Φ(1−Φ) + zφ(1−2Φ) − φ²], arranged so neither tail cancels
    let upper = normal_cdf(-z);
    let bracket = cdf + z * z * cdf * upper + z * pdf * (upper - cdf) - pdf * pdf;
    (mean, (var * bracket).max(0.0))
}

/// `E[ReLU(f)²] = (σ² + μ²)Φ(μ/σ) + μσφ(μ/σ)`.
pub fn relu_second_moment(mu: f64, var: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd < SIGMA_EPS {
        return mu.max(0.0).powi(2);
    }
    let z = mu / sd;
    (var + mu * mu) * normal_cdf(z) + mu * sd * normal_pdf(z)
}

/// Partial derivatives `(∂mean/∂μ, ∂mean/∂var, ∂variance/∂μ, ∂variance/∂var)`.
fn relu_partials(mu: f64, var: f64) -> [f64; 4] {
    let sd = var.max(0.0).sqrt();
    if sd < SIGMA_EPS {
        let on = if mu > 0.0 { 1.0 } else { 0.0 };
        return [on, 0.0, 0.0, on];
    }
    let z = mu / sd;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    let mean = sd * (z * cdf + pdf);
    [cdf, pdf / (2.0 * sd), 2.0 * mean * normal_cdf(-z), cdf - mean * pdf / sd]
}

/// Elementwise rectified mean on the tape.
pub fn relu_mean(tape: &mut Tape, mean: Var, var: Var) -> Var {
    relu_moment_op(tape, mean, var, false)
}

/// Elementwise rectified variance on the tape (zero gradient where it is
/// clamped at 0).
pub fn relu_var(tape: &mut Tape, mean: Var, var: Var) -> Var {
    relu_moment_op(tape, mean, var, true)
}

fn relu_moment_op(tape: &mut Tape, mean: Var, var: Var, second: bool) -> Var {
    let (m, v) = (tape.value(mean), tape.value(var));
    assert_eq!(m.shape(), v.shape(), "rectified moments: mean and variance shapes differ");
    let value = m
        .zip_map(v, |mu, var| {
            let (a, b) = relu_mean_var(mu, var);
            if second {
                b
            } else {
                a
            }
        })
        .expect("same shape");
    tape.push_op(&[mean, var], value, move |a| {
        let (m, v, g) = (a.inputs[0], a.inputs[1], a.grad.data());
        let n = m.len();
        let mut dm = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for i in 0..n {
            if second && a.output.data()[i] <= 0.0 {
                continue;
            }
            let p = relu_partials(m.data()[i], v.data()[i]);
            let (pm, pv) = if second { (p[2], p[3]) } else { (p[0], p[1]) };
            dm[i] = g[i] * pm;
            dv[i] = g[i] * pv;
        }
        vec![Some(Tensor::from_shape(m.shape(), dm)), Some(Tensor::from_shape(m.shape(), dv))]
    })
}

/// A pair of jointly Gaussian values, for example one process at two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateGaussian {
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl BivariateGaussian {
    pub fn new(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<Self> {
        let [[s11, s12], [s21, s22]] = sigma;
        if !(s11 >= 0.0 && s22 >= 0.0) || (s12 - s21).abs() > 1e-12 * (1.0 + s12.abs()) {
            return Err(Error::InvalidInput(format!("not a covariance: {sigma:?}")));
        }
        if s12.abs() > (s11 * s22).sqrt() + 1e-12 {
            return Err(Error::InvalidInput(format!("correlation above one: {sigma:?}")));
        }
        Ok(BivariateGaussian { mu, sigma })
    }

    fn is_degenerate(&self) -> bool {
        let [[s11, s12], [_, s22]] = self.sigma;
        s11 * s22 - s12 * s12 <= 1e-14 * s11 * s22 || s11 <= 0.0 || s22 <= 0.0
    }
}

const GL_NODES: usize = 20;
const TAIL: f64 = 9.0;

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_NODES))
}

/// Panel edges on `[lo, hi]`, finest around `anchor` with first width
/// `fine` and doubling outward up to 0.5.
fn graded_edges(lo: f64, hi: f64, anchor: f64, fine: f64) -> Vec<f64> {
    let mut left = vec![anchor];
    let mut w = fine.min(0.5);
    let mut x = anchor;
    while x > lo {
        x = (x - w).max(lo);
        left.push(x);
        w = (2.0 * w).min(0.5);
    }
    left.reverse();
    let mut w = fine.min(0.5);
    let mut x = anchor;
    while x < hi {
        x = (x + w).min(hi);
        left.push(x);
        w = (2.0 * w).min(0.5);
    }
    left.dedup();
    left
}

/// `P(X < h, Y < k)` for standard normals with correlation `rho`, |ρ| < 1.
fn bvn_standard(h: f64, k: f64, rho: f64) -> f64 {
    if h < -TAIL || k < -TAIL {
        return 0.0;
    }
    if h > TAIL {
        return normal_cdf(k);
    }
    if k > TAIL {
        return normal_cdf(h);
    }
    let s = (1.0 - rho * rho).sqrt();
    let (lo, hi) = (-TAIL, h);
    let (anchor, fine) = if rho.abs() > 1e-12 { ((k / rho).clamp(lo, hi), s / rho.abs()) } else { (hi, 0.5) };
    let edges = graded_edges(lo, hi, anchor, fine);
    let (nodes, weights) = gl_rule();
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let t = mid + half * x;
            acc += w * normal_pdf(t) * normal_cdf((k - rho * t) / s);
        }
        total += half * acc;
    }
    total.clamp(0.0, 1.0)
}

/// `Φ₂(z; Σ) = P(g₁ ≤ z₁, g₂ ≤ z₂)` for `g ~ N(0, Σ)`. Degenerate
/// covariances (zero variance or correlation ±1) use univariate reductions.
pub fn bvn_cdf(z: [f64; 2], sigma: [[f64; 2]; 2]) -> f64 {
    let (s11, s22, s12) = (sigma[0][0], sigma[1][1], sigma[0][1]);
    let step = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
    match (s11 > 0.0, s22 > 0.0) {
        (false, false) => return step(z[0]) * step(z[1]),
        (false, true) => return step(z[0]) * normal_cdf(z[1] / s22.sqrt()),
        (true, false) => return step(z[1]) * normal_cdf(z[0] / s11.sqrt()),
        (true, true) => {}
    }
    let (h, k) = (z[0] / s11.sqrt(), z[1] / s22.sqrt());
    let rho = (s12 / (s11 * s22).sqrt()).clamp(-1.0, 1.0);
    if 1.0 - rho.abs() < 1e-12 {
        return if rho > 0.0 { normal_cdf(h.min(k)) } else { (normal_cdf(h) - normal_cdf(-k)).max(0.0) };
    }
    bvn_standard(h, k, rho)
}

/// Gradient and Hessian of [`bvn_cdf`] with respect to `z`.
pub fn bvn_cdf_grad_hess(z: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<([f64; 2], [[f64; 2]; 2])> {
    let (s11, s22, s12) = (sigma[0][0], sigma[1][1], sigma[0][1]);
    let det = s11 * s22 - s12 * s12;
    if s11 <= 0.0 || s22 <= 0.0 || det <= 1e-14 * s11 * s22 {
        return Err(Error::DegenerateSigma);
    }
    let var = [s11, s22];
    let mut grad = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    for i in 0..2 {
        let j = 1 - i;
        let r = s12 / var[i];
        let s = (var[j] - s12 * r).sqrt();
        let arg = (z[j] - r * z[i]) / s;
        let dens = (-0.5 * z[i] * z[i] / var[i]).exp() / (2.0 * PI * var[i]).sqrt();
        grad[i] = dens * normal_cdf(arg);
        hess[i][i] = -z[i] / var[i] * grad[i] - dens * normal_pdf(arg) * r / s;
    }
    let quad = (s22 * z[0] * z[0] - 2.0 * s12 * z[0] * z[1] + s11 * z[1] * z[1]) / det;
    let joint = (-0.5 * quad).exp() / (2.0 * PI * det.sqrt());
    hess[0][1] = joint;
    hess[1][0] = joint;
    Ok((grad, hess))
}

/// `E[ReLU(f₁)·ReLU(f₂)]` for a nondegenerate pair. The same-point case has
/// a singular covariance; use [`relu_second_moment`] there.
pub fn relu_cross_moment(bg: &BivariateGaussian) -> Result<f64> {
    if bg.is_degenerate() {
        return Err(Error::DegenerateSigma);
    }
    let [m1, m2] = bg.mu;
    let s = bg.sigma;
    let cdf = bvn_cdf(bg.mu, s);
    let (g, h) = bvn_cdf_grad_hess(bg.mu, s)?;
    let (c1, c2) = ([s[0][0], s[1][0]], [s[0][1], s[1][1]]);
    let lin = m1 * (c2[0] * g[0] + c2[1] * g[1]) + m2 * (c1[0] * g[0] + c1[1] * g[1]);
    let mut quad = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            quad += c1[i] * h[i][j] * c2[j];
        }
    }
    Ok((s[0][1] + m1 * m2) * cdf + lin + quad)
}

/// Sample moments of rectified draws with their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedSample {
    /// `E[h₁], E[h₂]`.
    pub mean: [f64; 2],
    /// `E[h₁²], E[h₂²]`.
    pub second: [f64; 2],
    /// `E[h₁h₂]`.
    pub cross: f64,
    pub se_mean: [f64; 2],
    pub se_second: [f64; 2],
    pub se_cross: f64,
}

/// Monte Carlo estimate of the rectified moments of `bg`.
pub fn mc_rectified_oracle(bg: &BivariateGaussian, n_samples: usize, seed: u64) -> RectifiedSample {
    let [[s11, s12], [_, s22]] = bg.sigma;
    let l11 = s11.sqrt();
    let l21 = if l11 > 0.0 { s12 / l11 } else { 0.0 };
    let l22 = (s22 - l21 * l21).max(0.0).sqrt();
    let mut rng = Rng::new(seed);
    // running sums of h, h² and h⁴-type terms for the standard errors
    let mut sum = [0.0f64; 5];
    let mut sq = [0.0f64; 5];
    for _ in 0..n_samples {
        let (e1, e2) = (rng.normal(), rng.normal());
        let h1 = (bg.mu[0] + l11 * e1).max(0.0);
        let h2 = (bg.mu[1] + l21 * e1 + l22 * e2).max(0.0);
        let vals = [h1, h2, h1 * h1, h2 * h2, h1 * h2];
        for i in 0..5 {
            sum[i] += vals[i];
            sq[i] += vals[i] * vals[i];
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = (0..5).map(|i| ((sq[i] / n - mean[i] * mean[i]).max(0.0) / (n - 1.0)).sqrt()).collect();
    RectifiedSample {
        mean: [mean[0], mean[1]],
        second: [mean[2], mean[3]],
        cross: mean[4],
        se_mean: [se[0], se[1]],
        se_second: [se[2], se[3]],
        se_cross: se[4],
    }
}
