//! Drift–diffusion convolution operators `A = Σ_k W_k e^{D_k} + b` with
//! `D_k = β_kᵀ∇ + ½∇ᵀΣ_k∇`, applied in closed form to RBF posteriors.
//!
//! The time evolution `e^{tD_k}` is convolution with the heat kernel
//! `N(x; −tβ_k, tΣ_k)`, and a Gaussian convolved with the RBF kernel is
//! again Gaussian. Cross-covariances with the data therefore become
//! `a·N(x; x_i − tβ_k, l²I + tΣ_k)` and the prior part of `A k A'` becomes
//! `a·N(x; x' − t(β_k − β_k'), l²I + tΣ_k + tΣ_k')`.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::gauss::{Density, Moments};
use crate::gp::{ObservedField, RbfGp, RbfHyper};
use crate::numerics::linalg;
use crate::numerics::special::LN_2PI;
use crate::numerics::tensor::{gemm, Tensor};
use crate::numerics::Rng;

/// Parameters of one convolution layer.
///
/// `w` is K×c_out×c_in, `beta` K×d, `sigma_chol` K×d×d (only the lower
/// triangle is used, `Σ_k = L_k L_kᵀ`), `bias` has c_out entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOp {
    pub w: Tensor,
    pub beta: Tensor,
    pub sigma_chol: Tensor,
    pub bias: Tensor,
    pub t: f64,
}

impl DiffusionOp {
    pub fn new(w: Tensor, beta: Tensor, sigma_chol: Tensor, bias: Tensor) -> Result<Self> {
        if w.ndim() != 3 || beta.ndim() != 2 || sigma_chol.ndim() != 3 {
            return Err(shape_err("DiffusionOp expects w: K×co×ci, beta: K×d, sigma_chol: K×d×d"));
        }
        let (k, co) = (w.shape()[0], w.shape()[1]);
        let d = beta.cols();
        if beta.rows() != k || sigma_chol.shape() != [k, d, d] || bias.len() != co {
            return Err(shape_err(format!(
                "w {:?}, beta {:?}, sigma_chol {:?}, bias {:?}",
                w.shape(),
                beta.shape(),
                sigma_chol.shape(),
                bias.shape()
            )));
        }
        Ok(DiffusionOp { w, beta, sigma_chol, bias, t: 1.0 })
    }

    /// One term, identity weights, no drift, no diffusion, no bias.
    pub fn identity(channels: usize, dim: usize) -> Self {
        let w = Tensor::eye(channels).into_shape(&[1, channels, channels]).expect("count");
        DiffusionOp::new(w, Tensor::zeros(&[1, dim]), Tensor::zeros(&[1, dim, dim]), Tensor::zeros(&[channels]))
            .expect("consistent shapes")
    }

    /// Random initialisation for inputs with typical sample spacing `r`.
    ///
    /// Drifts sit on a centred stencil (a 3×3 grid of pitch `r` when d = 2
    /// and K = 9, otherwise K offsets spread over [−r, r] per axis), the
    /// diffusions start at `(0.3 r)² I` and the weights are normal with
    /// variance `1/(c_in·K)`.
    pub fn init(c_in: usize, c_out: usize, terms: usize, dim: usize, r: f64, rng: &mut Rng) -> Self {
        let beta = stencil(terms, dim, r);
        let mut sigma_chol = Tensor::zeros(&[terms, dim, dim]);
        for k in 0..terms {
            for i in 0..dim {
                sigma_chol.data_mut()[(k * dim + i) * dim + i] = 0.3 * r;
            }
        }
        let std = 1.0 / ((c_in * terms) as f64).sqrt();
        let w =
            Tensor::from_shape(&[terms, c_out, c_in], (0..terms * c_out * c_in).map(|_| std * rng.normal()).collect());
        DiffusionOp::new(w, beta, sigma_chol, Tensor::zeros(&[c_out])).expect("consistent shapes")
    }

    pub fn n_terms(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.beta.cols()
    }

    /// `W_k[α, β]`.
    #[inline]
    pub fn weight(&self, k: usize, out: usize, inp: usize) -> f64 {
        let (co, ci) = (self.c_out(), self.c_in());
        self.w.data()[(k * co + out) * ci + inp]
    }

    /// `Σ_k = L_k L_kᵀ` from the lower triangle of the stored factor.
    pub fn sigma(&self, k: usize) -> Tensor {
        let d = self.dim();
        Tensor::from_shape(&[d, d], lower_gram(self.sigma_chol.slab(k), d))
    }
}

fn lower_gram(l: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..=i.min(j)).map(|m| l[i * d + m] * l[j * d + m]).sum();
        }
    }
    out
}

/// Drift offsets for `terms` basis elements in `dim` dimensions.
pub fn stencil(terms: usize, dim: usize, r: f64) -> Tensor {
    let mut beta = Tensor::zeros(&[terms, dim]);
    let side = (terms as f64).powf(1.0 / dim as f64).round() as usize;
    if side.pow(dim as u32) == terms && side > 1 {
        for k in 0..terms {
            let mut rem = k;
            for axis in (0..dim).rev() {
                let idx = rem % side;
                rem /= side;
                let off = -1.0 + 2.0 * idx as f64 / (side - 1) as f64;
                beta.data_mut()[k * dim + axis] = off * r;
            }
        }
    } else if terms > 1 {
        for k in 0..terms {
            let off = -1.0 + 2.0 * k as f64 / (terms - 1) as f64;
            for axis in 0..dim {
                beta.data_mut()[k * dim + axis] = off * r;
            }
        }
    }
    beta
}

/// Heat kernel `N(x; −tβ, tΣ)` of the drift–diffusion equation.
pub fn greens_eval(beta: &[f64], sigma: &Tensor, t: f64, x: &[f64]) -> Result<f64> {
    let d = beta.len();
    let cov = sigma.scale(t);
    let l = linalg::cholesky(&cov).map_err(|_| Error::SingularSigma(det_small(&cov)))?;
    let logdet = linalg::chol_logdet(&l);
    if logdet < (1e-300f64).ln() {
        return Err(Error::SingularSigma(logdet.exp()));
    }
    let r = Tensor::from_shape(&[d, 1], x.iter().zip(beta).map(|(x, b)| x + t * b).collect());
    let z = linalg::solve_lower(&l, &r)?;
    let q: f64 = z.data().iter().map(|v| v * v).sum();
    Ok((-0.5 * (q + logdet + d as f64 * LN_2PI)).exp())
}

fn det_small(a: &Tensor) -> f64 {
    match a.rows() {
        1 => a.at(0, 0),
        2 => a.at(0, 0) * a.at(1, 1) - a.at(0, 1) * a.at(1, 0),
        _ => 0.0,
    }
}

fn iso_plus(sigma: &[f64], d: usize, l2: f64, t: f64) -> Vec<f64> {
    let mut c: Vec<f64> = sigma.iter().map(|s| t * s).collect();
    for i in 0..d {
        c[i * d + i] += l2;
    }
    c
}

/// `a·N(x; x_i − tβ_k, l²I + tΣ_k)`: the operator term `k` applied to the
/// kernel `k(·, x_i)` and evaluated at `x`.
pub fn conv_cross_cov(hyper: &RbfHyper, op: &DiffusionOp, k: usize, x: &[f64], xi: &[f64]) -> f64 {
    let d = op.dim();
    let l2 = hyper.l().powi(2);
    let cov = iso_plus(op.sigma(k).data(), d, l2, op.t);
    let beta = op.beta.row(k);
    let r: Vec<f64> = (0..d).map(|j| x[j] - xi[j] + op.t * beta[j]).collect();
    Density::new(&cov, d, hyper.a()).expect("l²I + tΣ is positive definite").eval(&r)
}

/// `a·N(x; x' − t(β_k1 − β_k2), l²I + tΣ_k1 + tΣ_k2)`: the prior covariance
/// of terms `k1` and `k2` of the operator.
pub fn conv_prior_pair(hyper: &RbfHyper, op: &DiffusionOp, k1: usize, k2: usize, x: &[f64], xp: &[f64]) -> f64 {
    let d = op.dim();
    let l2 = hyper.l().powi(2);
    let s = op.sigma(k1).add(&op.sigma(k2)).expect("same shape");
    let cov = iso_plus(s.data(), d, l2, op.t);
    let (b1, b2) = (op.beta.row(k1), op.beta.row(k2));
    let r: Vec<f64> = (0..d).map(|j| x[j] - xp[j] + op.t * (b1[j] - b2[j])).collect();
    Density::new(&cov, d, hyper.a()).expect("positive definite").eval(&r)
}

/// The posterior GP pushed through a convolution operator, evaluated lazily.
pub struct ConvolvedGpView<'a> {
    pub source: &'a RbfGp,
    pub op: &'a DiffusionOp,
}

impl<'a> ConvolvedGpView<'a> {
    pub fn new(source: &'a RbfGp, op: &'a DiffusionOp) -> Result<Self> {
        if source.n_channels() != op.c_in() || source.hyper.dim != op.dim() {
            return Err(shape_err(format!(
                "operator expects {} channels in {} dims, GP has {} in {}",
                op.c_in(),
                op.dim(),
                source.n_channels(),
                source.hyper.dim
            )));
        }
        Ok(ConvolvedGpView { source, op })
    }

    /// `u_k(q_n)_i`, as K tensors of shape M×N.
    fn cross(&self, q: &Tensor) -> Vec<Tensor> {
        let x = &self.source.x;
        (0..self.op.n_terms())
            .map(|k| {
                let mut u = Tensor::zeros(&[q.rows(), x.rows()]);
                for n in 0..q.rows() {
                    for i in 0..x.rows() {
                        u.set(n, i, conv_cross_cov(&self.source.hyper, self.op, k, q.row(n), x.row(i)));
                    }
                }
                u
            })
            .collect()
    }

    /// `(Aμ)(q) = Σ_k W_k·(u_k(q)ᵀ alpha) + b`, M×c_out.
    pub fn conv_mean(&self, q: &Tensor) -> Tensor {
        let (co, ci) = (self.op.c_out(), self.op.c_in());
        let mut out = Tensor::zeros(&[q.rows(), co]);
        for (k, u) in self.cross(q).iter().enumerate() {
            let t = u.matmul(&self.source.alpha).expect("shapes");
            for n in 0..q.rows() {
                for a in 0..co {
                    let s: f64 = (0..ci).map(|b| self.op.weight(k, a, b) * t.at(n, b)).sum();
                    out.data_mut()[n * co + a] += s;
                }
            }
        }
        for n in 0..q.rows() {
            for a in 0..co {
                out.data_mut()[n * co + a] += self.op.bias.data()[a];
            }
        }
        out
    }

    fn prior_pairs(&self) -> Tensor {
        let kk = self.op.n_terms();
        let zero = vec![0.0; self.op.dim()];
        let mut p = Tensor::zeros(&[kk, kk]);
        for k1 in 0..kk {
            for k2 in 0..kk {
                p.set(k1, k2, conv_prior_pair(&self.source.hyper, self.op, k1, k2, &zero, &zero));
            }
        }
        p
    }

    /// Marginal variances of the convolved process, M×c_out:
    /// `v_α(x) = Σ_β Σ_{k,k'} W_k^{αβ} W_{k'}^{αβ} (P_{kk'} − u_kᵀ[K+S_β]⁻¹u_{k'})`.
    pub fn conv_var_diag(&self, q: &Tensor) -> Tensor {
        let (kk, co, ci) = (self.op.n_terms(), self.op.c_out(), self.op.c_in());
        let m = q.rows();
        let p = self.prior_pairs();
        let us = self.cross(q);
        let n_groups = self.source.groups().len();
        let mut out = Tensor::zeros(&[m, co]);
        for g in 0..n_groups {
            let inv = self.source.inverse(g);
            let h: Vec<Tensor> = us.iter().map(|u| u.matmul(&inv).expect("shapes")).collect();
            let members: Vec<usize> = (0..ci).filter(|&b| self.source.group_of(b) == g).collect();
            for n in 0..m {
                let mut nmat = vec![0.0; kk * kk];
                for k1 in 0..kk {
                    for k2 in 0..kk {
                        let r = crate::numerics::tensor::dot(h[k1].row(n), us[k2].row(n));
                        nmat[k1 * kk + k2] = p.at(k1, k2) - r;
                    }
                }
                for a in 0..co {
                    let mut acc = 0.0;
                    for &b in &members {
                        for k1 in 0..kk {
                            let w1 = self.op.weight(k1, a, b);
                            for k2 in 0..kk {
                                acc += w1 * self.op.weight(k2, a, b) * nmat[k1 * kk + k2];
                            }
                        }
                    }
                    out.data_mut()[n * co + a] += acc;
                }
            }
        }
        out.map(|v| v.max(0.0))
    }

    /// Product of the full output covariance over (point, channel) pairs at
    /// `q` with `z` (M×c_out), without materialising the covariance.
    pub fn cov_matvec(&self, q: &Tensor, z: &Tensor) -> Tensor {
        let (kk, co, ci) = (self.op.n_terms(), self.op.c_out(), self.op.c_in());
        let m = q.rows();
        let hyper = &self.source.hyper;
        let us = self.cross(q);
        // ζ[k][β][m] = Σ_α W_k[α,β] z[m,α]
        let zeta: Vec<Vec<f64>> = (0..kk)
            .map(|k| {
                let mut v = vec![0.0; ci * m];
                for b in 0..ci {
                    for j in 0..m {
                        v[b * m + j] = (0..co).map(|a| self.op.weight(k, a, b) * z.at(j, a)).sum();
                    }
                }
                v
            })
            .collect();
        let mut out = Tensor::zeros(&[m, co]);
        // prior part
        for k1 in 0..kk {
            for k2 in 0..kk {
                let mut pr = vec![0.0; m * m];
                for n in 0..m {
                    for j in 0..m {
                        pr[n * m + j] = conv_prior_pair(hyper, self.op, k1, k2, q.row(n), q.row(j));
                    }
                }
                for b in 0..ci {
                    for n in 0..m {
                        let s: f64 = (0..m).map(|j| pr[n * m + j] * zeta[k2][b * m + j]).sum();
                        for a in 0..co {
                            out.data_mut()[n * co + a] += self.op.weight(k1, a, b) * s;
                        }
                    }
                }
            }
        }
        // data part
        let nx = self.source.x.rows();
        for b in 0..ci {
            let inv = self.source.inverse(self.source.group_of(b));
            let mut bvec = vec![0.0; nx];
            for (k, u) in us.iter().enumerate() {
                for j in 0..m {
                    let zb = zeta[k][b * m + j];
                    for i in 0..nx {
                        bvec[i] += zb * u.at(j, i);
                    }
                }
            }
            let tvec = inv.matvec(&bvec);
            for (k, u) in us.iter().enumerate() {
                for n in 0..m {
                    let s = crate::numerics::tensor::dot(u.row(n), &tvec);
                    for a in 0..co {
                        out.data_mut()[n * co + a] -= self.op.weight(k, a, b) * s;
                    }
                }
            }
        }
        out
    }
}

/// Observes `image` at integer pixel coordinates with noise variance
/// `noise`, fits an RBF GP of length-scale `l` (amplitude 1), applies the
/// one-channel operator `op` (drifts in pixel units) and returns the largest
/// absolute deviation of the convolved mean at the pixels from the direct
/// zero-padded discrete correlation `Σ_k W_k·img[p + β_k]`.
pub fn discrete_limit_check(op: &DiffusionOp, image: &Tensor, l: f64, noise: f64) -> Result<f64> {
    if op.dim() != 2 || op.c_in() != 1 || op.c_out() != 1 {
        return Err(shape_err("discrete_limit_check expects a one-channel 2-d operator"));
    }
    let (h, w) = (image.rows(), image.cols());
    let mut xs = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            xs.push(i as f64);
            xs.push(j as f64);
        }
    }
    let x = Tensor::from_shape(&[h * w, 2], xs);
    let y = image.reshape(&[h * w, 1])?;
    let obs = ObservedField::new(x.clone(), y, Tensor::full(&[h * w, 1], noise))?;
    let gp = RbfGp::fit(RbfHyper::new(1.0, l, 2), &obs)?;
    let mean = ConvolvedGpView::new(&gp, op)?.conv_mean(&x);
    let mut worst = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let mut direct = op.bias.data()[0];
            for k in 0..op.n_terms() {
                let b = op.beta.row(k);
                let (pi, pj) = (i as f64 + b[0], j as f64 + b[1]);
                let (ri, rj) = (pi.round(), pj.round());
                if ri >= 0.0 && rj >= 0.0 && (ri as usize) < h && (rj as usize) < w {
                    direct += op.weight(k, 0, 0) * image.at(ri as usize, rj as usize);
                }
            }
            worst = worst.max((mean.at(i * w + j, 0) - direct).abs());
        }
    }
    Ok(worst)
}

/// Operator parameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionVars {
    pub w: Var,
    pub beta: Var,
    pub sigma_chol: Var,
    pub bias: Var,
}

impl DiffusionVars {
    pub fn register(tape: &mut Tape, op: &DiffusionOp, trainable: bool) -> Self {
        let mut mk = |v: &Tensor| if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
        DiffusionVars { w: mk(&op.w), beta: mk(&op.beta), sigma_chol: mk(&op.sigma_chol), bias: mk(&op.bias) }
    }
}

/// `Σ_k = L_k L_kᵀ` for each K×d×d factor, reading only lower triangles.
pub fn diffusion_cov(tape: &mut Tape, l: Var) -> Var {
    let lv = tape.value(l);
    let (kk, d) = (lv.shape()[0], lv.shape()[1]);
    let mut out = Vec::with_capacity(kk * d * d);
    for k in 0..kk {
        out.extend(lower_gram(lv.slab(k), d));
    }
    tape.push_op(&[l], Tensor::from_shape(&[kk, d, d], out), move |a| {
        let (lv, g) = (a.inputs[0], a.grad);
        let mut lbar = vec![0.0; kk * d * d];
        for k in 0..kk {
            let (ls, gs) = (lv.slab(k), g.slab(k));
            // L̄ = tril((Σ̄ + Σ̄ᵀ)·L)
            for i in 0..d {
                for j in 0..=i {
                    let mut s = 0.0;
                    for m in j..d {
                        s += (gs[i * d + m] + gs[m * d + i]) * ls[m * d + j];
                    }
                    lbar[(k * d + i) * d + j] = s;
                }
            }
        }
        vec![Some(Tensor::from_shape(&[kk, d, d], lbar))]
    })
}

/// Adds `s·I` to every d×d slice of a K×d×d tensor.
pub fn add_eye_scaled(tape: &mut Tape, a: Var, s: Var) -> Var {
    let av = tape.value(a);
    let (kk, d) = (av.shape()[0], av.shape()[1]);
    let sv = tape.value(s).item();
    let mut value = av.clone();
    for k in 0..kk {
        for i in 0..d {
            value.data_mut()[(k * d + i) * d + i] += sv;
        }
    }
    tape.push_op(&[a, s], value, move |a| {
        let g = a.grad;
        let tr = (0..kk).flat_map(|k| (0..d).map(move |i| (k * d + i) * d + i)).map(|i| g.data()[i]).sum();
        vec![Some(g.clone()), Some(Tensor::scalar(tr))]
    })
}

/// `out[k,k',n,m] = amp·N(xa_n − xb_m + s_k − s_k'; 0, base + cov_k + cov_k')`
/// for `shift` K×d, `cov` K×d×d and `base` d×d.
pub fn gauss_pair(tape: &mut Tape, xa: &Tensor, xb: &Tensor, shift: Var, cov: Var, base: Var, amp: Var) -> Result<Var> {
    let (sv, cv, bv) = (tape.value(shift), tape.value(cov), tape.value(base));
    let d = xa.cols();
    let kk = sv.rows();
    if xb.cols() != d || sv.cols() != d || cv.shape() != [kk, d, d] || bv.shape() != [d, d] {
        return Err(shape_err("gauss_pair: inconsistent shapes"));
    }
    let ampv = tape.value(amp).item();
    let (na, nb) = (xa.rows(), xb.rows());
    let mut dens = Vec::with_capacity(kk * kk);
    for k1 in 0..kk {
        for k2 in 0..kk {
            let c: Vec<f64> = (0..d * d).map(|i| bv.data()[i] + cv.slab(k1)[i] + cv.slab(k2)[i]).collect();
            dens.push(Density::new(&c, d, ampv)?);
        }
    }
    let mut out = vec![0.0; kk * kk * na * nb];
    let mut r = vec![0.0; d];
    for k1 in 0..kk {
        for k2 in 0..kk {
            let dk = &dens[k1 * kk + k2];
            let (s1, s2) = (sv.row(k1), sv.row(k2));
            for n in 0..na {
                let base_idx = ((k1 * kk + k2) * na + n) * nb;
                for m in 0..nb {
                    for t in 0..d {
                        r[t] = xa.at(n, t) - xb.at(m, t) + s1[t] - s2[t];
                    }
                    out[base_idx + m] = dk.eval(&r);
                }
            }
        }
    }
    let value = Tensor::from_shape(&[kk, kk, na, nb], out);
    let (xa, xb) = (xa.clone(), xb.clone());
    Ok(tape.push_op(&[shift, cov, base, amp], value, move |a| {
        let (sv, g, e) = (a.inputs[0], a.grad.data(), a.output.data());
        let ampv = a.inputs[3].item();
        let mut gs = vec![0.0; kk * d];
        let mut gc = vec![0.0; kk * d * d];
        let mut gb = vec![0.0; d * d];
        let mut ga = 0.0;
        let mut r = vec![0.0; d];
        for k1 in 0..kk {
            for k2 in 0..kk {
                let dk = &dens[k1 * kk + k2];
                let (s1, s2) = (sv.row(k1), sv.row(k2));
                let mut mom = Moments::new(d);
                for n in 0..na {
                    let base_idx = ((k1 * kk + k2) * na + n) * nb;
                    for m in 0..nb {
                        let ge = g[base_idx + m] * e[base_idx + m];
                        if ge == 0.0 {
                            continue;
                        }
                        for t in 0..d {
                            r[t] = xa.at(n, t) - xb.at(m, t) + s1[t] - s2[t];
                        }
                        mom.add(ge, &r);
                    }
                }
                let rg = mom.offset_grad(dk);
                let cg = mom.cov_grad(dk);
                for t in 0..d {
                    gs[k1 * d + t] += rg[t];
                    gs[k2 * d + t] -= rg[t];
                }
                for i in 0..d * d {
                    gc[k1 * d * d + i] += cg[i];
                    gc[k2 * d * d + i] += cg[i];
                    gb[i] += cg[i];
                }
                ga += mom.s0 / ampv;
            }
        }
        vec![
            Some(Tensor::from_shape(&[kk, d], gs)),
            Some(Tensor::from_shape(&[kk, d, d], gc)),
            Some(Tensor::from_shape(&[d, d], gb)),
            Some(Tensor::scalar(ga)),
        ]
    }))
}

/// `out[n,α] = Σ_k Σ_β t[k,n,β]·w[k,α,β]` for t K×N×c_in and w K×c_out×c_in.
pub fn basis_contract(tape: &mut Tape, t: Var, w: Var) -> Var {
    let (tv, wv) = (tape.value(t), tape.value(w));
    let (kk, n, ci) = (tv.shape()[0], tv.shape()[1], tv.shape()[2]);
    let co = wv.shape()[1];
    assert_eq!(wv.shape(), [kk, co, ci], "basis_contract: weight shape");
    let mut out = vec![0.0; n * co];
    for k in 0..kk {
        gemm(n, ci, co, 1.0, tv.slab(k), false, wv.slab(k), true, 1.0, &mut out);
    }
    tape.push_op(&[t, w], Tensor::from_shape(&[n, co], out), move |a| {
        let (tv, wv, g) = (a.inputs[0], a.inputs[1], a.grad.data());
        let tbar = a.needs[0].then(|| {
            let mut tb = vec![0.0; kk * n * ci];
            for k in 0..kk {
                gemm(n, co, ci, 1.0, g, false, wv.slab(k), false, 0.0, &mut tb[k * n * ci..(k + 1) * n * ci]);
            }
            Tensor::from_shape(&[kk, n, ci], tb)
        });
        let wbar = a.needs[1].then(|| {
            let mut wb = vec![0.0; kk * co * ci];
            for k in 0..kk {
                gemm(co, n, ci, 1.0, g, true, tv.slab(k), false, 0.0, &mut wb[k * co * ci..(k + 1) * co * ci]);
            }
            Tensor::from_shape(&[kk, co, ci], wb)
        });
        vec![tbar, wbar]
    })
}

/// Exact marginal variances of the convolved process on a shared grid.
///
/// `u` is K×Ne×No (`u[k,n,i] = a·N(x_n − x_i + β_k; 0, l²I + Σ_k)`), `inv`
/// g×No×No holds `[K + S]⁻¹` per factorisation group, `p` is the K×K prior
/// pair matrix, `w` is K×c_out×c_in and `group_of[β]` names the group of
/// input channel β. Returns Ne×c_out, clamped at zero.
pub fn conv_var_exact(tape: &mut Tape, u: Var, inv: Var, p: Var, w: Var, group_of: &[usize]) -> Var {
    let (uv, gv, pv, wv) = (tape.value(u), tape.value(inv), tape.value(p), tape.value(w));
    let (kk, ne, no) = (uv.shape()[0], uv.shape()[1], uv.shape()[2]);
    let ng = gv.shape()[0];
    let (co, ci) = (wv.shape()[1], wv.shape()[2]);
    assert_eq!(gv.shape(), [ng, no, no], "conv_var_exact: inverse shape");
    assert_eq!(pv.shape(), [kk, kk], "conv_var_exact: prior pair shape");
    assert_eq!(wv.shape()[0], kk, "conv_var_exact: weight terms");
    assert_eq!(group_of.len(), ci, "conv_var_exact: one group per input channel");

    // Point-major copy of U so each point's K×N block is contiguous. Then
    // H_g = U·G_g and R_g[n] = H_g[n]·U[n]ᵀ.
    let rows = kk * ne;
    let un = point_major(uv.data(), kk, ne, no);
    let mut h = vec![0.0; ng * rows * no];
    let mut r = vec![0.0; ng * ne * kk * kk];
    for g in 0..ng {
        let hg = &mut h[g * rows * no..(g + 1) * rows * no];
        gemm(rows, no, no, 1.0, &un, false, gv.slab(g), false, 0.0, hg);
        for n in 0..ne {
            let blk = n * kk * no..(n + 1) * kk * no;
            let rn = &mut r[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
            let (hn, unn) = (&hg[blk.clone()], &un[blk]);
            for k1 in 0..kk {
                for k2 in 0..kk {
                    rn[k1 * kk + k2] =
                        crate::numerics::tensor::dot(&hn[k1 * no..(k1 + 1) * no], &unn[k2 * no..(k2 + 1) * no]);
                }
            }
        }
    }
    let wt = weights_by_channel(wv, kk, co, ci);
    let mut raw = vec![0.0; ne * co];
    for b in 0..ci {
        let g = group_of[b];
        for n in 0..ne {
            let rn = &r[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
            for a in 0..co {
                let wab = &wt[(a * ci + b) * kk..(a * ci + b + 1) * kk];
                let mut acc = 0.0;
                for k1 in 0..kk {
                    let mut s = 0.0;
                    for k2 in 0..kk {
                        s += (pv.data()[k1 * kk + k2] - rn[k1 * kk + k2]) * wab[k2];
                    }
                    acc += wab[k1] * s;
                }
                raw[n * co + a] += acc;
            }
        }
    }
    let value = Tensor::from_shape(&[ne, co], raw.iter().map(|v| v.max(0.0)).collect());
    let group_of = group_of.to_vec();
    tape.push_op(&[u, inv, p, w], value, move |a| {
        let pv = a.inputs[2];
        let vbar: Vec<f64> = a.grad.data().iter().zip(&raw).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
        // C_β[n,k,k'] contracted: rbar_g = −Σ_{β∈g} C_β, pbar = Σ C_β,
        // and wbar from (P − R) w.
        let mut rbar = vec![0.0; ng * ne * kk * kk];
        let mut pbar = vec![0.0; kk * kk];
        let mut wbar_t = vec![0.0; co * ci * kk];
        for b in 0..ci {
            let g = group_of[b];
            for n in 0..ne {
                let rn = &r[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
                let rb = &mut rbar[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
                for al in 0..co {
                    let vb = vbar[n * co + al];
                    if vb == 0.0 {
                        continue;
                    }
                    let wab = &wt[(al * ci + b) * kk..(al * ci + b + 1) * kk];
                    for k1 in 0..kk {
                        let mut s = 0.0;
                        for k2 in 0..kk {
                            let c = vb * wab[k1] * wab[k2];
                            pbar[k1 * kk + k2] += c;
                            rb[k1 * kk + k2] -= c;
                            s += (pv.data()[k1 * kk + k2] - rn[k1 * kk + k2]) * wab[k2];
                        }
                        wbar_t[(al * ci + b) * kk + k1] += 2.0 * vb * s;
                    }
                }
            }
        }
        let ubar = a.needs[0].then(|| {
            let mut ub = vec![0.0; rows * no];
            let mut c = vec![0.0; kk * kk];
            for g in 0..ng {
                let hg = &h[g * rows * no..(g + 1) * rows * no];
                for n in 0..ne {
                    let rb = &rbar[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
                    if rb.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for k1 in 0..kk {
                        for k2 in 0..kk {
                            c[k1 * kk + k2] = rb[k1 * kk + k2] + rb[k2 * kk + k1];
                        }
                    }
                    let blk = n * kk * no..(n + 1) * kk * no;
                    small_mm_acc(&c, &hg[blk.clone()], &mut ub[blk], kk, no);
                }
            }
            Tensor::from_shape(&[kk, ne, no], k_major(&ub, kk, ne, no))
        });
        let gbar = a.needs[1].then(|| {
            let mut gb = vec![0.0; ng * no * no];
            let mut z = vec![0.0; rows * no];
            for g in 0..ng {
                for n in 0..ne {
                    let rb = &rbar[(g * ne + n) * kk * kk..(g * ne + n + 1) * kk * kk];
                    let blk = n * kk * no..(n + 1) * kk * no;
                    z[blk.clone()].iter_mut().for_each(|v| *v = 0.0);
                    small_mm_acc(rb, &un[blk.clone()], &mut z[blk], kk, no);
                }
                gemm(no, rows, no, 1.0, &un, true, &z, false, 0.0, &mut gb[g * no * no..(g + 1) * no * no]);
            }
            Tensor::from_shape(&[ng, no, no], gb)
        });
        let wbar = a.needs[3].then(|| {
            let mut wb = vec![0.0; kk * co * ci];
            for al in 0..co {
                for b in 0..ci {
                    for k in 0..kk {
                        wb[(k * co + al) * ci + b] = wbar_t[(al * ci + b) * kk + k];
                    }
                }
            }
            Tensor::from_shape(&[kk, co, ci], wb)
        });
        vec![ubar, gbar, a.needs[2].then(|| Tensor::from_shape(&[kk, kk], pbar)), wbar]
    })
}

/// `c += a·b` for a K×K `a` and K×N row-major `b`, `c`.
fn small_mm_acc(a: &[f64], b: &[f64], c: &mut [f64], kk: usize, no: usize) {
    for k1 in 0..kk {
        let dst = &mut c[k1 * no..(k1 + 1) * no];
        for k2 in 0..kk {
            let coef = a[k1 * kk + k2];
            if coef == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(&b[k2 * no..(k2 + 1) * no]) {
                *d += coef * s;
            }
        }
    }
}

/// K×P×N to P×K×N.
fn point_major(u: &[f64], kk: usize, ne: usize, no: usize) -> Vec<f64> {
    let mut out = vec![0.0; kk * ne * no];
    for k in 0..kk {
        for n in 0..ne {
            out[(n * kk + k) * no..(n * kk + k + 1) * no].copy_from_slice(&u[(k * ne + n) * no..(k * ne + n + 1) * no]);
        }
    }
    out
}

/// P×K×N back to K×P×N.
fn k_major(u: &[f64], kk: usize, ne: usize, no: usize) -> Vec<f64> {
    let mut out = vec![0.0; kk * ne * no];
    for n in 0..ne {
        for k in 0..kk {
            out[(k * ne + n) * no..(k * ne + n + 1) * no].copy_from_slice(&u[(n * kk + k) * no..(n * kk + k + 1) * no]);
        }
    }
    out
}

/// Reorders K×c_out×c_in weights to c_out×c_in×K so each (α, β) pair has a
/// contiguous K-vector.
fn weights_by_channel(w: &Tensor, kk: usize, co: usize, ci: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * ci * kk];
    for k in 0..kk {
        for a in 0..co {
            for b in 0..ci {
                out[(a * ci + b) * kk + k] = w.data()[(k * co + a) * ci + b];
            }
        }
    }
    out
}

/// Stochastic estimate of the convolved process' marginal variances,
/// `(1/P) Σ_p z_p ⊙ B z_p`, with B the full output covariance over
/// (point, channel) pairs applied implicitly.
///
/// `u` is K×Ne×No, `inv` g×No×No, `prior` K×K×Ne×Ne (the prior pair terms
/// between evaluation points), `w` K×c_out×c_in and `probes` P×Ne×c_out.
/// Returns Ne×c_out (not clamped: the estimate is unbiased, not positive).
/// The gradients assume the symmetries of a covariance: each `inv` slice is
/// symmetric and `prior[k,k'][n,m] = prior[k',k][m,n]`.
pub fn conv_var_stochastic(
    tape: &mut Tape,
    u: Var,
    inv: Var,
    prior: Var,
    w: Var,
    group_of: &[usize],
    probes: &Tensor,
) -> Var {
    let (uv, gv, prv, wv) = (tape.value(u), tape.value(inv), tape.value(prior), tape.value(w));
    let (kk, ne, no) = (uv.shape()[0], uv.shape()[1], uv.shape()[2]);
    let ng = gv.shape()[0];
    let (co, ci) = (wv.shape()[1], wv.shape()[2]);
    let np = probes.shape()[0];
    assert_eq!(prv.shape(), [kk, kk, ne, ne], "conv_var_stochastic: prior shape");
    assert_eq!(probes.shape(), [np, ne, co], "conv_var_stochastic: probe shape");
    assert_eq!(group_of.len(), ci, "conv_var_stochastic: one group per input channel");
    let dims = StochDims { kk, ne, no, ng, co, ci };
    let mut est = vec![0.0; ne * co];
    for p in 0..np {
        let z = probes.slab(p);
        let bz = implicit_matvec(&dims, uv, gv, prv, wv, group_of, z).bz;
        for (e, (zi, bi)) in est.iter_mut().zip(z.iter().zip(&bz)) {
            *e += zi * bi / np as f64;
        }
    }
    let probes = probes.clone();
    let group_of = group_of.to_vec();
    tape.push_op(&[u, inv, prior, w], Tensor::from_shape(&[ne, co], est), move |a| {
        let (uv, gv, prv, wv) = (a.inputs[0], a.inputs[1], a.inputs[2], a.inputs[3]);
        let StochDims { kk, ne, no, ng, co, ci } = dims;
        let mut ub = vec![0.0; kk * ne * no];
        let mut gb = vec![0.0; ng * no * no];
        let mut pb = vec![0.0; kk * kk * ne * ne];
        let mut wb = vec![0.0; kk * co * ci];
        for p in 0..np {
            let z = probes.slab(p);
            let y: Vec<f64> = a.grad.data().iter().zip(z).map(|(g, z)| g * z / np as f64).collect();
            let fz = implicit_matvec(&dims, uv, gv, prv, wv, &group_of, z);
            let fy = implicit_matvec(&dims, uv, gv, prv, wv, &group_of, &y);
            // prior pairs: Σ_β η_k[β,n] ζ_k'[β,m]
            if a.needs[2] {
                for k1 in 0..kk {
                    for k2 in 0..kk {
                        let dst = &mut pb[(k1 * kk + k2) * ne * ne..(k1 * kk + k2 + 1) * ne * ne];
                        gemm(ne, ci, ne, 1.0, &fy.zeta[k1], true, &fz.zeta[k2], false, 1.0, dst);
                    }
                }
            }
            for b in 0..ci {
                let g = group_of[b];
                let (ay, bz) = (&fy.b[b * no..(b + 1) * no], &fz.b[b * no..(b + 1) * no]);
                if a.needs[1] {
                    let dst = &mut gb[g * no * no..(g + 1) * no * no];
                    for i in 0..no {
                        for j in 0..no {
                            dst[i * no + j] -= ay[i] * bz[j];
                        }
                    }
                }
            }
            if a.needs[0] {
                // Ū_k[n,:] −= η_k[β,n]·(G b_β) + ζ_k[β,n]·(G a_β)
                for k in 0..kk {
                    let dst = &mut ub[k * ne * no..(k + 1) * ne * no];
                    gemm(ne, ci, no, -1.0, &fy.zeta[k], true, &fz.t, false, 1.0, dst);
                    gemm(ne, ci, no, -1.0, &fz.zeta[k], true, &fy.t, false, 1.0, dst);
                }
            }
            if a.needs[3] {
                // η̄_k = (B-part for z) before the W contraction, likewise ζ̄_k.
                for k in 0..kk {
                    let wk = &mut wb[k * co * ci..(k + 1) * co * ci];
                    // W̄_k[α,β] += Σ_n y[n,α]·pre_z[k][β,n] + Σ_m z[m,α]·pre_y[k][β,m]
                    gemm(co, ne, ci, 1.0, &y, true, &fz.pre[k], true, 1.0, wk);
                    gemm(co, ne, ci, 1.0, z, true, &fy.pre[k], true, 1.0, wk);
                }
            }
        }
        vec![
            a.needs[0].then(|| Tensor::from_shape(&[kk, ne, no], ub)),
            a.needs[1].then(|| Tensor::from_shape(&[ng, no, no], gb)),
            a.needs[2].then(|| Tensor::from_shape(&[kk, kk, ne, ne], pb)),
            a.needs[3].then(|| Tensor::from_shape(&[kk, co, ci], wb)),
        ]
    })
}

#[derive(Clone, Copy)]
struct StochDims {
    kk: usize,
    ne: usize,
    no: usize,
    ng: usize,
    co: usize,
    ci: usize,
}

struct MatvecParts {
    /// ζ_k = W_kᵀ zᵀ, c_in×Ne per term.
    zeta: Vec<Vec<f64>>,
    /// b_β = Σ_k ζ_k[β,:]·U_k, c_in×No.
    b: Vec<f64>,
    /// t_β = G_β b_β, c_in×No.
    t: Vec<f64>,
    /// Σ_k' Pr[k,k']ζ_k' − t·U_kᵀ, c_in×Ne per term.
    pre: Vec<Vec<f64>>,
    /// B z, Ne×c_out.
    bz: Vec<f64>,
}

fn implicit_matvec(
    dims: &StochDims,
    uv: &Tensor,
    gv: &Tensor,
    prv: &Tensor,
    wv: &Tensor,
    group_of: &[usize],
    z: &[f64],
) -> MatvecParts {
    let StochDims { kk, ne, no, co, ci, .. } = *dims;
    let zeta: Vec<Vec<f64>> = (0..kk)
        .map(|k| {
            let mut v = vec![0.0; ci * ne];
            gemm(ci, co, ne, 1.0, wv.slab(k), true, z, true, 0.0, &mut v);
            v
        })
        .collect();
    let mut b = vec![0.0; ci * no];
    for k in 0..kk {
        gemm(ci, ne, no, 1.0, &zeta[k], false, uv.slab(k), false, 1.0, &mut b);
    }
    let mut t = vec![0.0; ci * no];
    for beta in 0..ci {
        let g = group_of[beta];
        let dst = &mut t[beta * no..(beta + 1) * no];
        gemm(1, no, no, 1.0, &b[beta * no..(beta + 1) * no], false, gv.slab(g), true, 0.0, dst);
    }
    let mut pre = Vec::with_capacity(kk);
    let mut bz = vec![0.0; ne * co];
    for k1 in 0..kk {
        let mut acc = vec![0.0; ci * ne];
        for k2 in 0..kk {
            let pr = &prv.data()[(k1 * kk + k2) * ne * ne..(k1 * kk + k2 + 1) * ne * ne];
            gemm(ci, ne, ne, 1.0, &zeta[k2], false, pr, true, 1.0, &mut acc);
        }
        gemm(ci, no, ne, -1.0, &t, false, uv.slab(k1), true, 1.0, &mut acc);
        gemm(ne, ci, co, 1.0, &acc, true, wv.slab(k1), true, 1.0, &mut bz);
        pre.push(acc);
    }
    MatvecParts { zeta, b, t, pre, bz }
}
