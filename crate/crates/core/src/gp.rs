//! RBF Gaussian-process regression with per-point noise.
//!
//! The kernel is a normalised Gaussian, `k(x, x') = a·N(x; x', l²I)`, so its
//! prior variance is `a·(2πl²)^{-d/2}`. Channels that share both their
//! observation pattern and their noise variances share one factorisation;
//! the others get their own.
//!
//! The plain types ([`RbfGp`], [`nll`]) serve evaluation and verification.
//! Training builds the same quantities on a [`Tape`] through [`fit_on_tape`].

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::gauss::{Density, Moments};
use crate::numerics::linalg::{self, SpdFactor};
use crate::numerics::special::LN_2PI;
use crate::numerics::tensor::{gemm, Tensor};

/// Kernel hyperparameters, stored as logarithms so training is unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfHyper {
    pub log_a: f64,
    pub log_l: f64,
    pub dim: usize,
}

impl RbfHyper {
    pub fn new(a: f64, l: f64, dim: usize) -> Self {
        assert!(a > 0.0 && l > 0.0, "kernel amplitude and length-scale must be positive");
        RbfHyper { log_a: a.ln(), log_l: l.ln(), dim }
    }

    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn l(&self) -> f64 {
        self.log_l.exp()
    }

    /// `k(x, x) = a·(2πl²)^{-d/2}`.
    pub fn prior_var(&self) -> f64 {
        let l2 = (2.0 * self.log_l).exp();
        self.a() * (2.0 * std::f64::consts::PI * l2).powf(-0.5 * self.dim as f64)
    }

    pub fn kernel(&self, x: &[f64], xp: &[f64]) -> f64 {
        kernel_eval(self, x, xp)
    }
}

/// `a·(2πl²)^{-d/2}·exp(−‖x − x'‖²/(2l²))`.
pub fn kernel_eval(hyper: &RbfHyper, x: &[f64], xp: &[f64]) -> f64 {
    let l2 = (2.0 * hyper.log_l).exp();
    let r2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
    hyper.prior_var() * (-0.5 * r2 / l2).exp()
}

/// Kernel matrix between the rows of `xa` and `xb`.
pub fn kernel_matrix(hyper: &RbfHyper, xa: &Tensor, xb: &Tensor) -> Tensor {
    let (na, nb) = (xa.rows(), xb.rows());
    let mut out = Tensor::zeros(&[na, nb]);
    for i in 0..na {
        for j in 0..nb {
            out.set(i, j, kernel_eval(hyper, xa.row(i), xb.row(j)));
        }
    }
    out
}

/// Irregular samples of a multichannel signal: locations `x` (N×d), values
/// `y` (N×C) and noise variances `v` (N×C). An optional row-major N×C mask
/// marks which channel is observed at which location; unobserved entries of
/// `y` and `v` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedField {
    pub x: Tensor,
    pub y: Tensor,
    pub v: Tensor,
    pub mask: Option<Vec<bool>>,
}

impl ObservedField {
    pub fn new(x: Tensor, y: Tensor, v: Tensor) -> Result<Self> {
        Self::with_mask(x, y, v, None)
    }

    pub fn with_mask(x: Tensor, y: Tensor, v: Tensor, mask: Option<Vec<bool>>) -> Result<Self> {
        if x.ndim() != 2 || y.ndim() != 2 || y.shape() != v.shape() || x.rows() != y.rows() {
            return Err(shape_err(format!("field x {:?}, y {:?}, v {:?}", x.shape(), y.shape(), v.shape())));
        }
        if let Some(m) = &mask {
            if m.len() != y.len() {
                return Err(shape_err(format!("mask has {} entries for {:?}", m.len(), y.shape())));
            }
        }
        if v.data().iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("noise variances must be finite and non-negative".into()));
        }
        Ok(ObservedField { x, y, v, mask })
    }

    pub fn n_points(&self) -> usize {
        self.x.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.y.cols()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn observed(&self, i: usize, c: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i * self.n_channels() + c])
    }

    /// True when every channel is observed at every location.
    pub fn is_shared_grid(&self) -> bool {
        self.mask.as_ref().is_none_or(|m| m.iter().all(|&b| b))
    }

    pub fn groups(&self) -> Vec<ChannelGroup> {
        channel_groups(&self.v, self.mask.as_deref())
    }
}

/// Channels that share one kernel factorisation: same observed rows and the
/// same noise variances on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroup {
    pub channels: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Tolerance under which two noise columns count as identical.
pub const SHARED_NOISE_TOL: f64 = 1e-12;

/// Partitions channels into factorisation groups, in order of first
/// appearance.
pub fn channel_groups(v: &Tensor, mask: Option<&[bool]>) -> Vec<ChannelGroup> {
    let (n, c) = (v.rows(), v.cols());
    let observed = |i: usize, ch: usize| mask.is_none_or(|m| m[i * c + ch]);
    let mut groups: Vec<ChannelGroup> = Vec::new();
    'channels: for ch in 0..c {
        let rows: Vec<usize> = (0..n).filter(|&i| observed(i, ch)).collect();
        for g in groups.iter_mut() {
            let rep = g.channels[0];
            if g.rows == rows && rows.iter().all(|&i| (v.at(i, ch) - v.at(i, rep)).abs() <= SHARED_NOISE_TOL) {
                g.channels.push(ch);
                continue 'channels;
            }
        }
        groups.push(ChannelGroup { channels: vec![ch], rows });
    }
    groups
}

fn singleton_groups(c: usize, n: usize, mask: Option<&[bool]>) -> Vec<ChannelGroup> {
    (0..c)
        .map(|ch| ChannelGroup {
            channels: vec![ch],
            rows: (0..n).filter(|&i| mask.is_none_or(|m| m[i * c + ch])).collect(),
        })
        .collect()
}

/// Group index of every channel.
pub fn group_index(groups: &[ChannelGroup], n_channels: usize) -> Vec<usize> {
    let mut out = vec![usize::MAX; n_channels];
    for (gi, g) in groups.iter().enumerate() {
        for &c in &g.channels {
            out[c] = gi;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct GroupFactor {
    group: ChannelGroup,
    factor: SpdFactor,
}

/// A fitted RBF posterior.
#[derive(Debug, Clone)]
pub struct RbfGp {
    pub hyper: RbfHyper,
    pub x: Tensor,
    /// `[K + S_α]⁻¹ y_α` per channel, zero on unobserved rows.
    pub alpha: Tensor,
    factors: Vec<GroupFactor>,
    group_of: Vec<usize>,
    nll: f64,
}

impl RbfGp {
    pub fn fit(hyper: RbfHyper, obs: &ObservedField) -> Result<Self> {
        if obs.dim() != hyper.dim {
            return Err(shape_err(format!("field dim {} vs kernel dim {}", obs.dim(), hyper.dim)));
        }
        let (n, c) = (obs.n_points(), obs.n_channels());
        let kxx = kernel_matrix(&hyper, &obs.x, &obs.x);
        let groups = obs.groups();
        let group_of = group_index(&groups, c);
        let mut alpha = Tensor::zeros(&[n, c]);
        let mut factors = Vec::with_capacity(groups.len());
        let mut nll = 0.0;
        for g in groups {
            let rep = g.channels[0];
            let m = g.rows.len();
            let mut a = Tensor::zeros(&[m, m]);
            for (p, &i) in g.rows.iter().enumerate() {
                for (q, &j) in g.rows.iter().enumerate() {
                    a.set(p, q, kxx.at(i, j));
                }
                let d = a.at(p, p) + obs.v.at(i, rep);
                a.set(p, p, d);
            }
            let factor = SpdFactor::new(&a)?;
            let ys = Tensor::from_shape(
                &[m, g.channels.len()],
                g.rows.iter().flat_map(|&i| g.channels.iter().map(move |&ch| obs.y.at(i, ch))).collect(),
            );
            let sol = factor.solve(&ys)?;
            let logdet = factor.logdet();
            for (p, &i) in g.rows.iter().enumerate() {
                for (q, &ch) in g.channels.iter().enumerate() {
                    alpha.set(i, ch, sol.at(p, q));
                    nll += 0.5 * ys.at(p, q) * sol.at(p, q);
                }
            }
            nll += 0.5 * g.channels.len() as f64 * (logdet + m as f64 * LN_2PI);
            factors.push(GroupFactor { group: g, factor });
        }
        Ok(RbfGp { hyper, x: obs.x.clone(), alpha, factors, group_of, nll })
    }

    pub fn n_channels(&self) -> usize {
        self.alpha.cols()
    }

    /// The factorisation groups of the fit.
    pub fn groups(&self) -> Vec<ChannelGroup> {
        self.factors.iter().map(|f| f.group.clone()).collect()
    }

    pub fn group_of(&self, channel: usize) -> usize {
        self.group_of[channel]
    }

    /// Marginal negative log likelihood of the fitted observations.
    pub fn nll(&self) -> f64 {
        self.nll
    }

    /// `[K + S]⁻¹` of one group, scattered to N×N with zeros on the rows the
    /// group does not observe.
    pub fn inverse(&self, group: usize) -> Tensor {
        let n = self.x.rows();
        let f = &self.factors[group];
        let inv = f.factor.inverse();
        let mut out = Tensor::zeros(&[n, n]);
        for (p, &i) in f.group.rows.iter().enumerate() {
            for (q, &j) in f.group.rows.iter().enumerate() {
                out.set(i, j, inv.at(p, q));
            }
        }
        out
    }

    /// `k(Q, X)·alpha`, one column per channel.
    pub fn posterior_mean(&self, q: &Tensor) -> Tensor {
        kernel_matrix(&self.hyper, q, &self.x).matmul(&self.alpha).expect("shapes agree")
    }

    /// Posterior covariance between `q1` and `q2`, one matrix per group.
    pub fn posterior_cov(&self, q1: &Tensor, q2: &Tensor) -> Vec<Tensor> {
        let prior = kernel_matrix(&self.hyper, q1, q2);
        self.factors
            .iter()
            .map(|f| {
                let xs = self.x.select_rows(&f.group.rows);
                let k1 = kernel_matrix(&self.hyper, q1, &xs);
                let k2 = kernel_matrix(&self.hyper, &xs, q2);
                let sol = f.factor.solve(&k2).expect("factor matches");
                prior.sub(&k1.matmul(&sol).expect("shapes")).expect("shapes")
            })
            .collect()
    }

    /// Posterior variance at each query point and channel.
    pub fn posterior_var(&self, q: &Tensor) -> Tensor {
        let m = q.rows();
        let c = self.n_channels();
        let prior = self.hyper.prior_var();
        let mut out = Tensor::zeros(&[m, c]);
        for (gi, f) in self.factors.iter().enumerate() {
            let xs = self.x.select_rows(&f.group.rows);
            let kt = kernel_matrix(&self.hyper, &xs, q);
            let w = linalg::solve_lower(&f.factor.chol, &kt).expect("factor matches");
            for j in 0..m {
                let s: f64 = (0..w.rows()).map(|i| w.at(i, j) * w.at(i, j)).sum();
                let var = (prior - s).max(0.0);
                for ch in 0..c {
                    if self.group_of[ch] == gi {
                        out.set(j, ch, var);
                    }
                }
            }
        }
        out
    }
}

/// `½ Σ_α [y_αᵀ(K+S_α)⁻¹y_α + log det(K+S_α) + N_α log 2π]`.
pub fn nll(hyper: &RbfHyper, obs: &ObservedField) -> Result<f64> {
    RbfGp::fit(*hyper, obs).map(|gp| gp.nll())
}

/// Kernel hyperparameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HyperVars {
    pub log_a: Var,
    pub log_l: Var,
    pub dim: usize,
}

impl HyperVars {
    pub fn register(tape: &mut Tape, hyper: &RbfHyper, trainable: bool) -> Self {
        let mk = |t: &mut Tape, v: f64| {
            if trainable {
                t.param(Tensor::scalar(v))
            } else {
                t.constant(Tensor::scalar(v))
            }
        };
        HyperVars { log_a: mk(tape, hyper.log_a), log_l: mk(tape, hyper.log_l), dim: hyper.dim }
    }

    pub fn value(&self, tape: &Tape) -> RbfHyper {
        RbfHyper { log_a: tape.value(self.log_a).item(), log_l: tape.value(self.log_l).item(), dim: self.dim }
    }
}

/// A GP fit recorded on a tape.
pub struct TapeGp {
    /// Kernel amplitude `a`.
    pub amp: Var,
    /// Squared length-scale `l²`.
    pub len_sq: Var,
    /// Per-group `[K + S]⁻¹`, g×N×N.
    pub inv: Var,
    /// N×C solve vectors.
    pub alpha: Var,
    pub nll: Var,
    pub groups: Vec<ChannelGroup>,
    pub group_of: Vec<usize>,
}

/// Fits an RBF GP to `(x, y, v)` on the tape. `y` and `v` are N×C; the
/// factorisation groups are read off the current values of `v` and `mask`.
pub fn fit_on_tape(
    tape: &mut Tape,
    hyper: HyperVars,
    x: &Tensor,
    y: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<TapeGp> {
    let d = hyper.dim;
    let c = tape.value(y).cols();
    // Channels that merely coincide in noise value still have separate
    // derivatives with respect to it, so sharing is only safe for constants.
    let groups =
        if tape.requires_grad(v) { singleton_groups(c, x.rows(), mask) } else { channel_groups(tape.value(v), mask) };
    let group_of = group_index(&groups, c);

    let amp = tape.exp(hyper.log_a);
    let two_log_l = tape.scale(hyper.log_l, 2.0);
    let len_sq = tape.exp(two_log_l);
    let cov = tape.eye_scaled(len_sq, d);
    let cov = tape.reshape(cov, &[1, d, d]);
    let shift = tape.constant(Tensor::zeros(&[1, d]));
    let k = gauss_cross(tape, x, x, shift, cov, amp)?;
    let n = x.rows();
    let k = tape.reshape(k, &[n, n]);

    let reps: Vec<usize> = groups.iter().map(|g| g.channels[0]).collect();
    let vsel = tape.select_cols(v, &reps);
    let a = add_diag_batched(tape, k, vsel);
    let rows: Vec<Vec<usize>> = groups.iter().map(|g| g.rows.clone()).collect();
    let (inv, logdet) = spd_factor_batched(tape, a, &rows)?;
    let alpha = batched_matvec(tape, inv, y, &group_of);

    let fit = tape.mul(y, alpha);
    let fit = tape.sum(fit);
    let logdets = tape.gather(logdet, &group_of);
    let logdets = tape.sum(logdets);
    let total = tape.add(fit, logdets);
    let n_obs: usize = groups.iter().map(|g| g.rows.len() * g.channels.len()).sum();
    let total = tape.add_scalar(total, n_obs as f64 * LN_2PI);
    let nll = tape.scale(total, 0.5);
    Ok(TapeGp { amp, len_sq, inv, alpha, nll, groups, group_of })
}

/// `out[k,i,j] = amp·N(xa_i − xb_j + shift_k; 0, cov_k)` for `shift` K×d and
/// `cov` K×d×d (symmetric positive definite). Locations are data and get no
/// gradient.
pub fn gauss_cross(tape: &mut Tape, xa: &Tensor, xb: &Tensor, shift: Var, cov: Var, amp: Var) -> Result<Var> {
    let (sv, cv) = (tape.value(shift), tape.value(cov));
    let d = xa.cols();
    let kk = sv.rows();
    if xb.cols() != d || sv.cols() != d || cv.shape() != [kk, d, d] {
        return Err(shape_err(format!(
            "gauss_cross: x {:?}/{:?}, shift {:?}, cov {:?}",
            xa.shape(),
            xb.shape(),
            sv.shape(),
            cv.shape()
        )));
    }
    let ampv = tape.value(amp).item();
    let (na, nb) = (xa.rows(), xb.rows());
    let mut dens = Vec::with_capacity(kk);
    for k in 0..kk {
        dens.push(Density::new(cv.slab(k), d, ampv)?);
    }
    let mut out = vec![0.0; kk * na * nb];
    let mut r = vec![0.0; d];
    for (k, dk) in dens.iter().enumerate() {
        let s = sv.row(k);
        for i in 0..na {
            let xi = xa.row(i);
            let base = (k * na + i) * nb;
            for j in 0..nb {
                let xj = xb.row(j);
                for t in 0..d {
                    r[t] = xi[t] - xj[t] + s[t];
                }
                out[base + j] = dk.eval(&r);
            }
        }
    }
    let value = Tensor::from_shape(&[kk, na, nb], out);
    let (xa, xb) = (xa.clone(), xb.clone());
    Ok(tape.push_op(&[shift, cov, amp], value, move |a| {
        let (sv, g, e) = (a.inputs[0], a.grad.data(), a.output.data());
        let ampv = a.inputs[2].item();
        let mut gs = vec![0.0; kk * d];
        let mut gc = vec![0.0; kk * d * d];
        let mut ga = 0.0;
        let mut r = vec![0.0; d];
        for (k, dk) in dens.iter().enumerate() {
            let s = sv.row(k);
            let mut mom = Moments::new(d);
            for i in 0..na {
                let xi = xa.row(i);
                let base = (k * na + i) * nb;
                for j in 0..nb {
                    let ge = g[base + j] * e[base + j];
                    if ge == 0.0 {
                        continue;
                    }
                    let xj = xb.row(j);
                    for t in 0..d {
                        r[t] = xi[t] - xj[t] + s[t];
                    }
                    mom.add(ge, &r);
                }
            }
            gs[k * d..(k + 1) * d].copy_from_slice(&mom.offset_grad(dk));
            gc[k * d * d..(k + 1) * d * d].copy_from_slice(&mom.cov_grad(dk));
            ga += mom.s0 / ampv;
        }
        vec![
            Some(Tensor::from_shape(&[kk, d], gs)),
            Some(Tensor::from_shape(&[kk, d, d], gc)),
            Some(Tensor::scalar(ga)),
        ]
    }))
}

/// `out[g] = k + diag(v[:, g])`, giving g×N×N from N×N and N×g.
pub fn add_diag_batched(tape: &mut Tape, k: Var, v: Var) -> Var {
    let (kv, vv) = (tape.value(k), tape.value(v));
    let n = kv.rows();
    let g = vv.cols();
    assert_eq!(vv.rows(), n, "add_diag_batched: noise rows");
    let mut out = Vec::with_capacity(g * n * n);
    for gi in 0..g {
        let start = out.len();
        out.extend_from_slice(kv.data());
        for i in 0..n {
            out[start + i * n + i] += vv.at(i, gi);
        }
    }
    tape.push_op(&[k, v], Tensor::from_shape(&[g, n, n], out), move |a| {
        let gd = a.grad.data();
        let kbar = a.needs[0].then(|| {
            let mut acc = vec![0.0; n * n];
            for gi in 0..g {
                for (o, x) in acc.iter_mut().zip(&gd[gi * n * n..(gi + 1) * n * n]) {
                    *o += x;
                }
            }
            Tensor::from_shape(&[n, n], acc)
        });
        let vbar = a.needs[1].then(|| {
            let mut out = Tensor::zeros(&[n, g]);
            for gi in 0..g {
                for i in 0..n {
                    out.set(i, gi, gd[gi * n * n + i * n + i]);
                }
            }
            out
        });
        vec![kbar, vbar]
    })
}

/// Inverts each g×N×N slice restricted to its observed `rows` (under the
/// jitter protocol), scattering the inverse back with zeros elsewhere.
/// Returns the inverses and the g log-determinants.
pub fn spd_factor_batched(tape: &mut Tape, a: Var, rows: &[Vec<usize>]) -> Result<(Var, Var)> {
    let av = tape.value(a);
    let (g, n) = (av.shape()[0], av.shape()[1]);
    assert_eq!(rows.len(), g, "one row set per slice");
    let mut inv = vec![0.0; g * n * n];
    let mut logdets = Vec::with_capacity(g);
    for (gi, r) in rows.iter().enumerate() {
        let slab = av.slab(gi);
        let m = r.len();
        let mut sub = Tensor::zeros(&[m, m]);
        for (p, &i) in r.iter().enumerate() {
            for (q, &j) in r.iter().enumerate() {
                sub.set(p, q, 0.5 * (slab[i * n + j] + slab[j * n + i]));
            }
        }
        let f = SpdFactor::new(&sub)?;
        logdets.push(f.logdet());
        let si = f.inverse();
        let out = &mut inv[gi * n * n..(gi + 1) * n * n];
        for (p, &i) in r.iter().enumerate() {
            for (q, &j) in r.iter().enumerate() {
                out[i * n + j] = si.at(p, q);
            }
        }
    }
    let inv_var = tape.push_op(&[a], Tensor::from_shape(&[g, n, n], inv), move |a| {
        let (gv, gbar) = (a.output.data(), a.grad.data());
        let mut out = vec![0.0; g * n * n];
        let mut sym = vec![0.0; n * n];
        let mut tmp = vec![0.0; n * n];
        for gi in 0..g {
            let s = gi * n * n..(gi + 1) * n * n;
            let (gs, bs) = (&gv[s.clone()], &gbar[s.clone()]);
            for i in 0..n {
                for j in 0..n {
                    sym[i * n + j] = 0.5 * (bs[i * n + j] + bs[j * n + i]);
                }
            }
            gemm(n, n, n, 1.0, gs, false, &sym, false, 0.0, &mut tmp);
            gemm(n, n, n, -1.0, &tmp, false, gs, false, 0.0, &mut out[s]);
        }
        vec![Some(Tensor::from_shape(&[g, n, n], out))]
    });
    let logdet = tape.push_op(&[a, inv_var], Tensor::vector(logdets), move |a| {
        let (gv, gbar) = (a.inputs[1].data(), a.grad.data());
        let mut out = vec![0.0; g * n * n];
        for gi in 0..g {
            let s = gi * n * n..(gi + 1) * n * n;
            for (o, x) in out[s.clone()].iter_mut().zip(&gv[s]) {
                *o = gbar[gi] * x;
            }
        }
        vec![Some(Tensor::from_shape(&[g, n, n], out)), None]
    });
    Ok((inv_var, logdet))
}

/// `out[:, c] = m[group_of[c]] · y[:, c]` for m g×N×N and y N×C.
pub fn batched_matvec(tape: &mut Tape, m: Var, y: Var, group_of: &[usize]) -> Var {
    let (mv, yv) = (tape.value(m), tape.value(y));
    let (n, c) = (yv.rows(), yv.cols());
    let g = mv.shape()[0];
    assert_eq!(group_of.len(), c, "batched_matvec: one group per channel");
    let members: Vec<Vec<usize>> = (0..g).map(|gi| (0..c).filter(|&ch| group_of[ch] == gi).collect()).collect();
    let gather = move |t: &Tensor, chans: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(n * chans.len());
        for i in 0..n {
            out.extend(chans.iter().map(|&ch| t.at(i, ch)));
        }
        out
    };
    let mut out = Tensor::zeros(&[n, c]);
    for (gi, chans) in members.iter().enumerate() {
        if chans.is_empty() {
            continue;
        }
        let w = chans.len();
        let ys = gather(yv, chans);
        let mut prod = vec![0.0; n * w];
        gemm(n, n, w, 1.0, mv.slab(gi), false, &ys, false, 0.0, &mut prod);
        for i in 0..n {
            for (q, &ch) in chans.iter().enumerate() {
                out.set(i, ch, prod[i * w + q]);
            }
        }
    }
    tape.push_op(&[m, y], out, move |a| {
        let (mv, yv, gbar) = (a.inputs[0], a.inputs[1], a.grad);
        let mut mbar = a.needs[0].then(|| vec![0.0; g * n * n]);
        let mut ybar = a.needs[1].then(|| Tensor::zeros(&[n, c]));
        for (gi, chans) in members.iter().enumerate() {
            if chans.is_empty() {
                continue;
            }
            let w = chans.len();
            let gs = gather(gbar, chans);
            if let Some(mb) = mbar.as_mut() {
                let ys = gather(yv, chans);
                gemm(n, w, n, 1.0, &gs, false, &ys, true, 0.0, &mut mb[gi * n * n..(gi + 1) * n * n]);
            }
            if let Some(yb) = ybar.as_mut() {
                let mut prod = vec![0.0; n * w];
                gemm(n, n, w, 1.0, mv.slab(gi), true, &gs, false, 0.0, &mut prod);
                for i in 0..n {
                    for (q, &ch) in chans.iter().enumerate() {
                        yb.set(i, ch, prod[i * w + q]);
                    }
                }
            }
        }
        vec![mbar.map(|d| Tensor::from_shape(&[g, n, n], d)), ybar]
    })
}
