//! The network: an input GP fit, a chain of blocks (convolution, rectified
//! moments, channel mixing, re-projection onto a fresh GP), integral pooling
//! and a linear classifier head.

use crate::autodiff::{Tape, Var};
use crate::diffusion::{
    add_eye_scaled, basis_contract, conv_var_exact, conv_var_stochastic, diffusion_cov, gauss_pair, ConvolvedGpView,
    DiffusionOp, DiffusionVars,
};
use crate::error::{shape_err, Result};
use crate::gp::{fit_on_tape, gauss_cross, HyperVars, ObservedField, RbfGp, RbfHyper, TapeGp};
use crate::numerics::special::normal_cdf;
use crate::numerics::{Rng, Tensor};
use crate::rectified::{relu_mean, relu_mean_var, relu_var, MomentField};

/// Measurement variances are floored at this multiple of the next layer's
/// kernel amplitude before each fit.
pub const VAR_FLOOR: f64 = 1e-6;
/// Input noise starts at this multiple of the input kernel amplitude.
pub const INPUT_NOISE_INIT: f64 = 1e-2;

/// One convolution block and the GP its output is projected onto.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub op: DiffusionOp,
    /// c_next×c_mid mixing matrix.
    pub mix: Tensor,
    pub hyper_next: RbfHyper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_hyper: RbfHyper,
    /// Log of the per-channel input noise variance.
    pub input_log_noise: Tensor,
    pub blocks: Vec<BlockParams>,
    /// classes×c_L.
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub lambda: f64,
}

/// Architecture choices for [`ModelParams::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dim: usize,
    pub c_in: usize,
    pub channels: usize,
    pub blocks: usize,
    pub terms: usize,
    pub classes: usize,
    pub lambda: f64,
    /// Typical spacing of the input locations.
    pub spacing: f64,
}

impl ModelParams {
    /// Kernels start with `l = spacing` and `a = (2πl²)^{d/2}` (unit prior
    /// variance); operators follow [`DiffusionOp::init`]; mixing and head
    /// weights are normal with variance `1/fan_in`.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        let l = spec.spacing;
        let a = (2.0 * std::f64::consts::PI * l * l).powf(0.5 * spec.dim as f64);
        let hyper = RbfHyper::new(a, l, spec.dim);
        let mut blocks = Vec::with_capacity(spec.blocks);
        let mut c_in = spec.c_in;
        for _ in 0..spec.blocks {
            let c = spec.channels;
            let op = DiffusionOp::init(c_in, c, spec.terms, spec.dim, spec.spacing, rng);
            let sd = 1.0 / (c as f64).sqrt();
            let mix = Tensor::from_shape(&[c, c], (0..c * c).map(|_| sd * rng.normal()).collect());
            blocks.push(BlockParams { op, mix, hyper_next: hyper });
            c_in = c;
        }
        let sd = 1.0 / (c_in as f64).sqrt();
        let head_w =
            Tensor::from_shape(&[spec.classes, c_in], (0..spec.classes * c_in).map(|_| sd * rng.normal()).collect());
        ModelParams {
            input_hyper: hyper,
            input_log_noise: Tensor::full(&[spec.c_in], (INPUT_NOISE_INIT * a).ln()),
            blocks,
            head_w,
            head_b: Tensor::zeros(&[spec.classes]),
            lambda: spec.lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.input_hyper.dim
    }

    pub fn c_in(&self) -> usize {
        self.input_log_noise.len()
    }

    pub fn classes(&self) -> usize {
        self.head_b.len()
    }

    /// Every trainable tensor with a stable name, in optimiser order.
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let s = Tensor::scalar;
        let mut out = vec![
            ("input.log_a".to_string(), s(self.input_hyper.log_a)),
            ("input.log_l".to_string(), s(self.input_hyper.log_l)),
            ("input.log_noise".to_string(), self.input_log_noise.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.w"), b.op.w.clone()));
            out.push((format!("{p}.beta"), b.op.beta.clone()));
            out.push((format!("{p}.sigma_chol"), b.op.sigma_chol.clone()));
            out.push((format!("{p}.bias"), b.op.bias.clone()));
            out.push((format!("{p}.mix"), b.mix.clone()));
            out.push((format!("{p}.log_a"), s(b.hyper_next.log_a)));
            out.push((format!("{p}.log_l"), s(b.hyper_next.log_l)));
        }
        out.push(("head.w".to_string(), self.head_w.clone()));
        out.push(("head.b".to_string(), self.head_b.clone()));
        out
    }

    /// Inverse of [`ModelParams::tensors`] (values only, same order).
    pub fn set_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        let expected = self.tensors();
        if values.len() != expected.len() {
            return Err(shape_err(format!("{} tensors for {} slots", values.len(), expected.len())));
        }
        for ((name, old), new) in expected.iter().zip(values) {
            if old.shape() != new.shape() {
                return Err(shape_err(format!("{name}: {:?} vs {:?}", new.shape(), old.shape())));
            }
        }
        let mut it = values.iter();
        let mut next = || it.next().expect("length checked").clone();
        self.input_hyper.log_a = next().item();
        self.input_hyper.log_l = next().item();
        self.input_log_noise = next();
        for b in &mut self.blocks {
            b.op.w = next();
            b.op.beta = next();
            b.op.sigma_chol = next();
            b.op.bias = next();
            b.mix = next();
            b.hyper_next.log_a = next().item();
            b.hyper_next.log_l = next().item();
        }
        self.head_w = next();
        self.head_b = next();
        Ok(())
    }

    /// Registers every tensor on the tape; returns the structured handles
    /// and the flat list in [`ModelParams::tensors`] order.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> (ModelVars, Vec<Var>) {
        let mut flat = Vec::new();
        let mut reg = |t: &mut Tape, v: Tensor| {
            let var = if trainable { t.param(v) } else { t.constant(v) };
            flat.push(var);
            var
        };
        let input = HyperVars {
            log_a: reg(tape, Tensor::scalar(self.input_hyper.log_a)),
            log_l: reg(tape, Tensor::scalar(self.input_hyper.log_l)),
            dim: self.dim(),
        };
        let input_log_noise = reg(tape, self.input_log_noise.clone());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let op = DiffusionVars {
                w: reg(tape, b.op.w.clone()),
                beta: reg(tape, b.op.beta.clone()),
                sigma_chol: reg(tape, b.op.sigma_chol.clone()),
                bias: reg(tape, b.op.bias.clone()),
            };
            let mix = reg(tape, b.mix.clone());
            let hyper = HyperVars {
                log_a: reg(tape, Tensor::scalar(b.hyper_next.log_a)),
                log_l: reg(tape, Tensor::scalar(b.hyper_next.log_l)),
                dim: self.dim(),
            };
            blocks.push(BlockVars { op, mix, hyper });
        }
        let head_w = reg(tape, self.head_w.clone());
        let head_b = reg(tape, self.head_b.clone());
        (ModelVars { input, input_log_noise, blocks, head_w, head_b }, flat)
    }

    /// Structured handles over vars already on a tape, given in
    /// [`ModelParams::tensors`] order.
    pub fn vars_from(&self, flat: &[Var]) -> Result<ModelVars> {
        if flat.len() != self.tensors().len() {
            return Err(shape_err(format!("{} vars for {} tensors", flat.len(), self.tensors().len())));
        }
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("length checked");
        let input = HyperVars { log_a: next(), log_l: next(), dim: self.dim() };
        let input_log_noise = next();
        let blocks = self
            .blocks
            .iter()
            .map(|_| {
                let op = DiffusionVars { w: next(), beta: next(), sigma_chol: next(), bias: next() };
                let mix = next();
                let hyper = HyperVars { log_a: next(), log_l: next(), dim: self.dim() };
                BlockVars { op, mix, hyper }
            })
            .collect();
        Ok(ModelVars { input, input_log_noise, blocks, head_w: next(), head_b: next() })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub op: DiffusionVars,
    pub mix: Var,
    pub hyper: HyperVars,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub input: HyperVars,
    pub input_log_noise: Var,
    pub blocks: Vec<BlockVars>,
    pub head_w: Var,
    pub head_b: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Integral over the whole space.
    #[default]
    Mean,
    /// Integral over the unit box.
    Box,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOptions {
    /// Drop all variances after each convolution and rectify the mean only.
    pub deterministic: bool,
    /// Probe count of the stochastic variance estimator.
    pub probes: usize,
    pub pooling: Pooling,
    /// Evaluation points for the blocks; the sample locations when `None`.
    pub eval_points: Option<Tensor>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { deterministic: false, probes: 20, pooling: Pooling::Mean, eval_points: None }
    }
}

/// The measurements one layer's GP was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub hyper: RbfHyper,
    pub field: ObservedField,
    pub nll: f64,
}

impl LayerTrace {
    pub fn gp(&self) -> Result<RbfGp> {
        RbfGp::fit(self.hyper, &self.field)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input layer first, then one entry per block.
    pub layers: Vec<LayerTrace>,
    /// Post-mixing moments of every block at its evaluation points.
    pub blocks: Vec<MomentField>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn nll_total(&self) -> f64 {
        self.layers.iter().map(|l| l.nll).sum()
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Handles of a forward pass recorded on a tape.
pub struct TapeForward {
    pub logits: Var,
    pub pooled: Var,
    /// Sum of the layer NLLs.
    pub nll: Var,
    pub layer_nll: Vec<Var>,
    /// Per layer: locations, fitted means and variances.
    pub layer_fields: Vec<(Tensor, Var, Var)>,
    pub layer_hypers: Vec<HyperVars>,
    pub block_moments: Vec<(Tensor, Var, Var)>,
    pub mask: Option<Vec<bool>>,
}

/// How a block computes the variance of its convolution output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarPath {
    Skip,
    Exact,
    Stochastic(usize),
}

/// Convolved mean and variance of `gp` at `q` for one block.
fn conv_moments(
    tape: &mut Tape,
    gp: &TapeGp,
    gp_x: &Tensor,
    op: &DiffusionVars,
    q: &Tensor,
    path: VarPath,
    rng: &mut Rng,
) -> Result<(Var, Option<Var>)> {
    let d = gp_x.cols();
    let sigma = diffusion_cov(tape, op.sigma_chol);
    let cov_u = add_eye_scaled(tape, sigma, gp.len_sq);
    let u = gauss_cross(tape, q, gp_x, op.beta, cov_u, gp.amp)?;
    let kk = tape.value(u).shape()[0];
    let (ne, no) = (q.rows(), gp_x.rows());
    let c = tape.value(gp.alpha).cols();
    let uf = tape.reshape(u, &[kk * ne, no]);
    let proj = tape.matmul(uf, gp.alpha);
    let proj = tape.reshape(proj, &[kk, ne, c]);
    let mean = basis_contract(tape, proj, op.w);
    let mean = tape.add_row(mean, op.bias);
    let var = match path {
        VarPath::Skip => None,
        VarPath::Exact => {
            let base = tape.eye_scaled(gp.len_sq, d);
            let zero = Tensor::zeros(&[1, d]);
            let p = gauss_pair(tape, &zero, &zero, op.beta, sigma, base, gp.amp)?;
            let p = tape.reshape(p, &[kk, kk]);
            Some(conv_var_exact(tape, u, gp.inv, p, op.w, &gp.group_of))
        }
        VarPath::Stochastic(probes) => {
            let base = tape.eye_scaled(gp.len_sq, d);
            let prior = gauss_pair(tape, q, q, op.beta, sigma, base, gp.amp)?;
            let co = tape.value(op.w).shape()[1];
            let z = Tensor::from_shape(&[probes, ne, co], rng.normals(probes * ne * co));
            let est = conv_var_stochastic(tape, u, gp.inv, prior, op.w, &gp.group_of, &z);
            Some(tape.clamp_min(est, 0.0))
        }
    };
    Ok((mean, var))
}

/// Records the full forward pass of `model` on `sample`. `rng` drives the
/// stochastic variance probes (only used for per-channel input grids).
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    model: &ModelParams,
    sample: &ObservedField,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<TapeForward> {
    if sample.dim() != model.dim() || sample.n_channels() != model.c_in() {
        return Err(shape_err(format!(
            "sample has {} channels in {} dims, model expects {} in {}",
            sample.n_channels(),
            sample.dim(),
            model.c_in(),
            model.dim()
        )));
    }
    let n = sample.n_points();
    let noise = tape.exp(vars.input_log_noise);
    let noise = tape.broadcast_rows(noise, n);
    let v_obs = tape.constant(sample.v.clone());
    let v_in = tape.add(v_obs, noise);
    let y_in = tape.constant(sample.y.clone());
    let mut gp = fit_on_tape(tape, vars.input, &sample.x, y_in, v_in, sample.mask.as_deref())?;
    let mut gp_x = sample.x.clone();
    let mut layer_nll = vec![gp.nll];
    let mut layer_fields = vec![(sample.x.clone(), y_in, v_in)];
    let mut layer_hypers = vec![vars.input];
    let mut block_moments = Vec::new();
    let per_channel_grid = !sample.is_shared_grid();
    let q = opts.eval_points.clone().unwrap_or_else(|| sample.x.clone());

    for (b, bv) in vars.blocks.iter().enumerate() {
        let path = if opts.deterministic {
            VarPath::Skip
        } else if per_channel_grid && b == 0 {
            VarPath::Stochastic(opts.probes.max(1))
        } else {
            VarPath::Exact
        };
        let (mean, var) = conv_moments(tape, &gp, &gp_x, &bv.op, &q, path, rng)?;
        let a_next = tape.value(bv.hyper.log_a).item().exp();
        let floor = VAR_FLOOR * a_next;
        let (mean_next, var_next, var_trace) = match var {
            Some(var) => {
                let rm = relu_mean(tape, mean, var);
                let rv = relu_var(tape, mean, var);
                let mean_next = tape.matmul_t(rm, bv.mix);
                let sq = tape.mul(bv.mix, bv.mix);
                let vn = tape.matmul_t(rv, sq);
                let vn = tape.clamp_min(vn, 0.0);
                let fit_v = tape.clamp_min(vn, floor);
                (mean_next, fit_v, vn)
            }
            None => {
                let rm = tape.relu(mean);
                let mean_next = tape.matmul_t(rm, bv.mix);
                let shape = tape.value(mean_next).shape().to_vec();
                let fit_v = tape.constant(Tensor::full(&shape, floor));
                let zero = tape.constant(Tensor::zeros(&shape));
                (mean_next, fit_v, zero)
            }
        };
        block_moments.push((q.clone(), mean_next, var_trace));
        gp = fit_on_tape(tape, bv.hyper, &q, mean_next, var_next, None)?;
        gp_x = q.clone();
        layer_nll.push(gp.nll);
        layer_fields.push((q.clone(), mean_next, var_next));
        layer_hypers.push(bv.hyper);
    }

    let pooled = match opts.pooling {
        Pooling::Mean => {
            let s = tape.sum_rows(gp.alpha);
            tape.mul_scalar(s, gp.amp)
        }
        Pooling::Box => box_pool_on_tape(tape, &gp, &gp_x),
    };
    let c = tape.value(pooled).len();
    let row = tape.reshape(pooled, &[1, c]);
    let logits = tape.matmul_t(row, vars.head_w);
    let k = tape.value(logits).len();
    let logits = tape.reshape(logits, &[k]);
    let logits = tape.add(logits, vars.head_b);
    let mut nll = layer_nll[0];
    for &t in &layer_nll[1..] {
        nll = tape.add(nll, t);
    }
    Ok(TapeForward {
        logits,
        pooled,
        nll,
        layer_nll,
        layer_fields,
        layer_hypers,
        block_moments,
        mask: sample.mask.clone(),
    })
}

/// `Σ_i alpha_i·(P k)(x_i)` with `(P k)(x') = a·Π_j[Φ(x'_j/l) − Φ((x'_j − 1)/l)]`.
fn box_pool_on_tape(tape: &mut Tape, gp: &TapeGp, x: &Tensor) -> Var {
    let (n, d) = (x.rows(), x.cols());
    let l = tape.sqrt(gp.len_sq);
    let inv_l = tape.recip(l);
    let mut weights: Option<Var> = None;
    for j in 0..d {
        let col = tape.constant(Tensor::vector(x.column(j)));
        let shifted = tape.constant(Tensor::vector(x.column(j).iter().map(|v| v - 1.0).collect()));
        let z1 = tape.mul_scalar(col, inv_l);
        let z2 = tape.mul_scalar(shifted, inv_l);
        let c1 = tape.normal_cdf(z1);
        let c2 = tape.normal_cdf(z2);
        let p = tape.sub(c1, c2);
        weights = Some(match weights {
            None => p,
            Some(w) => tape.mul(w, p),
        });
    }
    let w = weights.expect("at least one dimension");
    let w = tape.mul_scalar(w, gp.amp);
    let w = tape.reshape(w, &[1, n]);
    let pooled = tape.matmul(w, gp.alpha);
    let c = tape.value(pooled).len();
    tape.reshape(pooled, &[c])
}

/// Reads a recorded forward pass back into plain values.
pub fn trace_from_tape(tape: &Tape, fwd: &TapeForward) -> Result<ForwardTrace> {
    let mut layers = Vec::with_capacity(fwd.layer_fields.len());
    for (i, ((x, y, v), h)) in fwd.layer_fields.iter().zip(&fwd.layer_hypers).enumerate() {
        let mask = if i == 0 { fwd.mask.clone() } else { None };
        layers.push(LayerTrace {
            hyper: h.value(tape),
            field: ObservedField::with_mask(x.clone(), tape.value(*y).clone(), tape.value(*v).clone(), mask)?,
            nll: tape.value(fwd.layer_nll[i]).item(),
        });
    }
    let blocks = fwd
        .block_moments
        .iter()
        .map(|(q, m, v)| MomentField { q: q.clone(), mean: tape.value(*m).clone(), var: tape.value(*v).clone() })
        .collect();
    Ok(ForwardTrace {
        layers,
        blocks,
        pooled: tape.value(fwd.pooled).data().to_vec(),
        logits: tape.value(fwd.logits).data().to_vec(),
    })
}

/// Forward pass without gradients.
pub fn forward_with(
    model: &ModelParams,
    sample: &ObservedField,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let (vars, _) = model.register(&mut tape, false);
    let fwd = forward_on_tape(&mut tape, &vars, model, sample, opts, rng)?;
    trace_from_tape(&tape, &fwd)
}

/// Probabilistic forward pass; `seed` drives the variance probes.
pub fn forward(model: &ModelParams, sample: &ObservedField, seed: u64) -> Result<ForwardTrace> {
    forward_with(model, sample, &ForwardOptions::default(), &mut Rng::new(seed))
}

/// The ablation with all variances dropped after each convolution.
pub fn forward_deterministic(model: &ModelParams, sample: &ObservedField) -> Result<ForwardTrace> {
    let opts = ForwardOptions { deterministic: true, ..ForwardOptions::default() };
    forward_with(model, sample, &opts, &mut Rng::new(0))
}

/// Cross-entropy of the logits plus `lambda` times the summed layer NLLs.
pub fn loss(trace: &ForwardTrace, label: usize, lambda: f64, class_weight: f64) -> f64 {
    let z = &trace.logits;
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
    class_weight * (lse - z[label]) + lambda * trace.nll_total()
}

/// Loss recorded on the tape, returning `(total, task, nll)`.
pub fn loss_on_tape(
    tape: &mut Tape,
    fwd: &TapeForward,
    label: usize,
    lambda: f64,
    class_weight: f64,
) -> (Var, Var, Var) {
    let task = tape.cross_entropy(fwd.logits, label, class_weight);
    let reg = tape.scale(fwd.nll, lambda);
    (tape.add(task, reg), task, fwd.nll)
}

/// Per-point channel mixing: mean `M·m`, variance `(M∘M)·v`.
pub fn mix_channels(mean: &Tensor, var: &Tensor, mix: &Tensor) -> Result<(Tensor, Tensor)> {
    if mean.shape() != var.shape() || mean.cols() != mix.cols() {
        return Err(shape_err(format!("mean {:?}, var {:?}, mix {:?}", mean.shape(), var.shape(), mix.shape())));
    }
    let sq = mix.map(|m| m * m);
    Ok((mean.matmul_t(mix)?, var.matmul_t(&sq)?))
}

/// One block without a tape: convolution, rectified moments, mixing, floor
/// and the fit of the next GP.
pub fn forward_block(params: &BlockParams, gp_in: &RbfGp, eval_points: &Tensor) -> Result<(RbfGp, f64, MomentField)> {
    let view = ConvolvedGpView::new(gp_in, &params.op)?;
    let mean = view.conv_mean(eval_points);
    let var = view.conv_var_diag(eval_points);
    let mut rm = mean.clone();
    let mut rv = var.clone();
    for i in 0..mean.len() {
        let (m, v) = relu_mean_var(mean.data()[i], var.data()[i]);
        rm.data_mut()[i] = m;
        rv.data_mut()[i] = v;
    }
    let (m_next, v_next) = mix_channels(&rm, &rv, &params.mix)?;
    let floor = VAR_FLOOR * params.hyper_next.a();
    let fit_v = v_next.map(|v| v.max(floor));
    let obs = ObservedField::new(eval_points.clone(), m_next.clone(), fit_v)?;
    let gp = RbfGp::fit(params.hyper_next, &obs)?;
    let nll = gp.nll();
    Ok((gp, nll, MomentField { q: eval_points.clone(), mean: m_next, var: v_next }))
}

/// Integral of the posterior mean over the whole space: `a·Σ_i alpha_i`.
pub fn pool_mean(gp: &RbfGp) -> Vec<f64> {
    let a = gp.hyper.a();
    (0..gp.n_channels()).map(|c| a * gp.alpha.column(c).iter().sum::<f64>()).collect()
}

/// `∫_{[0,1]^d} k(x, x') dx`.
pub fn box_kernel_integral(hyper: &RbfHyper, xp: &[f64]) -> f64 {
    let l = hyper.l();
    hyper.a() * xp.iter().map(|&x| normal_cdf(x / l) - normal_cdf((x - 1.0) / l)).product::<f64>()
}

/// `∫∫_{[0,1]^d × [0,1]^d} k(x, x') dx dx'`.
pub fn box_prior_integral(hyper: &RbfHyper) -> f64 {
    let l = hyper.l();
    let one =
        l * (2.0 / std::f64::consts::PI).sqrt() * ((-0.5 / (l * l)).exp() - 1.0) + 2.0 * normal_cdf(1.0 / l) - 1.0;
    hyper.a() * one.powi(hyper.dim as i32)
}

/// Mean and variance of the integral of the posterior over the unit box,
/// per channel.
pub fn pool_box(gp: &RbfGp) -> (Vec<f64>, Vec<f64>) {
    let n = gp.x.rows();
    let pk: Vec<f64> = (0..n).map(|i| box_kernel_integral(&gp.hyper, gp.x.row(i))).collect();
    let prior = box_prior_integral(&gp.hyper);
    let c = gp.n_channels();
    let mean = (0..c).map(|ch| (0..n).map(|i| pk[i] * gp.alpha.at(i, ch)).sum()).collect();
    let group_var: Vec<f64> = (0..gp.groups().len())
        .map(|g| {
            let inv = gp.inverse(g);
            let t = inv.matvec(&pk);
            (prior - crate::numerics::tensor::dot(&pk, &t)).max(0.0)
        })
        .collect();
    let var = (0..c).map(|ch| group_var[gp.group_of(ch)]).collect();
    (mean, var)
}

/// Unbiased estimate of `diag(B)` from `probes` Gaussian probes:
/// `(1/P) Σ_p z_p ⊙ B z_p`.
pub fn stochastic_diag(matvec: impl Fn(&[f64]) -> Vec<f64>, n: usize, probes: usize, rng: &mut Rng) -> Vec<f64> {
    let mut est = vec![0.0; n];
    for _ in 0..probes {
        let z = rng.normals(n);
        let bz = matvec(&z);
        for i in 0..n {
            est[i] += z[i] * bz[i] / probes as f64;
        }
    }
    est
}
