//! Central finite-difference checks for tape gradients.

use super::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Absolute slack for gradient entries that are zero analytically; finite
/// differences of an O(1) loss carry round-off of about 1e-11 at step 1e-5.
pub const GRAD_ATOL: f64 = 1e-8;

/// Largest discrepancy found by [`gradient_errors`].
#[derive(Debug, Clone)]
pub struct GradReport {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares tape gradients with central differences of step `h` for every
/// entry of every parameter. Returns one worst-case report per parameter.
pub fn gradient_errors(params: &[Tensor], h: f64, build: impl Fn(&mut Tape, &[Var]) -> Var) -> Vec<GradReport> {
    let eval = |values: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let loss = build(&mut t, &vars);
        t.value(loss).item()
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = params.iter().map(|v| t.param(v.clone())).collect();
    let loss = build(&mut t, &vars);
    let grads = t.backward(loss);

    let mut reports = Vec::with_capacity(params.len());
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var);
        let mut worst = GradReport { param: pi, index: 0, analytic: 0.0, numeric: 0.0, rel_err: 0.0 };
        for idx in 0..params[pi].len() {
            let mut values = params.to_vec();
            values[pi].data_mut()[idx] += h;
            let up = eval(&values);
            values[pi].data_mut()[idx] -= 2.0 * h;
            let down = eval(&values);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if err <= GRAD_ATOL { 0.0 } else { err / scale };
            if rel > worst.rel_err || idx == 0 {
                worst = GradReport { param: pi, index: idx, analytic: a, numeric, rel_err: rel };
            }
        }
        reports.push(worst);
    }
    reports
}

/// Fails with a description of the first parameter whose worst relative
/// error exceeds `rtol`.
pub fn check_gradients(
    params: &[Tensor],
    h: f64,
    rtol: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> Result<(), String> {
    for r in gradient_errors(params, h, build) {
        if !(r.rel_err <= rtol) {
            return Err(format!(
                "parameter {} entry {}: analytic {:e} vs numeric {:e} (rel {:e})",
                r.param, r.index, r.analytic, r.numeric, r.rel_err
            ));
        }
    }
    Ok(())
}
