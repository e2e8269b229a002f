//! Equivariance constraints on drift and diffusion coefficients.
//!
//! A drift `B` (c_out×c_in×d) or diffusion `S` (c_out×c_in×d×d) is
//! equivariant when `[ρ_out(g) ⊗ ρ_in(g^{−T}) ⊗ ρ_spatial(g)] vec = vec` for
//! every group element, with `ρ_spatial` the standard representation for the
//! drift and its square for the diffusion. The invariant coefficients form
//! the nullspace of the stacked `R(g) − I` blocks. Continuous rotations
//! contribute their Lie-algebra generator plus a few finite angles.
//!
//! Diffusions are restricted to the symmetric part in the spatial indices,
//! since they only ever contract with `∂_i∂_j`. The antisymmetric invariant
//! `ε_ij` is therefore excluded by construction.

use crate::numerics::Rng;
use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    So2,
    /// Rotations by multiples of 2π/n.
    Cyclic(usize),
    Translations,
}

/// Sampled elements of a planar group, each acting on the plane by a 2×2
/// matrix (the identity for translations).
#[derive(Debug, Clone)]
pub struct GroupSample {
    pub kind: GroupKind,
    pub elements: Vec<Matrix2<f64>>,
}

pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Generator of planar rotations, `g_θ = e^{θJ}`.
pub fn rotation_generator() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

impl GroupSample {
    /// `count` elements: random angles for SO(2), the `n` rotations (cycled)
    /// for C_n, identities for translations.
    pub fn draw(kind: GroupKind, count: usize, rng: &mut Rng) -> Self {
        let elements = (0..count)
            .map(|i| match kind {
                GroupKind::So2 => rotation(2.0 * PI * rng.uniform()),
                GroupKind::Cyclic(n) => rotation(2.0 * PI * (i % n) as f64 / n as f64),
                GroupKind::Translations => Matrix2::identity(),
            })
            .collect();
        GroupSample { kind, elements }
    }
}

/// A tensor representation `g^{⊗p} ⊗ (g^{−T})^{⊗q}` or a direct sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rep {
    Tensor { p: usize, q: usize },
    Sum(Vec<Rep>),
}

impl Rep {
    pub fn scalar() -> Self {
        Rep::Tensor { p: 0, q: 0 }
    }

    pub fn vector() -> Self {
        Rep::Tensor { p: 1, q: 0 }
    }

    /// `n` copies of the scalar representation.
    pub fn scalars(n: usize) -> Self {
        Rep::Sum(vec![Rep::scalar(); n])
    }

    pub fn dim(&self) -> usize {
        match self {
            Rep::Tensor { p, q } => 1 << (p + q),
            Rep::Sum(parts) => parts.iter().map(Rep::dim).sum(),
        }
    }

    /// `ρ(g)`.
    pub fn eval(&self, g: &Matrix2<f64>) -> DMatrix<f64> {
        let gi = g.try_inverse().expect("group elements are invertible").transpose();
        self.build(&to_dyn(g), &to_dyn(&gi))
    }

    /// `dρ(X)`, the representation of a Lie-algebra element.
    pub fn generator(&self, x: &Matrix2<f64>) -> DMatrix<f64> {
        match self {
            Rep::Tensor { p, q } => {
                let factors: Vec<DMatrix<f64>> = std::iter::repeat_n(to_dyn(x), *p)
                    .chain(std::iter::repeat_n(-to_dyn(&x.transpose()), *q))
                    .collect();
                let k = factors.len();
                let mut out = DMatrix::zeros(self.dim(), self.dim());
                for slot in 0..k {
                    let mut term = DMatrix::identity(1, 1);
                    for (j, f) in factors.iter().enumerate() {
                        term = term.kronecker(&if j == slot { f.clone() } else { DMatrix::identity(2, 2) });
                    }
                    out += term;
                }
                out
            }
            Rep::Sum(parts) => block_diag(parts.iter().map(|r| r.generator(x)).collect()),
        }
    }

    fn build(&self, g: &DMatrix<f64>, gi: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Rep::Tensor { p, q } => {
                let mut out = DMatrix::identity(1, 1);
                for _ in 0..*p {
                    out = out.kronecker(g);
                }
                for _ in 0..*q {
                    out = out.kronecker(gi);
                }
                out
            }
            Rep::Sum(parts) => block_diag(parts.iter().map(|r| r.build(g, gi)).collect()),
        }
    }
}

fn to_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

fn block_diag(blocks: Vec<DMatrix<f64>>) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(&b);
        at += k;
    }
    out
}

/// Spatial order of the coefficient: 1 for a drift, 2 for a diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Drift,
    Diffusion,
}

impl Coefficient {
    fn spatial(self) -> Rep {
        match self {
            Coefficient::Drift => Rep::vector(),
            Coefficient::Diffusion => Rep::Tensor { p: 2, q: 0 },
        }
    }
}

/// Full action on vectorised coefficients: `ρ_out(g) ⊗ ρ_in(g^{−T}) ⊗ ρ_spatial(g)`.
pub fn coefficient_action(out: &Rep, inp: &Rep, coef: Coefficient, g: &Matrix2<f64>) -> DMatrix<f64> {
    let g_inv_t = g.try_inverse().expect("invertible").transpose();
    out.eval(g).kronecker(&inp.eval(&g_inv_t)).kronecker(&coef.spatial().eval(g))
}

fn coefficient_generator(out: &Rep, inp: &Rep, coef: Coefficient, x: &Matrix2<f64>) -> DMatrix<f64> {
    let eye = |r: &Rep| DMatrix::<f64>::identity(r.dim(), r.dim());
    let (a, b, c) = (eye(out), eye(inp), eye(&coef.spatial()));
    let da = out.generator(x);
    let db = inp.generator(&(-x.transpose()));
    let dc = coef.spatial().generator(x);
    da.kronecker(&b).kronecker(&c) + a.kronecker(&db).kronecker(&c) + a.kronecker(&b).kronecker(&dc)
}

/// Columns span the admissible coefficients: everything for a drift, the
/// spatially symmetric part (orthonormal basis) for a diffusion.
pub fn admissible_subspace(n_pairs: usize, coef: Coefficient) -> DMatrix<f64> {
    match coef {
        Coefficient::Drift => DMatrix::identity(2 * n_pairs, 2 * n_pairs),
        Coefficient::Diffusion => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            // vec index i*2 + j for the spatial pair (i, j)
            let sym = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, s, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0]);
            DMatrix::identity(n_pairs, n_pairs).kronecker(&sym)
        }
    }
}

/// Stacked `R(g) − I` blocks over the sample, preceded by the Lie-algebra
/// generator for continuous rotations, all restricted to the admissible
/// subspace. The nullspace of the result is the invariant subspace in the
/// admissible coordinates.
pub fn build_constraint_matrix(out: &Rep, inp: &Rep, coef: Coefficient, sample: &GroupSample) -> DMatrix<f64> {
    let n_pairs = out.dim() * inp.dim();
    let p = admissible_subspace(n_pairs, coef);
    let full = p.nrows();
    let mut blocks = Vec::new();
    if sample.kind == GroupKind::So2 {
        blocks.push(coefficient_generator(out, inp, coef, &rotation_generator()));
    }
    for g in &sample.elements {
        blocks.push(coefficient_action(out, inp, coef, g) - DMatrix::identity(full, full));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows, full);
    let mut at = 0;
    for b in blocks {
        stacked.view_mut((at, 0), (b.nrows(), full)).copy_from(&b);
        at += b.nrows();
    }
    stacked * p
}

/// Orthonormal basis of the invariant coefficients with the spectrum that
/// separates it from the rest.
#[derive(Debug, Clone)]
pub struct InvariantBasis {
    /// Columns are vectorised coefficients in the full space.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub tol: f64,
    /// Smallest singular value above `tol`; infinite when everything is
    /// invariant.
    pub smallest_kept: f64,
    /// Largest singular value at or below `tol`; zero when nothing is.
    pub largest_null: f64,
}

impl InvariantBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `smallest_kept / tol`.
    pub fn gap_ratio(&self) -> f64 {
        self.smallest_kept / self.tol
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;

/// Nullspace of `constraint` (in admissible coordinates `p`), mapped back to
/// the full coefficient space.
pub fn solve_invariant_basis(constraint: &DMatrix<f64>, admissible: &DMatrix<f64>, tol: f64) -> InvariantBasis {
    let n = constraint.ncols();
    // pad so the SVD returns a full set of right singular vectors
    let rows = constraint.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (constraint.nrows(), n)).copy_from(constraint);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut null = Vec::new();
    let (mut smallest_kept, mut largest_null) = (f64::INFINITY, 0.0f64);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol {
            null.push(v_t.row(i).transpose());
            largest_null = largest_null.max(s);
        } else {
            smallest_kept = smallest_kept.min(s);
        }
    }
    let local = if null.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null) };
    InvariantBasis {
        basis: admissible * local,
        singular_values: svd.singular_values.iter().copied().collect(),
        tol,
        smallest_kept,
        largest_null,
    }
}

/// Largest `‖R(g)b − b‖` over basis columns and the given elements.
pub fn max_invariance_residual(
    basis: &InvariantBasis,
    out: &Rep,
    inp: &Rep,
    coef: Coefficient,
    elements: &[Matrix2<f64>],
) -> f64 {
    let mut worst = 0.0f64;
    for g in elements {
        let r = coefficient_action(out, inp, coef, g);
        for b in basis.basis.column_iter() {
            worst = worst.max((&r * b - b).norm());
        }
    }
    worst
}

/// Largest distance of `R(g)b` from the span of the basis.
pub fn max_closure_residual(
    basis: &InvariantBasis,
    out: &Rep,
    inp: &Rep,
    coef: Coefficient,
    elements: &[Matrix2<f64>],
) -> f64 {
    let q = &basis.basis;
    let mut worst = 0.0f64;
    for g in elements {
        let r = coefficient_action(out, inp, coef, g);
        for b in q.column_iter() {
            let moved = &r * b;
            let proj = q * (q.transpose() * &moved);
            worst = worst.max((moved - proj).norm());
        }
    }
    worst
}

/// Heat kernel of a scalar drift–diffusion at unit time, `N(x + β; 0, Σ)`.
fn heat_kernel(beta: &[f64; 2], sigma: &Matrix2<f64>, x: &[f64; 2]) -> f64 {
    let inv = sigma.try_inverse().expect("positive definite");
    let z = nalgebra::Vector2::new(x[0] + beta[0], x[1] + beta[1]);
    (-0.5 * z.dot(&(inv * z))).exp() / (2.0 * PI * sigma.determinant().sqrt())
}

/// Largest `|K(g⁻¹x) − K(x)|` over `trials` random points in `[−2, 2]²` and
/// random rotations.
pub fn rotation_residual(beta: [f64; 2], sigma: Matrix2<f64>, trials: usize, rng: &mut Rng) -> f64 {
    (0..trials)
        .map(|_| {
            let x = [4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0];
            let g_inv = rotation(-2.0 * PI * rng.uniform());
            let gx = g_inv * nalgebra::Vector2::new(x[0], x[1]);
            (heat_kernel(&beta, &sigma, &[gx[0], gx[1]]) - heat_kernel(&beta, &sigma, &x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Residual of one operator family member in [`TrivialityReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheck {
    pub label: String,
    pub beta: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub residual: f64,
}

/// Scalar-field equivariance summary for rotations.
#[derive(Debug, Clone)]
pub struct TrivialityReport {
    pub tol: f64,
    pub drift: InvariantBasis,
    pub diffusion: InvariantBasis,
    /// `|⟨basis, vec(I)/√2⟩|` for a one-dimensional diffusion basis.
    pub identity_overlap: f64,
    pub kernels: Vec<KernelCheck>,
}

impl TrivialityReport {
    pub fn min_gap_ratio(&self) -> f64 {
        self.drift.gap_ratio().min(self.diffusion.gap_ratio())
    }
}

/// Solves the SO(2) constraints for scalar in/out fields and evaluates the
/// rotated-kernel identity on the isotropic operator and on `extra` random
/// anisotropic or drifting ones.
pub fn check_scalar_diffusion_triviality(extra: usize, trials: usize, rng: &mut Rng) -> TrivialityReport {
    let tol = DEFAULT_TOL;
    let (s, one) = (Rep::scalar(), Rep::scalar());
    let sample = GroupSample::draw(GroupKind::So2, 8, rng);
    let solve = |coef| {
        let c = build_constraint_matrix(&s, &one, coef, &sample);
        solve_invariant_basis(&c, &admissible_subspace(1, coef), tol)
    };
    let drift = solve(Coefficient::Drift);
    let diffusion = solve(Coefficient::Diffusion);
    let identity = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]) / 2f64.sqrt();
    let identity_overlap = if diffusion.dim() == 1 { diffusion.basis.column(0).dot(&identity).abs() } else { 0.0 };

    let mut cases: Vec<(String, [f64; 2], Matrix2<f64>)> = vec![
        ("isotropic".into(), [0.0, 0.0], Matrix2::identity()),
        ("isotropic, scaled".into(), [0.0, 0.0], Matrix2::identity() * 0.3),
        ("drift [1, 0]".into(), [1.0, 0.0], Matrix2::identity()),
        ("anisotropic diag(1, 2)".into(), [0.0, 0.0], Matrix2::new(1.0, 0.0, 0.0, 2.0)),
    ];
    for i in 0..extra {
        let beta = [rng.normal(), rng.normal()];
        let l = Matrix2::new(0.5 + rng.uniform(), 0.0, rng.normal() * 0.5, 0.5 + rng.uniform());
        cases.push((format!("random {i}"), beta, l * l.transpose()));
    }
    let kernels = cases
        .into_iter()
        .map(|(label, beta, sigma)| KernelCheck {
            residual: rotation_residual(beta, sigma, trials, rng),
            sigma: [[sigma[(0, 0)], sigma[(0, 1)]], [sigma[(1, 0)], sigma[(1, 1)]]],
            label,
            beta,
        })
        .collect();
    TrivialityReport { tol, drift, diffusion, identity_overlap, kernels }
}

impl fmt::Display for TrivialityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scalar fields under SO(2), singular-value tolerance {:e}", self.tol)?;
        for (name, b) in [("drift", &self.drift), ("diffusion (symmetric part)", &self.diffusion)] {
            writeln!(
                f,
                "  {name}: invariant dimension {}, largest null singular value {:.3e}, smallest kept {:.3e}, gap {:.3e}×tol",
                b.dim(),
                b.largest_null,
                b.smallest_kept,
                b.gap_ratio()
            )?;
        }
        writeln!(f, "  overlap of the diffusion basis with vec(I)/√2: {:.12}", self.identity_overlap)?;
        writeln!(f, "  antisymmetric diffusion parts are excluded before solving")?;
        for k in &self.kernels {
            writeln!(f, "  kernel {:<24} β = {:?}  max |K(g⁻¹x) − K(x)| = {:.3e}", k.label, k.beta, k.residual)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
