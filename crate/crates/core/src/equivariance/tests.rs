use super::*;
use crate::numerics::Rng;
use proptest::prelude::*;

fn reps() -> Vec<Rep> {
    vec![
        Rep::scalar(),
        Rep::vector(),
        Rep::Tensor { p: 0, q: 1 },
        Rep::Tensor { p: 2, q: 0 },
        Rep::Tensor { p: 1, q: 1 },
        Rep::Sum(vec![Rep::scalar(), Rep::vector(), Rep::Tensor { p: 1, q: 1 }]),
    ]
}

fn general_linear(rng: &mut Rng) -> Matrix2<f64> {
    loop {
        let m = Matrix2::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if m.determinant().abs() > 0.2 {
            return m;
        }
    }
}

fn solve(out: &Rep, inp: &Rep, coef: Coefficient, kind: GroupKind, rng: &mut Rng) -> InvariantBasis {
    let sample = GroupSample::draw(kind, 8, rng);
    let c = build_constraint_matrix(out, inp, coef, &sample);
    solve_invariant_basis(&c, &admissible_subspace(out.dim() * inp.dim(), coef), DEFAULT_TOL)
}

fn fresh_rotations(rng: &mut Rng, n: usize) -> Vec<Matrix2<f64>> {
    (0..n).map(|_| rotation(2.0 * PI * rng.uniform())).collect()
}

#[test]
fn rotation_samples_are_special_orthogonal() {
    let mut rng = Rng::new(1);
    for kind in [GroupKind::So2, GroupKind::Cyclic(4), GroupKind::Cyclic(7)] {
        for g in GroupSample::draw(kind, 12, &mut rng).elements {
            assert!((g.transpose() * g - Matrix2::identity()).abs().max() < 1e-12);
            assert!((g.determinant() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn rotation_is_exponential_of_generator() {
    let theta = 0.7;
    let e = (rotation_generator() * theta).exp();
    assert!((e - rotation(theta)).abs().max() < 1e-12);
}

#[test]
fn representations_are_homomorphisms() {
    let mut rng = Rng::new(2);
    for rep in reps() {
        for _ in 0..100 {
            let (a, b) = (general_linear(&mut rng), general_linear(&mut rng));
            let lhs = rep.eval(&(a * b));
            let rhs = rep.eval(&a) * rep.eval(&b);
            let scale = 1.0 + rhs.abs().max();
            assert!((lhs - rhs).abs().max() / scale < 1e-10, "{rep:?}");
        }
        assert_eq!(rep.eval(&Matrix2::identity()).nrows(), rep.dim());
    }
}

#[test]
fn generator_matches_derivative_of_rotation() {
    let h = 1e-5;
    for rep in reps() {
        let fd = (rep.eval(&rotation(h)) - rep.eval(&rotation(-h))) / (2.0 * h);
        let exact = rep.generator(&rotation_generator());
        assert!((fd - exact).abs().max() < 1e-8, "{rep:?}");
    }
}

#[test]
fn translations_impose_no_constraint() {
    let mut rng = Rng::new(3);
    for coef in [Coefficient::Drift, Coefficient::Diffusion] {
        let sample = GroupSample::draw(GroupKind::Translations, 8, &mut rng);
        let (out, inp) = (Rep::scalars(2), Rep::scalars(3));
        let c = build_constraint_matrix(&out, &inp, coef, &sample);
        assert!(c.abs().max() == 0.0);
        let p = admissible_subspace(6, coef);
        let basis = solve_invariant_basis(&c, &p, DEFAULT_TOL);
        assert_eq!(basis.dim(), p.ncols());
        // the basis spans the admissible space
        let gram = basis.basis.transpose() * &p;
        assert!((gram.determinant().abs() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn scalar_drift_has_no_rotation_invariant() {
    let mut rng = Rng::new(4);
    let b = solve(&Rep::scalar(), &Rep::scalar(), Coefficient::Drift, GroupKind::So2, &mut rng);
    assert_eq!(b.dim(), 0);
    assert!(b.gap_ratio() >= 1e6);
}

#[test]
fn scalar_diffusion_invariant_is_identity() {
    let mut rng = Rng::new(5);
    let b = solve(&Rep::scalar(), &Rep::scalar(), Coefficient::Diffusion, GroupKind::So2, &mut rng);
    assert_eq!(b.dim(), 1);
    assert!(b.gap_ratio() >= 1e6);
    let v = b.basis.column(0);
    let s = v[0].signum();
    let expect = [1.0, 0.0, 0.0, 1.0].map(|x: f64| x / 2f64.sqrt());
    for k in 0..4 {
        assert!((s * v[k] - expect[k]).abs() < 1e-10);
    }
}

#[test]
fn unsymmetrized_diffusion_would_admit_the_rotation_form() {
    // without restricting to symmetric S the antisymmetric ε_ij is invariant too
    let mut rng = Rng::new(6);
    let sample = GroupSample::draw(GroupKind::So2, 8, &mut rng);
    let (s, t) = (Rep::scalar(), Rep::scalar());
    let mut blocks = vec![coefficient_generator(&s, &t, Coefficient::Diffusion, &rotation_generator())];
    for g in &sample.elements {
        blocks.push(coefficient_action(&s, &t, Coefficient::Diffusion, g) - DMatrix::identity(4, 4));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut c = DMatrix::zeros(rows, 4);
    let mut at = 0;
    for b in blocks {
        c.view_mut((at, 0), (b.nrows(), 4)).copy_from(&b);
        at += b.nrows();
    }
    let b = solve_invariant_basis(&c, &DMatrix::identity(4, 4), DEFAULT_TOL);
    assert_eq!(b.dim(), 2);
}

#[test]
fn bases_satisfy_constraint_on_fresh_rotations() {
    let mut rng = Rng::new(7);
    let cases = [
        (Rep::scalar(), Rep::scalar(), Coefficient::Diffusion),
        (Rep::vector(), Rep::vector(), Coefficient::Diffusion),
        (Rep::vector(), Rep::scalar(), Coefficient::Drift),
        (Rep::scalars(2), Rep::vector(), Coefficient::Drift),
    ];
    for (out, inp, coef) in cases {
        let b = solve(&out, &inp, coef, GroupKind::So2, &mut rng);
        assert!(b.dim() > 0, "{out:?} {inp:?} {coef:?}");
        let fresh = fresh_rotations(&mut rng, 20);
        assert!(max_invariance_residual(&b, &out, &inp, coef, &fresh) < 1e-7);
        assert!(max_closure_residual(&b, &out, &inp, coef, &fresh) < 1e-7);
        let gram = b.basis.transpose() * &b.basis;
        assert!((gram - DMatrix::identity(b.dim(), b.dim())).abs().max() < 1e-10);
    }
}

#[test]
fn vector_to_vector_drift_dimension_matches_independent_count() {
    // an equivariant rank-3 tensor T_{abi} under SO(2): the invariant count is
    // the multiplicity of the trivial character in (e^{iθ} + e^{-iθ})^3, which is 0
    let mut rng = Rng::new(8);
    let b = solve(&Rep::vector(), &Rep::vector(), Coefficient::Drift, GroupKind::So2, &mut rng);
    let odd = (0..8).filter(|m| {
        let ones = (*m as u32).count_ones() as i32;
        ones - (3 - ones) == 0
    });
    assert_eq!(b.dim(), odd.count());
    assert_eq!(b.dim(), 0);
}

#[test]
fn vector_vector_diffusion_dimension_matches_character_count() {
    // invariants of a 4-index tensor symmetric in its last pair: Sym² of the
    // standard rep is 1 + (charges ±2); times (charges ±1)² = 0, 0, ±2
    // giving 2 (from 0⊗0) + 2 (from ±2⊗∓2) = 4
    let mut rng = Rng::new(9);
    let b = solve(&Rep::vector(), &Rep::vector(), Coefficient::Diffusion, GroupKind::So2, &mut rng);
    let outer = [1i32, -1];
    let sym = [0i32, 2, -2];
    let mut count = 0;
    for a in outer {
        for c in outer {
            for s in sym {
                if a + c + s == 0 {
                    count += 1;
                }
            }
        }
    }
    assert_eq!(b.dim(), count);
}

#[test]
fn cyclic_rotations_keep_identity_diffusion() {
    let mut rng = Rng::new(10);
    let b = solve(&Rep::scalar(), &Rep::scalar(), Coefficient::Diffusion, GroupKind::Cyclic(4), &mut rng);
    let id = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]) / 2f64.sqrt();
    let proj = &b.basis * (b.basis.transpose() * &id);
    assert!((proj - id).norm() < 1e-10);
    // a quarter turn swaps the diagonal entries and flips the off-diagonal one
    assert_eq!(b.dim(), 1);
}

#[test]
fn cyclic_group_of_two_keeps_everything_symmetric() {
    let mut rng = Rng::new(11);
    let b = solve(&Rep::scalar(), &Rep::scalar(), Coefficient::Diffusion, GroupKind::Cyclic(2), &mut rng);
    assert_eq!(b.dim(), 3);
    let d = solve(&Rep::scalar(), &Rep::scalar(), Coefficient::Drift, GroupKind::Cyclic(2), &mut rng);
    assert_eq!(d.dim(), 0);
}

#[test]
fn isotropic_kernel_is_rotation_invariant() {
    let mut rng = Rng::new(12);
    assert!(rotation_residual([0.0, 0.0], Matrix2::identity(), 100, &mut rng) < 1e-10);
    assert!(rotation_residual([0.0, 0.0], Matrix2::identity() * 2.5, 100, &mut rng) < 1e-10);
}

#[test]
fn drifting_or_anisotropic_kernels_break_rotation_invariance() {
    let mut rng = Rng::new(13);
    assert!(rotation_residual([1.0, 0.0], Matrix2::identity(), 100, &mut rng) > 1e-3);
    assert!(rotation_residual([0.0, 0.0], Matrix2::new(1.0, 0.0, 0.0, 2.0), 100, &mut rng) > 1e-3);
}

#[test]
fn triviality_report() {
    let mut rng = Rng::new(14);
    let r = check_scalar_diffusion_triviality(6, 100, &mut rng);
    assert_eq!(r.drift.dim(), 0);
    assert_eq!(r.diffusion.dim(), 1);
    assert!((r.identity_overlap - 1.0).abs() < 1e-10);
    assert!(r.min_gap_ratio() >= 1e6);
    for k in &r.kernels {
        let isotropic = k.beta == [0.0, 0.0] && k.sigma[0][1] == 0.0 && k.sigma[0][0] == k.sigma[1][1];
        if isotropic {
            assert!(k.residual < 1e-10, "{}", k.label);
        } else {
            assert!(k.residual > 1e-3, "{}", k.label);
        }
    }
    let text = r.to_string();
    assert!(text.contains("invariant dimension 0"));
    assert!(text.contains("antisymmetric"));
}

proptest! {
    #[test]
    fn so2_basis_vectors_hold_at_any_angle(theta in 0.0..(2.0 * PI), seed in 0u64..50) {
        let mut rng = Rng::new(seed);
        let (out, inp) = (Rep::vector(), Rep::Sum(vec![Rep::scalar(), Rep::vector()]));
        let b = solve(&out, &inp, Coefficient::Drift, GroupKind::So2, &mut rng);
        let r = max_invariance_residual(&b, &out, &inp, Coefficient::Drift, &[rotation(theta)]);
        prop_assert!(r < 1e-7);
    }
}
