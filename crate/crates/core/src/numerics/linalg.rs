//! Cholesky factorisation, triangular solves and the jitter protocol used by
//! every Gaussian-process fit.

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::{gemm, Tensor};

/// First relative jitter tried by [`cholesky_jittered`].
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

fn check_square(a: &Tensor) -> Result<usize> {
    if a.ndim() != 2 || a.rows() != a.cols() {
        return Err(shape_err(format!("expected a square matrix, got {:?}", a.shape())));
    }
    Ok(a.rows())
}

/// Lower-triangular `L` with `A = L·Lᵀ`. Only the lower triangle of `a` is
/// read.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = check_square(a)?;
    let src = a.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut d = src[row_j + j];
        for k in 0..j {
            d -= l[row_j + k] * l[row_j + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[row_j + j] = djj;
        let inv = 1.0 / djj;
        for i in j + 1..n {
            let row_i = i * n;
            let mut s = src[row_i + j];
            for k in 0..j {
                s -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = s * inv;
        }
    }
    Ok(Tensor::from_shape(&[n, n], l))
}

/// Cholesky of `A + ε·mean(diag A)·I`, starting at ε = 1e-8 and doubling up
/// to 1e-4. Returns the factor and the absolute jitter that was added.
pub fn cholesky_jittered(a: &Tensor) -> Result<(Tensor, f64)> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok((Tensor::zeros(&[0, 0]), 0.0));
    }
    let mean_diag = (0..n).map(|i| a.at(i, i)).sum::<f64>() / n as f64;
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let mut eps = JITTER_START;
    let mut last_err = None;
    while eps <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = eps * scale;
        let mut shifted = a.clone();
        for i in 0..n {
            let v = shifted.at(i, i) + jitter;
            shifted.set(i, i, v);
        }
        match cholesky(&shifted) {
            Ok(l) => return Ok((l, jitter)),
            Err(e) => last_err = Some(e),
        }
        eps *= 2.0;
    }
    Err(last_err.expect("at least one attempt"))
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_square(l)?;
    if b.rows() != n {
        return Err(shape_err(format!("solve_lower {:?} vs {:?}", l.shape(), b.shape())));
    }
    let m = b.cols();
    let mut x = b.data().to_vec();
    let ld = l.data();
    for i in 0..n {
        let (done, rest) = x.split_at_mut(i * m);
        let xi = &mut rest[..m];
        for k in 0..i {
            let lik = ld[i * n + k];
            if lik != 0.0 {
                let xk = &done[k * m..(k + 1) * m];
                for (a, b) in xi.iter_mut().zip(xk) {
                    *a -= lik * b;
                }
            }
        }
        let inv = 1.0 / ld[i * n + i];
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    Tensor::new(b.shape(), x)
}

/// Solves `Lᵀ·X = B` for lower-triangular `L`.
pub fn solve_lower_t(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_square(l)?;
    if b.rows() != n {
        return Err(shape_err(format!("solve_lower_t {:?} vs {:?}", l.shape(), b.shape())));
    }
    let m = b.cols();
    let mut x = b.data().to_vec();
    let ld = l.data();
    for i in (0..n).rev() {
        let (head, tail) = x.split_at_mut((i + 1) * m);
        let xi = &mut head[i * m..];
        for k in i + 1..n {
            let lki = ld[k * n + i];
            if lki != 0.0 {
                let xk = &tail[(k - i - 1) * m..(k - i) * m];
                for (a, b) in xi.iter_mut().zip(xk) {
                    *a -= lki * b;
                }
            }
        }
        let inv = 1.0 / ld[i * n + i];
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    Tensor::new(b.shape(), x)
}

/// Solves `(L·Lᵀ)·X = B` given the Cholesky factor `L`.
pub fn solve_chol(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let y = solve_lower(l, b)?;
    solve_lower_t(l, &y)
}

/// `log det(L·Lᵀ)`.
pub fn chol_logdet(l: &Tensor) -> f64 {
    (0..l.rows()).map(|i| l.at(i, i).ln()).sum::<f64>() * 2.0
}

/// Inverse of a lower-triangular matrix.
pub fn invert_lower(l: &Tensor) -> Tensor {
    let n = l.rows();
    let ld = l.data();
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        inv[j * n + j] = 1.0 / ld[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += ld[i * n + k] * inv[k * n + j];
            }
            inv[i * n + j] = -s / ld[i * n + i];
        }
    }
    Tensor::from_shape(&[n, n], inv)
}

/// `(L·Lᵀ)⁻¹ = L⁻ᵀ·L⁻¹`, symmetrised.
pub fn chol_inverse(l: &Tensor) -> Tensor {
    let n = l.rows();
    let li = invert_lower(l);
    let mut out = Tensor::zeros(&[n, n]);
    gemm(n, n, n, 1.0, li.data(), true, li.data(), false, 0.0, out.data_mut());
    symmetrize(&mut out);
    out
}

pub fn symmetrize(a: &mut Tensor) {
    let n = a.rows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.at(i, j) + a.at(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
}

/// Inverse and log-determinant of a symmetric positive-definite matrix,
/// factorised under the jitter protocol.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub chol: Tensor,
    pub jitter: f64,
}

impl SpdFactor {
    pub fn new(a: &Tensor) -> Result<Self> {
        let (chol, jitter) = cholesky_jittered(a)?;
        Ok(SpdFactor { chol, jitter })
    }

    pub fn dim(&self) -> usize {
        self.chol.rows()
    }

    pub fn inverse(&self) -> Tensor {
        chol_inverse(&self.chol)
    }

    pub fn logdet(&self) -> f64 {
        chol_logdet(&self.chol)
    }

    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        solve_chol(&self.chol, b)
    }
}
