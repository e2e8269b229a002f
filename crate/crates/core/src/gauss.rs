//! Small dense Gaussian densities `amp·N(r; 0, C)` and their gradients with
//! respect to the offset `r`, the covariance `C` and the amplitude.
//!
//! Shared by the kernel, the convolved cross-covariances and the prior
//! pair terms, which differ only in how `r` and `C` are assembled.

use crate::error::Result;
use crate::numerics::linalg;
use crate::numerics::special::LN_2PI;
use crate::numerics::tensor::Tensor;

pub(crate) struct Density {
    pub d: usize,
    pub cinv: Vec<f64>,
    /// `amp·(2π)^{-d/2}·det(C)^{-1/2}`.
    pub norm: f64,
}

impl Density {
    pub fn new(cov: &[f64], d: usize, amp: f64) -> Result<Self> {
        let c = Tensor::from_shape(&[d, d], cov.to_vec());
        let l = linalg::cholesky(&c)?;
        let logdet = linalg::chol_logdet(&l);
        let cinv = linalg::chol_inverse(&l).into_data();
        let norm = amp * (-0.5 * (d as f64 * LN_2PI + logdet)).exp();
        Ok(Density { d, cinv, norm })
    }

    #[inline]
    pub fn quad(&self, r: &[f64]) -> f64 {
        let d = self.d;
        let mut q = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.cinv[i * d + j] * r[j];
            }
            q += r[i] * s;
        }
        q
    }

    #[inline]
    pub fn eval(&self, r: &[f64]) -> f64 {
        self.norm * (-0.5 * self.quad(r)).exp()
    }
}

/// Running sums `S0 = Σ g·e`, `s1 = Σ g·e·r`, `S2 = Σ g·e·r·rᵀ` over the
/// entries of one density block, from which all parameter gradients follow.
pub(crate) struct Moments {
    pub d: usize,
    pub s0: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl Moments {
    pub fn new(d: usize) -> Self {
        Moments { d, s0: 0.0, s1: vec![0.0; d], s2: vec![0.0; d * d] }
    }

    #[inline]
    pub fn add(&mut self, ge: f64, r: &[f64]) {
        let d = self.d;
        self.s0 += ge;
        for i in 0..d {
            let gi = ge * r[i];
            self.s1[i] += gi;
            for j in 0..d {
                self.s2[i * d + j] += gi * r[j];
            }
        }
    }

    /// Gradient with respect to the offset `r` (summed over the block).
    pub fn offset_grad(&self, dens: &Density) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|i| -(0..d).map(|j| dens.cinv[i * d + j] * self.s1[j]).sum::<f64>()).collect()
    }

    /// Gradient with respect to a symmetric covariance:
    /// `½C⁻¹S2C⁻¹ − ½S0·C⁻¹`.
    pub fn cov_grad(&self, dens: &Density) -> Vec<f64> {
        let d = self.d;
        let ci = &dens.cinv;
        let mut tmp = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                tmp[i * d + j] = (0..d).map(|k| ci[i * d + k] * self.s2[k * d + j]).sum();
            }
        }
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let v: f64 = (0..d).map(|k| tmp[i * d + k] * ci[k * d + j]).sum();
                out[i * d + j] = 0.5 * v - 0.5 * self.s0 * ci[i * d + j];
            }
        }
        out
    }
}
