//! Empirical eigenfunctions and eigenvalues of the feature-map integral
//! operator.
//!
//! With training features `Φ` (`p x n`, one column per point) and thin SVD
//! `Φ = U diag(s) Vᵀ`:
//!
//! - raw eigenvalues are `rho_k = s_k^2`;
//! - the `k`-th eigenfunction at any point is `e_k(x) = sqrt(n) u_kᵀ Φ(x) / s_k`,
//!   which has unit mean square over the training points;
//! - the empirical operator is `T[h](x_i) = (1/n) Σ_j Φ(x_i)ᵀΦ(x_j) h_j`, so
//!   `T[e_k] = (rho_k / n) e_k` on the training set.
//!
//! When `n < p` only `n` eigenpairs exist.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::svd_left;
use crate::matrix::DenseMatrix;

/// Relative factor in the default zero threshold `s_1 * 1e-12 * max(p, n)`.
pub const ZERO_THRESHOLD_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub p: usize,
    pub n: usize,
    /// Descending, length `min(p, n)`.
    pub singular_values: Vec<f64>,
    /// `s_k^2`.
    pub eigenvalues: Vec<f64>,
    /// `p x r`, column `k` is `u_k`.
    pub left_vectors: DenseMatrix,
    /// Indices with `s_k <= zero_threshold` are not evaluated.
    pub zero_threshold: f64,
}

impl EigenSystem {
    /// Number of eigenpairs above the zero threshold (they form a prefix).
    pub fn usable(&self) -> usize {
        self.singular_values
            .iter()
            .take_while(|&&s| s > self.zero_threshold)
            .count()
    }

    pub fn is_usable(&self, k: usize) -> bool {
        self.singular_values.get(k).is_some_and(|&s| s > self.zero_threshold)
    }

    /// `rho_k / rho_1`; all zeros when the spectrum vanishes.
    pub fn normalized_spectrum(&self) -> Vec<f64> {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return alloc::vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|r| r / top).collect()
    }

    /// `rho_k / n`: eigenvalues of the operator under the empirical measure.
    pub fn operator_eigenvalues(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.eigenvalues.iter().map(|r| r / n).collect()
    }
}

/// Diagonalizes the training feature matrix (`p x n`).
pub fn decompose(train_features: &DenseMatrix) -> Result<EigenSystem> {
    let (p, n) = train_features.shape();
    let (u, s) = svd_left(train_features)?;
    let s1 = s.first().copied().unwrap_or(0.0);
    let zero_threshold = s1 * ZERO_THRESHOLD_FACTOR * p.max(n) as f64;
    Ok(EigenSystem {
        p,
        n,
        eigenvalues: s.iter().map(|x| x * x).collect(),
        singular_values: s,
        left_vectors: u,
        zero_threshold,
    })
}

/// Evaluates the usable eigenfunctions at the columns of `features` (`p x m`),
/// returning an `r' x m` matrix whose row `k` holds `e_k`.
pub fn evaluate_eigenfunctions(sys: &EigenSystem, features: &DenseMatrix) -> Result<DenseMatrix> {
    if features.rows() != sys.p {
        return Err(Error::DimensionMismatch {
            context: "feature width of evaluation points",
            expected: sys.p,
            found: features.rows(),
        });
    }
    let r = sys.usable();
    let sqrt_n = libm::sqrt(sys.n as f64);
    // Uᵣᵀ Φ with each row scaled by sqrt(n) / s_k.
    let mut ut = DenseMatrix::zeros(r, sys.p);
    for k in 0..r {
        let scale = sqrt_n / sys.singular_values[k];
        for i in 0..sys.p {
            ut[(k, i)] = sys.left_vectors[(i, k)] * scale;
        }
    }
    ut.matmul(features)
}

/// Applies the empirical integral operator to function values `h` on the
/// training points.
pub fn apply_operator(train_features: &DenseMatrix, h: &[f64]) -> Result<Vec<f64>> {
    let n = train_features.cols();
    if h.len() != n {
        return Err(Error::DimensionMismatch {
            context: "function values vs training points",
            expected: n,
            found: h.len(),
        });
    }
    // T h = (1/n) Φᵀ (Φ h)
    let g = train_features.mul_vec(h)?;
    let mut out = train_features.transpose_mul_vec(&g)?;
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}
