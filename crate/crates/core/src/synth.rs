//! Gaussian random features with a known power-law spectrum, and the
//! accuracy metrics of the empirical eigen-decomposition against the truth.
//!
//! Row `k` (1-based) of the `p x n` feature matrix is i.i.d.
//! `sqrt(k^-alpha) N(0, 1)`, so the population operator has eigenvalues
//! `k^-alpha` with the standard basis `o_k` as eigenvectors.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::spectral::{decompose, EigenSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub p: usize,
    pub n: usize,
    /// Power-law exponent, `>= 0`.
    pub alpha: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need p >= 2 and n >= 2, got p = {}, n = {}",
                self.p, self.n
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `k^-alpha` for `k = 1..=p`.
    pub fn true_eigenvalues(&self) -> Vec<f64> {
        (1..=self.p).map(|k| libm::pow(k as f64, -self.alpha)).collect()
    }
}

pub fn sample_gaussian_features(spec: &SynthSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scales: Vec<f64> = spec.true_eigenvalues().iter().map(|r| libm::sqrt(*r)).collect();
    Ok(DenseMatrix::from_fn(spec.p, spec.n, |k, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scales[k] * z
    }))
}

/// `(rho_hat_k - rho_k)^2 / rho_k^2`, with `rho_hat` already divided by `n`.
pub fn eigenvalue_error(estimated: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "estimated vs true eigenvalues",
            expected: truth.len(),
            found: estimated.len(),
        });
    }
    if let Some(k) = truth.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(format!("true eigenvalue {k} must be positive")));
    }
    Ok(estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let d = (e - t) / t;
            d * d
        })
        .collect())
}

/// `1 - |u_kᵀ o_k|` for each column of `u` (`p x r`) against the standard
/// basis.
pub fn eigenfunction_error(u: &DenseMatrix) -> Result<Vec<f64>> {
    if u.cols() > u.rows() {
        return Err(Error::DimensionMismatch {
            context: "estimated vectors exceed the ambient dimension",
            expected: u.rows(),
            found: u.cols(),
        });
    }
    Ok((0..u.cols()).map(|k| 1.0 - u[(k, k)].abs()).collect())
}

/// `1 - (1/k) Σ_{i,j <= k} (u_iᵀ o_j)^2`: how much of the true leading
/// `k`-dimensional span the estimated leading `k` vectors miss.
pub fn function_space_error(u: &DenseMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > u.cols() || k > u.rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            u.cols().min(u.rows())
        )));
    }
    let mut s = 0.0;
    for j in 0..k {
        for i in 0..k {
            s += u[(j, i)] * u[(j, i)];
        }
    }
    Ok(1.0 - s / k as f64)
}

/// `function_space_error` for every `k = 1..=r`, in `O(r^2)`.
pub fn function_space_errors(u: &DenseMatrix) -> Vec<f64> {
    let r = u.cols().min(u.rows());
    let mut out = Vec::with_capacity(r);
    let mut s = 0.0;
    for k in 0..r {
        // grow the leading block by row k and column k
        for i in 0..=k {
            s += u[(k, i)] * u[(k, i)];
        }
        for j in 0..k {
            s += u[(j, k)] * u[(j, k)];
        }
        out.push(1.0 - s / (k + 1) as f64);
    }
    out
}

/// Per-k accuracy of one synthetic decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMetrics {
    pub spec: SynthSpec,
    pub true_eigenvalues: Vec<f64>,
    /// `s_k^2 / n`.
    pub estimated_eigenvalues: Vec<f64>,
    pub eigenvalue_error: Vec<f64>,
    pub eigenfunction_error: Vec<f64>,
    pub function_space_error: Vec<f64>,
}

impl SynthMetrics {
    pub fn len(&self) -> usize {
        self.estimated_eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimated_eigenvalues.is_empty()
    }
}

/// Samples, decomposes and scores. When `n < p` only `n` eigenpairs exist.
pub fn run_synth(spec: &SynthSpec) -> Result<SynthMetrics> {
    let phi = sample_gaussian_features(spec)?;
    let sys = decompose(&phi)?;
    metrics_from_system(spec, &sys)
}

pub fn metrics_from_system(spec: &SynthSpec, sys: &EigenSystem) -> Result<SynthMetrics> {
    let r = sys.eigenvalues.len();
    let truth: Vec<f64> = spec.true_eigenvalues().into_iter().take(r).collect();
    let est = sys.operator_eigenvalues();
    Ok(SynthMetrics {
        spec: *spec,
        eigenvalue_error: eigenvalue_error(&est, &truth)?,
        eigenfunction_error: eigenfunction_error(&sys.left_vectors)?,
        function_space_error: function_space_errors(&sys.left_vectors),
        true_eigenvalues: truth,
        estimated_eigenvalues: est,
    })
}

/// Ranks starting at 1, ties receiving their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman sample sizes",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 samples".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let m = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant sample has no rank correlation".into()));
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// Median of a non-empty slice (mean of the two middle values for even
/// lengths).
pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
