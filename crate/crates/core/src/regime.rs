//! Minimum-projection (MP) operator, centered kernel alignment and the
//! minimal/extended feature regime classification.
//!
//! The MP operator for learned functions `f̂` on `n` points has exactly two
//! nontrivial eigenspaces, the constant function and the learned-function
//! span:
//!
//! ```text
//! K_MP = a1 11ᵀ/n + a2 Q Qᵀ,    Q = orthonormal basis of span(f̂_1..f̂_C)
//! ```
//!
//! The empirical feature kernel is `K = ΦᵀΦ` on the training split and
//! `kappa = 1 - CKA(K, K_MP)`. A snapshot is in the minimal feature (MF)
//! regime when `kappa < epsilon`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{class_counts, encode_target, require_balanced, TargetEncoding};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, orthonormalize_rows, svd_thin};
use crate::matrix::DenseMatrix;
use crate::projections::{effective_dimension, RANK_TOLERANCE};
use crate::spectral::decompose;
use crate::vector::dot;

pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    /// Minimal feature regime, `kappa < epsilon`.
    MinimalFeature,
    /// Extended feature regime.
    ExtendedFeature,
    /// Feature map frozen across training: only the final layer learned.
    CoefficientLearning,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::MinimalFeature => "MF",
            Verdict::ExtendedFeature => "EF",
            Verdict::CoefficientLearning => "coefficient-learning",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub kappa_cka: f64,
    pub verdict: Verdict,
    pub epsilon: f64,
    /// `rho_C / rho_{C+1}`; `None` when `rho_{C+1}` is numerically zero or
    /// does not exist.
    pub eigengap: Option<f64>,
    pub rank_limited: bool,
    /// `max / min` over `rho_2..rho_C` (1 when `C = 2`).
    pub plateau_flatness: f64,
    /// `1 + D_eff(rho_2..)`.
    pub d_eff_rho: f64,
    pub num_classes: usize,
}

/// Orthonormal rows spanning the learned functions (`C x n`), refusing
/// rank-deficient or single-output inputs.
pub fn learned_basis(learned: &DenseMatrix) -> Result<DenseMatrix> {
    let c = learned.rows();
    if c < 2 {
        return Err(Error::Degenerate(format!(
            "the MP operator needs at least 2 learned functions, got {c}"
        )));
    }
    let svd = svd_thin(&learned.transpose())?;
    let rank = numerical_rank(&svd.s, RANK_TOLERANCE);
    if rank < c {
        return Err(Error::Degenerate(format!(
            "learned functions have numerical rank {rank}, expected {c}"
        )));
    }
    // Row-ordered Gram-Schmidt keeps the basis tied to f̂'s own rows.
    let ortho = orthonormalize_rows(learned, RANK_TOLERANCE);
    Ok(ortho.rows)
}

/// Feature representation `Ψ` of the MP kernel, `K_MP = ΨᵀΨ`:
/// row 0 is `sqrt(a1/n) 1ᵀ`, the rest are `sqrt(a2)` times the learned basis.
pub fn mp_features(learned: &DenseMatrix, a1: f64, a2: f64) -> Result<DenseMatrix> {
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::InvalidArgument(format!("a1 and a2 must be positive, got {a1}, {a2}")));
    }
    let basis = learned_basis(learned)?;
    let n = learned.cols();
    let mut psi = DenseMatrix::zeros(basis.rows() + 1, n);
    let c0 = libm::sqrt(a1 / n as f64);
    psi.row_mut(0).iter_mut().for_each(|x| *x = c0);
    let s2 = libm::sqrt(a2);
    for (k, b) in basis.row_iter().enumerate() {
        for (dst, src) in psi.row_mut(k + 1).iter_mut().zip(b) {
            *dst = s2 * src;
        }
    }
    Ok(psi)
}

/// `n x n` MP Gram matrix for the learned function values (`C x n`).
pub fn mp_gram(learned: &DenseMatrix, a1: f64, a2: f64) -> Result<DenseMatrix> {
    let psi = mp_features(learned, a1, a2)?;
    psi.transpose_mul(&psi)
}

/// Centered kernel alignment of two symmetric `n x n` Gram matrices.
pub fn cka(k: &DenseMatrix, l: &DenseMatrix) -> Result<f64> {
    let n = k.rows();
    if k.cols() != n || l.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "cka needs two square matrices of equal size",
            expected: n,
            found: l.rows(),
        });
    }
    let kc = center_gram(k);
    let lc = center_gram(l);
    let nk = kc.frobenius_norm();
    let nl = lc.frobenius_norm();
    if nk == 0.0 || nl == 0.0 {
        return Err(Error::Degenerate("centered Gram matrix is zero".into()));
    }
    // Tr(Kc Lc) = Σ_ij Kc_ij Lc_ji, and Lc is symmetric
    Ok(dot(kc.as_slice(), lc.as_slice()) / (nk * nl))
}

/// `H A H` with `H = I - 11ᵀ/n`.
fn center_gram(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let row_means = a.row_means();
    let col_means: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[(i, j)]).sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// CKA between the linear kernels `ΦᵀΦ` and `ΨᵀΨ` of two feature
/// representations of the same `n` points, without forming `n x n` matrices.
pub fn feature_cka(phi: &DenseMatrix, psi: &DenseMatrix) -> Result<f64> {
    if phi.cols() != psi.cols() {
        return Err(Error::DimensionMismatch {
            context: "feature_cka point counts",
            expected: phi.cols(),
            found: psi.cols(),
        });
    }
    let pc = phi.center_rows();
    let qc = psi.center_rows();
    // Tr(c(K) c(L)) = ‖Φc Ψcᵀ‖²,  ‖c(K)‖ = ‖Φc Φcᵀ‖
    let cross = pc.mul_transpose(&qc)?.frobenius_norm();
    let nk = self_kernel_norm(&pc);
    let nl = self_kernel_norm(&qc);
    if nk == 0.0 || nl == 0.0 {
        return Err(Error::Degenerate("centered kernel is zero".into()));
    }
    Ok(cross * cross / (nk * nl))
}

/// `‖ΦᵀΦ‖_F = ‖ΦΦᵀ‖_F`, using the smaller Gram.
fn self_kernel_norm(phi: &DenseMatrix) -> f64 {
    if phi.rows() <= phi.cols() {
        phi.gram_rows().frobenius_norm()
    } else {
        phi.transpose().gram_rows().frobenius_norm()
    }
}

/// Classifies one snapshot from its training features (`p x n`), learned
/// function values on the same points (`C x n`) and labels.
pub fn classify_regime(
    train_features: &DenseMatrix,
    learned: &DenseMatrix,
    labels: &[usize],
    epsilon: f64,
) -> Result<RegimeReport> {
    let c = learned.rows();
    let n = train_features.cols();
    if learned.cols() != n || labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "classify_regime point counts",
            expected: n,
            found: if learned.cols() != n { learned.cols() } else { labels.len() },
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    require_balanced(labels, c)?;

    let psi = mp_features(learned, 1.0, 1.0)?;
    let kappa = 1.0 - feature_cka(train_features, &psi)?;

    let sys = decompose(train_features)?;
    let rho = &sys.eigenvalues;
    let zero = sys.zero_threshold * sys.zero_threshold;
    let (eigengap, rank_limited) = match (rho.get(c - 1), rho.get(c)) {
        (Some(&rc), Some(&next)) if next > zero => (Some(rc / next), false),
        _ => (None, true),
    };
    let plateau: Vec<f64> = rho.iter().skip(1).take(c - 1).copied().collect();
    let plateau_flatness = match (
        plateau.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))),
        plateau.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x)))),
    ) {
        (Some(hi), Some(lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    };
    let d_eff_rho = if rho.iter().skip(1).any(|&r| r > 0.0) {
        effective_dimension(rho, true)?
    } else {
        1.0
    };

    Ok(RegimeReport {
        kappa_cka: kappa,
        verdict: if kappa < epsilon {
            Verdict::MinimalFeature
        } else {
            Verdict::ExtendedFeature
        },
        epsilon,
        eigengap,
        rank_limited,
        plateau_flatness,
        d_eff_rho,
        num_classes: c,
    })
}

/// Features whose empirical operator is exactly an MP operator.
///
/// Returns a `p x n` feature matrix and balanced labels (point `j` has class
/// `j % C`). The columns of `Φᵀ` span the constant vector plus the
/// zero-mean class-indicator space, with singular values `sqrt(n a1)` and
/// `sqrt(n a2)` (multiplicity `C - 1`), embedded in `R^p` by a random
/// orthonormal map.
pub fn synth_mp_features(
    classes: usize,
    n: usize,
    p: usize,
    a1: f64,
    a2: f64,
    seed: u64,
) -> Result<(DenseMatrix, Vec<usize>)> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if n == 0 || n % classes != 0 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} must be a positive multiple of C = {classes}"
        )));
    }
    if p < classes {
        return Err(Error::InvalidArgument(format!("p = {p} must be at least C = {classes}")));
    }
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::InvalidArgument("a1 and a2 must be positive".into()));
    }
    let labels: Vec<usize> = (0..n).map(|j| j % classes).collect();
    debug_assert!(class_counts(&labels, classes).iter().all(|&k| k == n / classes));

    // Orthonormal sample-space directions: 1/sqrt(n), then the indicator span
    // with the constant removed.
    let mut dirs = DenseMatrix::zeros(classes + 1, n);
    dirs.row_mut(0).iter_mut().for_each(|x| *x = 1.0);
    let ind = encode_target(&labels, classes, TargetEncoding::INDICATOR)?;
    for i in 0..classes {
        dirs.row_mut(i + 1).copy_from_slice(ind.row(i));
    }
    let sample_basis = orthonormalize_rows(&dirs, 1e-10);
    // One indicator is dependent on the constant plus the others.
    debug_assert_eq!(sample_basis.rows.rows(), classes);

    // Random orthonormal feature-space directions w_1..w_C in R^p.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DenseMatrix::from_fn(classes, p, |_, _| StandardNormal.sample(&mut rng));
    let feat_basis = orthonormalize_rows(&gauss, 1e-10);
    if feat_basis.rows.rows() != classes {
        return Err(Error::Degenerate("random embedding lost rank".into()));
    }

    let nf = n as f64;
    let sv: Vec<f64> = (0..classes)
        .map(|k| libm::sqrt(nf * if k == 0 { a1 } else { a2 }))
        .collect();
    // Φ = Σ_k sv_k w_k z_kᵀ
    let mut phi = DenseMatrix::zeros(p, n);
    for k in 0..classes {
        let w = feat_basis.rows.row(k);
        let z = sample_basis.rows.row(k);
        for (i, &wi) in w.iter().enumerate() {
            let coef = sv[k] * wi;
            if coef != 0.0 {
                crate::vector::axpy(coef, z, phi.row_mut(i));
            }
        }
    }
    Ok((phi, labels))
}

/// Indices of a deterministic subsample of `n_max` of `n` points (all points,
/// in order, when `n <= n_max`).
pub fn subsample_indices(n: usize, n_max: usize, seed: u64) -> Vec<usize> {
    if n <= n_max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, n_max).into_vec();
    idx.sort_unstable();
    idx
}

/// Class-stratified deterministic subsample keeping balance: takes the same
/// number of points from every class.
pub fn balanced_subsample_indices(labels: &[usize], classes: usize, n_max: usize, seed: u64) -> Vec<usize> {
    if labels.len() <= n_max {
        return (0..labels.len()).collect();
    }
    let per_class = n_max / classes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * classes);
    for c in 0..classes {
        let members: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        let take = per_class.min(members.len());
        let picked = rand::seq::index::sample(&mut rng, members.len(), take);
        out.extend(picked.iter().map(|i| members[i]));
    }
    out.sort_unstable();
    out
}
