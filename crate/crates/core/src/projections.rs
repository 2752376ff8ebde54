//! Quality and utility projections of eigenfunctions onto the target and the
//! learned function spaces, and entropy-based effective dimensions.
//!
//! Inner products are uniform empirical averages over the points supplied
//! (the test split in normal use). For an eigenfunction `e_k` and a function
//! space `H` spanned by the rows of a `C x m` table,
//!
//! ```text
//! quality  Q*_k = <ê_k | P_H* ê_k> / C
//! utility  Q^_k = <ê_k | P_H^ ê_k> / dim(H^)
//! ```
//!
//! where `ê_k` is `e_k` normalized and `P_H` is the orthogonal projector onto
//! `H`. For mutually orthogonal rows (indicator targets) this equals
//! `Σ_i <ê_k | f̂_i>^2 / C` with each `f_i` normalized. The unsquared form is
//! used for utility as well as quality.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, orthonormalize_rows, svd_thin, DROP_TOLERANCE};
use crate::matrix::DenseMatrix;
use crate::vector::dot;

/// Cap on the number of leading features worth reporting; beyond this the
/// empirical eigenfunctions are too noisy to interpret.
pub const MAX_REPORTED_FEATURES: usize = 1000;

/// Relative singular-value cutoff used for `dim(H)`.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Total projection below which a profile counts as empty (`d_eff = 0`);
/// smaller values are rounding noise of the basis computation.
const NEGLIGIBLE_TOTAL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionProfile {
    /// `Q_k` per eigenfunction index (zero for rows removed by QR).
    pub per_feature: Vec<f64>,
    /// Running sum of `per_feature`.
    pub cumulative: Vec<f64>,
    /// Sum over all features.
    pub total: f64,
    /// `D_eff(per_feature)`, or 0 when the profile is identically zero.
    pub d_eff: f64,
    pub qr_corrected: bool,
    pub k_max_reported: usize,
    /// Dimension of the projected-onto space.
    pub subspace_dim: usize,
    /// Divisor applied to each `<ê_k | P ê_k>`.
    pub normalizer: f64,
    /// Eigenfunction rows dropped as dependent by the QR correction.
    pub dropped_rows: Vec<usize>,
}

/// `(Σ u_i v_i)^2 / (Σ u_i^2 Σ v_i^2)`.
pub fn normalized_inner_sq(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "normalized inner product",
            expected: u.len(),
            found: v.len(),
        });
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::Degenerate("normalized inner product of a zero vector".into()));
    }
    let uv = dot(u, v);
    Ok(((uv * uv) / (uu * vv)).clamp(0.0, 1.0))
}

/// Quality profile of eigenfunction values `e` (`r x m`) against target
/// values (`C x m`).
pub fn quality_profile(e: &DenseMatrix, target: &DenseMatrix, qr: bool) -> Result<ProjectionProfile> {
    check_inputs(e, target)?;
    let classes = target.rows();
    project(e, target, qr, |_| classes as f64)
}

/// Utility profile against the learned function values (`C x m`); the
/// divisor is the numerical rank of the learned functions.
pub fn utility_profile(e: &DenseMatrix, learned: &DenseMatrix, qr: bool) -> Result<ProjectionProfile> {
    check_inputs(e, learned)?;
    project(e, learned, qr, |dim| dim as f64)
}

fn check_inputs(e: &DenseMatrix, f: &DenseMatrix) -> Result<()> {
    if f.rows() == 0 {
        return Err(Error::InvalidArgument("function table has no rows (C = 0)".into()));
    }
    if e.cols() != f.cols() {
        return Err(Error::DimensionMismatch {
            context: "evaluation points of eigenfunctions vs functions",
            expected: f.cols(),
            found: e.cols(),
        });
    }
    Ok(())
}

/// Orthonormal basis (rows) of the row space of `f`, by numerical rank.
pub fn function_space_basis(f: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = svd_thin(&f.transpose())?;
    let rank = numerical_rank(&svd.s, RANK_TOLERANCE);
    let cols: Vec<usize> = (0..rank).collect();
    Ok(svd.u.select_columns(&cols).transpose())
}

fn project(
    e: &DenseMatrix,
    f: &DenseMatrix,
    qr: bool,
    normalizer: impl Fn(usize) -> f64,
) -> Result<ProjectionProfile> {
    let basis = function_space_basis(f)?;
    let dim = basis.rows();
    if dim == 0 {
        return Err(Error::Degenerate("function values are identically zero".into()));
    }
    let norm = normalizer(dim);
    let r = e.rows();

    let mut per_feature = alloc::vec![0.0; r];
    let mut dropped_rows = Vec::new();
    if qr {
        let ortho = orthonormalize_rows(e, DROP_TOLERANCE);
        for (row, &k) in ortho.rows.row_iter().zip(&ortho.kept) {
            per_feature[k] = captured(row, &basis) / norm;
        }
        dropped_rows = ortho.dropped;
    } else {
        for (k, row) in e.row_iter().enumerate() {
            let rr = dot(row, row);
            if rr > 0.0 {
                per_feature[k] = captured(row, &basis) / rr / norm;
            }
        }
    }

    let mut cumulative = Vec::with_capacity(r);
    let mut acc = 0.0;
    for q in &per_feature {
        acc += q;
        cumulative.push(acc);
    }
    let d_eff = if acc > NEGLIGIBLE_TOTAL {
        effective_dimension(&per_feature, false)?
    } else {
        0.0
    };
    Ok(ProjectionProfile {
        per_feature,
        cumulative,
        total: acc,
        d_eff,
        qr_corrected: qr,
        k_max_reported: r.min(MAX_REPORTED_FEATURES),
        subspace_dim: dim,
        normalizer: norm,
        dropped_rows,
    })
}

/// `‖P v‖^2` for the projector onto the orthonormal rows of `basis`.
fn captured(v: &[f64], basis: &DenseMatrix) -> f64 {
    basis.row_iter().map(|b| {
        let c = dot(v, b);
        c * c
    }).sum()
}

/// Exponential of the Shannon entropy of `a / Σa`. With `skip_first`, the
/// first entry is excluded and one dimension is added back:
/// `1 + D_eff(a[1..])`.
pub fn effective_dimension(a: &[f64], skip_first: bool) -> Result<f64> {
    if let Some(i) = a.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "effective dimension needs finite non-negative weights; entry {i} is {}",
            a[i]
        )));
    }
    if skip_first {
        return Ok(1.0 + effective_dimension(a.get(1..).unwrap_or(&[]), false)?);
    }
    let total: f64 = a.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("effective dimension of an all-zero vector".into()));
    }
    let entropy: f64 = a
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / total;
            -p * libm::log(p)
        })
        .sum();
    Ok(libm::exp(entropy))
}

/// `|<e_1 | 1>|` with both normalized: `|mean(e_1)| / rms(e_1)`.
pub fn constant_alignment(e: &DenseMatrix) -> Result<f64> {
    if e.rows() == 0 {
        return Err(Error::InvalidArgument("no eigenfunctions to align".into()));
    }
    let ones = alloc::vec![1.0; e.cols()];
    Ok(libm::sqrt(normalized_inner_sq(e.row(0), &ones)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_target, TargetEncoding};
    use alloc::vec;

    #[test]
    fn inner_product_cases() {
        assert!((normalized_inner_sq(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(normalized_inner_sq(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(normalized_inner_sq(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(normalized_inner_sq(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn effective_dimension_cases() {
        assert!((effective_dimension(&[1.0; 4], false).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(effective_dimension(&[5.0, 0.0, 0.0], false).unwrap(), 1.0);
        assert!((effective_dimension(&[4.0, 1.0, 1.0, 1.0, 1.0], true).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(effective_dimension(&[0.0, 0.0], false), Err(Error::Degenerate(_))));
        assert!(effective_dimension(&[1.0, -1.0], false).is_err());
    }

    #[test]
    fn constant_alignment_cases() {
        let c = DenseMatrix::from_rows(&[[2.0, 2.0, 2.0]]).unwrap();
        assert!((constant_alignment(&c).unwrap() - 1.0).abs() < 1e-15);
        let z = DenseMatrix::from_rows(&[[1.0, -1.0, 0.0]]).unwrap();
        assert_eq!(constant_alignment(&z).unwrap(), 0.0);
        let e = DenseMatrix::from_rows(&[[1.0, 1.0, 1.0, 0.0]]).unwrap();
        assert!((constant_alignment(&e).unwrap() - libm::sqrt(0.75)).abs() < 1e-15);
        assert!(constant_alignment(&DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn perfect_single_feature_alignment() {
        // C = 2 classes on 4 points; row 0 is f_1, row 1 is orthogonal to span(f).
        let labels = [0, 0, 1, 1];
        let f = encode_target(&labels, 2, TargetEncoding::INDICATOR).unwrap();
        let e = DenseMatrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]]).unwrap();
        for qr in [false, true] {
            let prof = quality_profile(&e, &f, qr).unwrap();
            assert!((prof.per_feature[0] - 0.5).abs() < 1e-15);
            assert!(prof.per_feature[1].abs() < 1e-15 && prof.per_feature[2].abs() < 1e-15);
            assert_eq!(prof.cumulative, vec![prof.per_feature[0]; 3]);
        }
    }

    #[test]
    fn orthogonal_rows_give_zero_profile() {
        let f = encode_target(&[0, 0, 1, 1], 2, TargetEncoding::INDICATOR).unwrap();
        let e = DenseMatrix::from_rows(&[[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]]).unwrap();
        let prof = quality_profile(&e, &f, true).unwrap();
        assert!(prof.per_feature.iter().all(|q| q.abs() < 1e-15));
        assert_eq!(prof.d_eff, 0.0);
    }

    #[test]
    fn errors() {
        let e = DenseMatrix::zeros(2, 4);
        assert!(quality_profile(&e, &DenseMatrix::zeros(0, 4), true).is_err());
        assert!(quality_profile(&e, &DenseMatrix::zeros(2, 3), true).is_err());
    }

    #[test]
    fn qr_pathology_fixture() {
        // Two nearly parallel eigenfunction rows, both aligned with the single
        // target: without QR each counts fully and the cumulative exceeds 1.
        let f = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let e = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.1], [1.0, 0.0, 0.0, 0.0]]).unwrap();
        let raw = quality_profile(&e, &f, false).unwrap();
        let fixed = quality_profile(&e, &f, true).unwrap();
        assert!(raw.total > 1.0);
        assert!(fixed.total <= 1.0 + 1e-6);
        assert!(fixed.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn utility_uses_numerical_rank() {
        // Learned functions with a duplicated row: rank 1, divisor 1.
        let learned = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        let e = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let prof = utility_profile(&e, &learned, true).unwrap();
        assert_eq!(prof.subspace_dim, 1);
        assert!((prof.per_feature[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centered_targets_respect_quality_range() {
        let labels = [0, 1, 2, 0, 1, 2];
        let f = encode_target(&labels, 3, TargetEncoding::centered(3.0)).unwrap();
        let e = f.clone();
        let prof = quality_profile(&e, &f, false).unwrap();
        assert!(prof.per_feature.iter().all(|&q| q <= 1.0 / 3.0 + 1e-9));
    }
}
