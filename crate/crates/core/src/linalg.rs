//! Thin SVD and row orthonormalization.
//!
//! The SVD reduces the long dimension with a Householder LQ factorization and
//! then runs one-sided (Hestenes) Jacobi on the square triangular factor.
//! Jacobi gives singular values with high relative accuracy and orthonormal
//! factors to near machine precision, and it is fully sequential, so results
//! are bit-reproducible.
//!
//! Output conventions:
//! - singular values are non-negative and sorted descending;
//! - each column of `U` has its largest-magnitude entry non-negative (ties go
//!   to the lowest index), with the matching column of `V` flipped alongside;
//! - exactly equal singular values are ordered by the lexicographic order of
//!   their sign-fixed `U` columns.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::vector::{axpy, dot, norm};

const MAX_SWEEPS: usize = 80;

/// Rows whose residual norm, relative to their original norm, falls below this
/// are treated as linearly dependent by [`qr_orthonormalize`].
pub const DROP_TOLERANCE: f64 = 1e-10;

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `p x r` with orthonormal columns.
    pub u: DenseMatrix,
    /// Length `r = min(p, n)`, descending.
    pub s: Vec<f64>,
    /// `n x r` with orthonormal columns.
    pub v: DenseMatrix,
}

impl Svd {
    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.mul_transpose(&self.v).expect("factor shapes agree")
    }
}

/// Computes the thin SVD of a `p x n` matrix, `r = min(p, n)`.
pub fn svd_thin(m: &DenseMatrix) -> Result<Svd> {
    let (u, s, v) = svd_parts(m, true)?;
    Ok(Svd {
        u,
        s,
        v: v.expect("requested"),
    })
}

/// Left singular vectors and singular values only. Skips forming `V` when
/// `p <= n`, which is the expensive half for wide feature matrices.
pub fn svd_left(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let (u, s, _) = svd_parts(m, false)?;
    Ok((u, s))
}

fn svd_parts(m: &DenseMatrix, want_v: bool) -> Result<(DenseMatrix, Vec<f64>, Option<DenseMatrix>)> {
    // DenseMatrix construction already guarantees finiteness; this guards
    // matrices assembled internally.
    if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
        let cols = m.cols().max(1);
        return Err(Error::NonFinite {
            row: pos / cols,
            col: pos % cols,
        });
    }
    let (p, n) = m.shape();
    let r = p.min(n);
    if r == 0 {
        return Ok((
            DenseMatrix::zeros(p, 0),
            Vec::new(),
            want_v.then(|| DenseMatrix::zeros(n, 0)),
        ));
    }

    let (mut u, mut s, mut v) = if p <= n {
        let wide = wide_svd(m, want_v)?;
        (wide.left, wide.s, wide.right)
    } else {
        // SVD of the transpose, roles swapped: Mᵀ = U' S V'ᵀ  =>  M = V' S U'ᵀ.
        let wide = wide_svd(&m.transpose(), true)?;
        (wide.right.expect("requested"), wide.s, Some(wide.left))
    };

    fix_signs(&mut u, v.as_mut());
    let order = descending_order(&u, &s);
    u = u.select_columns(&order);
    s = order.iter().map(|&j| s[j]).collect();
    v = v.map(|v| v.select_columns(&order));
    Ok((u, s, if want_v { v } else { None }))
}

struct WideSvd {
    /// `rows x rows`
    left: DenseMatrix,
    s: Vec<f64>,
    /// `cols x rows`
    right: Option<DenseMatrix>,
}

/// SVD of a `p x n` matrix with `p <= n`. Singular values are unsorted.
fn wide_svd(a: &DenseMatrix, want_right: bool) -> Result<WideSvd> {
    let (p, n) = a.shape();
    let lq = Lq::factor(a);

    // Column-major copy of L: cols[j] is column j of the p x p factor.
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|i| lq.l(i, j)).collect()).collect();
    let mut rot: Option<Vec<Vec<f64>>> = want_right.then(|| {
        (0..p)
            .map(|j| {
                let mut e = vec![0.0; p];
                e[j] = 1.0;
                e
            })
            .collect()
    });
    jacobi_orthogonalize(&mut cols, rot.as_deref_mut())?;

    let mut s: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let tiny = libm::sqrt(f64::MIN_POSITIVE);
    let mut left = DenseMatrix::zeros(p, p);
    let mut missing = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        if s[j] <= tiny {
            s[j] = 0.0;
            missing.push(j);
            continue;
        }
        let inv = 1.0 / s[j];
        for i in 0..p {
            left[(i, j)] = c[i] * inv;
        }
    }
    complete_basis(&mut left, &missing);

    let right = rot.map(|rot| {
        // V = Qᵀ J = H_0 H_1 ... H_{p-1} [J; 0]
        let mut y = DenseMatrix::zeros(n, p);
        for (j, col) in rot.iter().enumerate() {
            for i in 0..p {
                y[(i, j)] = col[i];
            }
        }
        lq.apply_q_transpose(&mut y);
        y
    });

    Ok(WideSvd { left, s, right })
}

/// Householder LQ factorization `A = [L 0] H_{p-1} ... H_0` of a wide matrix.
struct Lq {
    /// Reduced matrix; the lower triangle of the leading `p x p` block is `L`.
    work: DenseMatrix,
    /// Householder vectors (acting on coordinates `k..n`) and their scale.
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Lq {
    fn factor(a: &DenseMatrix) -> Self {
        let (p, n) = a.shape();
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(p);
        for k in 0..p {
            let x = &work.row(k)[k..];
            let xnorm = norm(x);
            if xnorm == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vv = dot(&v, &v);
            if vv == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let beta = 2.0 / vv;
            for r in k..p {
                let row = &mut work.row_mut(r)[k..n];
                let w = beta * dot(&v, row);
                axpy(-w, &v, row);
            }
            // Clean exact zeros to the right of the diagonal.
            let row = work.row_mut(k);
            row[k] = alpha;
            row[k + 1..].iter_mut().for_each(|x| *x = 0.0);
            reflectors.push((v, beta));
        }
        Self { work, reflectors }
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.work[(i, j)]
        } else {
            0.0
        }
    }

    /// Overwrites `y` (n x q) with `H_0 H_1 ... H_{p-1} y`.
    fn apply_q_transpose(&self, y: &mut DenseMatrix) {
        let q = y.cols();
        let mut w = vec![0.0; q];
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            w.iter_mut().for_each(|x| *x = 0.0);
            for (t, &vt) in v.iter().enumerate() {
                if vt != 0.0 {
                    axpy(vt, y.row(k + t), &mut w);
                }
            }
            for (t, &vt) in v.iter().enumerate() {
                if vt != 0.0 {
                    axpy(-beta * vt, &w, y.row_mut(k + t));
                }
            }
        }
    }
}

/// One-sided Jacobi: rotates the columns until they are mutually orthogonal.
/// Rotations are accumulated into `rot` when given.
fn jacobi_orthogonalize(cols: &mut [Vec<f64>], mut rot: Option<&mut [Vec<f64>]>) -> Result<()> {
    let m = cols.len();
    if m < 2 {
        return Ok(());
    }
    let len = cols[0].len();
    let tol = f64::EPSILON * (len.max(m) as f64);
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Columns below rounding level of the whole matrix are numerically zero;
    // their rotation angles are noise and would never settle.
    let frob_sq: f64 = norms.iter().sum();
    let negligible = f64::EPSILON * f64::EPSILON * frob_sq;

    let mut worst = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0_f64;
        for i in 0..m - 1 {
            for j in i + 1..m {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let (ci, cj) = pair_mut(cols, i, j);
                let gamma = dot(ci, cj);
                // separate roots: alpha * beta underflows for near-zero columns
                let ratio = gamma.abs() / (libm::sqrt(alpha) * libm::sqrt(beta));
                if !ratio.is_finite() || ratio <= tol {
                    continue;
                }
                worst = worst.max(ratio);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(ci, cj, c, s);
                norms[i] = dot(ci, ci);
                norms[j] = dot(cj, cj);
                if let Some(rot) = rot.as_deref_mut() {
                    let (ri, rj) = pair_mut(rot, i, j);
                    rotate(ri, rj, c, s);
                }
            }
        }
        if !rotated {
            for (c, &nc) in cols.iter_mut().zip(&norms) {
                if nc <= negligible {
                    c.iter_mut().for_each(|x| *x = 0.0);
                }
            }
            return Ok(());
        }
    }
    Err(Error::NoConvergence {
        sweeps: MAX_SWEEPS,
        residual: worst,
    })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    debug_assert!(i < j);
    let (head, tail) = v.split_at_mut(j);
    (&mut head[i], &mut tail[0])
}

/// Fills the listed (zero) columns of `q` with unit vectors orthogonal to all
/// other columns, drawn from the standard basis by largest residual.
fn complete_basis(q: &mut DenseMatrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let p = q.rows();
    let mut basis: Vec<Vec<f64>> = (0..q.cols())
        .filter(|j| !missing.contains(j))
        .map(|j| q.column(j))
        .collect();
    for &j in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..p {
            let mut cand = vec![0.0; p];
            cand[e] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(b, &cand);
                    axpy(-proj, b, &mut cand);
                }
            }
            let nrm = norm(&cand);
            if best.as_ref().map_or(true, |(bn, _)| nrm > *bn + 1e-12) {
                best = Some((nrm, cand));
            }
        }
        let (nrm, mut cand) = best.expect("p >= 1");
        cand.iter_mut().for_each(|x| *x /= nrm);
        for i in 0..p {
            q[(i, j)] = cand[i];
        }
        basis.push(cand);
    }
}

/// Index of the largest-magnitude entry; ties go to the lowest index.
fn dominant_index(col: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in col.enumerate() {
        if best.map_or(true, |(_, b)| x.abs() > b) {
            best = Some((i, x.abs()));
        }
    }
    best.map(|(i, _)| i)
}

fn fix_signs(u: &mut DenseMatrix, mut v: Option<&mut DenseMatrix>) {
    for j in 0..u.cols() {
        let Some(i) = dominant_index((0..u.rows()).map(|i| u[(i, j)])) else {
            continue;
        };
        if u[(i, j)] < 0.0 {
            for r in 0..u.rows() {
                u[(r, j)] = -u[(r, j)];
            }
            if let Some(v) = v.as_deref_mut() {
                for r in 0..v.rows() {
                    v[(r, j)] = -v[(r, j)];
                }
            }
        }
    }
}

fn descending_order(u: &DenseMatrix, s: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| match s[b].partial_cmp(&s[a]).unwrap_or(Ordering::Equal) {
        Ordering::Equal => {
            for i in 0..u.rows() {
                match u[(i, a)].partial_cmp(&u[(i, b)]).unwrap_or(Ordering::Equal) {
                    Ordering::Equal => continue,
                    other => return other,
                }
            }
            Ordering::Equal
        }
        other => other,
    });
    order
}

/// Result of [`qr_orthonormalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalRows {
    /// `k' x n` with orthonormal rows.
    pub rows: DenseMatrix,
    /// Input index of each output row.
    pub kept: Vec<usize>,
    /// Input rows that were linearly dependent on earlier rows.
    pub dropped: Vec<usize>,
}

/// Orthonormalizes the rows of a `k x n` matrix in order (Gram-Schmidt with
/// one reorthogonalization pass), so that for every prefix the span of the
/// output rows equals the span of the corresponding independent input rows.
/// Earlier rows are never modified by later ones.
pub fn qr_orthonormalize(rows: &DenseMatrix) -> Result<OrthonormalRows> {
    if rows.rows() > rows.cols() {
        return Err(Error::DimensionMismatch {
            context: "qr_orthonormalize needs rows <= columns",
            expected: rows.cols(),
            found: rows.rows(),
        });
    }
    Ok(orthonormalize_rows(rows, DROP_TOLERANCE))
}

/// Same as [`qr_orthonormalize`] without the `k <= n` precondition; surplus
/// rows are necessarily dropped.
pub(crate) fn orthonormalize_rows(rows: &DenseMatrix, drop_tol: f64) -> OrthonormalRows {
    let n = rows.cols();
    let mut out: Vec<f64> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut basis_len = 0;
    for (idx, row) in rows.row_iter().enumerate() {
        let original = norm(row);
        if original == 0.0 || basis_len == n {
            dropped.push(idx);
            continue;
        }
        let mut r = row.to_vec();
        for _ in 0..2 {
            for b in out.chunks_exact(n) {
                let proj = dot(b, &r);
                axpy(-proj, b, &mut r);
            }
        }
        let residual = norm(&r);
        if residual <= drop_tol * original {
            dropped.push(idx);
            continue;
        }
        r.iter_mut().for_each(|x| *x /= residual);
        out.extend_from_slice(&r);
        kept.push(idx);
        basis_len += 1;
    }
    OrthonormalRows {
        rows: DenseMatrix::from_vec_unchecked(kept.len(), n, out),
        kept,
        dropped,
    }
}

/// Number of singular values above `rel_tol * s_max`.
pub fn numerical_rank(s: &[f64], rel_tol: f64) -> usize {
    let smax = s.iter().fold(0.0_f64, |m, &x| m.max(x));
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}
