//! Neural-collapse measurements and numeric checks of how an MP operator
//! forces them.
//!
//! Class statistics use the empirical normalizations
//!
//! ```text
//! mu_i  = mean of Φ(x) over class i
//! mu_g  = (1/C) Σ_i mu_i
//! Σ_W   = (1/n) Σ_x (Φ(x) - mu_y(x)) (Φ(x) - mu_y(x))ᵀ
//! Σ_B   = (1/C) Σ_i (mu_i - mu_g) (mu_i - mu_g)ᵀ
//! ```
//!
//! The `p x p` covariances are only materialized on request; the NC1 trace is
//! computed from `p x n` and `p x C` factors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{class_counts, require_balanced, validate_labels, LastLayerParams};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::spectral::apply_operator;
use crate::vector::{dot, norm};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    /// `C x p`, row `i` is `mu_i`.
    pub class_means: DenseMatrix,
    pub global_mean: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// `p x n`, column `x` is `Φ(x) - mu_y(x)`.
    within_deviations: DenseMatrix,
    /// `C x p`, row `i` is `mu_i - mu_g`.
    between_deviations: DenseMatrix,
}

impl ClassStatistics {
    pub fn num_classes(&self) -> usize {
        self.class_means.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_means.cols()
    }

    /// `mu_i - mu_g` as rows.
    pub fn centered_means(&self) -> &DenseMatrix {
        &self.between_deviations
    }

    /// `Σ_W`, `p x p`.
    pub fn within_cov(&self) -> DenseMatrix {
        let n = self.within_deviations.cols().max(1) as f64;
        self.within_deviations.gram_rows().scaled(1.0 / n)
    }

    /// `Σ_B`, `p x p`.
    pub fn between_cov(&self) -> DenseMatrix {
        let c = self.num_classes() as f64;
        let m = &self.between_deviations;
        m.transpose_mul(m).expect("shapes agree").scaled(1.0 / c)
    }

    /// `Tr(Σ_W Σ_B) = ‖Dᵀ M‖²_F / (n C)` with `D` the within deviations and
    /// `M` the centered means as columns.
    pub fn within_between_trace(&self) -> f64 {
        let n = self.within_deviations.cols() as f64;
        let c = self.num_classes() as f64;
        let dm = self
            .between_deviations
            .matmul(&self.within_deviations)
            .expect("shapes agree");
        let f = dm.frobenius_norm();
        f * f / (n * c)
    }

    /// `Tr(Σ_B Σ_Bᵀ) = ‖M Mᵀ‖²_F / C²`.
    pub fn between_trace_sq(&self) -> f64 {
        let c = self.num_classes() as f64;
        let g = self.between_deviations.gram_rows().frobenius_norm();
        g * g / (c * c)
    }
}

/// Class means and scatter of features (`p x n`) under `labels` in `[0, C)`.
pub fn class_statistics(features: &DenseMatrix, labels: &[usize], classes: usize) -> Result<ClassStatistics> {
    let (p, n) = features.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "label count vs feature columns",
            expected: n,
            found: labels.len(),
        });
    }
    validate_labels(labels, classes)?;
    let counts = class_counts(labels, classes);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("class {empty} has no points")));
    }

    let mut means = DenseMatrix::zeros(classes, p);
    for i in 0..p {
        let row = features.row(i);
        for (&v, &l) in row.iter().zip(labels) {
            means[(l, i)] += v;
        }
    }
    for c in 0..classes {
        let inv = 1.0 / counts[c] as f64;
        means.row_mut(c).iter_mut().for_each(|x| *x *= inv);
    }
    let mut global = vec![0.0; p];
    for mu in means.row_iter() {
        global.iter_mut().zip(mu).for_each(|(g, m)| *g += m);
    }
    global.iter_mut().for_each(|g| *g /= classes as f64);

    let within = DenseMatrix::from_fn(p, n, |i, j| features[(i, j)] - means[(labels[j], i)]);
    let between = DenseMatrix::from_fn(classes, p, |c, i| means[(c, i)] - global[i]);
    Ok(ClassStatistics {
        class_means: means,
        global_mean: global,
        class_counts: counts,
        within_deviations: within,
        between_deviations: between,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nc1Normalization {
    /// `Tr(Σ_W Σ_B)`.
    #[default]
    Raw,
    /// `Tr(Σ_W Σ_B) / Tr(Σ_B Σ_Bᵀ)`.
    BetweenScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcReport {
    pub nc1: f64,
    pub nc1_normalization: Nc1Normalization,
    /// Maximum over class pairs whose centered means are both nonzero.
    pub nc2_deviation: f64,
    /// Classes with `mu_i = mu_g` (or `w_i = 0` for NC3).
    pub degenerate_classes: Vec<usize>,
    pub nc3_deviation: Option<f64>,
    pub nc4_agreement: Option<f64>,
}

/// Relative norm below which a centered mean or weight row is degenerate.
const DEGENERATE_TOL: f64 = 1e-12;

fn unit_rows(m: &DenseMatrix) -> Vec<Option<Vec<f64>>> {
    let scale = m.row_iter().map(norm).fold(0.0, f64::max);
    m.row_iter()
        .map(|r| {
            let nr = norm(r);
            if nr <= DEGENERATE_TOL * scale.max(f64::MIN_POSITIVE) || nr == 0.0 {
                None
            } else {
                Some(r.iter().map(|x| x / nr).collect())
            }
        })
        .collect()
}

/// `max_{i,j} |cos(mu_i - mu_g, mu_j - mu_g) - (C δ_ij - 1)/(C - 1)|`.
pub fn nc2_deviation(stats: &ClassStatistics) -> Result<(f64, Vec<usize>)> {
    let c = stats.num_classes();
    if c < 2 {
        return Err(Error::Degenerate("simplex comparison needs at least 2 classes".into()));
    }
    let units = unit_rows(stats.centered_means());
    let degenerate: Vec<usize> = (0..c).filter(|&i| units[i].is_none()).collect();
    let cf = c as f64;
    let mut worst = 0.0_f64;
    for i in 0..c {
        for j in 0..c {
            if let (Some(a), Some(b)) = (&units[i], &units[j]) {
                let ideal = if i == j { 1.0 } else { -1.0 / (cf - 1.0) };
                worst = worst.max((dot(a, b) - ideal).abs());
            }
        }
    }
    Ok((worst, degenerate))
}

pub fn nc_report(
    features: &DenseMatrix,
    labels: &[usize],
    classes: usize,
    last_layer: Option<&LastLayerParams>,
    normalization: Nc1Normalization,
) -> Result<NcReport> {
    require_balanced(labels, classes)?;
    let stats = class_statistics(features, labels, classes)?;
    let raw = stats.within_between_trace();
    let nc1 = match normalization {
        Nc1Normalization::Raw => raw,
        Nc1Normalization::BetweenScale => {
            let d = stats.between_trace_sq();
            if d == 0.0 {
                return Err(Error::Degenerate("between-class covariance is zero".into()));
            }
            raw / d
        }
    };
    let (nc2, mut degenerate) = nc2_deviation(&stats)?;

    let (nc3, nc4) = match last_layer {
        None => (None, None),
        Some(params) => {
            params.check_dims(features.rows(), classes)?;
            let w_units = unit_rows(&params.weights);
            let m_units = unit_rows(stats.centered_means());
            let mut worst = 0.0_f64;
            for i in 0..classes {
                match (&w_units[i], &m_units[i]) {
                    (Some(w), Some(m)) => {
                        let d: f64 = w.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                        worst = worst.max(libm::sqrt(d));
                    }
                    _ => {
                        if !degenerate.contains(&i) {
                            degenerate.push(i);
                        }
                    }
                }
            }
            degenerate.sort_unstable();
            (Some(worst), Some(ncc_agreement(features, &stats, params)?))
        }
    };

    Ok(NcReport {
        nc1,
        nc1_normalization: normalization,
        nc2_deviation: nc2,
        degenerate_classes: degenerate,
        nc3_deviation: nc3,
        nc4_agreement: nc4,
    })
}

/// First index of the maximum (`sign = 1`) or minimum (`sign = -1`).
fn arg_extreme(values: impl Iterator<Item = f64>, sign: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if sign * v > best_v {
            best_v = sign * v;
            best = i;
        }
    }
    best
}

/// Fraction of points whose classifier decision equals the nearest class mean.
fn ncc_agreement(features: &DenseMatrix, stats: &ClassStatistics, params: &LastLayerParams) -> Result<f64> {
    let n = features.cols();
    if n == 0 {
        return Ok(1.0);
    }
    let logits = params.weights.matmul(features)?;
    let c = stats.num_classes();
    let mut agree = 0usize;
    let mut x = vec![0.0; features.rows()];
    for j in 0..n {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = features[(i, j)];
        }
        let decision = arg_extreme((0..c).map(|i| logits[(i, j)] + params.biases[i]), 1.0);
        let nearest = arg_extreme(
            stats.class_means.row_iter().map(|mu| mu.iter().zip(&x).map(|(m, v)| (m - v) * (m - v)).sum::<f64>()),
            -1.0,
        );
        if decision == nearest {
            agree += 1;
        }
    }
    Ok(agree as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropositionCheck {
    /// Worst deviation of `⟨C f_i | T[C f_j - 1]⟩` from `a2 (C δ_ij - 1)`,
    /// together with `|⟨1 | T[C f_j - 1]⟩|`.
    pub prop1_residual: f64,
    /// Least-squares estimate of the nontrivial MP eigenvalue.
    pub fitted_a2: f64,
    /// NC1 trace.
    pub prop2_residual: f64,
    /// NC2 deviation.
    pub prop3_residual: f64,
}

/// Entry tolerance when recognizing indicator learned functions.
const INDICATOR_TOL: f64 = 1e-9;

/// Checks what an MP operator implies for balanced indicator learned
/// functions, using the empirical training measure.
pub fn mp_proposition_check(features: &DenseMatrix, learned: &DenseMatrix, labels: &[usize]) -> Result<PropositionCheck> {
    let c = learned.rows();
    let n = features.cols();
    if learned.cols() != n || labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "proposition check point counts",
            expected: n,
            found: if learned.cols() != n { learned.cols() } else { labels.len() },
        });
    }
    if c < 2 {
        return Err(Error::Premise("at least 2 learned functions are required".into()));
    }
    validate_labels(labels, c)?;
    for j in 0..n {
        for i in 0..c {
            let expect = if labels[j] == i { 1.0 } else { 0.0 };
            if (learned[(i, j)] - expect).abs() > INDICATOR_TOL {
                return Err(Error::Premise(format!(
                    "learned functions are not the class indicators (point {j}, function {i})"
                )));
            }
        }
    }
    require_balanced(labels, c).map_err(|e| Error::Premise(format!("partition is not balanced: {e}")))?;

    let cf = c as f64;
    let nf = n as f64;
    let mut xs = Vec::with_capacity(c * c);
    let mut ys = Vec::with_capacity(c * c);
    let mut constant_residual = 0.0_f64;
    for j in 0..c {
        let h: Vec<f64> = learned.row(j).iter().map(|v| cf * v - 1.0).collect();
        let th = apply_operator(features, &h)?;
        constant_residual = constant_residual.max((th.iter().sum::<f64>() / nf).abs());
        for i in 0..c {
            let y = cf * dot(learned.row(i), &th) / nf;
            xs.push(if i == j { cf - 1.0 } else { -1.0 });
            ys.push(y);
        }
    }
    let a2 = dot(&xs, &ys) / dot(&xs, &xs);
    let fit_residual = xs.iter().zip(&ys).map(|(x, y)| (y - a2 * x).abs()).fold(0.0, f64::max);

    let stats = class_statistics(features, labels, c)?;
    let (nc2, _) = nc2_deviation(&stats)?;
    Ok(PropositionCheck {
        prop1_residual: fit_residual.max(constant_residual),
        fitted_a2: a2,
        prop2_residual: stats.within_between_trace(),
        prop3_residual: nc2,
    })
}
