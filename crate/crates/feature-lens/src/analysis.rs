//! Per-snapshot analysis of a loaded run.

use feature_lens_core::data::{require_balanced, validate_labels};
use feature_lens_core::nc::{nc_report, Nc1Normalization};
use feature_lens_core::projections::{constant_alignment, quality_profile, utility_profile};
use feature_lens_core::regime::{
    balanced_subsample_indices, classify_regime, subsample_indices, DEFAULT_EPSILON,
};
use feature_lens_core::{
    decompose, effective_dimension, evaluate_eigenfunctions, DenseMatrix, Error as CoreError,
    ProjectionProfile, Split, Verdict,
};
use rayon::prelude::*;

use crate::manifest::{LoadedRun, LoadedSnapshot};
use crate::report::{
    AnalysisReport, Conventions, Meta, NcSummary, ProfileReport, RegimeSummary, SnapshotReport,
    SpectrumReport,
};

pub const SUBSAMPLE_SEED: u64 = 0;
pub const DEFAULT_SUBSAMPLE: usize = 5000;
pub const DEFAULT_KMAX: usize = 1000;
pub const THREADS_ENV: &str = "FEATURE_LENS_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub split: Split,
    pub qr: bool,
    pub epsilon: f64,
    pub kmax: usize,
    pub subsample: usize,
    pub threads: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            qr: true,
            epsilon: DEFAULT_EPSILON,
            kmax: DEFAULT_KMAX,
            subsample: DEFAULT_SUBSAMPLE,
            threads: 1,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(AnalysisError::Options(format!("--epsilon must be positive, got {}", self.epsilon)));
        }
        if self.kmax == 0 {
            return Err(AnalysisError::Options("--kmax must be at least 1".into()));
        }
        if self.subsample < 2 {
            return Err(AnalysisError::Options("--subsample must be at least 2".into()));
        }
        if self.threads == 0 {
            return Err(AnalysisError::Options("--threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Options(String),
    #[error("snapshot at epoch {epoch} ({layer}): {source}")]
    Snapshot {
        epoch: f64,
        layer: String,
        #[source]
        source: CoreError,
    },
    #[error("could not start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Runs the full analysis. `manifest_sha256` identifies the input in the
/// report metadata.
pub fn analyze_run(
    run: &LoadedRun,
    manifest_sha256: &str,
    options: &AnalysisOptions,
) -> Result<AnalysisReport, AnalysisError> {
    options.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.threads).build()?;
    let mut snapshots: Vec<SnapshotReport> = pool.install(|| {
        run.snapshots
            .par_iter()
            .map(|snap| {
                analyze_snapshot(run, snap, options).map_err(|source| AnalysisError::Snapshot {
                    epoch: snap.epoch,
                    layer: snap.layer.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    if features_frozen(&run.snapshots) {
        for s in &mut snapshots {
            if let Some(regime) = &mut s.regime {
                regime.verdict = Verdict::CoefficientLearning.as_str().to_string();
            }
            s.notes.push("training features are identical in every snapshot: only the last layer changed".into());
        }
    }

    Ok(AnalysisReport {
        meta: Meta {
            run_id: run.manifest.run_id.clone(),
            architecture: run.manifest.architecture.clone(),
            dataset: run.manifest.dataset.clone(),
            num_classes: run.manifest.num_classes,
            manifest_sha256: manifest_sha256.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: options.threads,
            warnings: run.warnings.clone(),
        },
        conventions: conventions(options),
        snapshots,
    })
}

fn conventions(options: &AnalysisOptions) -> Conventions {
    Conventions {
        eigenvalues: "rho_k = s_k^2, squared singular values of the p x n training feature matrix; operator eigenvalues under the empirical measure are rho_k / n".into(),
        eigenfunctions: "e_k(x) = sqrt(n) u_k^T phi(x) / s_k, unit mean square on the training points; only s_k > s_1 * 1e-12 * max(p, n) are used".into(),
        inner_product: "<f, g> = mean over the evaluation points of f * g".into(),
        evaluation_split: options.split.as_str().into(),
        qr_corrected: options.qr,
        quality_normalization: "squared norm of the projection of the target span onto e_k, divided by the number of classes".into(),
        utility_normalization: "squared norm of the projection of the learned-function span onto e_k, divided by its numerical rank".into(),
        effective_dimension: "exp(Shannon entropy of the normalized weights); the spectrum value is 1 + D_eff(rho_2, rho_3, ...)".into(),
        regime: "kappa = 1 - CKA(training feature Gram, minimum-projection Gram of the learned functions); MF when kappa < epsilon; eigengap = rho_C / rho_(C+1)".into(),
        epsilon: options.epsilon,
        nc1_normalization: "raw trace(Sigma_W Sigma_B^+) / C on the training subsample".into(),
        kmax: options.kmax,
        subsample_max_points: options.subsample,
        subsample_seed: SUBSAMPLE_SEED,
        rate_convention: 1.0,
    }
}

fn features_frozen(snaps: &[LoadedSnapshot]) -> bool {
    snaps.len() >= 2 && snaps.iter().all(|s| s.train.features == snaps[0].train.features)
}

fn profile_report(p: &ProjectionProfile, kmax: usize) -> ProfileReport {
    let k = p.per_feature.len().min(kmax);
    ProfileReport {
        per_feature: p.per_feature[..k].to_vec(),
        cumulative: p.cumulative[..k].to_vec(),
        total: p.total,
        d_eff: p.d_eff,
        subspace_dim: p.subspace_dim,
        dropped_rows: p.dropped_rows.clone(),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn analyze_snapshot(
    run: &LoadedRun,
    snap: &LoadedSnapshot,
    options: &AnalysisOptions,
) -> Result<SnapshotReport, CoreError> {
    let classes = run.manifest.num_classes;
    let mut notes = Vec::new();
    validate_labels(&snap.train.labels, classes)?;
    let balanced = classes >= 2 && require_balanced(&snap.train.labels, classes).is_ok();

    let n_train = snap.train.num_points();
    let idx = if balanced {
        balanced_subsample_indices(&snap.train.labels, classes, options.subsample, SUBSAMPLE_SEED)
    } else {
        subsample_indices(n_train, options.subsample, SUBSAMPLE_SEED)
    };
    let train = if idx.len() == n_train { snap.train.clone() } else { snap.train.subset(&idx) };
    if idx.len() < n_train {
        notes.push(format!("training split subsampled from {n_train} to {} points", idx.len()));
    }

    let sys = decompose(&train.features)?;
    if sys.usable() == 0 {
        return Err(CoreError::Degenerate("training features are numerically zero".into()));
    }
    let (eval, targets) = match options.split {
        Split::Train => (&train, train_targets(run, &idx, n_train)),
        Split::Test => (&snap.test, run.test_targets.clone()),
    };
    let e_all = evaluate_eigenfunctions(&sys, &eval.features)?;
    let e = e_all.top_rows(e_all.rows().min(options.kmax));

    let quality = quality_profile(&e, &targets, options.qr)?;
    let utility = match utility_profile(&e, &eval.outputs, options.qr) {
        Ok(p) => Some(profile_report(&p, options.kmax)),
        Err(err @ CoreError::Degenerate(_)) => {
            notes.push(format!("utility not computed: {err}"));
            None
        }
        Err(err) => return Err(err),
    };

    let mut rho_over_rho1 = sys.normalized_spectrum();
    rho_over_rho1.truncate(options.kmax);
    let spectrum = SpectrumReport {
        rho_over_rho1,
        d_eff: effective_dimension(&sys.eigenvalues, true)?,
        usable: sys.usable(),
    };

    let regime = if classes < 2 {
        notes.push("regime not computed: needs at least two classes".into());
        None
    } else if !balanced {
        notes.push("regime not computed: training labels are not class-balanced".into());
        None
    } else {
        match classify_regime(&train.features, &train.outputs, &train.labels, options.epsilon) {
            Ok(r) => Some(RegimeSummary {
                kappa_cka: r.kappa_cka,
                verdict: r.verdict.as_str().to_string(),
                eigengap: r.eigengap,
                rank_limited: r.rank_limited,
                plateau_flatness: finite(r.plateau_flatness),
                d_eff_rho: r.d_eff_rho,
            }),
            Err(err) => {
                notes.push(format!("regime not computed: {err}"));
                None
            }
        }
    };

    let nc = if classes < 2 || !balanced {
        notes.push("neural-collapse metrics not computed: needs two or more balanced classes".into());
        None
    } else {
        match nc_report(&train.features, &train.labels, classes, snap.last_layer.as_ref(), Nc1Normalization::Raw) {
            Ok(r) => {
                if !r.degenerate_classes.is_empty() {
                    notes.push(format!("classes with zero-norm centered means: {:?}", r.degenerate_classes));
                }
                Some(NcSummary {
                    nc1: r.nc1,
                    nc2_deviation: r.nc2_deviation,
                    nc3_deviation: r.nc3_deviation,
                    nc4_agreement: r.nc4_agreement,
                    degenerate_classes: r.degenerate_classes,
                })
            }
            Err(err) => {
                notes.push(format!("neural-collapse metrics not computed: {err}"));
                None
            }
        }
    };

    Ok(SnapshotReport {
        epoch: snap.epoch,
        layer: snap.layer.clone(),
        train_points_used: train.num_points(),
        quality: profile_report(&quality, options.kmax),
        utility,
        spectrum,
        regime,
        nc,
        constant_alignment: constant_alignment(&e)?,
        notes,
    })
}

fn train_targets(run: &LoadedRun, idx: &[usize], n_train: usize) -> DenseMatrix {
    if idx.len() == n_train {
        run.train_targets.clone()
    } else {
        run.train_targets.select_columns(idx)
    }
}

/// Worker count: `FEATURE_LENS_THREADS` wins over the flag.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<usize, AnalysisError> {
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| AnalysisError::Options(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        None => Ok(flag.unwrap_or(1)),
    }
}
