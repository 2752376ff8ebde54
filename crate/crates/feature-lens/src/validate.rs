//! Synthetic validation of the decomposition on Gaussian features with a
//! power-law spectrum.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use feature_lens_core::synth::{median, run_synth, spearman, SynthMetrics, SynthSpec};
use feature_lens_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_P: usize = 1000;
pub const DEFAULT_N: usize = 10000;
pub const FAST_P: usize = 200;
pub const FAST_N: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub eigenpairs: usize,
    /// Largest relative squared eigenvalue error over `k <= p / 2`.
    pub max_eigenvalue_error_head: f64,
    pub max_function_space_error: f64,
    /// Rank correlation of eigenfunction error with `rho_k / median(rho)`.
    pub eigenfunction_spearman: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ValidateError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("alpha {alpha}: {source}")]
    Synth {
        alpha: f64,
        #[source]
        source: CoreError,
    },
    #[error("{0}")]
    Options(String),
    #[error("could not start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub fn summarize(m: &SynthMetrics, seconds: f64) -> AlphaSummary {
    let r = m.len();
    let head = (m.spec.p / 2).min(r);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let eigenfunction_spearman = median(&m.true_eigenvalues).and_then(|med| {
        let ratio: Vec<f64> = m.true_eigenvalues.iter().map(|r| r / med).collect();
        spearman(&m.eigenfunction_error, &ratio).ok()
    });
    AlphaSummary {
        alpha: m.spec.alpha,
        p: m.spec.p,
        n: m.spec.n,
        seed: m.spec.seed,
        eigenpairs: r,
        max_eigenvalue_error_head: max(&m.eigenvalue_error[..head]),
        max_function_space_error: max(&m.function_space_error),
        eigenfunction_spearman,
        seconds,
    }
}

/// `k,true_eigenvalue,estimated_eigenvalue,eigenvalue_error,eigenfunction_error,function_space_error`
pub fn metrics_csv(m: &SynthMetrics) -> String {
    let mut s = String::from(
        "k,true_eigenvalue,estimated_eigenvalue,eigenvalue_error,eigenfunction_error,function_space_error\n",
    );
    for k in 0..m.len() {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e}",
            k + 1,
            m.true_eigenvalues[k],
            m.estimated_eigenvalues[k],
            m.eigenvalue_error[k],
            m.eigenfunction_error[k],
            m.function_space_error[k]
        );
    }
    s
}

pub fn csv_name(alpha: f64) -> String {
    format!("synth_alpha{alpha}.csv")
}

/// Runs every `alpha` (in parallel over `threads` workers), writes one CSV
/// per value plus `summary.json`, and returns the summaries in input order.
pub fn run_validation(
    alphas: &[f64],
    p: usize,
    n: usize,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<(Vec<AlphaSummary>, Vec<PathBuf>), ValidateError> {
    if alphas.is_empty() {
        return Err(ValidateError::Options("--alpha needs at least one value".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let results: Vec<(SynthMetrics, f64)> = pool.install(|| {
        alphas
            .par_iter()
            .map(|&alpha| {
                let spec = SynthSpec { p, n, alpha, seed };
                let start = Instant::now();
                let m = run_synth(&spec).map_err(|source| ValidateError::Synth { alpha, source })?;
                Ok((m, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>, ValidateError>>()
    })?;

    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ValidateError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let mut written = Vec::new();
    let mut summaries = Vec::new();
    for (m, secs) in &results {
        let path = out.join(csv_name(m.spec.alpha));
        fs::write(&path, metrics_csv(m)).map_err(io(&path))?;
        written.push(path);
        summaries.push(summarize(m, *secs));
    }
    let path = out.join("summary.json");
    let mut body = serde_json::to_string_pretty(&summaries).expect("summary serializes");
    body.push('\n');
    fs::write(&path, body).map_err(io(&path))?;
    written.push(path);
    Ok((summaries, written))
}
