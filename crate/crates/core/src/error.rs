use alloc::string::String;

use thiserror::Error;

/// Errors raised by the analysis core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} at position {index} is outside [0, {classes})")]
    InvalidLabel {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("class-balanced input required: {0}")]
    Imbalanced(String),

    #[error("premise violated: {0}")]
    Premise(String),

    #[error("SVD did not converge after {sweeps} sweeps (largest remaining off-diagonal ratio {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("unstable step: dt*rate*eta*max(rho) = {product} >= 0.5; use dt <= {suggested_dt:e}")]
    UnstableStep { product: f64, suggested_dt: f64 },

    #[error("training diverged at epoch {epoch} (last finite checkpoint: {last_finite:?})")]
    Diverged {
        epoch: usize,
        last_finite: Option<f64>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
