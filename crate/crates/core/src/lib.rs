//! Spectral diagnostics for the forward feature map of a neural network.
//!
//! Given the penultimate-layer activations of a network on a training split,
//! this crate diagonalizes the empirical integral operator built from those
//! features (a Nyström decomposition via thin SVD), evaluates the resulting
//! eigenfunctions on any split, and derives feature-learning measures from
//! them:
//!
//! - quality and utility projection profiles with their cumulative sums and
//!   effective dimensions ([`projections`]);
//! - centered kernel alignment against the minimum-projection operator and the
//!   minimal/extended feature regime verdict ([`regime`]);
//! - neural-collapse statistics and the kernel-side propositions behind them
//!   ([`nc`]);
//! - linear-model gradient-flow dynamics, a small deterministic MLP trainer
//!   and the lazy output rescaling ([`dynamics`], [`mlp`]);
//! - a Gaussian random-feature harness with known spectrum for checking the
//!   decomposition itself ([`synth`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, manifests and
//! the command line live in the `feature-lens` companion crate.
//!
//! # Conventions
//!
//! Raw eigenvalues are squared singular values of the `p x n` training
//! feature matrix, `rho_k = s_k^2`. Under the uniform empirical measure the
//! operator eigenvalues are `rho_k / n`, and eigenfunctions are scaled to unit
//! mean square on the training points: `e_k(x) = sqrt(n) u_kᵀ Φ(x) / s_k`.

#![no_std]

extern crate alloc;

pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod mlp;
pub mod nc;
pub mod projections;
pub mod regime;
pub mod spectral;
pub mod synth;
mod vector;

#[cfg(test)]
mod test_util;

pub use data::{encode_target, EncodingMode, EvaluationSet, LastLayerParams, Split, TargetEncoding};
pub use error::{Error, Result};
pub use linalg::{qr_orthonormalize, svd_thin, OrthonormalRows, Svd};
pub use matrix::DenseMatrix;
pub use projections::{effective_dimension, ProjectionProfile};
pub use regime::{RegimeReport, Verdict};
pub use spectral::{apply_operator, decompose, evaluate_eigenfunctions, EigenSystem};

pub use vector::{dot, norm};
