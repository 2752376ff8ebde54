//! File formats, the analysis pipeline and the `feature-lens` command line
//! built on [`feature_lens_core`].
//!
//! A run is a directory holding a `manifest.json` and NPY arrays: per
//! snapshot, the penultimate-layer features and network outputs on a train
//! and a test split, plus optional last-layer parameters. [`manifest::load_run`]
//! validates a run, [`analysis::analyze_run`] turns it into an
//! [`report::AnalysisReport`], and [`simulate`] and [`validate`] produce runs
//! and synthetic checks from seeds.

pub mod analysis;
pub mod cli;
pub mod manifest;
pub mod npy;
pub mod report;
pub mod simulate;
pub mod validate;
