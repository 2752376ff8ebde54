//! Seeded training runs written out as analyzable run directories.
//!
//! A simulation spec is a JSON document with a `kind` of `mlp` (the toy MLP
//! trainer on a generated dataset) or `linear` (the closed-form linear model,
//! whose feature map never changes). Unknown fields are rejected.

use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};

use feature_lens_core::dynamics::{closed_form_coefficients, LinearModelSpec};
use feature_lens_core::mlp::{
    gaussian_blobs, heaviside_dataset, train_mlp, Activation, BlobConfig, Dataset, MlpSnapshot, MlpSpec, SgdConfig,
};
use feature_lens_core::{DenseMatrix, Error as CoreError, EvaluationSet, Split, TargetEncoding};
use serde::{Deserialize, Serialize};

use crate::manifest::{EncodingSpec, ManifestError, RunWriter};
use crate::npy::Dtype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SimulationSpec {
    Mlp(MlpRunSpec),
    Linear(LinearRunSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    ToyHeaviside,
    GaussianBlobs {
        classes: usize,
        n: usize,
        dim: usize,
        separation: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeSpec {
    F32,
    F64,
}

impl From<DtypeSpec> for Dtype {
    fn from(d: DtypeSpec) -> Self {
        match d {
            DtypeSpec::F32 => Dtype::F32,
            DtypeSpec::F64 => Dtype::F64,
        }
    }
}

fn default_dtype() -> DtypeSpec {
    DtypeSpec::F32
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRunSpec {
    #[serde(default)]
    pub run_id: Option<String>,
    pub dataset: DatasetSpec,
    /// Hidden widths only; input and output widths follow from the dataset.
    pub hidden_widths: Vec<usize>,
    pub activation: String,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub target_encoding: Option<EncodingSpec>,
    #[serde(default = "default_one")]
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs to snapshot; 0 is the initialization.
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: DtypeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRunSpec {
    #[serde(default)]
    pub run_id: Option<String>,
    pub eigenvalues: Vec<f64>,
    pub target_coefficients: Vec<f64>,
    pub learning_rate: f64,
    #[serde(default = "default_one")]
    pub rate_constant: f64,
    /// Number of grid points per split.
    pub points: usize,
    /// Training times to snapshot.
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_dtype")]
    pub dtype: DtypeSpec,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid simulation spec: {source}")]
    Spec {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid simulation spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

pub fn read_spec(path: &Path) -> Result<SimulationSpec, SimulateError> {
    let text = fs::read_to_string(path).map_err(|source| SimulateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SimulateError::Spec {
        path: path.display().to_string(),
        source,
    })
}

/// Runs the simulation and writes the run directory; returns the manifest path.
pub fn simulate(spec: &SimulationSpec, out: &Path) -> Result<PathBuf, SimulateError> {
    match spec {
        SimulationSpec::Mlp(s) => simulate_mlp(s, out),
        SimulationSpec::Linear(s) => simulate_linear(s, out),
    }
}

impl MlpRunSpec {
    pub fn encoding(&self) -> Result<TargetEncoding, SimulateError> {
        self.target_encoding
            .as_ref()
            .map_or(Ok(TargetEncoding::INDICATOR), |e| e.to_encoding().map_err(SimulateError::Invalid))
    }

    pub fn dataset(&self) -> Result<Dataset, SimulateError> {
        Ok(match self.dataset {
            DatasetSpec::ToyHeaviside => heaviside_dataset(),
            DatasetSpec::GaussianBlobs {
                classes,
                n,
                dim,
                separation,
            } => gaussian_blobs(
                BlobConfig {
                    classes,
                    n,
                    dim,
                    separation,
                },
                self.encoding()?,
                self.seed,
            )?,
        })
    }

    /// The trainer configuration for `data`.
    pub fn mlp_spec(&self, data: &Dataset) -> Result<MlpSpec, SimulateError> {
        let activation = Activation::parse(&self.activation)
            .ok_or_else(|| SimulateError::Invalid(format!("unknown activation '{}'", self.activation)))?;
        let mut layer_widths = vec![data.input_dim()];
        layer_widths.extend(&self.hidden_widths);
        layer_widths.push(data.output_dim());
        Ok(MlpSpec {
            layer_widths,
            activation,
            optimizer: SgdConfig {
                lr: self.optimizer.lr,
                momentum: self.optimizer.momentum,
                weight_decay: self.optimizer.weight_decay,
            },
            target_encoding: self.encoding()?,
            alpha: self.alpha,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        })
    }
}

fn check_sorted<T: PartialOrd + std::fmt::Debug>(points: &[T]) -> Result<(), SimulateError> {
    if points.is_empty() {
        return Err(SimulateError::Invalid("checkpoints must not be empty".into()));
    }
    if points.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SimulateError::Invalid(format!("checkpoints must be strictly increasing: {points:?}")));
    }
    Ok(())
}

fn simulate_mlp(s: &MlpRunSpec, out: &Path) -> Result<PathBuf, SimulateError> {
    check_sorted(&s.checkpoints)?;
    let data = s.dataset()?;
    let spec = s.mlp_spec(&data)?;
    let mut snaps: Vec<MlpSnapshot> = Vec::new();
    let summary = train_mlp(&spec, &data, &s.checkpoints, |snap| {
        snaps.push(snap);
        Ok(())
    })?;

    let mut writer = RunWriter::create(out, s.dtype.into())?;
    let regression = data.num_classes == 1;
    let (labels, targets) = if regression {
        writer.write_run_arrays(&data.train.labels, &data.test.labels, Some((&data.train.targets, &data.test.targets)))?
    } else {
        writer.write_run_arrays(&data.train.labels, &data.test.labels, None)?
    };
    let layer = format!("hidden{}", spec.layer_widths.len() - 2);
    for snap in &snaps {
        writer.add_snapshot(snap.epoch as f64, &layer, &snap.train, &snap.test, Some(&snap.last_layer))?;
    }
    let training = serde_json::json!({
        "spec": serde_json::to_value(s).expect("spec serializes"),
        "layer_widths": spec.layer_widths,
        "init": "fan-in Gaussian, gain sqrt(2) for relu hidden layers, zero biases",
        "final_train_mse": summary.final_train_mse,
        "final_test_mse": summary.final_test_mse,
        "checkpoint_train_mse": snaps.iter().map(|x| x.train_mse).collect::<Vec<_>>(),
        "checkpoint_train_accuracy": snaps.iter().map(|x| x.train_accuracy).collect::<Vec<_>>(),
    });
    let arch = spec
        .layer_widths
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-");
    let run_id = s.run_id.clone().unwrap_or_else(|| format!("{}-seed{}", data.name, s.seed));
    Ok(writer.finish(
        &run_id,
        &format!("mlp-{}-{arch}", spec.activation.as_str()),
        &data.name,
        data.num_classes,
        labels,
        targets,
        (!regression).then_some(spec.target_encoding),
        Some(training),
    )?)
}

/// Cosine basis on a midpoint grid of `[0, 1]`, orthonormal under the
/// grid mean when evaluated at `(j + 0.5) / m`.
fn cosine_basis(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        SQRT_2 * (k as f64 * PI * x).cos()
    }
}

fn simulate_linear(s: &LinearRunSpec, out: &Path) -> Result<PathBuf, SimulateError> {
    check_sorted(&s.checkpoints)?;
    if s.checkpoints[0] < 0.0 {
        return Err(SimulateError::Invalid("checkpoint times must be non-negative".into()));
    }
    let p = s.eigenvalues.len();
    if s.points <= p {
        return Err(SimulateError::Invalid(format!(
            "points ({}) must exceed the number of eigenvalues ({p})",
            s.points
        )));
    }
    let model = LinearModelSpec::new(s.eigenvalues.clone(), s.target_coefficients.clone(), s.learning_rate)?
        .with_rate_constant(s.rate_constant)?;
    let m = s.points;
    let train_x: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect();
    let test_x: Vec<f64> = (0..m).map(|j| (j as f64 + 0.25) / m as f64).collect();
    let basis = |xs: &[f64]| DenseMatrix::from_fn(p, xs.len(), |k, j| cosine_basis(k, xs[j]));
    let (z_train, z_test) = (basis(&train_x), basis(&test_x));
    let features = |z: &DenseMatrix| DenseMatrix::from_fn(p, z.cols(), |k, j| s.eigenvalues[k].sqrt() * z[(k, j)]);
    let (phi_train, phi_test) = (features(&z_train), features(&z_test));
    let function = |coef: &[f64], z: &DenseMatrix| -> Result<DenseMatrix, CoreError> {
        let v = z.transpose_mul_vec(coef)?;
        DenseMatrix::new(1, v.len(), v)
    };

    let mut writer = RunWriter::create(out, s.dtype.into())?;
    let labels = vec![0; m];
    let tr_target = function(&s.target_coefficients, &z_train)?;
    let te_target = function(&s.target_coefficients, &z_test)?;
    let (label_files, target_files) = writer.write_run_arrays(&labels, &labels, Some((&tr_target, &te_target)))?;
    for &t in &s.checkpoints {
        let c = closed_form_coefficients(&model, t);
        let train = EvaluationSet::new(phi_train.clone(), labels.clone(), function(&c, &z_train)?, Split::Train)?;
        let test = EvaluationSet::new(phi_test.clone(), labels.clone(), function(&c, &z_test)?, Split::Test)?;
        writer.add_snapshot(t, "features", &train, &test, None)?;
    }
    let training = serde_json::json!({ "spec": serde_json::to_value(s).expect("spec serializes") });
    Ok(writer.finish(
        s.run_id.as_deref().unwrap_or("linear-model"),
        "linear-model",
        "cosine-grid",
        1,
        label_files,
        target_files,
        None,
        Some(training),
    )?)
}
