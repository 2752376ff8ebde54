//! Run manifests: a JSON index of per-epoch snapshot files with SHA-256
//! checksums, and loading a run into validated in-memory snapshots.
//!
//! All paths are relative to the manifest's directory. Besides the
//! per-snapshot feature and output arrays, a run carries its labels (shared by
//! every snapshot) and optionally explicit regression targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use feature_lens_core::data::{class_counts, EncodingMode};
use feature_lens_core::{encode_target, DenseMatrix, EvaluationSet, LastLayerParams, Split, TargetEncoding};

use crate::npy::{self, NpyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    /// Fractional epochs are allowed.
    pub epoch: f64,
    pub layer: String,
    pub train_features_path: String,
    pub test_features_path: String,
    pub train_outputs_path: String,
    pub test_outputs_path: String,
    /// `C x (p + 1)`: weights with the bias as the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_layer_path: Option<String>,
    /// SHA-256 hex digest of every file this snapshot references.
    pub checksums: BTreeMap<String, String>,
}

impl SnapshotEntry {
    pub fn files(&self) -> Vec<&str> {
        let mut v = vec![
            self.train_features_path.as_str(),
            self.test_features_path.as_str(),
            self.train_outputs_path.as_str(),
            self.test_outputs_path.as_str(),
        ];
        if let Some(p) = &self.last_layer_path {
            v.push(p);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train_path: String,
    pub test_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    /// `indicator` or `centered-one-hot`.
    pub mode: String,
    pub scale: f64,
}

impl EncodingSpec {
    pub fn to_encoding(&self) -> Result<TargetEncoding, String> {
        let mode = match self.mode.as_str() {
            "indicator" => EncodingMode::Indicator,
            "centered-one-hot" => EncodingMode::CenteredOneHot,
            other => return Err(format!("unknown target encoding mode '{other}'")),
        };
        Ok(TargetEncoding { mode, scale: self.scale })
    }

    pub fn from_encoding(e: TargetEncoding) -> Self {
        let mode = match e.mode {
            EncodingMode::Indicator => "indicator",
            EncodingMode::CenteredOneHot => "centered-one-hot",
        };
        Self {
            mode: mode.into(),
            scale: e.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub run_id: String,
    pub architecture: String,
    pub dataset: String,
    pub num_classes: usize,
    pub labels: SplitFiles,
    /// Explicit `C x n` targets, e.g. for regression; when absent, targets
    /// are encoded from the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<SplitFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_encoding: Option<EncodingSpec>,
    /// Checksums of the run-level files (labels, targets).
    pub checksums: BTreeMap<String, String>,
    pub snapshots: Vec<SnapshotEntry>,
    /// Free-form provenance (trainer settings, initialization).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {path}")]
    MissingFile { path: String },
    #[error("{path}: manifest is not valid: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("{path}: no checksum recorded")]
    MissingChecksum { path: String },
    #[error("{path}: checksum mismatch (manifest {expected}, file {found})")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },
    #[error("snapshot {snapshot}: {file}: {detail}")]
    Dimension {
        snapshot: usize,
        file: String,
        detail: String,
    },
    #[error("snapshot {snapshot}: {source}")]
    Invalid {
        snapshot: usize,
        #[source]
        source: feature_lens_core::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, ManifestError> {
    Ok(sha256_hex(&read_file(path)?))
}

fn read_file(path: &Path) -> Result<Vec<u8>, ManifestError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ManifestError::MissingFile {
                path: path.display().to_string(),
            }
        } else {
            ManifestError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })
}

pub fn read_manifest(path: &Path) -> Result<SnapshotManifest, ManifestError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| ManifestError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_manifest(manifest: &SnapshotManifest, path: &Path) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One validated snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSnapshot {
    pub epoch: f64,
    pub layer: String,
    pub train: EvaluationSet,
    pub test: EvaluationSet,
    pub last_layer: Option<LastLayerParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub manifest: SnapshotManifest,
    pub snapshots: Vec<LoadedSnapshot>,
    /// Targets per split (`C x n`), explicit or encoded from labels.
    pub train_targets: DenseMatrix,
    pub test_targets: DenseMatrix,
    pub encoding: TargetEncoding,
    /// Non-fatal findings such as class imbalance.
    pub warnings: Vec<String>,
}

struct Loader {
    dir: PathBuf,
}

impl Loader {
    fn verified(&self, rel: &str, checksums: &BTreeMap<String, String>) -> Result<Vec<u8>, ManifestError> {
        let path = self.dir.join(rel);
        let bytes = read_file(&path)?;
        let expected = checksums.get(rel).ok_or_else(|| ManifestError::MissingChecksum {
            path: path.display().to_string(),
        })?;
        let found = sha256_hex(&bytes);
        if !expected.eq_ignore_ascii_case(&found) {
            return Err(ManifestError::Checksum {
                path: path.display().to_string(),
                expected: expected.clone(),
                found,
            });
        }
        Ok(bytes)
    }

    fn matrix(&self, rel: &str, checksums: &BTreeMap<String, String>) -> Result<DenseMatrix, ManifestError> {
        let bytes = self.verified(rel, checksums)?;
        Ok(npy::parse_npy(&self.dir.join(rel).display().to_string(), &bytes)?)
    }

    fn labels(&self, rel: &str, checksums: &BTreeMap<String, String>) -> Result<Vec<usize>, ManifestError> {
        let label = self.dir.join(rel).display().to_string();
        let m = self.matrix(rel, checksums)?;
        if m.rows() != 1 {
            return Err(ManifestError::Manifest(format!("{label}: labels must be 1-D")));
        }
        m.as_slice()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(ManifestError::Manifest(format!("{label}: label {v} is not a class index")))
                }
            })
            .collect()
    }
}

fn dim_err(snapshot: usize, file: &str, detail: String) -> ManifestError {
    ManifestError::Dimension {
        snapshot,
        file: file.to_string(),
        detail,
    }
}

/// Loads and validates every file of the run at `manifest_path`.
pub fn load_run(manifest_path: &Path) -> Result<LoadedRun, ManifestError> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let loader = Loader { dir };
    let c = manifest.num_classes;
    if c == 0 {
        return Err(ManifestError::Manifest("num_classes must be at least 1".into()));
    }
    if manifest.snapshots.is_empty() {
        return Err(ManifestError::Manifest("run has no snapshots".into()));
    }
    if manifest.snapshots.windows(2).any(|w| w[1].epoch < w[0].epoch) {
        return Err(ManifestError::Manifest("snapshot epochs must be non-decreasing".into()));
    }
    let encoding = match &manifest.target_encoding {
        Some(spec) => spec.to_encoding().map_err(ManifestError::Manifest)?,
        None => TargetEncoding::INDICATOR,
    };

    let train_labels = loader.labels(&manifest.labels.train_path, &manifest.checksums)?;
    let test_labels = loader.labels(&manifest.labels.test_path, &manifest.checksums)?;
    let mut warnings = Vec::new();
    for (split, labels) in [("train", &train_labels), ("test", &test_labels)] {
        if let Some(bad) = labels.iter().position(|&l| l >= c) {
            return Err(ManifestError::Manifest(format!(
                "{split} label {} at index {bad} is outside [0, {c})",
                labels[bad]
            )));
        }
        let counts = class_counts(labels, c);
        if counts.iter().any(|&k| k != counts[0]) {
            warnings.push(format!("{split} classes are imbalanced: counts {counts:?}"));
        }
    }

    let (train_targets, test_targets) = match &manifest.targets {
        Some(files) => {
            let tr = loader.matrix(&files.train_path, &manifest.checksums)?;
            let te = loader.matrix(&files.test_path, &manifest.checksums)?;
            for (m, labels, path) in [(&tr, &train_labels, &files.train_path), (&te, &test_labels, &files.test_path)] {
                if m.shape() != (c, labels.len()) {
                    return Err(ManifestError::Manifest(format!(
                        "{path}: targets are {}x{}, expected {c}x{}",
                        m.rows(),
                        m.cols(),
                        labels.len()
                    )));
                }
            }
            (tr, te)
        }
        None => {
            let enc = |labels: &[usize]| {
                encode_target(labels, c, encoding).map_err(|e| ManifestError::Manifest(e.to_string()))
            };
            (enc(&train_labels)?, enc(&test_labels)?)
        }
    };

    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    let mut width = None;
    for (idx, entry) in manifest.snapshots.iter().enumerate() {
        let sums = &entry.checksums;
        let mut split = |feat: &str, out: &str, labels: &[usize], which: Split| -> Result<EvaluationSet, ManifestError> {
            let features = loader.matrix(feat, sums)?;
            let outputs = loader.matrix(out, sums)?;
            if features.cols() != labels.len() {
                return Err(dim_err(
                    idx,
                    feat,
                    format!("{} points, labels have {}", features.cols(), labels.len()),
                ));
            }
            if outputs.rows() != c {
                return Err(dim_err(idx, out, format!("{} output rows, expected C = {c}", outputs.rows())));
            }
            if outputs.cols() != labels.len() {
                return Err(dim_err(
                    idx,
                    out,
                    format!("{} points, labels have {}", outputs.cols(), labels.len()),
                ));
            }
            match width {
                None => width = Some(features.rows()),
                Some(p) if p != features.rows() => {
                    return Err(dim_err(idx, feat, format!("feature width {} differs from {p}", features.rows())))
                }
                Some(_) => {}
            }
            EvaluationSet::new(features, labels.to_vec(), outputs, which)
                .map_err(|source| ManifestError::Invalid { snapshot: idx, source })
        };
        let train = split(&entry.train_features_path, &entry.train_outputs_path, &train_labels, Split::Train)?;
        let test = split(&entry.test_features_path, &entry.test_outputs_path, &test_labels, Split::Test)?;
        let last_layer = match &entry.last_layer_path {
            None => None,
            Some(rel) => {
                let m = loader.matrix(rel, sums)?;
                let p = train.feature_dim();
                if m.shape() != (c, p + 1) {
                    return Err(dim_err(
                        idx,
                        rel,
                        format!("last layer is {}x{}, expected {c}x{}", m.rows(), m.cols(), p + 1),
                    ));
                }
                Some(split_last_layer(&m).map_err(|source| ManifestError::Invalid { snapshot: idx, source })?)
            }
        };
        snapshots.push(LoadedSnapshot {
            epoch: entry.epoch,
            layer: entry.layer.clone(),
            train,
            test,
            last_layer,
        });
    }

    Ok(LoadedRun {
        manifest,
        snapshots,
        train_targets,
        test_targets,
        encoding,
        warnings,
    })
}

/// `[W | b]` into parameters.
pub fn split_last_layer(m: &DenseMatrix) -> Result<LastLayerParams, feature_lens_core::Error> {
    let p = m.cols() - 1;
    let cols: Vec<usize> = (0..p).collect();
    LastLayerParams::new(m.select_columns(&cols), m.column(p))
}

/// `[W | b]` as one matrix.
pub fn join_last_layer(params: &LastLayerParams) -> DenseMatrix {
    let (c, p) = params.weights.shape();
    DenseMatrix::from_fn(c, p + 1, |i, j| if j < p { params.weights[(i, j)] } else { params.biases[i] })
}

/// Writes snapshot arrays into a run directory and assembles the manifest.
pub struct RunWriter {
    dir: PathBuf,
    dtype: npy::Dtype,
    checksums: BTreeMap<String, String>,
    snapshots: Vec<SnapshotEntry>,
}

impl RunWriter {
    /// `dtype` applies to feature, output and parameter arrays; labels are
    /// always 64-bit integers.
    pub fn create(dir: &Path, dtype: npy::Dtype) -> Result<Self, ManifestError> {
        fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            dtype,
            checksums: BTreeMap::new(),
            snapshots: Vec::new(),
        })
    }

    fn put(&self, rel: &str, bytes: &[u8]) -> Result<String, ManifestError> {
        let path = self.dir.join(rel);
        fs::write(&path, bytes).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(sha256_hex(bytes))
    }

    fn put_matrix(&self, rel: &str, m: &DenseMatrix, sums: &mut BTreeMap<String, String>) -> Result<(), ManifestError> {
        let sum = self.put(rel, &npy::encode_npy(m, self.dtype))?;
        sums.insert(rel.to_string(), sum);
        Ok(())
    }

    /// Run-level labels and optional explicit targets (`C x n` per split).
    pub fn write_run_arrays(
        &mut self,
        train_labels: &[usize],
        test_labels: &[usize],
        targets: Option<(&DenseMatrix, &DenseMatrix)>,
    ) -> Result<(SplitFiles, Option<SplitFiles>), ManifestError> {
        let mut sums = std::mem::take(&mut self.checksums);
        for (rel, labels) in [("train_labels.npy", train_labels), ("test_labels.npy", test_labels)] {
            let v: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let sum = self.put(rel, &npy::encode_npy_1d(&v, npy::Dtype::I64))?;
            sums.insert(rel.to_string(), sum);
        }
        let target_files = match targets {
            None => None,
            Some((tr, te)) => {
                // targets stay in double precision regardless of the snapshot dtype
                for (rel, m) in [("train_targets.npy", tr), ("test_targets.npy", te)] {
                    let sum = self.put(rel, &npy::encode_npy(m, npy::Dtype::F64))?;
                    sums.insert(rel.to_string(), sum);
                }
                Some(SplitFiles {
                    train_path: "train_targets.npy".into(),
                    test_path: "test_targets.npy".into(),
                })
            }
        };
        self.checksums = sums;
        Ok((
            SplitFiles {
                train_path: "train_labels.npy".into(),
                test_path: "test_labels.npy".into(),
            },
            target_files,
        ))
    }

    pub fn add_snapshot(
        &mut self,
        epoch: f64,
        layer: &str,
        train: &EvaluationSet,
        test: &EvaluationSet,
        last_layer: Option<&LastLayerParams>,
    ) -> Result<(), ManifestError> {
        let idx = self.snapshots.len();
        let name = |what: &str| format!("snap{idx:03}_{what}.npy");
        let mut sums = BTreeMap::new();
        let entry_paths = [
            (name("train_features"), &train.features),
            (name("test_features"), &test.features),
            (name("train_outputs"), &train.outputs),
            (name("test_outputs"), &test.outputs),
        ];
        for (rel, m) in &entry_paths {
            self.put_matrix(rel, m, &mut sums)?;
        }
        let last_layer_path = match last_layer {
            None => None,
            Some(params) => {
                let rel = name("last_layer");
                self.put_matrix(&rel, &join_last_layer(params), &mut sums)?;
                Some(rel)
            }
        };
        let [(a, _), (b, _), (c, _), (d, _)] = entry_paths;
        self.snapshots.push(SnapshotEntry {
            epoch,
            layer: layer.to_string(),
            train_features_path: a,
            test_features_path: b,
            train_outputs_path: c,
            test_outputs_path: d,
            last_layer_path,
            checksums: sums,
        });
        Ok(())
    }

    /// Writes `manifest.json` and returns its path.
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        run_id: &str,
        architecture: &str,
        dataset: &str,
        num_classes: usize,
        labels: SplitFiles,
        targets: Option<SplitFiles>,
        encoding: Option<TargetEncoding>,
        training: Option<serde_json::Value>,
    ) -> Result<PathBuf, ManifestError> {
        let manifest = SnapshotManifest {
            run_id: run_id.to_string(),
            architecture: architecture.to_string(),
            dataset: dataset.to_string(),
            num_classes,
            labels,
            targets,
            target_encoding: encoding.map(EncodingSpec::from_encoding),
            checksums: self.checksums,
            snapshots: self.snapshots,
            training,
        };
        let path = self.dir.join("manifest.json");
        write_manifest(&manifest, &path)?;
        Ok(path)
    }
}
