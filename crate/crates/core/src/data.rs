//! In-memory snapshot data: features, labels and network outputs on one
//! split, last-layer parameters, and target encodings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Feature map, labels and learned-function values on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSet {
    /// `p x n`, one column per data point.
    pub features: DenseMatrix,
    /// Length `n`, each in `[0, C)`.
    pub labels: Vec<usize>,
    /// `C x n` learned function values.
    pub outputs: DenseMatrix,
    pub split: Split,
}

impl EvaluationSet {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, outputs: DenseMatrix, split: Split) -> Result<Self> {
        let n = features.cols();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "label count vs feature columns",
                expected: n,
                found: labels.len(),
            });
        }
        if outputs.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "output columns vs feature columns",
                expected: n,
                found: outputs.cols(),
            });
        }
        validate_labels(&labels, outputs.rows())?;
        Ok(Self {
            features,
            labels,
            outputs,
            split,
        })
    }

    pub fn num_points(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.outputs.rows()
    }

    /// Keeps the listed points, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            outputs: self.outputs.select_columns(idx),
            split: self.split,
        }
    }
}

/// Final linear layer `f_i(x) = w_iᵀ Φ(x) + b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerParams {
    /// `C x p`, row `i` is `w_iᵀ`.
    pub weights: DenseMatrix,
    /// Length `C`.
    pub biases: Vec<f64>,
}

impl LastLayerParams {
    pub fn new(weights: DenseMatrix, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "bias count vs weight rows",
                expected: weights.rows(),
                found: biases.len(),
            });
        }
        if let Some(i) = biases.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        Ok(Self { weights, biases })
    }

    /// Checks the parameters against a snapshot's feature width and class count.
    pub fn check_dims(&self, p: usize, classes: usize) -> Result<()> {
        if self.weights.cols() != p {
            return Err(Error::DimensionMismatch {
                context: "last-layer weight columns vs feature width",
                expected: p,
                found: self.weights.cols(),
            });
        }
        if self.weights.rows() != classes {
            return Err(Error::DimensionMismatch {
                context: "last-layer weight rows vs class count",
                expected: classes,
                found: self.weights.rows(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingMode {
    /// `scale` at the true class, 0 elsewhere.
    Indicator,
    /// `scale * one_hot` shifted so each column sums to zero.
    CenteredOneHot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEncoding {
    pub mode: EncodingMode,
    pub scale: f64,
}

impl TargetEncoding {
    pub const INDICATOR: Self = Self {
        mode: EncodingMode::Indicator,
        scale: 1.0,
    };

    pub fn centered(scale: f64) -> Self {
        Self {
            mode: EncodingMode::CenteredOneHot,
            scale,
        }
    }
}

impl Default for TargetEncoding {
    fn default() -> Self {
        Self::INDICATOR
    }
}

pub fn validate_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes == 0 {
        return Err(Error::InvalidArgument("number of classes must be at least 1".into()));
    }
    match labels.iter().position(|&l| l >= classes) {
        Some(index) => Err(Error::InvalidLabel {
            index,
            label: labels[index],
            classes,
        }),
        None => Ok(()),
    }
}

pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Errors unless every class has the same, non-zero number of points.
pub fn require_balanced(labels: &[usize], classes: usize) -> Result<usize> {
    validate_labels(labels, classes)?;
    let counts = class_counts(labels, classes);
    let first = counts[0];
    if first == 0 || counts.iter().any(|&c| c != first) {
        return Err(Error::Imbalanced(format!("class counts {counts:?}")));
    }
    Ok(first)
}

/// Encodes labels as a `C x n` target matrix.
pub fn encode_target(labels: &[usize], classes: usize, encoding: TargetEncoding) -> Result<DenseMatrix> {
    validate_labels(labels, classes)?;
    if !(encoding.scale > 0.0 && encoding.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "encoding scale must be positive, got {}",
            encoding.scale
        )));
    }
    let n = labels.len();
    let shift = match encoding.mode {
        EncodingMode::Indicator => 0.0,
        EncodingMode::CenteredOneHot => encoding.scale / classes as f64,
    };
    let mut m = DenseMatrix::from_fn(classes, n, |_, _| -shift);
    for (j, &l) in labels.iter().enumerate() {
        m[(l, j)] += encoding.scale;
    }
    Ok(m)
}
