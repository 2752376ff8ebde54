//! A small fully connected network trained with SGD, producing feature
//! snapshots (penultimate activations, outputs and final-layer parameters)
//! at requested epochs.
//!
//! With output rescaling `alpha > 1` the model prediction is
//! `alpha (h(x; θ) - h(x; θ_0))` and training minimizes
//! `(1/alpha^2) MSE(prediction, f*)`, which keeps the network close to its
//! initialization for large `alpha`. `alpha = 1` trains `h` directly.
//!
//! The optimizer step is `lr / alpha^2`, so that the prediction moves at the
//! same speed in function space for every `alpha` and only the distance the
//! parameters travel changes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{encode_target, EvaluationSet, LastLayerParams, Split, TargetEncoding};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Erf,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Erf => "erf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "erf" => Some(Activation::Erf),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Erf => libm::erf(z),
        }
    }

    /// Derivative at pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
            Activation::Erf => core::f64::consts::FRAC_2_SQRT_PI * libm::exp(-z * z),
        }
    }

    /// Variance gain of the fan-in Gaussian initialization.
    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            Activation::Tanh | Activation::Erf => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub optimizer: SgdConfig,
    pub target_encoding: TargetEncoding,
    /// Output rescaling, `>= 1`; 1 disables it.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::InvalidArgument(
                "layer_widths needs an input, at least one hidden layer and an output".into(),
            ));
        }
        if w.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if w[0] != input_dim {
            return Err(Error::DimensionMismatch {
                context: "input width vs dataset dimension",
                expected: input_dim,
                found: w[0],
            });
        }
        if *w.last().unwrap() != output_dim {
            return Err(Error::DimensionMismatch {
                context: "output width vs number of outputs",
                expected: output_dim,
                found: *w.last().unwrap(),
            });
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", o.momentum)));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs (`d x n`), targets (`C x n`) and labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Number of classes; 1 for scalar regression.
    pub num_classes: usize,
    pub train: SplitData,
    pub test: SplitData,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.train.targets.rows()
    }
}

pub const HEAVISIDE_POINTS: usize = 512;

/// Unit step on `[-1, 1]`: train inputs on the uniform grid including the
/// endpoints, test inputs at the grid-cell midpoints. Regression with a
/// single output and all labels 0.
pub fn heaviside_dataset() -> Dataset {
    let m = HEAVISIDE_POINTS;
    let step = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
    let train_x: Vec<f64> = (0..m).map(|j| -1.0 + 2.0 * j as f64 / (m - 1) as f64).collect();
    let test_x: Vec<f64> = (0..m).map(|j| -1.0 + (j as f64 + 0.5) * 2.0 / m as f64).collect();
    let split = |xs: Vec<f64>| SplitData {
        targets: DenseMatrix::from_vec_unchecked(1, xs.len(), xs.iter().map(|&x| step(x)).collect()),
        labels: vec![0; xs.len()],
        inputs: DenseMatrix::from_vec_unchecked(1, xs.len(), xs),
    };
    Dataset {
        name: "toy-heaviside".into(),
        num_classes: 1,
        train: split(train_x),
        test: split(test_x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub classes: usize,
    /// Training points (total, a multiple of `classes`); the test split has
    /// the same size.
    pub n: usize,
    pub dim: usize,
    /// Distance of each class center from the origin along its own axis.
    pub separation: f64,
}

/// Isotropic unit-variance Gaussian clusters centred at `separation * e_c`,
/// balanced (point `j` has class `j % C`).
pub fn gaussian_blobs(cfg: BlobConfig, encoding: TargetEncoding, seed: u64) -> Result<Dataset> {
    let BlobConfig {
        classes,
        n,
        dim,
        separation,
    } = cfg;
    if classes < 2 || dim < classes {
        return Err(Error::InvalidArgument(format!(
            "blobs need C >= 2 and dim >= C, got C = {classes}, dim = {dim}"
        )));
    }
    if n == 0 || n % classes != 0 {
        return Err(Error::InvalidArgument(format!("n = {n} must be a positive multiple of C = {classes}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument("separation must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = || -> Result<SplitData> {
        let labels: Vec<usize> = (0..n).map(|j| j % classes).collect();
        let mut inputs = DenseMatrix::zeros(dim, n);
        for j in 0..n {
            for i in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                inputs[(i, j)] = noise + if i == labels[j] { separation } else { 0.0 };
            }
        }
        Ok(SplitData {
            targets: encode_target(&labels, classes, encoding)?,
            labels,
            inputs,
        })
    };
    let train = split()?;
    let test = split()?;
    Ok(Dataset {
        name: format!("gaussian-blobs(C={classes},n={n},dim={dim},separation={separation})"),
        num_classes: classes,
        train,
        test,
    })
}

/// Fully connected network; layer `l` maps width `l` to width `l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub activation: Activation,
    /// `out x in` per layer.
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

struct ForwardCache {
    /// Layer inputs: `acts[0]` is the batch, `acts[l]` the post-activation of
    /// hidden layer `l`.
    acts: Vec<DenseMatrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<DenseMatrix>,
    output: DenseMatrix,
}

impl Mlp {
    /// Fan-in Gaussian weights `N(0, gain / fan_in)`, zero biases.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let gain = if l + 1 == layers { 1.0 } else { activation.init_gain() };
            let std = libm::sqrt(gain / fan_in as f64);
            let w = DenseMatrix::from_fn(fan_out, fan_in, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            });
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            activation,
            weights,
            biases,
        }
    }

    fn affine(&self, l: usize, x: &DenseMatrix) -> DenseMatrix {
        let mut z = self.weights[l].matmul(x).expect("layer widths agree");
        for (i, b) in self.biases[l].iter().enumerate() {
            z.row_mut(i).iter_mut().for_each(|v| *v += b);
        }
        z
    }

    fn forward_cached(&self, x: &DenseMatrix) -> ForwardCache {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        acts.push(x.clone());
        for l in 0..layers - 1 {
            let z = self.affine(l, &acts[l]);
            let a = DenseMatrix::from_vec_unchecked(
                z.rows(),
                z.cols(),
                z.as_slice().iter().map(|&v| self.activation.apply(v)).collect(),
            );
            pre.push(z);
            acts.push(a);
        }
        let output = self.affine(layers - 1, &acts[layers - 1]);
        ForwardCache { acts, pre, output }
    }

    /// Penultimate activations (`p x n`) and raw outputs (`C x n`).
    pub fn features_and_outputs(&self, x: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let mut cache = self.forward_cached(x);
        (cache.acts.pop().expect("at least one layer"), cache.output)
    }

    /// Gradients of `Σ_j g_j · h(x_j)` given `g = dL/dh` (`C x b`).
    fn backward(&self, cache: &ForwardCache, grad_out: DenseMatrix) -> (Vec<DenseMatrix>, Vec<Vec<f64>>) {
        let layers = self.weights.len();
        let mut gw = vec![DenseMatrix::zeros(0, 0); layers];
        let mut gb = vec![Vec::new(); layers];
        let mut delta = grad_out;
        for l in (0..layers).rev() {
            gw[l] = delta.mul_transpose(&cache.acts[l]).expect("shapes agree");
            gb[l] = delta.row_iter().map(|r| r.iter().sum()).collect();
            if l > 0 {
                let mut up = self.weights[l].transpose_mul(&delta).expect("shapes agree");
                let z = &cache.pre[l - 1];
                for (u, &zv) in up.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *u *= self.activation.derivative(zv);
                }
                delta = up;
            }
        }
        (gw, gb)
    }

    pub fn last_layer(&self) -> Result<LastLayerParams> {
        LastLayerParams::new(
            self.weights.last().expect("at least one layer").clone(),
            self.biases.last().expect("at least one layer").clone(),
        )
    }
}

/// Network state at one requested epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSnapshot {
    pub epoch: usize,
    pub train: EvaluationSet,
    pub test: EvaluationSet,
    pub last_layer: LastLayerParams,
    /// Rescaled loss on the full training split.
    pub train_loss: f64,
    /// Plain squared error of the predictions against the targets.
    pub train_mse: f64,
    pub test_mse: f64,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Rescaled training loss after each epoch (index 0 is initialization).
    pub loss_history: Vec<f64>,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
}

struct Evaluated {
    set: EvaluationSet,
    mse: f64,
    loss: f64,
    accuracy: Option<f64>,
}

fn mse(pred: &DenseMatrix, targets: &DenseMatrix) -> f64 {
    let n = pred.cols().max(1) as f64;
    pred.as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

fn argmax_accuracy(pred: &DenseMatrix, labels: &[usize]) -> f64 {
    let n = pred.cols();
    let hits = (0..n)
        .filter(|&j| {
            let mut best = 0;
            for i in 1..pred.rows() {
                if pred[(i, j)] > pred[(best, j)] {
                    best = i;
                }
            }
            best == labels[j]
        })
        .count();
    hits as f64 / n.max(1) as f64
}

/// Trains the network on `data`, calling `on_snapshot` at every epoch in
/// `checkpoints` (0 = initialization). Deterministic given the seed.
pub fn train_mlp(
    spec: &MlpSpec,
    data: &Dataset,
    checkpoints: &[usize],
    mut on_snapshot: impl FnMut(MlpSnapshot) -> Result<()>,
) -> Result<TrainSummary> {
    spec.validate(data.input_dim(), data.output_dim())?;
    if let Some(&e) = checkpoints.iter().find(|&&e| e > spec.epochs) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint epoch {e} exceeds the {} training epochs",
            spec.epochs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut net = Mlp::init(&spec.layer_widths, spec.activation, &mut rng);
    let alpha = spec.alpha;
    let centered = alpha != 1.0;

    // Initial outputs subtracted from the prediction when rescaling.
    let offset = |x: &DenseMatrix, net: &Mlp| {
        if centered {
            net.features_and_outputs(x).1
        } else {
            DenseMatrix::zeros(data.output_dim(), x.cols())
        }
    };
    let train_offset = offset(&data.train.inputs, &net);
    let test_offset = offset(&data.test.inputs, &net);

    let classify = data.num_classes > 1;
    let evaluate = |net: &Mlp, split: &SplitData, off: &DenseMatrix, which: Split| -> Result<Evaluated> {
        let (phi, h) = net.features_and_outputs(&split.inputs);
        let pred = h.sub(off)?.scaled(alpha);
        let mse_v = mse(&pred, &split.targets);
        let accuracy = classify.then(|| argmax_accuracy(&pred, &split.labels));
        let set = EvaluationSet::new(phi, split.labels.clone(), pred, which)?;
        Ok(Evaluated {
            set,
            loss: mse_v / (alpha * alpha),
            mse: mse_v,
            accuracy,
        })
    };
    let mut emit = |net: &Mlp, epoch: usize| -> Result<(f64, f64, f64)> {
        let tr = evaluate(net, &data.train, &train_offset, Split::Train)?;
        if !tr.loss.is_finite() {
            return Ok((tr.loss, tr.mse, f64::NAN));
        }
        let te = evaluate(net, &data.test, &test_offset, Split::Test)?;
        let out = (tr.loss, tr.mse, te.mse);
        if checkpoints.contains(&epoch) {
            on_snapshot(MlpSnapshot {
                epoch,
                train: tr.set,
                test: te.set,
                last_layer: net.last_layer()?,
                train_loss: tr.loss,
                train_mse: tr.mse,
                test_mse: te.mse,
                train_accuracy: tr.accuracy,
            })?;
        }
        Ok(out)
    };

    let (l0, mut train_mse, mut test_mse) = emit(&net, 0)?;
    let mut loss_history = vec![l0];

    let n = data.train.inputs.cols();
    let layers = net.weights.len();
    let mut vel_w: Vec<DenseMatrix> = net.weights.iter().map(|w| DenseMatrix::zeros(w.rows(), w.cols())).collect();
    let mut vel_b: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut first_step = true;
    let mut order: Vec<usize> = (0..n).collect();
    let opt = SgdConfig {
        lr: spec.optimizer.lr / (alpha * alpha),
        ..spec.optimizer
    };

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            let x = data.train.inputs.select_columns(batch);
            let y = data.train.targets.select_columns(batch);
            let off = train_offset.select_columns(batch);
            let cache = net.forward_cached(&x);
            // L = (1/(alpha^2 b)) Σ ||alpha (h - h0) - y||^2
            let b = batch.len() as f64;
            let scale = 2.0 / (alpha * b);
            let grad_out = DenseMatrix::from_fn(y.rows(), y.cols(), |i, j| {
                scale * (alpha * (cache.output[(i, j)] - off[(i, j)]) - y[(i, j)])
            });
            let (gw, gb) = net.backward(&cache, grad_out);
            for l in 0..layers {
                sgd_update(
                    net.weights[l].as_mut_slice(),
                    gw[l].as_slice(),
                    vel_w[l].as_mut_slice(),
                    opt,
                    first_step,
                );
                sgd_update(&mut net.biases[l], &gb[l], &mut vel_b[l], opt, first_step);
            }
            first_step = false;
        }
        let (loss, tr, te) = emit(&net, epoch)?;
        if !loss.is_finite() || net.weights.iter().any(|w| w.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                epoch,
                last_finite: loss_history.last().copied(),
            });
        }
        loss_history.push(loss);
        train_mse = tr;
        test_mse = te;
    }
    Ok(TrainSummary {
        loss_history,
        final_train_mse: train_mse,
        final_test_mse: test_mse,
    })
}

/// Momentum SGD with coupled weight decay:
/// `g += wd θ; v = m v + g (v = g on the first step); θ -= lr v`.
fn sgd_update(theta: &mut [f64], grad: &[f64], vel: &mut [f64], opt: SgdConfig, first: bool) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(vel.iter_mut()) {
        let g = g + opt.weight_decay * *t;
        *v = if first { g } else { opt.momentum * *v + g };
        *t -= opt.lr * *v;
    }
}
