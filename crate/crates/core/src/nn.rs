//! Feedforward binary classifier with analytic input gradients.
//!
//! The model is a stack of dense layers, ELU in the hidden layers and a single
//! sigmoid output neuron. `F(x)` is the classifier output in (0,1); the latent
//! model `f(x)` is the pre-sigmoid activation of the output neuron, which is
//! what the interpretation pipeline differentiates — the saturating sigmoid is
//! excluded from all gradients.
//!
//! Training is plain single-threaded SGD-with-Adam over mini-batches: binary
//! cross-entropy computed from the latent output in log-sum-exp form, L2
//! penalty on hidden weights and biases, inverted dropout after each hidden
//! layer, halve-on-plateau learning rate decay and early stopping on
//! validation loss. Everything is deterministic given the config seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::rng::stream;
use crate::{Error, Result};

/// Activation functions; value and derivative are defined from the
/// pre-activation `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp() - 1.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// softplus(z) = ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// One dense layer; weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine_into(&self, input: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let acc: f64 = row.iter().zip(input).map(|(w, a)| w * a).sum();
            z.push(acc + b);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MLPModel {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl MLPModel {
    /// New model with ELU hidden layers and a single sigmoid output neuron.
    /// Weights are uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<MLPModel> {
        if input_dim == 0 || hidden.iter().any(|&w| w == 0) {
            return Err(Error::Usage("layer widths must be at least 1".into()));
        }
        let mut rng = stream(seed, 0x11A7);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &width in hidden {
            layers.push(init_layer(&mut rng, width, in_dim, Activation::Elu));
            in_dim = width;
        }
        layers.push(init_layer(&mut rng, 1, in_dim, Activation::Sigmoid));
        let model = MLPModel { input_dim, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let mut in_dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim != in_dim {
                return Err(Error::Data(format!(
                    "layer {} expects {} inputs, previous layer provides {}",
                    i, layer.in_dim, in_dim
                )));
            }
            if layer.weights.len() != layer.out_dim * layer.in_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::Data(format!("layer {} parameter shape mismatch", i)));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("layer {} has non-finite parameters", i)));
            }
            in_dim = layer.out_dim;
        }
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::Data("model has no layers".into()))?;
        if last.out_dim != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::Data(
                "final layer must be a single sigmoid neuron".into(),
            ));
        }
        Ok(())
    }

    /// Classifier output `F(x)` in (0,1) and latent pre-sigmoid output `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64)> {
        let f = self.latent(x)?;
        Ok((sigmoid(f), f))
    }

    /// Latent model: pre-activation of the output neuron.
    pub fn latent(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&a, &mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite pre-activation in layer {}",
                    i
                )));
            }
            if i + 1 == self.layers.len() {
                return Ok(z[0]);
            }
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        unreachable!("validated model has at least one layer")
    }

    /// Exact analytic gradient of the latent model with respect to the input,
    /// computed by reverse accumulation. The output sigmoid is excluded.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.input_gradient_of(x, self.layers.len() - 1, 0)
    }

    /// Gradient of the pre-activation of any neuron: library hook for
    /// interpreting hidden-layer units. `layer` and `neuron` are zero-indexed.
    pub fn input_gradient_of(&self, x: &[f64], layer: usize, neuron: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if layer >= self.layers.len() || neuron >= self.layers[layer].out_dim {
            return Err(Error::Usage(format!(
                "no neuron {} in layer {}",
                neuron, layer
            )));
        }

        // Forward, keeping pre-activations up to the target layer.
        let mut activations: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(layer + 1);
        for l in 0..=layer {
            let mut z = Vec::new();
            self.layers[l].affine_into(&activations[l], &mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite pre-activation in layer {}",
                    l
                )));
            }
            let act: Vec<f64> = z.iter().map(|&v| self.layers[l].activation.apply(v)).collect();
            zs.push(z);
            activations.push(act);
        }

        // Seed d(target)/dz at the target neuron, then pull back to the input.
        // The target is a pre-activation, so its own activation is skipped.
        let mut delta = vec![0.0; self.layers[layer].out_dim];
        delta[neuron] = 1.0;
        for l in (0..=layer).rev() {
            let lay = &self.layers[l];
            let mut prev = vec![0.0; lay.in_dim];
            for (j, row) in lay.weights.chunks_exact(lay.in_dim).enumerate() {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if l > 0 {
                // Chain through the activation of the layer below.
                let below = &self.layers[l - 1];
                for (p, z) in prev.iter_mut().zip(&zs[l - 1]) {
                    *p *= below.activation.derivative(*z);
                }
            }
            delta = prev;
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        Ok(delta)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Usage(format!(
                "model expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// Frobenius norm of each hidden layer's weight matrix.
    pub fn hidden_weight_norms(&self) -> Vec<f64> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>().sqrt())
            .collect()
    }

    /// Versioned checkpoint text (JSON). Constants round-trip exactly.
    pub fn checkpoint_string(&self) -> String {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MLPModel> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    model: MLPModel,
}

/// SHA-256 of the canonical checkpoint text; ties downstream artifacts to the
/// exact parameters that produced them.
pub fn model_hash(model: &MLPModel) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.checkpoint_string().as_bytes());
    let digest = hasher.finalize();
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{:02x}", b);
        s
    })
}

fn init_layer(rng: &mut impl Rng, out_dim: usize, in_dim: usize, activation: Activation) -> Layer {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let weights = (0..out_dim * in_dim)
        .map(|_| {
            let u: f64 = rng.random();
            (2.0 * u - 1.0) * bound
        })
        .collect();
    Layer {
        out_dim,
        in_dim,
        weights,
        bias: vec![0.0; out_dim],
        activation,
    }
}

/// Training hyperparameters. The default is the desk-scale profile; the full
/// paper-scale architecture is available via [`TrainConfig::paper_scale`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_patience: usize,
    pub stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![128, 128],
            l2: 1e-4,
            dropout: 0.2,
            batch_size: 100,
            max_epochs: 1000,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            decay_patience: 10,
            stop_patience: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Two hidden layers of 1000 ELU neurons.
    pub fn paper_scale() -> Self {
        TrainConfig {
            hidden: vec![1000, 1000],
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage("dropout must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Usage("learning rate must be positive".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Usage("l2 penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub learning_rate: f64,
}

pub type TrainHistory = Vec<EpochStats>;

/// Writes history as `epoch,train_loss,val_loss,val_acc,lr`.
pub fn save_history(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for row in history {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            row.epoch, row.train_loss, row.val_loss, row.val_acc, row.learning_rate
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[usize]) -> Adam {
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(&mut self, tensor: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        let (m, v) = (&mut self.m[tensor], &mut self.v[tensor]);
        for ((p, &g), (mi, vi)) in params
            .iter_mut()
            .zip(grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
            *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Scratch buffers reused across samples within one training run.
struct TrainScratch {
    zs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    deltas: Vec<f64>,
    deltas_prev: Vec<f64>,
}

/// Trains a model, returning the parameters with the best validation loss and
/// the per-epoch history. Minimizes binary cross-entropy plus an L2 penalty on
/// hidden-layer weights and biases; dropout is applied after each hidden layer
/// during training only.
pub fn train(
    model: MLPModel,
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MLPModel, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    if ds_train.n_samples() == 0 || ds_val.n_samples() == 0 {
        return Err(Error::Usage("training and validation sets must be nonempty".into()));
    }
    if ds_train.n_features() != model.input_dim || ds_val.n_features() != model.input_dim {
        return Err(Error::Usage(format!(
            "model expects {} features, data has {}",
            model.input_dim,
            ds_train.n_features()
        )));
    }

    let mut model = model;
    let mut best = model.clone();
    let mut history = Vec::new();
    if cfg.max_epochs == 0 {
        return Ok((best, history));
    }

    let mut rng = stream(cfg.seed, 0x7EA1);
    let n_layers = model.layers.len();
    let shapes: Vec<usize> = model
        .layers
        .iter()
        .flat_map(|l| [l.weights.len(), l.bias.len()])
        .collect();
    let mut adam = Adam::new(&shapes);
    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
    let mut scratch = TrainScratch {
        zs: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
        acts: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
        masks: model.layers.iter().map(|l| vec![1.0; l.out_dim]).collect(),
        deltas: Vec::new(),
        deltas_prev: Vec::new(),
    };

    let mut lr = cfg.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut decay_stall = 0usize;
    let mut stop_stall = 0usize;
    let mut indices: Vec<usize> = (0..ds_train.n_samples()).collect();

    for epoch in 0..cfg.max_epochs {
        // Shuffle, then sweep mini-batches.
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let mut epoch_data_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            let inv_batch = 1.0 / batch.len() as f64;
            for &sample in batch {
                let x = &ds_train.x[sample];
                let target = f64::from(ds_train.y[sample]);
                let latent = forward_train(&model, x, cfg.dropout, &mut rng, &mut scratch);
                if !latent.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite latent output at epoch {}",
                        epoch
                    )));
                }
                epoch_data_loss += softplus(latent) - target * latent;
                let dloss_dlatent = (sigmoid(latent) - target) * inv_batch;
                backward_train(&model, x, dloss_dlatent, &mut grads, &mut scratch, n_layers);
            }
            // L2 penalty gradient on hidden layers only (not the output layer).
            if cfg.l2 > 0.0 {
                for l in 0..n_layers - 1 {
                    for (g, w) in grads[2 * l].iter_mut().zip(&model.layers[l].weights) {
                        *g += 2.0 * cfg.l2 * w;
                    }
                    for (g, b) in grads[2 * l + 1].iter_mut().zip(&model.layers[l].bias) {
                        *g += 2.0 * cfg.l2 * b;
                    }
                }
            }
            adam.begin_step();
            for l in 0..n_layers {
                adam.update(2 * l, &mut model.layers[l].weights, &grads[2 * l], lr);
                adam.update(2 * l + 1, &mut model.layers[l].bias, &grads[2 * l + 1], lr);
            }
        }

        let penalty: f64 = if cfg.l2 > 0.0 {
            cfg.l2
                * model.layers[..n_layers - 1]
                    .iter()
                    .flat_map(|l| l.weights.iter().chain(&l.bias))
                    .map(|w| w * w)
                    .sum::<f64>()
        } else {
            0.0
        };
        let train_loss = epoch_data_loss / ds_train.n_samples() as f64 + penalty;
        if !train_loss.is_finite() {
            return Err(Error::Training(format!(
                "training loss diverged at epoch {}",
                epoch
            )));
        }

        let (val_loss, val_acc) = validation_stats(&model, ds_val)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            learning_rate: lr,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            decay_stall = 0;
            stop_stall = 0;
        } else {
            decay_stall += 1;
            stop_stall += 1;
            if stop_stall >= cfg.stop_patience {
                break;
            }
            if decay_stall >= cfg.decay_patience {
                lr *= cfg.lr_decay;
                decay_stall = 0;
            }
        }
    }
    Ok((best, history))
}

/// Initializes a model from the config and trains it.
pub fn train_new(
    input_dim: usize,
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MLPModel, TrainHistory)> {
    let model = MLPModel::init(input_dim, &cfg.hidden, cfg.seed)?;
    train(model, ds_train, ds_val, cfg)
}

/// Mean binary cross-entropy and accuracy on a dataset (dropout off).
pub fn validation_stats(model: &MLPModel, ds: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in ds.x.iter().zip(&ds.y) {
        let latent = model.latent(x)?;
        let target = f64::from(y);
        loss += softplus(latent) - target * latent;
        if (latent > 0.0) == (y == 1) {
            correct += 1;
        }
    }
    let n = ds.n_samples() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn forward_train(
    model: &MLPModel,
    x: &[f64],
    dropout: f64,
    rng: &mut impl Rng,
    scratch: &mut TrainScratch,
) -> f64 {
    let n_layers = model.layers.len();
    let keep = 1.0 - dropout;
    for l in 0..n_layers {
        let layer = &model.layers[l];
        let input: &[f64] = if l == 0 { x } else { &scratch.acts[l - 1] };
        let z = &mut scratch.zs[l];
        z.clear();
        for (row, b) in layer.weights.chunks_exact(layer.in_dim).zip(&layer.bias) {
            let acc: f64 = row.iter().zip(input).map(|(w, a)| w * a).sum();
            z.push(acc + b);
        }
        if l + 1 == n_layers {
            return z[0];
        }
        let act = &mut scratch.acts[l];
        let mask = &mut scratch.masks[l];
        act.clear();
        mask.clear();
        for &zv in z.iter() {
            // Inverted dropout: scale kept units at train time so inference
            // needs no rescaling.
            let m = if dropout > 0.0 {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            } else {
                1.0
            };
            mask.push(m);
            act.push(layer.activation.apply(zv) * m);
        }
    }
    unreachable!()
}

fn backward_train(
    model: &MLPModel,
    x: &[f64],
    dloss_dlatent: f64,
    grads: &mut [Vec<f64>],
    scratch: &mut TrainScratch,
    n_layers: usize,
) {
    scratch.deltas.clear();
    scratch.deltas.push(dloss_dlatent);
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let input: &[f64] = if l == 0 { x } else { &scratch.acts[l - 1] };
        // Parameter gradients: dW = delta ⊗ input, db = delta.
        let (gw, gb) = {
            let (a, b) = grads.split_at_mut(2 * l + 1);
            (&mut a[2 * l], &mut b[0])
        };
        for (j, &d) in scratch.deltas.iter().enumerate() {
            gb[j] += d;
            if d != 0.0 {
                let row = &mut gw[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
        }
        if l == 0 {
            break;
        }
        // delta for the layer below: W^T delta, chained through dropout mask
        // and activation derivative.
        let prev = &mut scratch.deltas_prev;
        prev.clear();
        prev.resize(layer.in_dim, 0.0);
        for (j, &d) in scratch.deltas.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
            for (p, w) in prev.iter_mut().zip(row) {
                *p += d * w;
            }
        }
        let below = &model.layers[l - 1];
        for ((p, &z), &m) in prev
            .iter_mut()
            .zip(&scratch.zs[l - 1])
            .zip(&scratch.masks[l - 1])
        {
            *p *= below.activation.derivative(z) * m;
        }
        std::mem::swap(&mut scratch.deltas, &mut scratch.deltas_prev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, DatasetMeta, ExperimentId, SamplingDomain};

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        // y = x1 > 0, linearly separable, no noise.
        let mut rng = stream(seed, 1);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect();
        let y = x.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        Dataset {
            x,
            y,
            meta: DatasetMeta {
                experiment: ExperimentId::new(1).unwrap(),
                seed,
                noise: 0.0,
                n_samples: n,
                domain: SamplingDomain::new(vec![(-1.0, 1.0); 2]).unwrap(),
            },
        }
    }

    #[test]
    fn init_shapes_match() {
        let m = MLPModel::init(2, &[128, 128], 0).unwrap();
        let dims: Vec<(usize, usize)> = m.layers.iter().map(|l| (l.out_dim, l.in_dim)).collect();
        assert_eq!(dims, vec![(128, 2), (128, 128), (1, 128)]);

        let paper = MLPModel::init(6, &[1000, 1000], 0).unwrap();
        let dims: Vec<(usize, usize)> =
            paper.layers.iter().map(|l| (l.out_dim, l.in_dim)).collect();
        assert_eq!(dims, vec![(1000, 6), (1000, 1000), (1, 1000)]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MLPModel::init(3, &[16, 16], 9).unwrap();
        let b = MLPModel::init(3, &[16, 16], 9).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weights, lb.weights);
            assert_eq!(la.bias, lb.bias);
        }
    }

    #[test]
    fn forward_hand_set_linear() {
        // Single linear output layer W=[2,0], b=0: f = 2*x1.
        let m = MLPModel {
            input_dim: 2,
            layers: vec![Layer {
                out_dim: 1,
                in_dim: 2,
                weights: vec![2.0, 0.0],
                bias: vec![0.0],
                activation: Activation::Sigmoid,
            }],
        };
        let (big_f, f) = m.forward(&[1.0, 0.0]).unwrap();
        assert_eq!(f, 2.0);
        assert!((big_f - sigmoid(2.0)).abs() < 1e-15);
        assert!((big_f - 0.8808).abs() < 1e-4);
        let (mid, f0) = m.forward(&[0.0, 5.0]).unwrap();
        assert_eq!(f0, 0.0);
        assert_eq!(mid, 0.5);
    }

    #[test]
    fn sigmoid_is_strictly_monotone() {
        let mut last = f64::NEG_INFINITY;
        for i in -50..=50 {
            let v = sigmoid(i as f64 * 0.3);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn gradient_linear_model_is_weights() {
        let m = MLPModel {
            input_dim: 2,
            layers: vec![Layer {
                out_dim: 1,
                in_dim: 2,
                weights: vec![3.0, -1.5],
                bias: vec![0.7],
                activation: Activation::Sigmoid,
            }],
        };
        for x in [[0.0, 0.0], [1.0, 2.0], [-5.0, 0.3]] {
            assert_eq!(m.input_gradient(&x).unwrap(), vec![3.0, -1.5]);
        }
    }

    #[test]
    fn gradient_zero_final_weights() {
        let mut m = MLPModel::init(2, &[8], 3).unwrap();
        m.layers.last_mut().unwrap().weights.fill(0.0);
        let g = m.input_gradient(&[0.4, -0.2]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn elu_is_c1_at_zero() {
        let d = (Activation::Elu.derivative(-1e-9) - Activation::Elu.derivative(1e-9)).abs();
        assert!(d < 1e-8);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = toy_dataset(50, 1);
        let cfg = TrainConfig {
            max_epochs: 0,
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let model = MLPModel::init(2, &[8], 5).unwrap();
        let before = model.checkpoint_string();
        let (after, history) = train(model, &ds, &ds, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(before, after.checkpoint_string());
    }

    #[test]
    fn trains_linearly_separable_toy() {
        let ds = toy_dataset(500, 2);
        let (train_ds, val_ds) = crate::dataset::split(&ds, 0.8, 0).unwrap();
        let cfg = TrainConfig {
            hidden: vec![16, 16],
            max_epochs: 120,
            stop_patience: 20,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train_new(2, &train_ds, &val_ds, &cfg).unwrap();
        let best_acc = history.iter().map(|h| h.val_acc).fold(0.0, f64::max);
        assert!(best_acc >= 0.99, "best val acc {}", best_acc);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_dataset(120, 4);
        let (tr, va) = crate::dataset::split(&ds, 0.75, 0).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            max_epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let (m1, h1) = train_new(2, &tr, &va, &cfg).unwrap();
        let (m2, h2) = train_new(2, &tr, &va, &cfg).unwrap();
        assert_eq!(m1.checkpoint_string(), m2.checkpoint_string());
        assert_eq!(h1, h2);
    }

    #[test]
    fn checkpoint_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = MLPModel::init(3, &[7, 5], 13).unwrap();
        m.save(&path).unwrap();
        let back = MLPModel::load(&path).unwrap();
        assert_eq!(m.checkpoint_string(), back.checkpoint_string());
        assert_eq!(model_hash(&m), model_hash(&back));
    }
}
