//! Backpropagation and mini-batch training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, logistic, DropoutMask, Layer, Network};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub early_stopping_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            validation_fraction: 0.1,
            early_stopping_patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// What happened during [`train_with_report`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training cross-entropy of each epoch, accumulated over its
    /// mini-batches.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose weights were returned (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

/// Gradient of the mean cross-entropy, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g *= s);
            l.bias.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// All components in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Per-sample scratch space for forward and backward passes.
struct Workspace {
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    /// Inputs of each layer; `inputs[0]` is the sample itself.
    inputs: Vec<Vec<f64>>,
    grad_out: Vec<f64>,
    grad_in: Vec<f64>,
}

impl Workspace {
    fn new(net: &Network) -> Self {
        Workspace {
            pre: net.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            inputs: net.layers.iter().map(|l| vec![0.0; l.inputs]).collect(),
            grad_out: Vec::new(),
            grad_in: Vec::new(),
        }
    }
}

/// Forward one sample, then accumulate its loss gradient into `grads`.
/// Returns the sample's cross-entropy.
fn accumulate(
    net: &Network,
    x: &[f64],
    y: u8,
    mask: Option<&DropoutMask>,
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> f64 {
    let act = net.spec.activation;
    let last = net.layers.len() - 1;
    ws.inputs[0].copy_from_slice(x);
    for (k, layer) in net.layers.iter().enumerate() {
        let (pre, inputs) = (&mut ws.pre[k], &ws.inputs[k]);
        layer.affine(inputs, pre);
        if k < last {
            let next = &mut ws.inputs[k + 1];
            for (j, (h, &a)) in next.iter_mut().zip(pre.iter()).enumerate() {
                *h = act.apply(a);
                if let Some(m) = mask {
                    *h *= m.layers[k][j];
                }
            }
        }
    }
    let (z0, z1) = (ws.pre[last][0], ws.pre[last][1]);
    let loss = log_sum_exp(z0, z1) - if y == 1 { z1 } else { z0 };
    let p1 = logistic(z1 - z0);
    let g1 = p1 - f64::from(y);

    ws.grad_out.clear();
    ws.grad_out.extend_from_slice(&[-g1, g1]);
    for k in (0..=last).rev() {
        let layer = &net.layers[k];
        let g = &mut grads.layers[k];
        let input = &ws.inputs[k];
        for (o, &go) in ws.grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            g.bias[o] += go;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (w, &h) in row.iter_mut().zip(input) {
                *w += go * h;
            }
        }
        if k == 0 {
            break;
        }
        // Gradient w.r.t. this layer's input, then back through the
        // previous layer's mask and activation.
        ws.grad_in.clear();
        ws.grad_in.resize(layer.inputs, 0.0);
        for (o, &go) in ws.grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (gi, &w) in ws.grad_in.iter_mut().zip(row) {
                *gi += go * w;
            }
        }
        let pre = &ws.pre[k - 1];
        let out = input;
        for (j, gi) in ws.grad_in.iter_mut().enumerate() {
            let scale = mask.map_or(1.0, |m| m.layers[k - 1][j]);
            // `out` holds the masked activation; undo the mask to get h.
            let h = if scale == 0.0 { 0.0 } else { out[j] / scale };
            *gi *= scale * act.derivative(pre[j], h);
        }
        std::mem::swap(&mut ws.grad_out, &mut ws.grad_in);
    }
    loss
}

fn check_batch(net: &Network, features: &Matrix, labels: &[u8]) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if features.cols() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: features.cols(),
        });
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension {
            expected: features.rows(),
            got: labels.len(),
        });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Exact gradient of the mean cross-entropy over a batch, dropout disabled.
pub fn gradient(net: &Network, features: &Matrix, labels: &[u8]) -> Result<Gradients> {
    check_batch(net, features, labels)?;
    let mut ws = Workspace::new(net);
    let mut grads = Gradients::zeros_like(net);
    for (x, &y) in features.iter_rows().zip(labels) {
        accumulate(net, x, y, None, &mut ws, &mut grads);
    }
    grads.scale(1.0 / features.rows() as f64);
    Ok(grads)
}

/// Mean cross-entropy over a batch, dropout disabled.
pub fn loss(net: &Network, features: &Matrix, labels: &[u8]) -> Result<f64> {
    check_batch(net, features, labels)?;
    let total: f64 = features
        .iter_rows()
        .zip(labels)
        .map(|(x, &y)| {
            let z = net.forward_unchecked(x, None);
            log_sum_exp(z.z0, z.z1) - if y == 1 { z.z1 } else { z.z0 }
        })
        .sum();
    Ok(total / features.rows() as f64)
}

enum State {
    Sgd,
    Adam { m: Gradients, v: Gradients, t: i32 },
}

impl State {
    fn new(opt: Optimizer, net: &Network) -> Self {
        match opt {
            Optimizer::Sgd => State::Sgd,
            Optimizer::Adam => State::Adam {
                m: Gradients::zeros_like(net),
                v: Gradients::zeros_like(net),
                t: 0,
            },
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        match self {
            State::Sgd => {
                for (l, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                        *w -= lr * d;
                    }
                    for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * d;
                    }
                }
            }
            State::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                        v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                };
                for (k, l) in net.layers_mut().iter_mut().enumerate() {
                    let g = &grads.layers[k];
                    update(&mut l.weights, &g.weights, &mut m.layers[k].weights, &mut v.layers[k].weights);
                    update(&mut l.bias, &g.bias, &mut m.layers[k].bias, &mut v.layers[k].bias);
                }
            }
        }
    }
}

/// Train by mini-batch gradient descent on cross-entropy. See
/// [`train_with_report`].
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_with_report(net, data, cfg).map(|(n, _)| n)
}

/// Train a copy of `net` on `data`.
///
/// A `validation_fraction` share of the rows (chosen by a seeded shuffle)
/// is held out; with patience > 0 training stops once validation loss has
/// not improved for that many epochs, and the best-validation weights are
/// returned. Dropout is active during training when the network's spec
/// asks for it. Identical inputs give bit-identical weights.
pub fn train_with_report(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    check_batch(net, &data.features, &data.labels)?;

    let mut report = TrainReport::default();
    if data.class_counts().contains(&0) {
        let msg = format!("training data contains a single class ({} rows)", data.len());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_named(cfg.seed, "validation-split")));
    let n_val = (data.len() as f64 * cfg.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    if train_idx.is_empty() {
        return Err(Error::Config("validation split leaves no training rows".into()));
    }
    if cfg.batch_size > train_idx.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training rows",
            cfg.batch_size,
            train_idx.len()
        )));
    }
    let val_x = data.features.select_rows(val_idx);
    let val_y: Vec<u8> = val_idx.iter().map(|&i| data.labels[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let mut current = net.clone();
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let early_stopping = !val_idx.is_empty() && cfg.early_stopping_patience > 0;

    let mut shuffle_rng = seed::rng(seed::derive_named(cfg.seed, "shuffle"));
    let mut dropout_rng = seed::rng(seed::derive_named(cfg.seed, "dropout"));
    let dropout = current.spec.dropout_rate > 0.0;
    let mut state = State::new(cfg.optimizer, &current);
    let mut ws = Workspace::new(&current);
    let mut grads = Gradients::zeros_like(&current);

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                let mask = dropout.then(|| current.sample_mask(&mut dropout_rng));
                epoch_loss += accumulate(
                    &current,
                    data.features.row(i),
                    data.labels[i],
                    mask.as_ref(),
                    &mut ws,
                    &mut grads,
                );
            }
            grads.scale(1.0 / batch.len() as f64);
            state.step(&mut current, &grads, cfg.learning_rate);
        }
        epoch_loss /= train_idx.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::NanLoss { epoch });
        }
        report.train_loss.push(epoch_loss);

        if val_idx.is_empty() {
            report.best_epoch = Some(epoch);
            continue;
        }
        let val = loss(&current, &val_x, &val_y)?;
        if !val.is_finite() {
            return Err(Error::NanLoss { epoch });
        }
        report.val_loss.push(val);
        if val < best_val {
            best_val = val;
            best = current.clone();
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if early_stopping && since_best >= cfg.early_stopping_patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    let out = if val_idx.is_empty() || report.best_epoch.is_none() {
        current
    } else {
        best
    };
    Ok((out, report))
}
