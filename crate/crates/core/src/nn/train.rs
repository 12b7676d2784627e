use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};
use crate::error::{contract, Error, Result};

/// Mini-batch training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without a 1e-6 improvement before stopping; 0 disables.
    pub patience: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Cosine-anneal the learning rate towards 1% of its initial value over
    /// the planned number of steps.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            patience: 20,
            max_steps: None,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive when set".into()));
        }
        Ok(())
    }
}

/// Improvement below this does not reset the early-stopping counter.
const MIN_IMPROVEMENT: f64 = 1e-6;

/// Adaptive moment estimation over an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .and(&grads.weights[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m.bias[i])
                .and(&mut self.v.bias[i])
                .and(&grads.bias[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
        }
    }
}

/// Learning rate at `step` of `planned` under cosine annealing to 1%.
pub fn cosine_rate(base: f64, step: usize, planned: usize) -> f64 {
    let progress = (step as f64 / planned.max(1) as f64).min(1.0);
    let floor = 0.01 * base;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Fits `net` to `targets` under mean-squared error averaged over every
/// output component. Returns the trained network and per-epoch mean loss.
pub fn train_regression(
    mut net: Mlp,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(contract("training set is empty"));
    }
    if targets.nrows() != n {
        return Err(contract(format!(
            "{n} inputs but {} targets",
            targets.nrows()
        )));
    }
    if inputs.ncols() != net.input_dim() || targets.ncols() != net.output_dim() {
        return Err(contract(format!(
            "data is {}->{}, network is {}->{}",
            inputs.ncols(),
            targets.ncols(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Training("training data contains non-finite values".into()));
    }

    let batch = cfg.batch_size.min(n);
    let outputs = targets.ncols() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut steps = 0usize;
    let batches_per_epoch = n.div_ceil(batch);
    let planned = cfg
        .max_steps
        .unwrap_or(usize::MAX)
        .min(cfg.epochs.saturating_mul(batches_per_epoch));

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            if cfg.max_steps.is_some_and(|cap| steps >= cap) {
                if seen > 0 {
                    history.push(total / seen as f64);
                }
                break 'epochs;
            }
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let trace = net.forward_trace(x.view())?;
            let diff: Array2<f64> = trace.output() - &y;
            let b = chunk.len() as f64;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / (b * outputs);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} at epoch {epoch}, step {steps}"
                )));
            }
            let d_out = diff * (2.0 / (b * outputs));
            let (grads, _) = net.backward(&trace, d_out.view())?;
            if cfg.cosine_decay {
                adam.set_learning_rate(cosine_rate(cfg.learning_rate, steps, planned));
            }
            adam.step(&mut net, &grads);
            steps += 1;
            total += loss * b;
            seen += chunk.len();
        }
        let epoch_loss = total / seen as f64;
        history.push(epoch_loss);
        if epoch_loss < best - MIN_IMPROVEMENT {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    if !net.is_finite() {
        return Err(Error::Training("parameters diverged to non-finite values".into()));
    }
    Ok((net, history))
}
