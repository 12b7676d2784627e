//! Surrogate of the evaluator trained on pseudo-samples.
//!
//! Every ordered pair of evaluated designs `(x_i, x_j)` becomes one training
//! point: input `[x_i, x_j - x_i]`, target `f(x_j)`. N evaluations therefore
//! yield N² samples, and the critic learns to answer "what happens to the
//! specs if I move from `x` by `dx`".

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::nn::{train_regression, Activation, Mlp, TrainConfig};
use crate::problem::SpecVector;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    /// Index of the anchor design `x_i`.
    pub from: usize,
    /// Index of the design whose specs are the target.
    pub to: usize,
    /// `[x_i, x_j - x_i]`, length `2d`.
    pub input: Vec<f64>,
    pub target: SpecVector,
}

/// Builds pseudo-samples from a population in unit coordinates.
///
/// All `N²` ordered pairs are returned when `N² <= cap`. Otherwise `cap`
/// pairs are drawn uniformly without replacement, always keeping the `N`
/// diagonal pairs `(i, i)`.
pub fn generate_pseudo_samples(
    designs: &[Vec<f64>],
    specs: &[SpecVector],
    cap: usize,
    seed: u64,
) -> Result<Vec<PseudoSample>> {
    let n = designs.len();
    if n == 0 {
        return Err(contract("cannot build pseudo-samples from an empty population"));
    }
    if specs.len() != n {
        return Err(contract(format!("{n} designs but {} spec vectors", specs.len())));
    }
    let d = designs[0].len();
    if designs.iter().any(|x| x.len() != d) {
        return Err(contract("designs differ in dimension"));
    }
    let make = |i: usize, j: usize| {
        let mut input = Vec::with_capacity(2 * d);
        input.extend_from_slice(&designs[i]);
        input.extend(designs[j].iter().zip(&designs[i]).map(|(b, a)| b - a));
        PseudoSample {
            from: i,
            to: j,
            input,
            target: specs[j].clone(),
        }
    };

    if n * n <= cap {
        return Ok((0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| make(i, j))
            .collect());
    }
    if cap < n {
        return Err(contract(format!(
            "pseudo-sample cap {cap} cannot hold the {n} diagonal pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off_diagonal = n * (n - 1);
    let mut picked = rand::seq::index::sample(&mut rng, off_diagonal, cap - n).into_vec();
    picked.sort_unstable();
    let mut out: Vec<PseudoSample> = (0..n).map(|i| make(i, i)).collect();
    out.extend(picked.into_iter().map(|k| {
        let i = k / (n - 1);
        let r = k % (n - 1);
        let j = if r >= i { r + 1 } else { r };
        make(i, j)
    }));
    Ok(out)
}

/// Architecture and training settings of the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Upper bound on pseudo-samples per training round.
    pub pseudo_cap: usize,
    /// Continue from the previous round's weights instead of re-initializing.
    pub warm_start: bool,
    pub train: TrainConfig,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            activation: Activation::Silu,
            pseudo_cap: 40_000,
            warm_start: false,
            train: TrainConfig {
                epochs: 200,
                batch_size: 64,
                learning_rate: 3e-3,
                patience: 20,
                max_steps: Some(600),
                seed: 0,
                cosine_decay: true,
            },
        }
    }
}

/// Trained critic: the network plus the target standardization it was fit in.
#[derive(Debug, Clone)]
pub struct CriticModel {
    net: Mlp,
    mean: Vec<f64>,
    std: Vec<f64>,
    loss_history: Vec<f64>,
    sample_count: usize,
}

impl CriticModel {
    /// Wraps an already-trained network predicting standardized targets
    /// `(f - mean) / std`.
    pub fn from_parts(net: Mlp, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let out = net.output_dim();
        if net.input_dim() % 2 != 0 || mean.len() != out || std.len() != out {
            return Err(contract("critic network, mean and std disagree in shape"));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(contract("critic standardization must be finite with positive std"));
        }
        Ok(Self { net, mean, std, loss_history: Vec::new(), sample_count: 0 })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Design dimension `d` (the network sees `2d` inputs).
    pub fn design_dim(&self) -> usize {
        self.net.input_dim() / 2
    }

    /// Length of predicted spec vectors, `m + 1`.
    pub fn spec_len(&self) -> usize {
        self.net.output_dim()
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn target_std(&self) -> &[f64] {
        &self.std
    }

    /// Prediction of `f(x + dx)`.
    pub fn predict_spec(&self, x: &[f64], dx: &[f64]) -> Result<SpecVector> {
        let d = self.design_dim();
        if x.len() != d || dx.len() != d {
            return Err(contract(format!(
                "critic expects two {d}-vectors, got {} and {}",
                x.len(),
                dx.len()
            )));
        }
        let mut input = Vec::with_capacity(2 * d);
        input.extend_from_slice(x);
        input.extend_from_slice(dx);
        let z = self.net.forward(&input)?;
        Ok(SpecVector::new(self.destandardize_row(&z)))
    }

    /// Batched predictions for rows `[x, dx]`, in spec units.
    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut z = self.net.forward_batch(inputs)?;
        for mut row in z.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        Ok(z)
    }

    /// Rows of `cotangent^T * d(prediction)/d([x, dx])`, with the cotangent
    /// given in spec units.
    pub fn input_gradient_batch(
        &self,
        inputs: ArrayView2<f64>,
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let mut scaled = cotangent.to_owned();
        for mut row in scaled.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= self.std[k];
            }
        }
        self.net.input_gradient_batch(inputs, scaled.view())
    }

    fn destandardize_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Trains a critic on pseudo-samples. With `warm` set (and matching shape),
/// training continues from those weights instead of a fresh initialization.
pub fn train_critic(
    samples: &[PseudoSample],
    cfg: &CriticConfig,
    seed: u64,
    warm: Option<&CriticModel>,
) -> Result<CriticModel> {
    if samples.len() < 2 {
        return Err(contract(format!(
            "critic training needs at least 2 pseudo-samples, got {}",
            samples.len()
        )));
    }
    let in_dim = samples[0].input.len();
    let out_dim = samples[0].target.len();
    if in_dim == 0 || in_dim % 2 != 0 {
        return Err(contract(format!("pseudo-sample input length {in_dim} is not 2d")));
    }
    if samples
        .iter()
        .any(|s| s.input.len() != in_dim || s.target.len() != out_dim)
    {
        return Err(contract("pseudo-samples have inconsistent dimensions"));
    }
    if samples.iter().any(|s| !s.target.is_finite()) {
        return Err(Error::Training("pseudo-sample targets must be finite".into()));
    }

    let inputs = Array2::from_shape_fn((samples.len(), in_dim), |(r, c)| samples[r].input[c]);
    let mut targets =
        Array2::from_shape_fn((samples.len(), out_dim), |(r, c)| samples[r].target.values()[c]);
    let mean = targets.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let std: Vec<f64> = targets
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, m)| {
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            let s = var.sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for mut row in targets.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[k]) / std[k];
        }
    }

    let mut sizes = vec![in_dim];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(out_dim);
    let net = match warm {
        Some(prev) if prev.net.layer_sizes() == sizes => prev.net.clone(),
        _ => {
            // A zero read-out starts every prediction at the target mean.
            let mut net = Mlp::new(&sizes, cfg.activation, Activation::Identity, seed)?;
            if let Some(last) = net.layers_mut().last_mut() {
                last.weights.fill(0.0);
            }
            net
        }
    };
    let train = TrainConfig {
        seed: seed ^ cfg.train.seed,
        ..cfg.train.clone()
    };
    let (net, loss_history) = train_regression(net, inputs.view(), targets.view(), &train)?;
    Ok(CriticModel {
        net,
        mean,
        std,
        loss_history,
        sample_count: samples.len(),
    })
}
