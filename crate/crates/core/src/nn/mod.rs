//! A small feed-forward network engine.
//!
//! Networks are batched row-major: a batch of `B` inputs is a `B x in` matrix
//! and each dense layer stores its weights as `in x out`, so a layer is
//! `Y = X W + b`. Besides parameter gradients for regression, the engine
//! exposes vector-Jacobian products with respect to the *inputs*, which is
//! what lets a policy be trained through a frozen surrogate.

mod io;
mod train;

pub use io::{load_text, save_text};
pub use train::{cosine_rate, train_regression, Adam, TrainConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    /// `ln(1 + e^z)`
    Softplus,
    /// `z * sigmoid(z)`
    Silu,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Silu => z * sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(z),
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Silu => "silu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            "silu" => Activation::Silu,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Multi-layer perceptron with one hidden activation shared by all hidden
/// layers and a separate output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer parameter gradients, laid out like [`Mlp`]'s layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Layer inputs; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Mlp {
    /// Fresh network with zero biases and `N(0, 1/fan_in)` weights.
    pub fn new(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(contract("a network needs at least an input and an output layer"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(contract(format!("layer sizes must be positive, got {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(contract("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(contract(format!(
                    "layer dimensions disagree: {} outputs feed {} inputs",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(contract("bias length differs from layer width"));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(contract("network parameters must be finite"));
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Dense::output_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(contract(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            let act = self.activation_of(i);
            if act != Activation::Identity {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps what [`backward`](Self::backward) needs.
    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            let act = self.activation_of(i);
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|v| act.apply(v))
            };
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(Trace {
            inputs,
            pre,
            output: h,
        })
    }

    /// Reverse pass for cotangent `d_out` (same shape as the output).
    ///
    /// Returns parameter gradients (summed over the batch) and the cotangent
    /// with respect to the input batch.
    pub fn backward(&self, trace: &Trace, d_out: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if d_out.dim() != trace.output.dim() {
            return Err(contract(format!(
                "cotangent shape {:?} differs from output shape {:?}",
                d_out.dim(),
                trace.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        for i in (0..n).rev() {
            let act = self.activation_of(i);
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&trace.pre[i])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            gw.push(trace.inputs[i].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.layers[i].weights.t());
        }
        gw.reverse();
        gb.reverse();
        Ok((
            Gradients {
                weights: gw,
                bias: gb,
            },
            delta,
        ))
    }

    /// Vector-Jacobian product `cotangent^T * d(output)/d(input)` at `input`.
    pub fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.output_dim() {
            return Err(contract(format!(
                "cotangent has {} entries, network outputs {}",
                cotangent.len(),
                self.output_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let d = ArrayView2::from_shape((1, cotangent.len()), cotangent).expect("row vector");
        Ok(self.input_gradient_batch(x, d)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise vector-Jacobian products for a batch of inputs.
    pub fn input_gradient_batch(&self, x: ArrayView2<f64>, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let trace = self.forward_trace(x)?;
        Ok(self.backward(&trace, cotangent)?.1)
    }

    /// Plain gradient step `theta -= lr * grad`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            l.weights.scaled_add(-lr, gw);
            l.bias.scaled_add(-lr, gb);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_net(rng: &mut ChaCha8Rng, act: Activation) -> Mlp {
        let depth = rng.gen_range(2..=4);
        let sizes: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=16)).collect();
        let out = if rng.gen_bool(0.5) { Activation::Identity } else { Activation::Tanh };
        Mlp::new(&sizes, act, out, rng.gen()).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na + nb < 1e-10 {
            diff
        } else {
            diff / (na + nb)
        }
    }

    #[test]
    fn construction_contract() {
        assert!(Mlp::new(&[3], Activation::Silu, Activation::Identity, 0).is_err());
        assert!(Mlp::new(&[], Activation::Silu, Activation::Identity, 0).is_err());
        assert!(Mlp::new(&[3, 0, 1], Activation::Silu, Activation::Identity, 0).is_err());
    }

    #[test]
    fn seeding_is_deterministic() {
        let a = Mlp::new(&[4, 8, 3], Activation::Silu, Activation::Identity, 11).unwrap();
        let b = Mlp::new(&[4, 8, 3], Activation::Silu, Activation::Identity, 11).unwrap();
        let c = Mlp::new(&[4, 8, 3], Activation::Silu, Activation::Identity, 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert_eq!(a.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap().len(), 3);
        assert!(a.forward(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::new(&[2, 5, 2], Activation::Tanh, Activation::Tanh, 3).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
        }
        net.layers_mut()[1].bias = array![0.3, -2.0];
        let y = net.forward(&[5.0, -7.0]).unwrap();
        assert_eq!(y, vec![0.3f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn single_linear_layer() {
        let w = array![[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]];
        let b = array![0.1, 0.2, 0.3];
        let net = Mlp::from_layers(
            vec![Dense { weights: w.clone(), bias: b.clone() }],
            Activation::Silu,
            Activation::Identity,
        )
        .unwrap();
        let y = net.forward(&[2.0, 1.0]).unwrap();
        assert_eq!(y, vec![2.0 - 1.0 + 0.1, 4.0 + 0.2, 1.0 + 3.0 + 0.3]);
        // input gradient of a linear map is W d
        let g = net.input_gradient(&[2.0, 1.0], &[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(g, vec![1.0 - 2.0 + 1.0, -1.0 + 6.0]);
        assert_eq!(net.input_gradient(&[2.0, 1.0], &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        assert!(net.input_gradient(&[2.0, 1.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let l1 = Dense { weights: Array2::zeros((2, 3)), bias: Array1::zeros(3) };
        let l2 = Dense { weights: Array2::zeros((4, 1)), bias: Array1::zeros(1) };
        assert!(Mlp::from_layers(vec![l1, l2], Activation::Tanh, Activation::Identity).is_err());
    }

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [Activation::Tanh, Activation::Softplus, Activation::Silu, Activation::Identity] {
            for &z in &[-30.0, -3.0, -0.2, 0.0, 0.7, 4.0, 30.0] {
                let h = 1e-6;
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                assert!((fd - act.derivative(z)).abs() < 1e-7, "{act:?} at {z}");
            }
            assert_eq!(Activation::from_name(act.name()), Some(act));
        }
        assert!(Activation::Softplus.apply(800.0).is_finite());
        assert!(Activation::Silu.apply(-800.0).is_finite());
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..120 {
            let act = [Activation::Tanh, Activation::Softplus, Activation::Silu][trial % 3];
            let net = random_net(&mut rng, act);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = net.input_gradient(&x, &d).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..x.len())
                .map(|j| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let yp = net.forward(&xp).unwrap();
                    let ym = net.forward(&xm).unwrap();
                    yp.iter().zip(&ym).zip(&d).map(|((a, b), c)| c * (a - b)).sum::<f64>() / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-4, "trial {trial}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let act = [Activation::Tanh, Activation::Softplus, Activation::Silu][trial % 3];
            let mut net = random_net(&mut rng, act);
            let batch = rng.gen_range(1..5);
            let x = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.gen_range(-1.0..1.0));
            let d = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.gen_range(-1.0..1.0));
            let trace = net.forward_trace(x.view()).unwrap();
            let (grads, _) = net.backward(&trace, d.view()).unwrap();
            let analytic = grads.flatten();
            let theta = net.params();
            let h = 1e-5;
            let mut fd = Vec::with_capacity(theta.len());
            for k in 0..theta.len() {
                let mut p = theta.clone();
                p[k] = theta[k] + h;
                net.set_params(&p).unwrap();
                let yp = net.forward_batch(x.view()).unwrap();
                p[k] = theta[k] - h;
                net.set_params(&p).unwrap();
                let ym = net.forward_batch(x.view()).unwrap();
                fd.push(((&yp - &ym) * &d).sum() / (2.0 * h));
            }
            net.set_params(&theta).unwrap();
            assert!(rel_err(&analytic, &fd) < 1e-4, "trial {trial}");
        }
    }
}
