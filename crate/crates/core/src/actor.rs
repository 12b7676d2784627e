//! Policy network trained through the frozen critic.
//!
//! The actor maps an elite design `x` to a move `dx`. Its loss is the FoM of
//! the critic's prediction for `(x, dx)` plus `||lambda * viol||_2`, where
//! `viol` measures how far `x + dx` leaves the box spanned by the elites.
//! Gradients reach the actor through the critic's input Jacobian; the critic
//! itself is never updated here.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::critic::CriticModel;
use crate::error::{contract, Error, Result};
use crate::nn::{cosine_rate, Activation, Adam, Gradients, Mlp, TrainConfig};
use crate::problem::Scalarizer;

/// Per-dimension box spanned by the elite designs, in unit coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedBounds {
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl RestrictedBounds {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Result<Self> {
        if lb.len() != ub.len() || lb.iter().zip(&ub).any(|(l, u)| !(l <= u)) {
            return Err(contract("restricted bounds need lb <= ub componentwise"));
        }
        Ok(Self { lb, ub })
    }

    pub fn lb(&self) -> &[f64] {
        &self.lb
    }

    pub fn ub(&self) -> &[f64] {
        &self.ub
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn width(&self) -> Vec<f64> {
        self.ub.iter().zip(&self.lb).map(|(u, l)| u - l).collect()
    }

    /// Whether `x` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, x: &[f64], margin: f64) -> bool {
        x.iter()
            .zip(self.lb.iter().zip(&self.ub))
            .all(|(&v, (&l, &u))| v >= l - margin && v <= u + margin)
    }
}

/// Componentwise min/max over the elite population.
pub fn restricted_bounds(elites: &[Vec<f64>]) -> Result<RestrictedBounds> {
    let first = elites
        .first()
        .ok_or_else(|| contract("elite population is empty"))?;
    let d = first.len();
    let mut lb = first.clone();
    let mut ub = first.clone();
    for x in &elites[1..] {
        if x.len() != d {
            return Err(contract("elite designs differ in dimension"));
        }
        for j in 0..d {
            lb[j] = lb[j].min(x[j]);
            ub[j] = ub[j].max(x[j]);
        }
    }
    RestrictedBounds::new(lb, ub)
}

/// `max(0, lb - (x + dx)) + max(0, (x + dx) - ub)`, componentwise.
pub fn boundary_violation(x: &[f64], dx: &[f64], rb: &RestrictedBounds) -> Vec<f64> {
    x.iter()
        .zip(dx)
        .zip(rb.lb.iter().zip(&rb.ub))
        .map(|((&xi, &di), (&l, &u))| {
            let y = xi + di;
            (l - y).max(0.0) + (y - u).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Weight of the boundary-violation penalty.
    pub lambda: f64,
    /// Exploration noise std as a fraction of the restricted range.
    pub noise_sigma_frac: f64,
    /// `|dx_j| <= delta_scale * (ub_rest_j - lb_rest_j)`.
    pub delta_scale: f64,
    pub train: TrainConfig,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            activation: Activation::Silu,
            lambda: 1e4,
            noise_sigma_frac: 0.1,
            delta_scale: 1.0,
            train: TrainConfig {
                epochs: 100,
                batch_size: 64,
                learning_rate: 1e-2,
                seed: 0,
                patience: 0,
                max_steps: None,
                cosine_decay: true,
            },
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 100.0) {
            return Err(Error::Config(format!(
                "actor lambda must be a large penalty (>= 100), got {}",
                self.lambda
            )));
        }
        if !(self.noise_sigma_frac.is_finite() && self.noise_sigma_frac >= 0.0) {
            return Err(Error::Config("noise_sigma_frac must be non-negative".into()));
        }
        if !(self.delta_scale.is_finite() && self.delta_scale > 0.0) {
            return Err(Error::Config("delta_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Policy network plus the per-dimension scale of its squashed output.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    net: Mlp,
    scale: Vec<f64>,
}

impl Actor {
    /// Fresh actor for the box `rb`; outputs are `tanh`-squashed and scaled by
    /// `delta_scale * width(rb)`.
    pub fn new(rb: &RestrictedBounds, cfg: &ActorConfig, seed: u64) -> Result<Self> {
        let d = rb.dim();
        let mut sizes = vec![d];
        sizes.extend(&cfg.hidden_layers);
        sizes.push(d);
        let net = Mlp::new(&sizes, cfg.activation, Activation::Tanh, seed)?;
        Self::from_net(net, rb, cfg.delta_scale)
    }

    pub fn from_net(net: Mlp, rb: &RestrictedBounds, delta_scale: f64) -> Result<Self> {
        if net.input_dim() != rb.dim() || net.output_dim() != rb.dim() {
            return Err(contract(format!(
                "actor must map {0} -> {0}, network is {1} -> {2}",
                rb.dim(),
                net.input_dim(),
                net.output_dim()
            )));
        }
        let scale = rb.width().into_iter().map(|w| delta_scale * w).collect();
        Ok(Self { net, scale })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    /// Proposed move `mu(x)` for one design.
    pub fn delta(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.net.forward(x)?;
        Ok(a.iter().zip(&self.scale).map(|(a, s)| a * s).collect())
    }

    fn delta_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut a = self.net.forward_batch(x)?;
        for mut row in a.rows_mut() {
            for (v, s) in row.iter_mut().zip(&self.scale) {
                *v *= s;
            }
        }
        Ok(a)
    }
}

/// Mean actor loss over `batch` and its gradient with respect to the actor's
/// parameters.
pub fn actor_loss_and_gradient(
    actor: &Actor,
    critic: &CriticModel,
    batch: ArrayView2<f64>,
    rb: &RestrictedBounds,
    scalarizer: &Scalarizer,
    lambda: f64,
) -> Result<(f64, Gradients)> {
    let (b, d) = batch.dim();
    if d != rb.dim() || critic.design_dim() != d {
        return Err(contract("actor, critic and restricted box disagree on dimension"));
    }
    if critic.spec_len() != scalarizer.weights().len() {
        return Err(contract("critic output length differs from the FoM weights"));
    }
    let trace = actor.net.forward_trace(batch)?;
    let squashed = trace.output();
    let mut critic_in = Array2::zeros((b, 2 * d));
    critic_in.slice_mut(s![.., ..d]).assign(&batch);
    for r in 0..b {
        for j in 0..d {
            critic_in[[r, d + j]] = squashed[[r, j]] * actor.scale[j];
        }
    }
    let pred = critic.predict_batch(critic_in.view())?;

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut cot = Array2::zeros(pred.raw_dim());
    let mut d_delta = Array2::zeros((b, d));
    for r in 0..b {
        let f = pred.row(r).to_vec();
        loss += scalarizer.fom_unchecked(&f);
        for (k, g) in scalarizer.fom_gradient(&f).into_iter().enumerate() {
            cot[[r, k]] = g * inv_b;
        }
        let mut scaled_sq = 0.0;
        let mut sides = vec![0.0; d];
        for j in 0..d {
            let y = batch[[r, j]] + critic_in[[r, d + j]];
            let (v, side) = if y < rb.lb[j] {
                (rb.lb[j] - y, -1.0)
            } else if y > rb.ub[j] {
                (y - rb.ub[j], 1.0)
            } else {
                (0.0, 0.0)
            };
            scaled_sq += (lambda * v).powi(2);
            sides[j] = side * v;
        }
        let norm = scaled_sq.sqrt();
        loss += norm;
        if norm > 0.0 {
            for j in 0..d {
                // d||lambda*v|| / d(dx_j) = lambda^2 v_j / norm * dv_j/d(dx_j)
                d_delta[[r, j]] += lambda * lambda * sides[j] / norm * inv_b;
            }
        }
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::Training(format!("actor loss became {loss}")));
    }

    let through_critic = critic.input_gradient_batch(critic_in.view(), cot.view())?;
    d_delta += &through_critic.slice(s![.., d..]);
    for r in 0..b {
        for j in 0..d {
            d_delta[[r, j]] *= actor.scale[j];
        }
    }
    let (grads, _) = actor.net.backward(&trace, d_delta.view())?;
    Ok((loss, grads))
}

/// Trains the actor on the elite population with the critic frozen.
/// Returns the trained actor and the mean loss of every epoch.
pub fn train_actor(
    mut actor: Actor,
    critic: &CriticModel,
    elites: &[Vec<f64>],
    rb: &RestrictedBounds,
    scalarizer: &Scalarizer,
    cfg: &ActorConfig,
    seed: u64,
) -> Result<(Actor, Vec<f64>)> {
    cfg.validate()?;
    if elites.is_empty() {
        return Err(contract("actor training needs at least one elite design"));
    }
    let d = rb.dim();
    if elites.iter().any(|x| x.len() != d) {
        return Err(contract("elite designs differ from the restricted box dimension"));
    }
    let n = elites.len();
    let batch = cfg.train.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cfg.train.seed);
    let mut adam = Adam::new(&actor.net, cfg.train.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let planned = cfg
        .train
        .max_steps
        .unwrap_or(usize::MAX)
        .min(cfg.train.epochs * n.div_ceil(batch));
    let mut steps = 0;
    let mut history = Vec::with_capacity(cfg.train.epochs);
    'epochs: for _ in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(batch) {
            if steps >= planned {
                if seen > 0 {
                    history.push(total / seen as f64);
                }
                break 'epochs;
            }
            let x = Array2::from_shape_fn((chunk.len(), d), |(r, j)| elites[chunk[r]][j]);
            let (loss, grads) =
                actor_loss_and_gradient(&actor, critic, x.view(), rb, scalarizer, cfg.lambda)?;
            if cfg.train.cosine_decay {
                adam.set_learning_rate(cosine_rate(cfg.train.learning_rate, steps, planned));
            }
            adam.step(&mut actor.net, &grads);
            steps += 1;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.push(total / seen as f64);
    }
    if !actor.net.is_finite() {
        return Err(Error::Training("actor parameters diverged".into()));
    }
    Ok((actor, history))
}

/// One candidate per elite: `clip(x + mu(x) + noise)` to the unit cube, with
/// Gaussian noise of std `noise_sigma_frac * width(rb)` per dimension.
pub fn propose_candidates(
    actor: &Actor,
    elites: &[Vec<f64>],
    rb: &RestrictedBounds,
    noise_sigma_frac: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if elites.is_empty() {
        return Ok(Vec::new());
    }
    let d = rb.dim();
    let x = Array2::from_shape_fn((elites.len(), d), |(r, j)| elites[r][j]);
    let delta = actor.delta_batch(x.view())?;
    let sigma: Vec<f64> = rb.width().iter().map(|w| noise_sigma_frac * w).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(elites
        .iter()
        .enumerate()
        .map(|(r, e)| {
            (0..d)
                .map(|j| {
                    let noise = std_normal.sample(&mut rng) * sigma[j];
                    (e[j] + delta[[r, j]] + noise).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{generate_pseudo_samples, train_critic, CriticConfig};
    use crate::nn::Dense;
    use crate::problem::SpecVector;
    use ndarray::Array1;
    use rand::Rng;

    #[test]
    fn bounds_examples() {
        let rb = restricted_bounds(&[vec![0.3, 0.7]]).unwrap();
        assert_eq!(rb.lb(), &[0.3, 0.7]);
        assert_eq!(rb.ub(), &[0.3, 0.7]);
        let rb = restricted_bounds(&[vec![0.2, 0.9], vec![0.4, 0.1]]).unwrap();
        assert_eq!(rb.lb(), &[0.2, 0.1]);
        assert_eq!(rb.ub(), &[0.4, 0.9]);
        assert!(restricted_bounds(&[]).is_err());
    }

    #[test]
    fn violation_examples() {
        let rb = RestrictedBounds::new(vec![0.2], vec![0.4]).unwrap();
        assert_eq!(boundary_violation(&[0.3], &[0.05], &rb), vec![0.0]);
        let v = boundary_violation(&[0.15], &[-0.05], &rb)[0];
        assert!((v - 0.1).abs() < 1e-15);
        let v = boundary_violation(&[0.5], &[0.05], &rb)[0];
        assert!((v - 0.15).abs() < 1e-15);
    }

    #[test]
    fn elites_lie_in_their_box_and_subsets_shrink_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..12);
            let elites: Vec<Vec<f64>> =
                (0..n).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
            let rb = restricted_bounds(&elites).unwrap();
            for e in &elites {
                assert!(rb.contains(e, 0.0));
                assert!(boundary_violation(e, &[0.0; 4], &rb).iter().all(|&v| v == 0.0));
            }
            let sub = restricted_bounds(&elites[..(n + 1) / 2]).unwrap();
            for j in 0..4 {
                assert!(sub.lb()[j] >= rb.lb()[j] && sub.ub()[j] <= rb.ub()[j]);
            }
        }
    }

    /// Critic whose network ignores its input.
    fn constant_critic(d: usize, values: &[f64]) -> CriticModel {
        let net = Mlp::from_layers(
            vec![Dense {
                weights: Array2::zeros((2 * d, values.len())),
                bias: Array1::from(values.to_vec()),
            }],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap();
        CriticModel::from_parts(net, vec![0.0; values.len()], vec![1.0; values.len()]).unwrap()
    }

    #[test]
    fn zero_actor_without_noise_returns_elites() {
        let elites = vec![vec![0.1, 0.5], vec![0.4, 0.2], vec![0.3, 0.9]];
        let rb = restricted_bounds(&elites).unwrap();
        let mut actor = Actor::new(&rb, &ActorConfig::default(), 0).unwrap();
        let zeros = vec![0.0; actor.params().len()];
        actor.set_params(&zeros).unwrap();
        let cands = propose_candidates(&actor, &elites, &rb, 0.0, 1).unwrap();
        assert_eq!(cands, elites);
    }

    #[test]
    fn candidates_are_one_per_elite_and_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let elites: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.gen()).collect()).collect();
        let rb = restricted_bounds(&elites).unwrap();
        let actor = Actor::new(&rb, &ActorConfig::default(), 4).unwrap();
        let cands = propose_candidates(&actor, &elites, &rb, 5.0, 2).unwrap();
        assert_eq!(cands.len(), elites.len());
        assert!(cands.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(cands, propose_candidates(&actor, &elites, &rb, 5.0, 2).unwrap());
        assert_ne!(cands, propose_candidates(&actor, &elites, &rb, 5.0, 3).unwrap());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 30 {
            let d = rng.gen_range(1..=3);
            let n = rng.gen_range(3..8);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
            let fs: Vec<SpecVector> = xs
                .iter()
                .map(|x| {
                    let s: f64 = x.iter().sum();
                    SpecVector::new(vec![s * s, 0.4 - s, s - 0.9])
                })
                .collect();
            let ps = generate_pseudo_samples(&xs, &fs, 1000, 0).unwrap();
            let cfg = CriticConfig {
                hidden_layers: vec![8],
                activation: Activation::Tanh,
                ..CriticConfig::default()
            };
            let critic = train_critic(&ps, &cfg, rng.gen(), None).unwrap();
            let elites = &xs[..n.min(4)];
            let rb = restricted_bounds(elites).unwrap();
            let acfg = ActorConfig { hidden_layers: vec![rng.gen_range(2..=8)], activation: Activation::Tanh, ..ActorConfig::default() };
            let mut actor = Actor::new(&rb, &acfg, rng.gen()).unwrap();
            let scal = Scalarizer::new(vec![0.7, 2.0, 1.5]).unwrap();
            let batch = Array2::from_shape_fn((elites.len(), d), |(r, j)| elites[r][j]);
            let lambda = 150.0;
            let (_, grads) =
                actor_loss_and_gradient(&actor, &critic, batch.view(), &rb, &scal, lambda).unwrap();
            let analytic = grads.flatten();
            let theta = actor.params();
            let h = 1e-6;
            let mut fd = Vec::new();
            for k in 0..theta.len() {
                let mut p = theta.clone();
                p[k] += h;
                actor.set_params(&p).unwrap();
                let lp = actor_loss_and_gradient(&actor, &critic, batch.view(), &rb, &scal, lambda).unwrap().0;
                p[k] -= 2.0 * h;
                actor.set_params(&p).unwrap();
                let lm = actor_loss_and_gradient(&actor, &critic, batch.view(), &rb, &scal, lambda).unwrap().0;
                fd.push((lp - lm) / (2.0 * h));
            }
            actor.set_params(&theta).unwrap();
            let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = analytic.iter().chain(&fd).map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            assert!(diff / norm < 1e-3, "rel err {}", diff / norm);
            checked += 1;
        }
    }

    #[test]
    fn penalty_only_training_pulls_moves_into_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let elites: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(0.3..0.6)).collect()).collect();
        let rb = restricted_bounds(&elites).unwrap();
        let critic = constant_critic(4, &[1.0, 0.5]);
        let scal = Scalarizer::new(vec![1.0, 1.0]).unwrap();
        let cfg = ActorConfig::default();
        let actor = Actor::new(&rb, &cfg, 9).unwrap();
        let (actor, hist) = train_actor(actor, &critic, &elites, &rb, &scal, &cfg, 1).unwrap();
        assert!(hist.last().unwrap() <= &hist[0]);
        let mean_viol: f64 = elites
            .iter()
            .map(|e| {
                let dx = actor.delta(e).unwrap();
                boundary_violation(e, &dx, &rb).iter().sum::<f64>() / 4.0
            })
            .sum::<f64>()
            / elites.len() as f64;
        assert!(mean_viol < 1e-3, "mean violation {mean_viol}");
    }

    #[test]
    fn bowl_critic_moves_elites_towards_minimizer() {
        // critic predicts ||x + dx - target||^2 exactly; target inside the elite box
        let target = [0.45, 0.55];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut xs: Vec<Vec<f64>> = (0..30).map(|_| (0..2).map(|_| rng.gen()).collect()).collect();
        xs.push(vec![0.2, 0.2]);
        xs.push(vec![0.8, 0.8]);
        let bowl = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let fs: Vec<SpecVector> = xs.iter().map(|x| SpecVector::new(vec![bowl(x)])).collect();
        let ps = generate_pseudo_samples(&xs, &fs, 40_000, 0).unwrap();
        let critic = train_critic(&ps, &CriticConfig::default(), 2, None).unwrap();
        let elites: Vec<Vec<f64>> = vec![vec![0.2, 0.2], vec![0.8, 0.8], vec![0.25, 0.7], vec![0.7, 0.3]];
        let rb = restricted_bounds(&elites).unwrap();
        let scal = Scalarizer::new(vec![1.0]).unwrap();
        let cfg = ActorConfig::default();
        let actor = Actor::new(&rb, &cfg, 3).unwrap();
        let (actor, _) = train_actor(actor, &critic, &elites, &rb, &scal, &cfg, 0).unwrap();
        let dist = |x: &[f64]| bowl(x).sqrt();
        let before: f64 = elites.iter().map(|e| dist(e)).sum::<f64>() / 4.0;
        let after: f64 = elites
            .iter()
            .map(|e| {
                let dx = actor.delta(e).unwrap();
                let moved: Vec<f64> = e.iter().zip(&dx).map(|(a, b)| a + b).collect();
                dist(&moved)
            })
            .sum::<f64>()
            / 4.0;
        assert!(after < before, "{after} !< {before}");
    }
}
