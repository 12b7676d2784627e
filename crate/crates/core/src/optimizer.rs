//! The DNN-Opt loop.
//!
//! After a Latin-hypercube initial sample, every iteration
//!
//! 1. trains a fresh critic on pseudo-samples of all successful evaluations,
//! 2. picks the `n_es` lowest-FoM designs as elites and spans the restricted
//!    box over them,
//! 3. trains a fresh actor through the frozen critic,
//! 4. proposes one noisy candidate per elite, and
//! 5. evaluates the candidate whose critic-predicted FoM is lowest.
//!
//! Exactly one design is evaluated per iteration. [`Tracker`] and
//! [`RunResult`] are shared with the baselines so every algorithm is scored
//! by the same code.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{propose_candidates, restricted_bounds, train_actor, Actor, ActorConfig, RestrictedBounds};
use crate::critic::{generate_pseudo_samples, train_critic, CriticConfig, CriticModel};
use crate::error::{contract, Error, Result};
use crate::evaluators::{EvaluationRecord, Evaluator, Harness};
use crate::problem::{is_feasible, objective_weight_from, ProblemDefinition, Scalarizer, SpecVector};

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Stop at the first feasible design (or when the budget runs out).
    #[default]
    StopOnFeasible,
    /// Spend the whole budget, minimizing the objective after feasibility.
    OptimizeToBudget,
}

/// Settings every algorithm shares.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Maximum number of real evaluations.
    pub budget: usize,
    pub seed: u64,
    pub termination: Termination,
    /// Fixed objective weight; computed from the initial population if unset.
    pub objective_weight: Option<f64>,
}

impl RunOptions {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            termination: Termination::default(),
            objective_weight: None,
        }
    }

    pub fn with_termination(mut self, termination: Termination) -> Self {
        self.termination = termination;
        self
    }
}

/// DNN-Opt settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Initial sample size; 20 (at least `2d` when `d > 10`) if unset.
    pub n_init: Option<usize>,
    /// Elite population size; `min(10, n_init)` if unset.
    pub n_es: Option<usize>,
    /// Cross-check every query against a brute-force argmin.
    pub check_query_oracle: bool,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_init: None,
            n_es: None,
            check_query_oracle: cfg!(debug_assertions),
            critic: CriticConfig::default(),
            actor: ActorConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn resolved_n_init(&self, d: usize) -> usize {
        self.n_init.unwrap_or(if d > 10 { 20.max(2 * d) } else { 20 })
    }

    pub fn resolved_n_es(&self, d: usize) -> usize {
        self.n_es.unwrap_or_else(|| 10.min(self.resolved_n_init(d)))
    }

    pub fn validate(&self, d: usize, budget: usize) -> Result<()> {
        let n_init = self.resolved_n_init(d);
        let n_es = self.resolved_n_es(d);
        if n_init < 2 {
            return Err(Error::Config(format!("n_init must be at least 2, got {n_init}")));
        }
        if n_es == 0 || n_es > n_init {
            return Err(Error::Config(format!("n_es must lie in 1..={n_init}, got {n_es}")));
        }
        if budget < n_init {
            return Err(Error::Config(format!("budget {budget} is smaller than n_init {n_init}")));
        }
        if self.critic.pseudo_cap == 0 {
            return Err(Error::Config("critic pseudo_cap must be positive".into()));
        }
        self.critic.train.validate()?;
        self.actor.validate()
    }
}

/// Independent stream of seeds for `(purpose, iteration)`.
pub(crate) fn derive_seed(seed: u64, purpose: u64, t: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Latin-hypercube sample of `n` points in `[0,1]^d`: along every axis each
/// of the `n` equal strata holds exactly one point.
pub fn initial_sample(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            p[j] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

/// Indices of the `n_es` smallest FoMs; ties go to the earlier index.
pub fn select_elites(foms: &[f64], n_es: usize) -> Result<Vec<usize>> {
    if n_es > foms.len() {
        return Err(contract(format!(
            "cannot pick {n_es} elites from {} designs",
            foms.len()
        )));
    }
    let mut order: Vec<usize> = (0..foms.len()).collect();
    order.sort_by(|&a, &b| foms[a].total_cmp(&foms[b]).then(a.cmp(&b)));
    order.truncate(n_es);
    Ok(order)
}

/// Critic-predicted FoM of every `(elite_i, candidate_i)` pair, as
/// `(index, fom)` sorted best first with ties to the smaller index.
pub fn rank_candidates(
    elites: &[Vec<f64>],
    candidates: &[Vec<f64>],
    critic: &CriticModel,
    scalarizer: &Scalarizer,
) -> Result<Vec<(usize, f64)>> {
    if elites.is_empty() || elites.len() != candidates.len() {
        return Err(contract(format!(
            "need equally many elites and candidates, got {} and {}",
            elites.len(),
            candidates.len()
        )));
    }
    let d = critic.design_dim();
    if elites.iter().chain(candidates).any(|x| x.len() != d) {
        return Err(contract("design dimension differs from the critic's"));
    }
    let inputs = Array2::from_shape_fn((elites.len(), 2 * d), |(r, c)| {
        if c < d {
            elites[r][c]
        } else {
            candidates[r][c - d] - elites[r][c - d]
        }
    });
    let pred = critic.predict_batch(inputs.view())?;
    let mut ranked: Vec<(usize, f64)> = pred
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (i, scalarizer.fom_unchecked(row.as_slice().expect("contiguous row"))))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Index of the candidate whose predicted FoM is lowest (smallest index on ties).
pub fn select_query(
    elites: &[Vec<f64>],
    candidates: &[Vec<f64>],
    critic: &CriticModel,
    scalarizer: &Scalarizer,
) -> Result<usize> {
    Ok(rank_candidates(elites, candidates, critic, scalarizer)?[0].0)
}

/// Per-evaluation progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// 1-based evaluation index.
    pub eval_index: usize,
    /// FoM of this evaluation.
    pub fom: f64,
    /// Lowest FoM so far.
    pub fom_best: f64,
    /// Objective of the incumbent (feasible designs preferred).
    pub objective_best: f64,
    /// A feasible design has been found so far.
    pub feasible: bool,
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub algorithm: String,
    pub seed: u64,
    /// Objective weight the FoM history was computed with.
    pub objective_weight: f64,
    /// Incumbent: lowest-objective feasible design, else lowest FoM.
    pub best_design: Vec<f64>,
    pub best_unit: Vec<f64>,
    pub best_specs: SpecVector,
    pub best_fom: f64,
    /// A feasible design was found.
    pub feasible: bool,
    pub evaluations: usize,
    /// 1-based index of the first feasible evaluation.
    pub first_feasible: Option<usize>,
    pub history: Vec<HistoryEntry>,
    pub records: Vec<EvaluationRecord>,
}

impl RunResult {
    /// Objective of the incumbent when it is feasible.
    pub fn best_feasible_objective(&self) -> Option<f64> {
        self.feasible.then(|| self.best_specs.objective())
    }

    /// Running-minimum FoM curve recomputed under another scalarizer.
    pub fn rescored_curve(&self, scalarizer: &Scalarizer) -> Result<Vec<f64>> {
        let mut worst: Option<f64> = None;
        let mut best = f64::INFINITY;
        let mut curve = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            if rec.specs.is_finite() {
                let f0 = rec.specs.objective();
                worst = Some(worst.map_or(f0, |w| w.max(f0)));
            }
            best = best.min(scalarizer.fom_given_worst(&rec.specs, worst.unwrap_or(0.0))?);
            curve.push(best);
        }
        Ok(curve)
    }
}

/// Bookkeeping of evaluated designs, shared by all algorithms.
#[derive(Debug, Clone)]
pub struct Tracker {
    scalarizer: Scalarizer,
    units: Vec<Vec<f64>>,
    specs: Vec<SpecVector>,
    foms: Vec<f64>,
    /// Largest finite objective seen; scores failed evaluations.
    worst_objective: Option<f64>,
    incumbent: Option<usize>,
    best_fom: f64,
    first_feasible: Option<usize>,
    history: Vec<HistoryEntry>,
}

impl Tracker {
    pub fn new(problem: &ProblemDefinition, objective_weight: f64) -> Result<Self> {
        Ok(Self {
            scalarizer: Scalarizer::from_specs(problem.specs(), objective_weight)?,
            units: Vec::new(),
            specs: Vec::new(),
            foms: Vec::new(),
            worst_objective: None,
            incumbent: None,
            best_fom: f64::INFINITY,
            first_feasible: None,
            history: Vec::new(),
        })
    }

    /// Tracker whose objective weight comes from `initial` (unless fixed),
    /// with `initial` already recorded.
    pub fn from_initial(
        problem: &ProblemDefinition,
        initial: Vec<(Vec<f64>, SpecVector)>,
        fixed_weight: Option<f64>,
    ) -> Result<Self> {
        let w0 = fixed_weight.unwrap_or_else(|| {
            objective_weight_from(initial.iter().map(|(_, s)| s.objective()))
        });
        let mut tracker = Self::new(problem, w0)?;
        for (u, s) in initial {
            tracker.push(u, s)?;
        }
        Ok(tracker)
    }

    pub fn scalarizer(&self) -> &Scalarizer {
        &self.scalarizer
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[Vec<f64>] {
        &self.units
    }

    pub fn specs(&self) -> &[SpecVector] {
        &self.specs
    }

    pub fn feasible_found(&self) -> bool {
        self.first_feasible.is_some()
    }

    pub fn incumbent(&self) -> Option<usize> {
        self.incumbent
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// FoM of design `i` under the current worst objective.
    pub fn fom_of(&self, i: usize) -> f64 {
        self.scalarizer
            .fom_given_worst(&self.specs[i], self.worst_objective.unwrap_or(0.0))
            .expect("lengths checked on push")
    }

    /// FoM of any spec vector under the current worst objective.
    pub fn score(&self, spec: &SpecVector) -> f64 {
        self.scalarizer
            .fom_given_worst(spec, self.worst_objective.unwrap_or(0.0))
            .expect("spec length matches the problem")
    }

    /// FoMs of all designs under the current worst objective.
    pub fn current_foms(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.fom_of(i)).collect()
    }

    fn beats(&self, i: usize, j: usize) -> bool {
        let (fi, fj) = (is_feasible(&self.specs[i]), is_feasible(&self.specs[j]));
        if fi != fj {
            return fi;
        }
        self.fom_of(i) < self.fom_of(j)
    }

    /// Records an evaluation and returns its FoM.
    pub fn push(&mut self, unit: Vec<f64>, spec: SpecVector) -> Result<f64> {
        if spec.len() != self.scalarizer.weights().len() {
            return Err(contract("spec vector length differs from the problem's"));
        }
        if spec.is_finite() {
            let f0 = spec.objective();
            self.worst_objective = Some(self.worst_objective.map_or(f0, |w| w.max(f0)));
        }
        let fom = self
            .scalarizer
            .fom_given_worst(&spec, self.worst_objective.unwrap_or(0.0))?;
        let feasible = spec.is_finite() && is_feasible(&spec);
        let i = self.units.len();
        self.units.push(unit);
        self.specs.push(spec);
        self.foms.push(fom);
        if feasible && self.first_feasible.is_none() {
            self.first_feasible = Some(i + 1);
        }
        self.incumbent = match self.incumbent {
            Some(j) if !self.beats(i, j) => Some(j),
            _ => Some(i),
        };
        self.best_fom = self.best_fom.min(fom);
        let objective_best = self.specs[self.incumbent.expect("set above")].objective();
        self.history.push(HistoryEntry {
            eval_index: i + 1,
            fom,
            fom_best: self.best_fom,
            objective_best,
            feasible: self.first_feasible.is_some(),
        });
        Ok(fom)
    }

    pub fn finish(
        self,
        problem: &ProblemDefinition,
        algorithm: &str,
        seed: u64,
        records: Vec<EvaluationRecord>,
    ) -> Result<RunResult> {
        let best = self
            .incumbent
            .ok_or_else(|| contract("run finished without any evaluation"))?;
        let best_unit = self.units[best].clone();
        Ok(RunResult {
            algorithm: algorithm.to_string(),
            seed,
            objective_weight: self.scalarizer.weights()[0],
            best_design: problem.denormalize(&best_unit)?.into_inner(),
            best_fom: self.fom_of(best),
            best_unit,
            best_specs: self.specs[best].clone(),
            feasible: self.first_feasible.is_some(),
            evaluations: self.units.len(),
            first_feasible: self.first_feasible,
            history: self.history,
            records,
        })
    }
}

/// Ends a run that failed midway, keeping what was evaluated.
pub(crate) fn abort(
    tracker: Tracker,
    problem: &ProblemDefinition,
    algorithm: &str,
    seed: u64,
    records: Vec<EvaluationRecord>,
    source: Error,
) -> Error {
    match tracker.finish(problem, algorithm, seed, records) {
        Ok(partial) => Error::Aborted {
            partial: Box::new(partial),
            source: Box::new(source),
        },
        Err(_) => source,
    }
}

/// Two unit designs closer than this (infinity norm) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

const PURPOSE_CRITIC: u64 = 1;
const PURPOSE_ACTOR: u64 = 2;
const PURPOSE_NOISE: u64 = 3;
const PURPOSE_FALLBACK: u64 = 4;
const PURPOSE_INIT: u64 = 5;

/// State of a DNN-Opt run between iterations.
pub struct OptimizerState {
    problem: ProblemDefinition,
    cfg: OptimizerConfig,
    options: RunOptions,
    tracker: Tracker,
    n_init: usize,
    n_es: usize,
    t: usize,
    last_critic: Option<CriticModel>,
}

impl OptimizerState {
    /// Draws and evaluates the initial sample.
    pub fn initialize(harness: &mut Harness<'_>, cfg: &OptimizerConfig, options: &RunOptions) -> Result<Self> {
        let problem = harness.problem().clone();
        cfg.validate(problem.d(), options.budget)?;
        let n_init = cfg.resolved_n_init(problem.d());
        let n_es = cfg.resolved_n_es(problem.d());
        let sample = initial_sample(problem.d(), n_init, derive_seed(options.seed, PURPOSE_INIT, 0));
        let evaluated = harness.evaluate_units(&sample)?;
        let initial = evaluated
            .into_iter()
            .filter(|e| e.fresh)
            .map(|e| (e.unit, e.specs))
            .collect();
        let tracker = Tracker::from_initial(&problem, initial, options.objective_weight)?;
        Ok(Self {
            problem,
            cfg: cfg.clone(),
            options: options.clone(),
            tracker,
            n_init,
            n_es,
            t: 0,
            last_critic: None,
        })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Evaluated unit designs, in evaluation order.
    pub fn x_tot(&self) -> &[Vec<f64>] {
        self.tracker.units()
    }

    pub fn f_tot(&self) -> &[SpecVector] {
        self.tracker.specs()
    }

    /// Completed optimization iterations.
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn n_init(&self) -> usize {
        self.n_init
    }

    pub fn n_es(&self) -> usize {
        self.n_es
    }

    /// Iteration budget left after the initial sample.
    pub fn t_max(&self) -> usize {
        self.options.budget.saturating_sub(self.n_init)
    }

    pub fn finished(&self) -> bool {
        self.tracker.len() >= self.options.budget
            || (self.options.termination == Termination::StopOnFeasible && self.tracker.feasible_found())
    }

    /// Indices of the current elites.
    pub fn elites(&self) -> Vec<usize> {
        let n_es = self.n_es.min(self.tracker.len());
        select_elites(&self.tracker.current_foms(), n_es).expect("n_es bounded by population")
    }

    fn is_duplicate(&self, unit: &[f64]) -> bool {
        self.tracker.units().iter().any(|u| {
            u.iter()
                .zip(unit)
                .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL)
        })
    }

    /// Chooses the next design to evaluate.
    fn propose(&mut self) -> Result<Vec<f64>> {
        let t = self.t as u64;
        let seed = self.options.seed;
        let elite_idx = self.elites();
        let elites: Vec<Vec<f64>> = elite_idx.iter().map(|&i| self.tracker.units()[i].clone()).collect();
        let rb = restricted_bounds(&elites)?;

        let valid: Vec<usize> = (0..self.tracker.len())
            .filter(|&i| self.tracker.specs()[i].is_finite())
            .collect();
        if valid.len() >= 2 {
            let xs: Vec<Vec<f64>> = valid.iter().map(|&i| self.tracker.units()[i].clone()).collect();
            let fs: Vec<SpecVector> = valid.iter().map(|&i| self.tracker.specs()[i].clone()).collect();
            let cap = self.cfg.critic.pseudo_cap.max(xs.len());
            let samples = generate_pseudo_samples(&xs, &fs, cap, derive_seed(seed, PURPOSE_CRITIC, t))?;
            let warm = if self.cfg.critic.warm_start { self.last_critic.as_ref() } else { None };
            let critic = train_critic(&samples, &self.cfg.critic, derive_seed(seed, PURPOSE_CRITIC, t), warm)?;

            let actor = Actor::new(&rb, &self.cfg.actor, derive_seed(seed, PURPOSE_ACTOR, t))?;
            let scalarizer = self.tracker.scalarizer().clone();
            let (actor, _) = train_actor(
                actor,
                &critic,
                &elites,
                &rb,
                &scalarizer,
                &self.cfg.actor,
                derive_seed(seed, PURPOSE_ACTOR, t),
            )?;
            let candidates = propose_candidates(
                &actor,
                &elites,
                &rb,
                self.cfg.actor.noise_sigma_frac,
                derive_seed(seed, PURPOSE_NOISE, t),
            )?;
            let ranked = rank_candidates(&elites, &candidates, &critic, &scalarizer)?;
            if self.cfg.check_query_oracle {
                check_against_scan(&elites, &candidates, &critic, &scalarizer, ranked[0].0)?;
            }
            if self.cfg.critic.warm_start {
                self.last_critic = Some(critic);
            }
            for (i, _) in ranked {
                let snapped = self.problem.snap_unit(&candidates[i])?;
                if !self.is_duplicate(&snapped) {
                    return Ok(snapped);
                }
            }
        }
        self.fallback(&rb, derive_seed(seed, PURPOSE_FALLBACK, t))
    }

    /// Uniform draw in the restricted box, then in the whole cube.
    fn fallback(&self, rb: &RestrictedBounds, seed: u64) -> Result<Vec<f64>> {
        const TRIES: usize = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.problem.d();
        for attempt in 0..2 * TRIES {
            let u: Vec<f64> = (0..d)
                .map(|j| {
                    if attempt < TRIES {
                        rb.lb()[j] + (rb.ub()[j] - rb.lb()[j]) * rng.gen::<f64>()
                    } else {
                        rng.gen::<f64>()
                    }
                })
                .collect();
            let snapped = self.problem.snap_unit(&u)?;
            if !self.is_duplicate(&snapped) {
                return Ok(snapped);
            }
        }
        Err(contract("no unevaluated design could be found"))
    }

    /// One iteration: propose, evaluate exactly one new design, record it.
    pub fn step(&mut self, harness: &mut Harness<'_>) -> Result<()> {
        let query = self.propose()?;
        let eval = harness.evaluate_unit(&query)?;
        debug_assert!(eval.fresh, "duplicate guard let a cached design through");
        self.tracker.push(eval.unit, eval.specs)?;
        self.t += 1;
        Ok(())
    }

    pub fn into_tracker(self) -> Tracker {
        self.tracker
    }
}

fn check_against_scan(
    elites: &[Vec<f64>],
    candidates: &[Vec<f64>],
    critic: &CriticModel,
    scalarizer: &Scalarizer,
    chosen: usize,
) -> Result<()> {
    let mut best = (0, f64::INFINITY);
    for (i, (e, c)) in elites.iter().zip(candidates).enumerate() {
        let dx: Vec<f64> = c.iter().zip(e).map(|(a, b)| a - b).collect();
        let g = scalarizer.fom_unchecked(critic.predict_spec(e, &dx)?.values());
        if g < best.1 {
            best = (i, g);
        }
    }
    if best.0 != chosen {
        return Err(contract(format!(
            "query selection picked candidate {chosen}, linear scan picked {}",
            best.0
        )));
    }
    Ok(())
}

/// Runs DNN-Opt until the termination rule or the budget stops it.
pub fn run(
    problem: &ProblemDefinition,
    evaluator: &mut dyn Evaluator,
    options: &RunOptions,
    cfg: &OptimizerConfig,
) -> Result<RunResult> {
    let mut harness = Harness::new(evaluator, problem)?;
    let mut state = OptimizerState::initialize(&mut harness, cfg, options)?;
    while !state.finished() {
        if let Err(e) = state.step(&mut harness) {
            let tracker = state.into_tracker();
            return Err(abort(tracker, problem, "dnnopt", options.seed, harness.into_records(), e));
        }
    }
    state
        .into_tracker()
        .finish(problem, "dnnopt", options.seed, harness.into_records())
}
