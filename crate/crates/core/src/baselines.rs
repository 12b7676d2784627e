//! Reference optimizers scored with the same FoM and bookkeeping as DNN-Opt.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::{Evaluator, Harness};
use crate::optimizer::{abort, derive_seed, RunOptions, RunResult, Termination, Tracker};
use crate::problem::{ProblemDefinition, SpecVector};

/// DE/rand/1/bin settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeConfig {
    /// Population size.
    pub np: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self { np: 30, f: 0.5, cr: 0.9 }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.np < 4 {
            return Err(Error::Config(format!("DE population must be at least 4, got {}", self.np)));
        }
        if !(self.f >= 0.0 && self.f <= 2.0) {
            return Err(Error::Config(format!("DE weight f must lie in [0, 2], got {}", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(Error::Config(format!("DE crossover rate must lie in [0, 1], got {}", self.cr)));
        }
        Ok(())
    }
}

/// Folds `v` back into `[0, 1]` by mirroring at the faces.
pub fn reflect(v: f64) -> f64 {
    let r = v.rem_euclid(2.0);
    if r > 1.0 {
        2.0 - r
    } else {
        r
    }
}

/// Generations in a row without a single new evaluation before DE gives up.
const STALL_LIMIT: usize = 1000;

const PURPOSE_DE: u64 = 10;
const PURPOSE_RANDOM: u64 = 11;

/// Samples random search spends before fixing the objective weight.
pub const RANDOM_WEIGHT_SAMPLES: usize = 20;

fn stop(tracker: &Tracker, options: &RunOptions) -> bool {
    tracker.len() >= options.budget
        || (options.termination == Termination::StopOnFeasible && tracker.feasible_found())
}

/// Differential evolution, DE/rand/1/bin with reflection at the bounds and
/// greedy one-to-one selection by FoM. Trials are evaluated one at a time so
/// the run can stop exactly at the budget or the first feasible design.
pub fn differential_evolution(
    problem: &ProblemDefinition,
    evaluator: &mut dyn Evaluator,
    options: &RunOptions,
    cfg: &DeConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    if options.budget < cfg.np {
        return Err(Error::Config(format!(
            "budget {} is smaller than the DE population {}",
            options.budget, cfg.np
        )));
    }
    let d = problem.d();
    let mut harness = Harness::new(evaluator, problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, PURPOSE_DE, 0));
    let init: Vec<Vec<f64>> = (0..cfg.np).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
    let evaluated = harness.evaluate_units(&init)?;
    let mut pop: Vec<(Vec<f64>, SpecVector)> = evaluated.iter().map(|e| (e.unit.clone(), e.specs.clone())).collect();
    let fresh = evaluated.into_iter().filter(|e| e.fresh).map(|e| (e.unit, e.specs)).collect();
    let mut tracker = Tracker::from_initial(problem, fresh, options.objective_weight)?;

    let mut stalled = 0;
    while !stop(&tracker, options) && stalled < STALL_LIMIT {
        let mut any_fresh = false;
        for i in 0..cfg.np {
            if stop(&tracker, options) {
                break;
            }
            let picks = loop {
                let s = sample(&mut rng, cfg.np, 3);
                if !s.iter().any(|k| k == i) {
                    break [s.index(0), s.index(1), s.index(2)];
                }
            };
            let (a, b, c) = (&pop[picks[0]].0, &pop[picks[1]].0, &pop[picks[2]].0);
            let forced = rng.gen_range(0..d);
            let trial: Vec<f64> = (0..d)
                .map(|j| {
                    if j == forced || rng.gen::<f64>() < cfg.cr {
                        reflect(a[j] + cfg.f * (b[j] - c[j]))
                    } else {
                        pop[i].0[j]
                    }
                })
                .collect();
            let eval = match harness.evaluate_unit(&trial) {
                Ok(e) => e,
                Err(e) => return Err(abort(tracker, problem, "de", options.seed, harness.into_records(), e)),
            };
            if eval.fresh {
                any_fresh = true;
                tracker.push(eval.unit.clone(), eval.specs.clone())?;
            }
            if tracker.score(&eval.specs) <= tracker.score(&pop[i].1) {
                pop[i] = (eval.unit, eval.specs);
            }
        }
        stalled = if any_fresh { 0 } else { stalled + 1 };
    }
    tracker.finish(problem, "de", options.seed, harness.into_records())
}

/// Uniform random sampling of the unit cube. The objective weight is fixed
/// from the first [`RANDOM_WEIGHT_SAMPLES`] samples (fewer if the budget is
/// smaller), which are evaluated together.
pub fn random_search(
    problem: &ProblemDefinition,
    evaluator: &mut dyn Evaluator,
    options: &RunOptions,
) -> Result<RunResult> {
    if options.budget == 0 {
        return Err(Error::Config("random search needs a budget of at least 1".into()));
    }
    let d = problem.d();
    let mut harness = Harness::new(evaluator, problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, PURPOSE_RANDOM, 0));
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.gen()).collect() };
    let first: Vec<Vec<f64>> = (0..RANDOM_WEIGHT_SAMPLES.min(options.budget)).map(|_| draw(&mut rng)).collect();
    let evaluated = harness.evaluate_units(&first)?;
    let fresh = evaluated.into_iter().filter(|e| e.fresh).map(|e| (e.unit, e.specs)).collect();
    let mut tracker = Tracker::from_initial(problem, fresh, options.objective_weight)?;
    let mut misses = 0;
    while !stop(&tracker, options) && misses < STALL_LIMIT {
        let u = draw(&mut rng);
        match harness.evaluate_unit(&u) {
            Ok(e) if e.fresh => {
                misses = 0;
                tracker.push(e.unit, e.specs)?;
            }
            Ok(_) => misses += 1,
            Err(e) => return Err(abort(tracker, problem, "random", options.seed, harness.into_records(), e)),
        }
    }
    tracker.finish(problem, "random", options.seed, harness.into_records())
}
