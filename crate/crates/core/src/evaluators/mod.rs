//! The black-box boundary.
//!
//! An [`Evaluator`] maps a raw design to raw metrics (power in watts, gain in
//! dB, ...). The [`Harness`] sits between optimizers and evaluators: it rounds
//! integer variables, canonicalizes metrics, caches repeated designs, counts
//! calls and keeps one [`EvaluationRecord`] per real evaluation.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::problem::{Design, ProblemDefinition, SpecVector};

pub mod builtin;
pub mod external;

pub use builtin::{BuiltinSpec, ConstrainedQuadratic, Separable, Sphere, ToyAmp};
pub use external::{ExternalConfig, ExternalProcess};

/// Result of one evaluator call that did not abort the run.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Raw metrics, one per spec, objective first.
    Metrics(Vec<f64>),
    /// The evaluation failed; the design is scored with the failure FoM.
    Failure(String),
}

/// Static facts about an evaluator.
#[derive(Debug, Clone)]
pub struct EvaluatorDescriptor {
    pub problem: ProblemDefinition,
    /// Several evaluations may run at the same time.
    pub concurrency_safe: bool,
    /// The same design always yields bitwise-identical metrics.
    pub deterministic: bool,
}

impl EvaluatorDescriptor {
    pub fn d(&self) -> usize {
        self.problem.d()
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }
}

/// Something that turns designs into raw metrics.
///
/// `Err` is reserved for conditions that must end the run (for example a
/// protocol violation that survives a restart); ordinary failures are
/// reported as [`Outcome::Failure`].
pub trait Evaluator: Send {
    fn descriptor(&self) -> EvaluatorDescriptor;

    fn evaluate(&mut self, design: &Design) -> Result<Outcome>;

    /// Evaluates several designs; results are in input order.
    fn evaluate_many(&mut self, designs: &[Design]) -> Result<Vec<Outcome>> {
        designs.iter().map(|d| self.evaluate(d)).collect()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn descriptor(&self) -> EvaluatorDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        (**self).evaluate(design)
    }

    fn evaluate_many(&mut self, designs: &[Design]) -> Result<Vec<Outcome>> {
        (**self).evaluate_many(designs)
    }
}

/// One real evaluator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 0-based, contiguous within a harness.
    pub index: usize,
    /// Raw design as sent to the evaluator.
    pub design: Vec<f64>,
    /// Same design in unit coordinates.
    pub unit: Vec<f64>,
    /// Canonical spec vector; all NaN on failure.
    pub specs: SpecVector,
    pub failure: Option<String>,
    /// Seconds spent inside the evaluator.
    pub wall_time: f64,
}

/// Answer to a harness request.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Unit design actually evaluated (integer variables snapped).
    pub unit: Vec<f64>,
    pub specs: SpecVector,
    /// `false` when served from the cache; such answers cost no budget.
    pub fresh: bool,
}

/// Cache key: unit coordinates rounded to 12 decimals.
fn cache_key(unit: &[f64]) -> Vec<i64> {
    unit.iter().map(|u| (u * 1e12).round() as i64).collect()
}

/// Evaluation front end shared by every optimizer.
pub struct Harness<'e> {
    evaluator: &'e mut dyn Evaluator,
    problem: ProblemDefinition,
    cache: HashMap<Vec<i64>, usize>,
    records: Vec<EvaluationRecord>,
}

impl<'e> Harness<'e> {
    /// `problem` must match the evaluator's dimension and spec count; its
    /// spec definitions (bounds, weights) govern canonicalization.
    pub fn new(evaluator: &'e mut dyn Evaluator, problem: &ProblemDefinition) -> Result<Self> {
        let desc = evaluator.descriptor();
        if desc.d() != problem.d() || desc.m() != problem.m() {
            return Err(contract(format!(
                "problem has d={}, m={} but evaluator has d={}, m={}",
                problem.d(),
                problem.m(),
                desc.d(),
                desc.m()
            )));
        }
        Ok(Self {
            evaluator,
            problem: problem.clone(),
            cache: HashMap::new(),
            records: Vec::new(),
        })
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    /// Number of real evaluator calls so far.
    pub fn calls(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EvaluationRecord> {
        self.records
    }

    pub fn evaluate_unit(&mut self, unit: &[f64]) -> Result<Evaluation> {
        Ok(self.evaluate_units(&[unit.to_vec()])?.remove(0))
    }

    /// Evaluates a batch. Cache misses are sent to the evaluator together, in
    /// order; a design repeated within the batch is evaluated once.
    pub fn evaluate_units(&mut self, units: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        let d = self.problem.d();
        if let Some(u) = units.iter().find(|u| u.len() != d) {
            return Err(contract(format!("unit design has {} entries, expected {d}", u.len())));
        }
        let snapped = units
            .iter()
            .map(|u| self.problem.snap_unit(u))
            .collect::<Result<Vec<_>>>()?;
        let mut pending: Vec<usize> = Vec::new();
        let mut pending_keys: HashMap<Vec<i64>, usize> = HashMap::new();
        for (i, u) in snapped.iter().enumerate() {
            let key = cache_key(u);
            if !self.cache.contains_key(&key) && !pending_keys.contains_key(&key) {
                pending_keys.insert(key, i);
                pending.push(i);
            }
        }
        if !pending.is_empty() {
            let designs = pending
                .iter()
                .map(|&i| self.problem.denormalize(&snapped[i]))
                .collect::<Result<Vec<_>>>()?;
            let start = Instant::now();
            let outcomes = self.evaluator.evaluate_many(&designs)?;
            if outcomes.len() != designs.len() {
                return Err(contract("evaluator returned the wrong number of outcomes"));
            }
            let per_call = start.elapsed().as_secs_f64() / designs.len() as f64;
            for ((&i, design), outcome) in pending.iter().zip(designs).zip(outcomes) {
                let len = self.problem.specs().len();
                let (specs, failure) = match outcome {
                    Outcome::Metrics(raw) => match self.problem.canonicalize(&raw) {
                        Ok(s) => (s, None),
                        Err(e) => (SpecVector::failed(len), Some(e.to_string())),
                    },
                    Outcome::Failure(msg) => (SpecVector::failed(len), Some(msg)),
                };
                let index = self.records.len();
                self.cache.insert(cache_key(&snapped[i]), index);
                self.records.push(EvaluationRecord {
                    index,
                    design: design.into_inner(),
                    unit: snapped[i].clone(),
                    specs,
                    failure,
                    wall_time: per_call,
                });
            }
        }
        let first_of_batch: HashMap<usize, ()> = pending.iter().map(|&i| (i, ())).collect();
        Ok(snapped
            .into_iter()
            .enumerate()
            .map(|(i, unit)| {
                let rec = &self.records[self.cache[&cache_key(&unit)]];
                Evaluation {
                    specs: rec.specs.clone(),
                    fresh: first_of_batch.contains_key(&i),
                    unit,
                }
            })
            .collect())
    }
}

/// Evaluates a single design outside any run (for reports and tests).
pub fn evaluate_raw(
    evaluator: &mut dyn Evaluator,
    problem: &ProblemDefinition,
    design: &Design,
) -> Result<SpecVector> {
    let mut harness = Harness::new(evaluator, problem)?;
    let unit = problem.normalize(design);
    Ok(harness.evaluate_unit(&unit)?.specs)
}
