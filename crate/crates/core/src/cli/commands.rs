//! The `run`, `sensitivity` and `compare` subcommands.

use std::path::Path;

use crate::baselines::{differential_evolution, random_search, RANDOM_WEIGHT_SAMPLES};
use crate::cli::config::{Algorithm, RunConfig};
use crate::cli::report::{self, CompareTable, SeedSummary, Summary};
use crate::error::{Error, Result};
use crate::evaluators::Evaluator;
use crate::optimizer::{self, RunResult};
use crate::problem::{objective_weight_from, Design, ProblemDefinition, Scalarizer};
use crate::sensitivity::{self, SensitivityReport, SubspaceEvaluator};

pub const SENSITIVITY_FILE: &str = "sensitivity.json";
pub const COMPARE_FILE: &str = "compare.csv";

/// One seeded run of `algorithm`.
pub fn run_algorithm(
    algorithm: Algorithm,
    cfg: &RunConfig,
    problem: &ProblemDefinition,
    evaluator: &mut dyn Evaluator,
    seed: u64,
) -> Result<RunResult> {
    let options = cfg.run_options(seed);
    match algorithm {
        Algorithm::Dnnopt => optimizer::run(problem, evaluator, &options, &cfg.dnnopt),
        Algorithm::De => differential_evolution(problem, evaluator, &options, &cfg.de),
        Algorithm::Random => random_search(problem, evaluator, &options),
    }
}

fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    let rows = report::history_rows(result);
    report::write_atomic(
        &report::history_path(dir, &result.algorithm, result.seed),
        &report::history_csv(&rows)?,
    )?;
    report::write_atomic(
        &report::records_path(dir, &result.algorithm, result.seed),
        &report::records_jsonl(result)?,
    )
}

fn write_summary(cfg: &RunConfig, algorithm: Algorithm, per_seed: Vec<SeedSummary>) -> Result<Summary> {
    let summary = Summary::new(algorithm.name(), cfg.budget, per_seed);
    report::write_atomic(
        &report::summary_path(&cfg.output_dir, algorithm.name()),
        &report::summary_json(&summary)?,
    )?;
    Ok(summary)
}

/// Runs every seed, writing each run as it finishes. On a fatal evaluator
/// error the partial run and the summary so far are flushed first.
fn run_seeds(
    cfg: &RunConfig,
    algorithm: Algorithm,
    problem: &ProblemDefinition,
    evaluator: &mut dyn Evaluator,
    expand: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<(Summary, Vec<RunResult>)> {
    let mut per_seed = Vec::new();
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        match run_algorithm(algorithm, cfg, problem, evaluator, seed) {
            Ok(r) => {
                write_run(&cfg.output_dir, &r)?;
                per_seed.push(SeedSummary::of(&r, expand(&r.best_design)));
                results.push(r);
            }
            Err(Error::Aborted { partial, source }) => {
                write_run(&cfg.output_dir, &partial)?;
                per_seed.push(SeedSummary::of(&partial, expand(&partial.best_design)));
                write_summary(cfg, algorithm, per_seed)?;
                return Err(Error::Aborted { partial, source });
            }
            Err(e) => {
                if !per_seed.is_empty() {
                    write_summary(cfg, algorithm, per_seed)?;
                }
                return Err(e);
            }
        }
    }
    Ok((write_summary(cfg, algorithm, per_seed)?, results))
}

/// `run`: one run per seed with the configured algorithm.
pub fn cmd_run(cfg: &RunConfig) -> Result<Summary> {
    let (problem, mut evaluator) = cfg.build_evaluator()?;
    Ok(run_seeds(cfg, cfg.algorithm, &problem, evaluator.as_mut(), &|x| x.to_vec())?.0)
}

/// `sensitivity`: screens the variables and writes the report; with
/// `then_run`, optimizes over the active variables only.
pub fn cmd_sensitivity(cfg: &RunConfig, then_run: bool) -> Result<(SensitivityReport, Option<Summary>)> {
    let (problem, mut evaluator) = cfg.build_evaluator()?;
    let report = sensitivity::screen(evaluator.as_mut(), &problem, &cfg.sensitivity)?;
    report::write_atomic(&cfg.output_dir.join(SENSITIVITY_FILE), &report::sensitivity_json(&report)?)?;
    if !then_run {
        return Ok((report, None));
    }
    let nominal = Design::new(report.nominal.clone(), &problem)?;
    let mut sub = SubspaceEvaluator::new(evaluator.as_mut(), &problem, &report.active_set, &nominal)?;
    let reduced = sub.problem().clone();
    let (active, fixed) = (report.active_set.clone(), report.nominal.clone());
    let expand = move |x: &[f64]| {
        let mut full = fixed.clone();
        for (&j, &v) in active.iter().zip(x) {
            full[j] = v;
        }
        full
    };
    let (summary, _) = run_seeds(cfg, cfg.algorithm, &reduced, &mut sub, &expand)?;
    Ok((report, Some(summary)))
}

/// Objective weight shared by every algorithm's curve for one seed, taken
/// from the opening evaluations of all of them.
pub fn common_objective_weight(runs: &[&RunResult]) -> f64 {
    objective_weight_from(runs.iter().flat_map(|r| {
        r.records
            .iter()
            .take(RANDOM_WEIGHT_SAMPLES)
            .filter(|rec| rec.specs.is_finite())
            .map(|rec| rec.specs.objective())
    }))
}

/// Mean running-best FoM curves of several algorithms over the same seeds.
/// Each seed's runs are rescored with one common objective weight, and runs
/// that stopped early keep their final value up to the budget.
pub fn compare_curves(
    problem: &ProblemDefinition,
    budget: usize,
    fixed_weight: Option<f64>,
    algorithms: &[String],
    by_seed: &[Vec<RunResult>],
) -> Result<CompareTable> {
    let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); algorithms.len()];
    for runs in by_seed {
        let w0 = fixed_weight.unwrap_or_else(|| common_objective_weight(&runs.iter().collect::<Vec<_>>()));
        let scalarizer = Scalarizer::from_specs(problem.specs(), w0)?;
        for (a, r) in runs.iter().enumerate() {
            curves[a].push(report::pad_curve(&r.rescored_curve(&scalarizer)?, budget)?);
        }
    }
    let means = curves.iter().map(|c| report::mean_curve(c)).collect::<Result<Vec<_>>>()?;
    Ok(CompareTable {
        algorithms: algorithms.to_vec(),
        rows: (0..budget).map(|k| means.iter().map(|m| m[k]).collect()).collect(),
    })
}

/// `compare`: every listed algorithm over the shared seeds; writes each
/// algorithm's runs and summary plus the aligned mean-FoM CSV.
pub fn cmd_compare(cfg: &RunConfig) -> Result<(CompareTable, Vec<Summary>)> {
    let (problem, mut evaluator) = cfg.build_evaluator()?;
    let mut by_seed: Vec<Vec<RunResult>> = vec![Vec::new(); cfg.seeds.len()];
    let mut summaries = Vec::new();
    for &alg in &cfg.compare.algorithms {
        let (summary, results) = run_seeds(cfg, alg, &problem, evaluator.as_mut(), &|x| x.to_vec())?;
        summaries.push(summary);
        for (s, r) in results.into_iter().enumerate() {
            by_seed[s].push(r);
        }
    }
    let names: Vec<String> = cfg.compare.algorithms.iter().map(|a| a.name().to_string()).collect();
    let table = compare_curves(&problem, cfg.budget, cfg.objective_weight, &names, &by_seed)?;
    report::write_atomic(&cfg.output_dir.join(COMPARE_FILE), &report::compare_csv(&table)?)?;
    Ok((table, summaries))
}
