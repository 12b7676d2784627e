//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::DeConfig;
use crate::error::{Error, Result};
use crate::evaluators::{BuiltinSpec, Evaluator, ExternalConfig, ExternalProcess};
use crate::optimizer::{OptimizerConfig, RunOptions, Termination};
use crate::problem::{ProblemDefinition, SpecDefinition};
use crate::sensitivity::SensitivityConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dnnopt,
    De,
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dnnopt => "dnnopt",
            Algorithm::De => "de",
            Algorithm::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableConfig {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    #[serde(default)]
    pub integer: bool,
}

/// Inline problem, required for external evaluators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub variables: Vec<VariableConfig>,
    /// Objective first, then constraints.
    pub specs: Vec<SpecDefinition>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemDefinition> {
        let v = &self.variables;
        ProblemDefinition::with_details(
            v.iter().map(|x| x.name.clone()).collect(),
            v.iter().map(|x| x.lb).collect(),
            v.iter().map(|x| x.ub).collect(),
            v.iter().map(|x| x.integer).collect(),
            self.specs.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Builtin(BuiltinSpec),
    External(ExternalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub algorithms: Vec<Algorithm>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Dnnopt, Algorithm::De, Algorithm::Random],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub termination: Termination,
    /// Fixed objective weight; derived per run if unset.
    #[serde(default)]
    pub objective_weight: Option<f64>,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub dnnopt: OptimizerConfig,
    #[serde(default)]
    pub de: DeConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub budget: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses TOML; diagnostics carry the line and the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = p.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("`budget` must be positive".into()));
        }
        if let Some(w) = self.objective_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("`objective_weight` must be positive, got {w}")));
            }
        }
        match (&self.evaluator, &self.problem) {
            (EvaluatorConfig::External(_), None) => {
                return Err(Error::Config("`problem` is required with an external evaluator".into()))
            }
            (EvaluatorConfig::Builtin(_), Some(_)) => {
                return Err(Error::Config("`problem` cannot be set for a builtin evaluator".into()))
            }
            (EvaluatorConfig::External(e), Some(_)) => e.validate()?,
            _ => {}
        }
        if self.compare.algorithms.is_empty() {
            return Err(Error::Config("`compare.algorithms` must not be empty".into()));
        }
        self.de.validate()?;
        self.sensitivity.validate()?;
        Ok(())
    }

    /// Problem and a fresh evaluator for it.
    pub fn build_evaluator(&self) -> Result<(ProblemDefinition, Box<dyn Evaluator>)> {
        match (&self.evaluator, &self.problem) {
            (EvaluatorConfig::Builtin(spec), _) => {
                let ev = spec.build()?;
                Ok((ev.descriptor().problem, ev))
            }
            (EvaluatorConfig::External(ext), Some(p)) => {
                let problem = p.build()?;
                let ev = ExternalProcess::new(ext.clone(), problem.clone())?;
                Ok((problem, Box::new(ev)))
            }
            (EvaluatorConfig::External(_), None) => {
                Err(Error::Config("`problem` is required with an external evaluator".into()))
            }
        }
    }

    pub fn run_options(&self, seed: u64) -> RunOptions {
        RunOptions {
            budget: self.budget,
            seed,
            termination: self.termination,
            objective_weight: self.objective_weight,
        }
    }
}
