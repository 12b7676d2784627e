//! Constrained problem definition, canonical spec vectors and the FoM scalarization.
//!
//! Every optimizer in the crate scores designs through [`Scalarizer`], so the
//! objective/constraint trade-off is defined in exactly one place.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Offset used when deriving the objective weight from a population's spread.
pub const OBJECTIVE_WEIGHT_EPS: f64 = 1e-12;

/// A point of the search space in raw (physical) units.
#[derive(Debug, Clone, PartialEq)]
pub struct Design(Vec<f64>);

impl Design {
    /// Builds a design for `prob`, clipping each component into the global bounds.
    pub fn new(values: Vec<f64>, prob: &ProblemDefinition) -> Result<Self> {
        if values.len() != prob.d() {
            return Err(contract(format!(
                "design has {} components, problem has d = {}",
                values.len(),
                prob.d()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(contract(format!("design component {v} is not finite")));
        }
        let values = values
            .into_iter()
            .zip(prob.lb.iter().zip(&prob.ub))
            .map(|(v, (&lo, &hi))| v.clamp(lo, hi))
            .collect();
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Objective followed by `m` constraints in canonical `f_i <= 0` form.
///
/// A failed evaluation is stored as a vector of NaNs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpecVector(Vec<f64>);

impl SpecVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn failed(len: usize) -> Self {
        Self(vec![f64::NAN; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn objective(&self) -> f64 {
        self.0[0]
    }

    pub fn constraints(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecKind {
    ObjectiveMin,
    ConstraintLe,
    ConstraintGe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDefinition {
    pub name: String,
    pub kind: SpecKind,
    /// Target for constraints; ignored for the objective.
    #[serde(default)]
    pub bound: f64,
    /// Weight of this spec inside the FoM. For the objective, `None` means
    /// "derive from the initial population".
    #[serde(default)]
    pub weight: Option<f64>,
}

impl SpecDefinition {
    pub fn objective(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: SpecKind::ObjectiveMin,
            bound: 0.0,
            weight: None,
        }
    }

    pub fn at_most(name: impl Into<String>, bound: f64) -> Self {
        Self {
            name: name.into(),
            kind: SpecKind::ConstraintLe,
            bound,
            weight: None,
        }
    }

    pub fn at_least(name: impl Into<String>, bound: f64) -> Self {
        Self {
            name: name.into(),
            kind: SpecKind::ConstraintGe,
            bound,
            weight: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = Some(weight);
        self
    }

    fn scale(&self) -> f64 {
        if self.bound != 0.0 {
            self.bound.abs()
        } else {
            1.0
        }
    }
}

/// Maps a raw metric into canonical form, `<= 0` exactly when the spec holds.
pub fn canonicalize_spec(raw_value: f64, def: &SpecDefinition) -> Result<f64> {
    if !raw_value.is_finite() {
        return Err(Error::Canonicalize {
            name: def.name.clone(),
            value: raw_value,
        });
    }
    Ok(match def.kind {
        SpecKind::ObjectiveMin => raw_value,
        SpecKind::ConstraintLe => (raw_value - def.bound) / def.scale(),
        SpecKind::ConstraintGe => (def.bound - raw_value) / def.scale(),
    })
}

/// True iff every constraint is `<= 0`. The objective is ignored.
pub fn is_feasible(spec: &SpecVector) -> bool {
    spec.values()
        .iter()
        .skip(1)
        .all(|&f| f.is_finite() && f <= 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDefinition {
    names: Vec<String>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    integer: Vec<bool>,
    specs: Vec<SpecDefinition>,
}

impl ProblemDefinition {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>, specs: Vec<SpecDefinition>) -> Result<Self> {
        let names = (0..lb.len()).map(|j| format!("x{j}")).collect();
        let integer = vec![false; lb.len()];
        Self::with_details(names, lb, ub, integer, specs)
    }

    pub fn with_details(
        names: Vec<String>,
        lb: Vec<f64>,
        ub: Vec<f64>,
        integer: Vec<bool>,
        specs: Vec<SpecDefinition>,
    ) -> Result<Self> {
        let d = lb.len();
        if d == 0 {
            return Err(Error::Problem("problem needs at least one variable".into()));
        }
        if ub.len() != d || names.len() != d || integer.len() != d {
            return Err(Error::Problem(format!(
                "bounds/names/integer flags disagree on dimension (lb {d}, ub {}, names {}, integer {})",
                ub.len(),
                names.len(),
                integer.len()
            )));
        }
        for j in 0..d {
            if !(lb[j].is_finite() && ub[j].is_finite() && lb[j] < ub[j]) {
                return Err(Error::Problem(format!(
                    "variable `{}` needs finite lb < ub, got [{}, {}]",
                    names[j], lb[j], ub[j]
                )));
            }
        }
        match specs.first() {
            None => return Err(Error::Problem("spec list is empty".into())),
            Some(s) if s.kind != SpecKind::ObjectiveMin => {
                return Err(Error::Problem(format!(
                    "first spec `{}` must be the objective",
                    s.name
                )))
            }
            _ => {}
        }
        if let Some(s) = specs[1..].iter().find(|s| s.kind == SpecKind::ObjectiveMin) {
            return Err(Error::Problem(format!(
                "spec `{}` is a second objective; exactly one is allowed",
                s.name
            )));
        }
        for s in &specs {
            if let Some(w) = s.weight {
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Problem(format!(
                        "spec `{}` has non-positive weight {w}",
                        s.name
                    )));
                }
            }
            if !s.bound.is_finite() {
                return Err(Error::Problem(format!("spec `{}` has a non-finite bound", s.name)));
            }
        }
        Ok(Self {
            names,
            lb,
            ub,
            integer,
            specs,
        })
    }

    pub fn d(&self) -> usize {
        self.lb.len()
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.specs.len() - 1
    }

    pub fn lb(&self) -> &[f64] {
        &self.lb
    }

    pub fn ub(&self) -> &[f64] {
        &self.ub
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn integer_mask(&self) -> &[bool] {
        &self.integer
    }

    pub fn specs(&self) -> &[SpecDefinition] {
        &self.specs
    }

    pub fn normalize(&self, design: &Design) -> Vec<f64> {
        design
            .values()
            .iter()
            .zip(self.lb.iter().zip(&self.ub))
            .map(|(&x, (&lo, &hi))| (x - lo) / (hi - lo))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize); unit coordinates are clipped to `[0, 1]`.
    pub fn denormalize(&self, unit: &[f64]) -> Result<Design> {
        if unit.len() != self.d() {
            return Err(contract(format!(
                "unit design has {} components, problem has d = {}",
                unit.len(),
                self.d()
            )));
        }
        let values = unit
            .iter()
            .zip(self.lb.iter().zip(&self.ub))
            .map(|(&u, (&lo, &hi))| lo + u.clamp(0.0, 1.0) * (hi - lo))
            .collect();
        Design::new(values, self)
    }

    /// Rounds integer-valued variables of a raw design, keeping it within bounds.
    pub fn round_integers(&self, design: &Design) -> Design {
        let values = design
            .values()
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.integer[j] {
                    let r = x.round();
                    if r < self.lb[j] {
                        self.lb[j].ceil()
                    } else if r > self.ub[j] {
                        self.ub[j].floor()
                    } else {
                        r
                    }
                } else {
                    x
                }
            })
            .collect();
        Design(values)
    }

    /// Unit design as the evaluator will see it: integer variables rounded,
    /// then mapped back to unit coordinates.
    pub fn snap_unit(&self, unit: &[f64]) -> Result<Vec<f64>> {
        if !self.integer.iter().any(|&b| b) {
            return Ok(unit.iter().map(|u| u.clamp(0.0, 1.0)).collect());
        }
        let raw = self.denormalize(unit)?;
        Ok(self.normalize(&self.round_integers(&raw)))
    }

    /// Canonicalizes a raw metric vector reported by an evaluator.
    pub fn canonicalize(&self, raw: &[f64]) -> Result<SpecVector> {
        if raw.len() != self.specs.len() {
            return Err(contract(format!(
                "evaluator returned {} metrics, problem declares {}",
                raw.len(),
                self.specs.len()
            )));
        }
        raw.iter()
            .zip(&self.specs)
            .map(|(&v, def)| canonicalize_spec(v, def))
            .collect::<Result<Vec<_>>>()
            .map(SpecVector)
    }

    /// Restricts the problem to `active` variables; the others are dropped.
    pub fn subspace(&self, active: &[usize]) -> Result<Self> {
        if active.is_empty() || active.iter().any(|&j| j >= self.d()) {
            return Err(contract("active set must be a non-empty subset of the variables"));
        }
        let pick = |v: &[f64]| active.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Self::with_details(
            active.iter().map(|&j| self.names[j].clone()).collect(),
            pick(&self.lb),
            pick(&self.ub),
            active.iter().map(|&j| self.integer[j]).collect(),
            self.specs.clone(),
        )
    }
}

/// `1 / (max f0 - min f0 + eps)` over the finite objectives given.
///
/// Falls back to 1 when fewer than two distinct finite values exist, since a
/// zero spread carries no scale information.
pub fn objective_weight_from(objectives: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = objectives
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let spread = hi - lo;
    if spread.is_finite() && spread > 0.0 {
        1.0 / (spread + OBJECTIVE_WEIGHT_EPS)
    } else {
        1.0
    }
}

/// The FoM `g = w0*f0 + sum_i min(1, max(0, w_i*f_i))`. Lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalarizer {
    weights: Vec<f64>,
}

impl Scalarizer {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(contract("weight vector is empty"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(contract(format!("weights must be positive and finite, got {w}")));
        }
        Ok(Self { weights })
    }

    /// Weights from the spec list; unset weights default to 1 except the
    /// objective, which takes `objective_weight`.
    pub fn from_specs(specs: &[SpecDefinition], objective_weight: f64) -> Result<Self> {
        let weights = specs
            .iter()
            .enumerate()
            .map(|(i, s)| match (i, s.weight) {
                (_, Some(w)) => w,
                (0, None) => objective_weight,
                (_, None) => 1.0,
            })
            .collect();
        Self::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn m(&self) -> usize {
        self.weights.len() - 1
    }

    /// FoM of a spec vector. Non-finite entries score as a failure with a
    /// worst-so-far objective of 0.
    pub fn fom(&self, spec: &SpecVector) -> Result<f64> {
        self.fom_given_worst(spec, 0.0)
    }

    /// FoM where a failed (non-finite) spec scores `w0*worst_objective + m + 1`.
    pub fn fom_given_worst(&self, spec: &SpecVector, worst_objective: f64) -> Result<f64> {
        if spec.len() != self.weights.len() {
            return Err(contract(format!(
                "spec vector has {} entries, weights have {}",
                spec.len(),
                self.weights.len()
            )));
        }
        if !spec.is_finite() {
            return Ok(self.failure_fom(worst_objective));
        }
        Ok(self.fom_unchecked(spec.values()))
    }

    pub fn failure_fom(&self, worst_objective: f64) -> f64 {
        self.weights[0] * worst_objective + self.m() as f64 + 1.0
    }

    /// FoM of a raw slice; the caller guarantees matching length and finite values.
    pub fn fom_unchecked(&self, f: &[f64]) -> f64 {
        let penalty: f64 = f[1..]
            .iter()
            .zip(&self.weights[1..])
            .map(|(&fi, &wi)| (wi * fi).max(0.0).min(1.0))
            .sum();
        self.weights[0] * f[0] + penalty
    }

    /// Gradient of the FoM with respect to `f`. Clipped regions and their
    /// kinks get a zero slope.
    pub fn fom_gradient(&self, f: &[f64]) -> Vec<f64> {
        let mut grad = Vec::with_capacity(f.len());
        grad.push(self.weights[0]);
        for (&fi, &wi) in f[1..].iter().zip(&self.weights[1..]) {
            let z = wi * fi;
            grad.push(if z > 0.0 && z < 1.0 { wi } else { 0.0 });
        }
        grad
    }
}
