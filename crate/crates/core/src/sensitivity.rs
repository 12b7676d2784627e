//! Finite-difference screening of design variables.
//!
//! `S_ij = df_i / dx_j` is estimated by central differences around a nominal
//! design (one-sided where a probe would leave the box). A variable stays
//! active when, for some screened spec `i`,
//! `|S_ij| * (ub_j - lb_j) / max(|f_i(nominal)|, 1) > thresh`. Pruned
//! variables are frozen at their nominal values by [`SubspaceEvaluator`].

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::evaluators::{Evaluator, EvaluatorDescriptor, Harness, Outcome};
use crate::problem::{Design, ProblemDefinition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Probe half-width as a fraction of each variable's range.
    pub rel_step: f64,
    pub thresh: f64,
    /// Spec rows used for screening; objective plus failing constraints if unset.
    pub screened_specs: Option<Vec<usize>>,
    /// Nominal design in raw units; the box center if unset.
    pub nominal: Option<Vec<f64>>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            rel_step: 0.05,
            thresh: 0.01,
            screened_specs: None,
            nominal: None,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_step > 0.0 && self.rel_step < 0.5) {
            return Err(Error::Config(format!("rel_step must lie in (0, 0.5), got {}", self.rel_step)));
        }
        if !(self.thresh.is_finite() && self.thresh >= 0.0) {
            return Err(Error::Config(format!("thresh must be non-negative, got {}", self.thresh)));
        }
        Ok(())
    }

    /// Nominal design for `problem`.
    pub fn nominal_design(&self, problem: &ProblemDefinition) -> Result<Design> {
        let values = match &self.nominal {
            Some(v) => v.clone(),
            None => problem.lb().iter().zip(problem.ub()).map(|(l, u)| 0.5 * (l + u)).collect(),
        };
        Design::new(values, problem)
    }
}

/// Sensitivities around a nominal design, plus the screening outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub variables: Vec<String>,
    pub specs: Vec<String>,
    /// Raw nominal design.
    pub nominal: Vec<f64>,
    /// Canonical spec vector at the nominal design.
    pub nominal_specs: Vec<f64>,
    /// Raw distance between the two probes of each variable.
    pub steps: Vec<f64>,
    /// `(m+1) x d`, canonical spec units per raw variable unit.
    pub s: Vec<Vec<f64>>,
    /// Columns whose probes failed; such variables are always retained.
    pub unknown: Vec<bool>,
    /// Evaluator calls spent.
    pub evaluations: usize,
    pub screened_specs: Vec<usize>,
    pub thresh: f64,
    pub active_set: Vec<usize>,
}

/// Probes every variable around `nominal`. The screening fields of the
/// returned report are empty until [`screen`] fills them.
pub fn compute_sensitivity(
    evaluator: &mut dyn Evaluator,
    problem: &ProblemDefinition,
    nominal: &Design,
    rel_step: f64,
) -> Result<SensitivityReport> {
    if !(rel_step > 0.0 && rel_step < 0.5) {
        return Err(contract(format!("rel_step must lie in (0, 0.5), got {rel_step}")));
    }
    let d = problem.d();
    let x = nominal.values();
    if x.len() != d {
        return Err(contract("nominal design has the wrong dimension"));
    }
    // probe list: nominal, then (plus, minus) per variable; None = use nominal
    let mut probes: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut sides: Vec<(usize, usize)> = Vec::with_capacity(d);
    for j in 0..d {
        let h = rel_step * (problem.ub()[j] - problem.lb()[j]);
        let mut side = |v: f64| -> usize {
            if v < problem.lb()[j] || v > problem.ub()[j] {
                return 0;
            }
            let mut p = x.to_vec();
            p[j] = v;
            probes.push(p);
            probes.len() - 1
        };
        let plus = side(x[j] + h);
        let minus = side(x[j] - h);
        sides.push((plus, minus));
    }
    let units: Vec<Vec<f64>> = probes
        .iter()
        .map(|p| Design::new(p.clone(), problem).map(|dz| problem.normalize(&dz)))
        .collect::<Result<_>>()?;
    let mut harness = Harness::new(evaluator, problem)?;
    let evals = harness.evaluate_units(&units)?;
    let raw: Vec<Vec<f64>> = evals
        .iter()
        .map(|e| problem.denormalize(&e.unit).map(Design::into_inner))
        .collect::<Result<_>>()?;
    let f0 = &evals[0].specs;
    if !f0.is_finite() {
        return Err(Error::Problem("evaluation failed at the nominal design".into()));
    }
    let rows = problem.specs().len();
    let mut s = vec![vec![0.0; d]; rows];
    let mut unknown = vec![false; d];
    let mut steps = vec![0.0; d];
    for (j, &(plus, minus)) in sides.iter().enumerate() {
        let (fp, fm) = (&evals[plus].specs, &evals[minus].specs);
        let step = raw[plus][j] - raw[minus][j];
        steps[j] = step;
        if !fp.is_finite() || !fm.is_finite() || step == 0.0 {
            unknown[j] = true;
            continue;
        }
        for (i, row) in s.iter_mut().enumerate() {
            row[j] = (fp.values()[i] - fm.values()[i]) / step;
        }
    }
    Ok(SensitivityReport {
        variables: problem.names().to_vec(),
        specs: problem.specs().iter().map(|sp| sp.name.clone()).collect(),
        nominal: raw[0].clone(),
        nominal_specs: f0.values().to_vec(),
        steps,
        s,
        unknown,
        evaluations: harness.calls(),
        screened_specs: Vec::new(),
        thresh: 0.0,
        active_set: Vec::new(),
    })
}

/// Objective plus every constraint violated at the nominal design.
pub fn default_screened_specs(report: &SensitivityReport) -> Vec<usize> {
    std::iter::once(0)
        .chain((1..report.nominal_specs.len()).filter(|&i| report.nominal_specs[i] > 0.0))
        .collect()
}

/// Largest normalized sensitivity of each variable over the screened rows.
pub fn normalized_sensitivity(
    report: &SensitivityReport,
    problem: &ProblemDefinition,
    screened: &[usize],
) -> Result<Vec<f64>> {
    if screened.is_empty() {
        return Err(contract("no specs selected for screening"));
    }
    if let Some(i) = screened.iter().find(|&&i| i >= report.s.len()) {
        return Err(contract(format!("screened spec {i} does not exist")));
    }
    if problem.d() != report.unknown.len() {
        return Err(contract("report and problem disagree on dimension"));
    }
    Ok((0..problem.d())
        .map(|j| {
            let range = problem.ub()[j] - problem.lb()[j];
            screened
                .iter()
                .map(|&i| report.s[i][j].abs() * range / report.nominal_specs[i].abs().max(1.0))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Variables that clear `thresh` (ascending). Never empty: if nothing clears
/// it, the single most sensitive variable is kept.
pub fn prune_variables(
    report: &SensitivityReport,
    problem: &ProblemDefinition,
    screened: &[usize],
    thresh: f64,
) -> Result<Vec<usize>> {
    let norm = normalized_sensitivity(report, problem, screened)?;
    let active: Vec<usize> = (0..norm.len())
        .filter(|&j| report.unknown[j] || norm[j] > thresh)
        .collect();
    if !active.is_empty() {
        return Ok(active);
    }
    let top = (0..norm.len())
        .max_by(|&a, &b| norm[a].total_cmp(&norm[b]).then(b.cmp(&a)))
        .expect("d >= 1");
    Ok(vec![top])
}

/// Computes, screens and fills in the report in one go.
pub fn screen(
    evaluator: &mut dyn Evaluator,
    problem: &ProblemDefinition,
    cfg: &SensitivityConfig,
) -> Result<SensitivityReport> {
    cfg.validate()?;
    let nominal = cfg.nominal_design(problem)?;
    let mut report = compute_sensitivity(evaluator, problem, &nominal, cfg.rel_step)?;
    let screened = cfg
        .screened_specs
        .clone()
        .unwrap_or_else(|| default_screened_specs(&report));
    report.active_set = prune_variables(&report, problem, &screened, cfg.thresh)?;
    report.screened_specs = screened;
    report.thresh = cfg.thresh;
    Ok(report)
}

/// Presents the active variables of a problem as a smaller problem; the
/// others stay at their nominal values.
pub struct SubspaceEvaluator<'a> {
    inner: &'a mut dyn Evaluator,
    full: ProblemDefinition,
    sub: ProblemDefinition,
    active: Vec<usize>,
    nominal: Vec<f64>,
}

impl<'a> SubspaceEvaluator<'a> {
    pub fn new(
        inner: &'a mut dyn Evaluator,
        full: &ProblemDefinition,
        active: &[usize],
        nominal: &Design,
    ) -> Result<Self> {
        let sub = full.subspace(active)?;
        if nominal.values().len() != full.d() {
            return Err(contract("nominal design has the wrong dimension"));
        }
        Ok(Self {
            inner,
            full: full.clone(),
            sub,
            active: active.to_vec(),
            nominal: nominal.values().to_vec(),
        })
    }

    /// The reduced problem to optimize.
    pub fn problem(&self) -> &ProblemDefinition {
        &self.sub
    }

    /// Full raw design for a reduced raw design.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut x = self.nominal.clone();
        for (&j, &v) in self.active.iter().zip(reduced) {
            x[j] = v;
        }
        x
    }
}

impl Evaluator for SubspaceEvaluator<'_> {
    fn descriptor(&self) -> EvaluatorDescriptor {
        EvaluatorDescriptor {
            problem: self.sub.clone(),
            ..self.inner.descriptor()
        }
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        let full = Design::new(self.expand(design.values()), &self.full)?;
        self.inner.evaluate(&full)
    }

    fn evaluate_many(&mut self, designs: &[Design]) -> Result<Vec<Outcome>> {
        let full = designs
            .iter()
            .map(|d| Design::new(self.expand(d.values()), &self.full))
            .collect::<Result<Vec<_>>>()?;
        self.inner.evaluate_many(&full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::Separable;
    use crate::problem::SpecDefinition;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Spec values given by a closure of the raw design.
    struct Analytic<F> {
        problem: ProblemDefinition,
        f: F,
    }

    impl<F: FnMut(&[f64]) -> Vec<f64> + Send> Evaluator for Analytic<F> {
        fn descriptor(&self) -> EvaluatorDescriptor {
            EvaluatorDescriptor {
                problem: self.problem.clone(),
                concurrency_safe: true,
                deterministic: true,
            }
        }

        fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
            Ok(Outcome::Metrics((self.f)(design.values())))
        }
    }

    fn objectives(m: usize) -> Vec<SpecDefinition> {
        let mut specs = vec![SpecDefinition::objective("f0")];
        specs.extend((1..=m).map(|i| SpecDefinition::at_most(format!("c{i}"), 0.0)));
        specs
    }

    #[test]
    fn quadratic_central_difference() {
        let problem = ProblemDefinition::new(vec![0.0], vec![2.0], objectives(0)).unwrap();
        let mut ev = Analytic { problem: problem.clone(), f: |x: &[f64]| vec![x[0] * x[0]] };
        let nominal = Design::new(vec![1.0], &problem).unwrap();
        let r = compute_sensitivity(&mut ev, &problem, &nominal, 0.05).unwrap();
        assert!((r.s[0][0] - 2.0).abs() < 1e-12);
        assert_eq!(r.evaluations, 3);
    }

    #[test]
    fn affine_evaluators_give_exact_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = rng.gen_range(1..6);
            let m = rng.gen_range(0..3);
            let lb: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let ub: Vec<f64> = lb.iter().map(|l| l + rng.gen_range(0.5..10.0)).collect();
            let problem = ProblemDefinition::new(lb.clone(), ub.clone(), objectives(m)).unwrap();
            let a: Vec<Vec<f64>> = (0..=m).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let c: Vec<f64> = (0..=m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a2, c2) = (a.clone(), c.clone());
            let mut ev = Analytic {
                problem: problem.clone(),
                f: move |x: &[f64]| {
                    a2.iter().zip(&c2).map(|(row, ci)| ci + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).collect()
                },
            };
            // nominal anywhere, including next to a bound (one-sided probes)
            let nominal: Vec<f64> = (0..d).map(|j| lb[j] + (ub[j] - lb[j]) * rng.gen::<f64>()).collect();
            let nominal = Design::new(nominal, &problem).unwrap();
            let r = compute_sensitivity(&mut ev, &problem, &nominal, 0.05).unwrap();
            for i in 0..=m {
                for j in 0..d {
                    let err = (r.s[i][j] - a[i][j]).abs();
                    assert!(err <= 1e-12 * a[i][j].abs().max(1.0) * 10.0, "S[{i}][{j}] {} vs {}", r.s[i][j], a[i][j]);
                }
            }
        }
    }

    #[test]
    fn zero_column_pruned_and_inert_variable_is_flat() {
        let problem = ProblemDefinition::new(vec![0.0; 2], vec![1.0; 2], objectives(0)).unwrap();
        let mut ev = Analytic { problem: problem.clone(), f: |x: &[f64]| vec![3.0 * x[0] + 0.0 * x[1]] };
        let nominal = Design::new(vec![0.5, 0.5], &problem).unwrap();
        let r = compute_sensitivity(&mut ev, &problem, &nominal, 0.05).unwrap();
        assert!(r.s[0][1].abs() < 1e-9);
        assert_eq!(prune_variables(&r, &problem, &[0], 0.01).unwrap(), vec![0]);
        assert_eq!(prune_variables(&r, &problem, &[0], 0.0).unwrap(), vec![0]);
        assert_eq!(prune_variables(&r, &problem, &[0], 1e9).unwrap(), vec![0]);
        assert!(prune_variables(&r, &problem, &[], 0.0).is_err());
    }

    #[test]
    fn thresh_zero_keeps_every_influential_variable() {
        let problem = ProblemDefinition::new(vec![0.0; 3], vec![1.0; 3], objectives(0)).unwrap();
        let mut ev = Analytic { problem: problem.clone(), f: |x: &[f64]| vec![x[0] + 0.001 * x[1] - x[2]] };
        let r = screen(&mut ev, &problem, &SensitivityConfig { thresh: 0.0, ..Default::default() }).unwrap();
        assert_eq!(r.active_set, vec![0, 1, 2]);
    }

    #[test]
    fn failed_probe_keeps_variable() {
        let problem = ProblemDefinition::new(vec![0.0; 2], vec![1.0; 2], objectives(0)).unwrap();
        let mut ev = Analytic {
            problem: problem.clone(),
            f: |x: &[f64]| if x[1] > 0.52 { vec![f64::NAN] } else { vec![x[0]] },
        };
        let r = screen(&mut ev, &problem, &SensitivityConfig::default()).unwrap();
        assert_eq!(r.unknown, vec![false, true]);
        assert_eq!(r.active_set, vec![0, 1]);
    }

    #[test]
    fn separable_benchmark_prunes_exactly_the_inert_variables() {
        let mut ev = Separable::new();
        let problem = ev.problem().clone();
        let r = screen(&mut ev, &problem, &SensitivityConfig::default()).unwrap();
        assert_eq!(r.active_set, Separable::ACTIVE.to_vec());
        assert_eq!(r.screened_specs, vec![0]);
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut ev = Separable::new();
        let problem = ev.problem().clone();
        let r = screen(&mut ev, &problem, &SensitivityConfig::default()).unwrap();
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: SensitivityReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn subspace_evaluator_freezes_pruned_variables() {
        let mut ev = Separable::new();
        let problem = ev.problem().clone();
        let nominal = Design::new(vec![0.5; 8], &problem).unwrap();
        let mut sub = SubspaceEvaluator::new(&mut ev, &problem, &[0, 2], &nominal).unwrap();
        assert_eq!(sub.problem().d(), 2);
        assert_eq!(sub.expand(&[0.1, 0.9]), vec![0.1, 0.5, 0.9, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let x = Design::new(vec![0.1, 0.9], sub.problem()).unwrap();
        let out = sub.evaluate(&x).unwrap();
        let want = Separable::metrics(&[0.1, 0.5, 0.9, 0.5, 0.5, 0.5, 0.5, 0.5]).to_vec();
        assert_eq!(out, Outcome::Metrics(want));
    }

    proptest! {
        #[test]
        fn pruning_is_monotone_in_thresh(seed in 0u64..500, t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.gen_range(1..7);
            let problem = ProblemDefinition::new(vec![0.0; d], vec![1.0; d], objectives(1)).unwrap();
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * rng.gen::<f64>().powi(3)).collect();
            let mut ev = Analytic {
                problem: problem.clone(),
                f: move |x: &[f64]| vec![w.iter().zip(x).map(|(a, b)| a * b * b).sum(), x[0] - 0.2],
            };
            let nominal = Design::new(vec![0.5; d], &problem).unwrap();
            let r = compute_sensitivity(&mut ev, &problem, &nominal, 0.05).unwrap();
            let a_lo = prune_variables(&r, &problem, &[0, 1], lo).unwrap();
            let a_hi = prune_variables(&r, &problem, &[0, 1], hi).unwrap();
            let norm = normalized_sensitivity(&r, &problem, &[0, 1]).unwrap();
            // the top-1 fallback only applies when nothing clears the threshold
            if norm.iter().any(|&v| v > hi) {
                prop_assert!(a_hi.iter().all(|j| a_lo.contains(j)));
            }
            prop_assert!(!a_hi.is_empty());
        }
    }
}
