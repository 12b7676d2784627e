//! Analytic benchmark problems standing in for a circuit simulator.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Evaluator, EvaluatorDescriptor, Outcome};
use crate::error::{contract, Error, Result};
use crate::problem::{Design, ProblemDefinition, SpecDefinition};

/// Selects and parameterizes a built-in benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinSpec {
    ToyAmp,
    Sphere {
        dimension: usize,
    },
    ConstrainedQuadratic {
        dimension: usize,
        constraints: usize,
        #[serde(default)]
        instance: u64,
    },
    Separable,
}

impl BuiltinSpec {
    pub fn build(&self) -> Result<Box<dyn Evaluator>> {
        Ok(match *self {
            BuiltinSpec::ToyAmp => Box::new(ToyAmp::new()),
            BuiltinSpec::Sphere { dimension } => Box::new(Sphere::new(dimension)?),
            BuiltinSpec::ConstrainedQuadratic {
                dimension,
                constraints,
                instance,
            } => Box::new(ConstrainedQuadratic::new(dimension, constraints, instance)?),
            BuiltinSpec::Separable => Box::new(Separable::new()),
        })
    }
}

fn descriptor(problem: &ProblemDefinition) -> EvaluatorDescriptor {
    EvaluatorDescriptor {
        problem: problem.clone(),
        concurrency_safe: true,
        deterministic: true,
    }
}

/// Two-stage amplifier with closed-form specs.
///
/// Variables: gm1, gm2 in mS; I1, I2 in uA; Cc, CL in pF. Metrics: power (W),
/// DC gain (dB), GBW (Hz), phase margin (deg), slew rate (V/us), and the two
/// gm/I ratios (S/A).
#[derive(Debug, Clone)]
pub struct ToyAmp {
    problem: ProblemDefinition,
}

impl ToyAmp {
    pub const VDD: f64 = 1.8;
    /// Channel-length modulation, 1/V.
    pub const LAMBDA: f64 = 0.1;

    pub fn new() -> Self {
        let problem = ProblemDefinition::with_details(
            ["gm1", "gm2", "i1", "i2", "cc", "cl"].map(String::from).to_vec(),
            vec![0.1, 0.1, 10.0, 10.0, 0.1, 0.5],
            vec![5.0, 5.0, 500.0, 500.0, 5.0, 10.0],
            vec![false; 6],
            vec![
                SpecDefinition::objective("power"),
                SpecDefinition::at_least("gain_db", 60.0),
                SpecDefinition::at_least("gbw_hz", 30e6),
                SpecDefinition::at_least("phase_margin_deg", 60.0),
                SpecDefinition::at_least("slew_v_per_us", 20.0),
                SpecDefinition::at_most("gm1_over_i1", 25.0),
                SpecDefinition::at_most("gm2_over_i2", 25.0),
            ],
        )
        .expect("toy_amp definition is valid");
        Self { problem }
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    /// Raw metrics for a design in the declared units.
    pub fn metrics(x: &[f64]) -> [f64; 7] {
        let gm1 = x[0] * 1e-3;
        let gm2 = x[1] * 1e-3;
        let i1 = x[2] * 1e-6;
        let i2 = x[3] * 1e-6;
        let cc = x[4] * 1e-12;
        let cl = x[5] * 1e-12;
        let power = Self::VDD * (i1 + i2);
        let gain = 20.0 * ((gm1 / (Self::LAMBDA * i1)) * (gm2 / (Self::LAMBDA * i2))).log10();
        let gbw = gm1 / (2.0 * PI * cc);
        let p2 = gm2 / (2.0 * PI * cl);
        let pm = 90.0 - (gbw / p2).atan().to_degrees();
        let slew = i1 / cc * 1e-6;
        [power, gain, gbw, pm, slew, gm1 / i1, gm2 / i2]
    }
}

impl Default for ToyAmp {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator for ToyAmp {
    fn descriptor(&self) -> EvaluatorDescriptor {
        descriptor(&self.problem)
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        Ok(Outcome::Metrics(Self::metrics(design.values()).to_vec()))
    }
}

/// `||x - 0.5||^2` on the unit cube, no constraints.
#[derive(Debug, Clone)]
pub struct Sphere {
    problem: ProblemDefinition,
}

impl Sphere {
    pub fn new(d: usize) -> Result<Self> {
        let problem = ProblemDefinition::new(vec![0.0; d], vec![1.0; d], vec![SpecDefinition::objective("dist2")])?;
        Ok(Self { problem })
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }
}

impl Evaluator for Sphere {
    fn descriptor(&self) -> EvaluatorDescriptor {
        descriptor(&self.problem)
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        let f = design.values().iter().map(|v| (v - 0.5).powi(2)).sum();
        Ok(Outcome::Metrics(vec![f]))
    }
}

/// `||x - c||^2` on the unit cube subject to halfspaces `a_k . x <= b_k`.
///
/// Random instances draw `c` inside the cube and place every halfspace so
/// that `c` is feasible, making `c` the analytic optimum.
#[derive(Debug, Clone)]
pub struct ConstrainedQuadratic {
    problem: ProblemDefinition,
    center: Vec<f64>,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl ConstrainedQuadratic {
    pub fn new(d: usize, m: usize, instance: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Problem("constrained_quadratic needs dimension >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let center: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..0.8)).collect();
        let mut normals = Vec::with_capacity(m);
        let mut offsets = Vec::with_capacity(m);
        for _ in 0..m {
            let mut a: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            a.iter_mut().for_each(|v| *v /= norm);
            let slack: f64 = rng.gen_range(0.02..0.3);
            offsets.push(dot(&a, &center) + slack);
            normals.push(a);
        }
        Self::from_parts(center, normals, offsets)
    }

    pub fn from_parts(center: Vec<f64>, normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        let d = center.len();
        if normals.len() != offsets.len() || normals.iter().any(|a| a.len() != d) {
            return Err(contract("halfspace normals/offsets disagree in shape"));
        }
        let mut specs = vec![SpecDefinition::objective("dist2")];
        specs.extend((0..normals.len()).map(|k| SpecDefinition::at_most(format!("halfspace{k}"), 0.0)));
        let problem = ProblemDefinition::new(vec![0.0; d], vec![1.0; d], specs)?;
        Ok(Self {
            problem,
            center,
            normals,
            offsets,
        })
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn metrics(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum()];
        out.extend(self.normals.iter().zip(&self.offsets).map(|(a, b)| dot(a, x) - b));
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Evaluator for ConstrainedQuadratic {
    fn descriptor(&self) -> EvaluatorDescriptor {
        descriptor(&self.problem)
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        Ok(Outcome::Metrics(self.metrics(design.values())))
    }
}

/// Eight variables on the unit cube, of which the last three influence
/// nothing.
///
/// `f0 = sum_{j<5} max(0, x_j - 0.4)^2` subject to `x0 + 2 x1 >= 0.3` and
/// `x2 + x3 + x4 >= 0.2`. The optimum FoM is exactly 0, attained on a
/// feasible plateau.
#[derive(Debug, Clone)]
pub struct Separable {
    problem: ProblemDefinition,
}

impl Separable {
    pub const ACTIVE: [usize; 5] = [0, 1, 2, 3, 4];
    pub const INERT: [usize; 3] = [5, 6, 7];

    pub fn new() -> Self {
        let problem = ProblemDefinition::new(
            vec![0.0; 8],
            vec![1.0; 8],
            vec![
                SpecDefinition::objective("excess"),
                SpecDefinition::at_least("pair", 0.3),
                SpecDefinition::at_least("triple", 0.2),
            ],
        )
        .expect("separable definition is valid");
        Self { problem }
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    pub fn metrics(x: &[f64]) -> [f64; 3] {
        let f0 = x[..5].iter().map(|v| (v - 0.4).max(0.0).powi(2)).sum();
        [f0, x[0] + 2.0 * x[1], x[2] + x[3] + x[4]]
    }
}

impl Default for Separable {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator for Separable {
    fn descriptor(&self) -> EvaluatorDescriptor {
        descriptor(&self.problem)
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        Ok(Outcome::Metrics(Self::metrics(design.values()).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{canonicalize_spec, is_feasible};

    fn amp_specs(x: &[f64]) -> crate::problem::SpecVector {
        ToyAmp::new().problem.canonicalize(&ToyAmp::metrics(x)).unwrap()
    }

    #[test]
    fn toy_amp_hand_values() {
        let m = ToyAmp::metrics(&[5.0, 1.0, 100.0, 100.0, 1.0, 1.0]);
        assert!((m[2] - 795.77e6).abs() < 0.01e6, "gbw {}", m[2]);
        assert!((m[0] - 360e-6).abs() < 1e-15);
        let m = ToyAmp::metrics(&[1.0, 1.0, 100.0, 100.0, 1.0, 1.0]);
        assert!((m[5] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn toy_amp_reference_point_is_feasible() {
        let x = [2.0, 4.0, 150.0, 300.0, 2.0, 1.0];
        let m = ToyAmp::metrics(&x);
        assert!((m[1] - 20.0 * (133.333_333_333_333_3f64 * 133.333_333_333_333_3).log10()).abs() < 1e-9);
        assert!(m[1] > 60.0 && m[2] > 30e6 && m[3] > 60.0 && m[4] > 20.0);
        assert!(m[5] <= 25.0 && m[6] <= 25.0);
        assert!(is_feasible(&amp_specs(&x)));
    }

    #[test]
    fn toy_amp_canonical_sign_flips_at_bounds() {
        let amp = ToyAmp::new();
        for (k, def) in amp.problem.specs().iter().enumerate().skip(1) {
            let b = def.bound;
            let eps = 1e-9 * b.abs().max(1.0);
            let lo = canonicalize_spec(b - eps, def).unwrap();
            let hi = canonicalize_spec(b + eps, def).unwrap();
            assert_eq!(canonicalize_spec(b, def).unwrap(), 0.0, "spec {k}");
            assert!(lo * hi < 0.0, "spec {k}");
        }
    }

    #[test]
    fn toy_amp_is_pure() {
        let mut amp = ToyAmp::new();
        let prob = amp.problem.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
            let x = prob.denormalize(&u).unwrap();
            let a = amp.evaluate(&x).unwrap();
            let b = amp.evaluate(&x).unwrap();
            assert_eq!(a, b);
            if let Outcome::Metrics(v) = a {
                assert!(v.iter().all(|v| v.is_finite()));
            }
        }
    }

    /// Minimum feasible power on an 11-point-per-axis grid over the box.
    fn grid_optimum() -> (f64, [usize; 6]) {
        let prob = ToyAmp::new().problem;
        let axis = |j: usize| -> Vec<f64> {
            (0..11).map(|k| prob.lb()[j] + (prob.ub()[j] - prob.lb()[j]) * k as f64 / 10.0).collect()
        };
        let axes: Vec<Vec<f64>> = (0..6).map(axis).collect();
        let mut best = (f64::INFINITY, [0; 6]);
        let mut idx = [0usize; 6];
        loop {
            let x: Vec<f64> = (0..6).map(|j| axes[j][idx[j]]).collect();
            let s = prob.canonicalize(&ToyAmp::metrics(&x)).unwrap();
            if is_feasible(&s) && s.objective() < best.0 {
                best = (s.objective(), idx);
            }
            let mut j = 0;
            while j < 6 {
                idx[j] += 1;
                if idx[j] < 11 {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == 6 {
                return best;
            }
        }
    }

    #[test]
    fn toy_amp_grid_optimum_fixture() {
        let (power, idx) = grid_optimum();
        assert_eq!(idx, GRID_OPTIMUM_INDEX, "power {power:e}");
        assert!((power - GRID_OPTIMUM_POWER).abs() < 1e-15, "power {power:e}");
    }

    // gm1 = 0.1 mS, gm2 = 1.08 mS, I1 = 10 uA, I2 = 59 uA, Cc = 0.1 pF, CL = 0.5 pF
    const GRID_OPTIMUM_INDEX: [usize; 6] = [0, 2, 0, 1, 0, 0];
    const GRID_OPTIMUM_POWER: f64 = 1.8 * 69e-6;

    #[test]
    fn quadratic_instance_is_reproducible_and_optimum_feasible() {
        let a = ConstrainedQuadratic::new(4, 3, 7).unwrap();
        let b = ConstrainedQuadratic::new(4, 3, 7).unwrap();
        assert_eq!(a.center, b.center);
        assert_eq!(a.normals, b.normals);
        let c = ConstrainedQuadratic::new(4, 3, 8).unwrap();
        assert_ne!(a.center, c.center);
        let s = a.problem.canonicalize(&a.metrics(&a.center)).unwrap();
        assert_eq!(s.objective(), 0.0);
        assert!(is_feasible(&s));
        let free = ConstrainedQuadratic::new(3, 0, 1).unwrap();
        assert_eq!(free.problem.m(), 0);
        assert_eq!(free.metrics(free.center()), vec![0.0]);
    }

    #[test]
    fn single_halfspace_optimum_is_projection() {
        // c = (0.7, 0.7), constraint x0 + x1 <= 1 (normalized)
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = ConstrainedQuadratic::from_parts(vec![0.7, 0.7], vec![vec![s, s]], vec![s]).unwrap();
        let proj = [0.5, 0.5];
        let at_proj = q.metrics(&proj);
        assert!(at_proj[1].abs() < 1e-15);
        assert!((at_proj[0] - 0.08).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let m = q.metrics(&x);
            if m[1] <= 0.0 {
                assert!(m[0] >= at_proj[0] - 1e-12);
            }
        }
    }

    #[test]
    fn separable_inert_variables_do_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
            let before = Separable::metrics(&x);
            for j in Separable::INERT {
                x[j] = rng.gen();
            }
            assert_eq!(before, Separable::metrics(&x));
        }
        let opt = [0.3, 0.3, 0.1, 0.1, 0.1, 0.9, 0.2, 0.5];
        let s = Separable::new().problem.canonicalize(&Separable::metrics(&opt)).unwrap();
        assert_eq!(s.objective(), 0.0);
        assert!(is_feasible(&s));
    }

    #[test]
    fn builtin_specs_parse() {
        let s: BuiltinSpec = toml::from_str("name = \"toy_amp\"").unwrap();
        assert_eq!(s, BuiltinSpec::ToyAmp);
        let s: BuiltinSpec =
            toml::from_str("name = \"constrained_quadratic\"\ndimension = 3\nconstraints = 2").unwrap();
        let ev = s.build().unwrap();
        assert_eq!(ev.descriptor().m(), 2);
        assert!(toml::from_str::<BuiltinSpec>("name = \"sphere\"\ndimension = 2\nextra = 1").is_err());
        assert!(toml::from_str::<BuiltinSpec>("name = \"nope\"").is_err());
    }
}
