//! Run artifacts: per-run history CSVs, seed summaries, comparison curves,
//! and loaders for each of them. Every file is written atomically.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::optimizer::RunResult;
use crate::sensitivity::SensitivityReport;

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn history_path(dir: &Path, algorithm: &str, seed: u64) -> PathBuf {
    dir.join(format!("{algorithm}_seed{seed}.csv"))
}

pub fn records_path(dir: &Path, algorithm: &str, seed: u64) -> PathBuf {
    dir.join(format!("{algorithm}_seed{seed}_evaluations.jsonl"))
}

pub fn summary_path(dir: &Path, algorithm: &str) -> PathBuf {
    dir.join(format!("{algorithm}_summary.json"))
}

/// One row of a run's FoM history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub eval_index: usize,
    pub fom_best: f64,
    pub objective_best: f64,
    pub feasible: bool,
}

pub fn history_rows(result: &RunResult) -> Vec<HistoryRow> {
    result
        .history
        .iter()
        .map(|h| HistoryRow {
            eval_index: h.eval_index,
            fom_best: h.fom_best,
            objective_best: h.objective_best,
            feasible: h.feasible,
        })
        .collect()
}

pub fn history_csv(rows: &[HistoryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["eval_index", "fom_best", "objective_best", "feasible"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn load_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Full per-evaluation log, one JSON object per line.
pub fn records_jsonl(result: &RunResult) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (rec, h) in result.records.iter().zip(&result.history) {
        let line = serde_json::json!({
            "index": rec.index,
            "design": rec.design,
            "specs": rec.specs,
            "failure": rec.failure,
            "fom": h.fom,
            "fom_best": h.fom_best,
            "feasible": h.feasible,
            "wall_time": rec.wall_time,
        });
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Min / max / mean over the runs that produced a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { min: None, max: None, mean: None };
        }
        Self {
            min: Some(v.iter().copied().fold(f64::INFINITY, f64::min)),
            max: Some(v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            mean: Some(v.iter().sum::<f64>() / v.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub evaluations: usize,
    pub feasible: bool,
    pub first_feasible: Option<usize>,
    pub best_objective: Option<f64>,
    pub best_fom: f64,
    pub objective_weight: f64,
    /// Raw incumbent design over the full variable set.
    pub best_design: Vec<f64>,
}

impl SeedSummary {
    pub fn of(result: &RunResult, best_design: Vec<f64>) -> Self {
        Self {
            seed: result.seed,
            evaluations: result.evaluations,
            feasible: result.feasible,
            first_feasible: result.first_feasible,
            best_objective: result.best_feasible_objective(),
            best_fom: result.best_fom,
            objective_weight: result.objective_weight,
            best_design,
        }
    }
}

/// Statistics over repeated seeded runs of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub budget: usize,
    /// Feasible runs over all runs, as "k/N".
    pub success_rate: String,
    /// Evaluation index of the first feasible design, over feasible runs.
    pub first_feasible: Stats,
    /// Best feasible objective, over feasible runs.
    pub best_objective: Stats,
    pub per_seed: Vec<SeedSummary>,
}

impl Summary {
    pub fn new(algorithm: &str, budget: usize, per_seed: Vec<SeedSummary>) -> Self {
        let k = per_seed.iter().filter(|s| s.feasible).count();
        Self {
            algorithm: algorithm.to_string(),
            budget,
            success_rate: format!("{k}/{}", per_seed.len()),
            first_feasible: Stats::of(per_seed.iter().filter_map(|s| s.first_feasible.map(|i| i as f64))),
            best_objective: Stats::of(per_seed.iter().filter_map(|s| s.best_objective)),
            per_seed,
        }
    }
}

pub fn summary_json(summary: &Summary) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(summary)?;
    out.push(b'\n');
    Ok(out)
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn sensitivity_json(report: &SensitivityReport) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(report)?;
    out.push(b'\n');
    Ok(out)
}

pub fn load_sensitivity(path: &Path) -> Result<SensitivityReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Mean running-best FoM per evaluation index, one column per algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub algorithms: Vec<String>,
    /// `rows[k][a]`: mean over seeds at evaluation `k + 1` for algorithm `a`.
    pub rows: Vec<Vec<f64>>,
}

impl CompareTable {
    pub fn column(&self, algorithm: &str) -> Option<Vec<f64>> {
        let a = self.algorithms.iter().position(|x| x == algorithm)?;
        Some(self.rows.iter().map(|r| r[a]).collect())
    }
}

/// Extends a running-best curve to `len` entries by repeating its last value.
pub fn pad_curve(curve: &[f64], len: usize) -> Result<Vec<f64>> {
    let last = *curve.last().ok_or_else(|| contract("cannot pad an empty curve"))?;
    if curve.len() > len {
        return Err(contract("curve is longer than the budget"));
    }
    let mut out = curve.to_vec();
    out.resize(len, last);
    Ok(out)
}

/// Element-wise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = curves.first().ok_or_else(|| contract("no curves to average"))?.len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(contract("curves differ in length"));
    }
    let n = curves.len() as f64;
    Ok((0..len).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n).collect())
}

pub fn compare_csv(table: &CompareTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("eval_index").chain(table.algorithms.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    for (k, row) in table.rows.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn load_compare(path: &Path) -> Result<CompareTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("eval_index") {
        return Err(contract("comparison CSV must start with eval_index"));
    }
    let algorithms: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| contract(format!("bad value `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(CompareTable { algorithms, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_over_values() {
        let s = Stats::of([3.0, 1.0, 2.0]);
        assert_eq!((s.min, s.max, s.mean), (Some(1.0), Some(3.0), Some(2.0)));
        assert_eq!(Stats::of([]).mean, None);
    }

    #[test]
    fn curves_pad_and_average() {
        assert_eq!(pad_curve(&[3.0, 2.0], 4).unwrap(), vec![3.0, 2.0, 2.0, 2.0]);
        assert!(pad_curve(&[], 3).is_err());
        assert!(pad_curve(&[1.0; 5], 3).is_err());
        let m = mean_curve(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(m, vec![2.0, 4.0]);
        assert!(mean_curve(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            HistoryRow { eval_index: 1, fom_best: 0.1 + 0.2, objective_best: 1.242e-4, feasible: false },
            HistoryRow { eval_index: 2, fom_best: 1e-300, objective_best: -3.5, feasible: true },
        ];
        let p = dir.path().join("h.csv");
        write_atomic(&p, &history_csv(&rows).unwrap()).unwrap();
        assert_eq!(load_history(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("eval_index,fom_best,objective_best,feasible\n"));
        assert!(!dir.path().join("h.csv.tmp").exists());
    }

    #[test]
    fn summary_and_compare_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seed = |s, f: Option<usize>| SeedSummary {
            seed: s,
            evaluations: 10,
            feasible: f.is_some(),
            first_feasible: f,
            best_objective: f.map(|i| i as f64 * 1e-4),
            best_fom: 0.25,
            objective_weight: 12.5,
            best_design: vec![1.0, 2.5],
        };
        let sum = Summary::new("de", 10, vec![seed(0, Some(3)), seed(1, None), seed(2, Some(5))]);
        assert_eq!(sum.success_rate, "2/3");
        assert_eq!(sum.first_feasible.mean, Some(4.0));
        let p = dir.path().join("s.json");
        write_atomic(&p, &summary_json(&sum).unwrap()).unwrap();
        assert_eq!(load_summary(&p).unwrap(), sum);

        let table = CompareTable {
            algorithms: vec!["dnnopt".into(), "random".into()],
            rows: vec![vec![1.5, 2.0], vec![0.1 + 0.2, 1.0 / 3.0]],
        };
        let p = dir.path().join("c.csv");
        write_atomic(&p, &compare_csv(&table).unwrap()).unwrap();
        assert_eq!(load_compare(&p).unwrap(), table);
        assert_eq!(table.column("random").unwrap(), vec![2.0, 1.0 / 3.0]);
    }
}
