//! CSV, JSON and manifest writers. Numbers use the shortest decimal that
//! round-trips, files are UTF-8 with LF line endings.

use std::fs;
use std::path::{Path, PathBuf};

use lawn_core::ao::SolveReport;
use lawn_core::objective::Decision;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AppError;
use crate::experiment::{BenchmarkRow, RmseRow, RunSummary, SweepRow};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRACE_HEADER: [&str; 5] = ["iter", "objective", "lqr_sum", "det_fim", "crb_sum"];
pub const SWEEP_HEADER: [&str; 12] = [
    "param", "value", "param2", "value2", "seed", "lqr_sum", "det_fim", "crb_sum", "objective", "iters", "wall_time",
    "status",
];
pub const BENCHMARK_HEADER: [&str; 10] = [
    "scheme", "pmax_dbw", "seed", "lqr_sum", "det_fim", "crb_sum", "objective", "iters", "wall_time", "status",
];
pub const RMSE_HEADER: [&str; 9] = [
    "pmax_dbw",
    "seed",
    "crb_sum",
    "rmse",
    "failures",
    "sensing_crb_sum",
    "sensing_rmse",
    "sensing_failures",
    "status",
];

/// Shortest round-trip decimal. Plain notation in the usual range,
/// exponent notation for very large or small magnitudes.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x != 0.0 && !(1e-5..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn run_fields(r: &RunSummary) -> Vec<String> {
    vec![
        num(r.lqr_sum),
        num(r.det_fim),
        num(r.crb_sum),
        num(r.objective),
        r.iters.to_string(),
        num(r.wall_time),
        r.status.clone(),
    ]
}

/// Renders a header and rows as CSV text.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("CSV fields are UTF-8")
}

pub fn trace_csv(report: &SolveReport) -> String {
    let rows: Vec<Vec<String>> = report
        .iterations
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), num(r.objective), num(r.lqr_sum), num(r.det_fim), num(r.crb_sum)])
        .collect();
    csv_string(&TRACE_HEADER, &rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (p2, v2) = match r.second {
                Some((p, v)) => (p.name().to_string(), num(v)),
                None => (String::new(), String::new()),
            };
            let mut f = vec![r.param.name().to_string(), num(r.value), p2, v2, r.seed.to_string()];
            f.extend(run_fields(&r.run));
            f
        })
        .collect();
    csv_string(&SWEEP_HEADER, &rows)
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut f = vec![r.scheme.name().to_string(), num(r.pmax_dbw), r.seed.to_string()];
            f.extend(run_fields(&r.run));
            f
        })
        .collect();
    csv_string(&BENCHMARK_HEADER, &rows)
}

pub fn rmse_csv(rows: &[RmseRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.pmax_dbw),
                r.seed.to_string(),
                num(r.crb_sum),
                num(r.rmse),
                r.failures.to_string(),
                num(r.sensing_crb_sum),
                num(r.sensing_rmse),
                r.sensing_failures.to_string(),
                r.status.clone(),
            ]
        })
        .collect();
    csv_string(&RMSE_HEADER, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionFile {
    /// Row m lists UAV m's association weight for each robot.
    pub theta: Vec<Vec<f64>>,
    /// Watts.
    pub power: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub per_robot_cost: Vec<f64>,
    pub converged: bool,
    pub restored: bool,
}

impl DecisionFile {
    pub fn new(report: &SolveReport) -> Self {
        let d: &Decision = &report.final_decision;
        Self {
            theta: (0..d.theta.nrows()).map(|m| d.theta.row(m).iter().copied().collect()).collect(),
            power: d.power.clone(),
            positions: d.positions.iter().map(|q| [q.x, q.y, q.z]).collect(),
            per_robot_cost: report.per_robot_cost.iter().copied().collect(),
            converged: report.converged,
            restored: report.restored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command_line: Vec<String>,
    /// SHA-256 of the scenario in canonical TOML form, after overrides.
    pub scenario_sha256: String,
    pub seed: u64,
    pub wall_time: f64,
    pub outputs: Vec<String>,
}

pub fn scenario_hash(canonical_toml: &str) -> String {
    format!("{:x}", Sha256::digest(canonical_toml.as_bytes()))
}

/// Collects output files in a directory, then seals them with a manifest.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, AppError> {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), AppError> {
        write_atomic(&self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf, AppError> {
        manifest.outputs = self.written;
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_atomic(&path, &text)?;
        Ok(path)
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), AppError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 2.9e8, 1.5e-7, 6.02e23, f64::MIN_POSITIVE, f64::MAX, -1e-300] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(-3.0), "-3");
        assert_eq!(num(1.5e-7), "1.5e-7");
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_uses_lf_and_quotes_when_needed() {
        let s = csv_string(&["a", "b"], &[vec!["1".into(), "x,y".into()]]);
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }
}
