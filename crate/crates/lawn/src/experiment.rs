//! Batch runs over seeds, parameter grids and schemes. Runs are independent
//! and executed in parallel; results always come back in input order.

use std::time::Instant;

use lawn_core::ao::{solve, SolveReport};
use lawn_core::baselines::{equal_power, random_positioning, sensing_only, water_filling};
use lawn_core::montecarlo::rmse_experiment;
use lawn_core::objective::Problem;
use rayon::prelude::*;

use crate::config::ScenarioFile;
use crate::error::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    #[value(name = "pmax_dbw")]
    PmaxDbw,
    #[value(name = "sigma_w")]
    SigmaW,
    Blocklength,
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PmaxDbw => "pmax_dbw",
            SweepParam::SigmaW => "sigma_w",
            SweepParam::Blocklength => "blocklength",
            SweepParam::Eta => "eta",
        }
    }

    pub fn apply(self, file: &mut ScenarioFile, value: f64) {
        match self {
            SweepParam::PmaxDbw => file.rf.p_max_dbw = value,
            SweepParam::SigmaW => file.control.sigma_w = value,
            SweepParam::Blocklength => file.rf.blocklength = value,
            SweepParam::Eta => file.objective.eta = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scheme {
    Proposed,
    #[value(name = "equal_power")]
    EqualPower,
    #[value(name = "random_positioning")]
    RandomPositioning,
    #[value(name = "water_filling")]
    WaterFilling,
    #[value(name = "sensing_only")]
    SensingOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed,
        Scheme::EqualPower,
        Scheme::RandomPositioning,
        Scheme::WaterFilling,
        Scheme::SensingOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::EqualPower => "equal_power",
            Scheme::RandomPositioning => "random_positioning",
            Scheme::WaterFilling => "water_filling",
            Scheme::SensingOnly => "sensing_only",
        }
    }

    pub fn run(self, problem: &Problem) -> lawn_core::Result<SolveReport> {
        match self {
            Scheme::Proposed => solve(problem),
            Scheme::EqualPower => equal_power(problem),
            Scheme::RandomPositioning => random_positioning(problem),
            Scheme::WaterFilling => water_filling(problem),
            Scheme::SensingOnly => sensing_only(problem),
        }
    }
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n)
            .map(|i| if i == n - 1 { to } else { from + (to - from) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Final metrics of one solve. Failed runs carry NaNs and the error text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub lqr_sum: f64,
    pub det_fim: f64,
    pub crb_sum: f64,
    pub objective: f64,
    pub iters: usize,
    pub wall_time: f64,
    pub status: String,
}

impl RunSummary {
    pub fn from_result(result: &lawn_core::Result<SolveReport>, wall_time: f64) -> Self {
        match result {
            Ok(r) => {
                let last = r.last();
                Self {
                    lqr_sum: last.lqr_sum,
                    det_fim: last.det_fim,
                    crb_sum: last.crb_sum,
                    objective: last.objective,
                    iters: r.iterations.len() - 1,
                    wall_time,
                    status: "ok".into(),
                }
            }
            Err(e) => Self::failed(e.to_string(), wall_time),
        }
    }

    fn failed(status: String, wall_time: f64) -> Self {
        Self {
            lqr_sum: f64::NAN,
            det_fim: f64::NAN,
            crb_sum: f64::NAN,
            objective: f64::NAN,
            iters: 0,
            wall_time,
            status,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Runs `f` and returns its result with the elapsed seconds, or zero
/// seconds when timing is off so that outputs stay reproducible.
pub fn timed<T>(timing: bool, f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, if timing { start.elapsed().as_secs_f64() } else { 0.0 })
}

fn with_seed(base: &Problem, seed: u64) -> lawn_core::Result<Problem> {
    let mut s = base.scenario.clone();
    s.seed = seed;
    Problem::with_plants(s, base.plants.clone())
}

/// A problem per scenario variant, deriving the plants once per variant.
fn build_problems(files: &[ScenarioFile]) -> Vec<Result<Problem, String>> {
    files
        .par_iter()
        .map(|f| {
            let s = f.to_scenario().map_err(|e| e.to_string())?;
            Problem::new(s).map_err(|e| e.to_string())
        })
        .collect()
}

fn run_on(base: &Result<Problem, String>, scheme: Scheme, seed: u64, timing: bool) -> RunSummary {
    match base {
        Ok(pr) => {
            let (res, wall) = timed(timing, || with_seed(pr, seed).and_then(|p| scheme.run(&p)));
            RunSummary::from_result(&res, wall)
        }
        Err(e) => RunSummary::failed(e.clone(), 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub second: Option<(SweepParam, f64)>,
    pub seed: u64,
    pub run: RunSummary,
}

/// The proposed solver over a one- or two-parameter grid and seeds
/// `0..seeds`, rows ordered by value, then second value, then seed.
pub fn run_sweep(file: &ScenarioFile, axis: &SweepAxis, second: Option<&SweepAxis>, seeds: u64, timing: bool) -> Vec<SweepRow> {
    let mut points = Vec::new();
    for &v in &axis.values {
        match second {
            Some(ax2) => points.extend(ax2.values.iter().map(|&w| (v, Some((ax2.param, w))))),
            None => points.push((v, None)),
        }
    }
    let files: Vec<ScenarioFile> = points
        .iter()
        .map(|&(v, sec)| {
            let mut f = file.clone();
            axis.param.apply(&mut f, v);
            if let Some((p, w)) = sec {
                p.apply(&mut f, w);
            }
            f
        })
        .collect();
    let problems = build_problems(&files);
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|i| (0..seeds).map(move |s| (i, s))).collect();
    jobs.par_iter()
        .map(|&(i, seed)| SweepRow {
            param: axis.param,
            value: points[i].0,
            second: points[i].1,
            seed,
            run: run_on(&problems[i], Scheme::Proposed, seed, timing),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub scheme: Scheme,
    pub pmax_dbw: f64,
    pub seed: u64,
    pub run: RunSummary,
}

/// Every scheme at every budget and seed, ordered by scheme, budget, seed.
pub fn run_benchmark(file: &ScenarioFile, schemes: &[Scheme], pmax_dbw: &[f64], seeds: u64, timing: bool) -> Vec<BenchmarkRow> {
    let files: Vec<ScenarioFile> = pmax_dbw
        .iter()
        .map(|&v| {
            let mut f = file.clone();
            f.rf.p_max_dbw = v;
            f
        })
        .collect();
    let problems = build_problems(&files);
    let mut jobs = Vec::new();
    for &scheme in schemes {
        for i in 0..pmax_dbw.len() {
            for seed in 0..seeds {
                jobs.push((scheme, i, seed));
            }
        }
    }
    jobs.par_iter()
        .map(|&(scheme, i, seed)| BenchmarkRow {
            scheme,
            pmax_dbw: pmax_dbw[i],
            seed,
            run: run_on(&problems[i], scheme, seed, timing),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub pmax_dbw: f64,
    pub seed: u64,
    pub crb_sum: f64,
    pub rmse: f64,
    pub failures: usize,
    /// Sensing-only scheme at half the budget.
    pub sensing_crb_sum: f64,
    pub sensing_rmse: f64,
    pub sensing_failures: usize,
    pub status: String,
}

/// Localization error of the co-design and of sensing-only at half budget.
/// The noise of seed `s` is drawn from `noise_seed + s`.
pub fn run_rmse(file: &ScenarioFile, pmax_dbw: &[f64], seeds: u64, trials: usize, noise_seed: u64) -> Vec<RmseRow> {
    let files: Vec<ScenarioFile> = pmax_dbw
        .iter()
        .map(|&v| {
            let mut f = file.clone();
            f.rf.p_max_dbw = v;
            f
        })
        .collect();
    let problems = build_problems(&files);
    let jobs: Vec<(usize, u64)> = (0..pmax_dbw.len()).flat_map(|i| (0..seeds).map(move |s| (i, s))).collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let one = || -> Result<RmseRow, String> {
                let base = problems[i].as_ref().map_err(|e| e.clone())?;
                let pr = with_seed(base, seed).map_err(|e| e.to_string())?;
                let target = pr.scenario.geometry.target;
                let rf = &pr.scenario.rf;
                let noise = noise_seed.wrapping_add(seed);
                let co = solve(&pr).map_err(|e| e.to_string())?;
                let co_rmse = rmse_experiment(&co.final_decision, &target, rf, trials, noise).map_err(|e| e.to_string())?;
                let so = sensing_only(&pr).map_err(|e| e.to_string())?;
                let so_rmse = rmse_experiment(&so.final_decision, &target, rf, trials, noise).map_err(|e| e.to_string())?;
                Ok(RmseRow {
                    pmax_dbw: pmax_dbw[i],
                    seed,
                    crb_sum: co.last().crb_sum,
                    rmse: co_rmse.rmse,
                    failures: co_rmse.failures,
                    sensing_crb_sum: so.last().crb_sum,
                    sensing_rmse: so_rmse.rmse,
                    sensing_failures: so_rmse.failures,
                    status: "ok".into(),
                })
            };
            one().unwrap_or_else(|status| RmseRow {
                pmax_dbw: pmax_dbw[i],
                seed,
                crb_sum: f64::NAN,
                rmse: f64::NAN,
                failures: 0,
                sensing_crb_sum: f64::NAN,
                sensing_rmse: f64::NAN,
                sensing_failures: 0,
                status,
            })
        })
        .collect()
}

/// One solve of the scenario as given.
pub fn run_solve(file: &ScenarioFile, timing: bool) -> Result<SolveReport, AppError> {
    let problem = Problem::new(file.to_scenario()?)?;
    let (res, wall) = timed(timing, || solve(&problem));
    let mut report = res?;
    report.wall_time = wall;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(-3.0, 0.0, 4), vec![-3.0, -2.0, -1.0, 0.0]);
        assert_eq!(linspace(0.1, 0.9, 1), vec![0.1]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
        let v = linspace(0.1, 0.9, 9);
        assert_eq!(v[8], 0.9);
    }
}
