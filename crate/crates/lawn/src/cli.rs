//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Convention, ScenarioFile};
use crate::error::AppError;
use crate::experiment::{linspace, run_benchmark, run_rmse, run_solve, run_sweep, timed, Scheme, SweepAxis, SweepParam};
use crate::output::{
    benchmark_csv, rmse_csv, scenario_hash, sweep_csv, trace_csv, DecisionFile, OutputDir, RunManifest, SCHEMA_VERSION,
};

#[derive(Debug, Parser)]
#[command(name = "lawn", version, about = "Sensing, communication and control co-design for UAV networks")]
pub struct Cli {
    /// Channel uses per control step equal to the bandwidth in Hz.
    #[arg(long, global = true)]
    pub literal_bandwidth: bool,
    /// Override the rate units of the scenario.
    #[arg(long, global = true, value_enum)]
    pub rate_convention: Option<Convention>,
    /// Record wall-clock times; outputs then differ between runs.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One alternating-optimization run: trace.csv, decision.json.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parameter sweep over seeds 0..S: sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Second swept parameter, for grids such as power against noise.
        #[arg(long, value_enum, requires_all = ["from2", "to2", "steps2"])]
        param2: Option<SweepParam>,
        #[arg(long, allow_negative_numbers = true)]
        from2: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        to2: Option<f64>,
        #[arg(long)]
        steps2: Option<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Scheme comparison over budgets and seeds 0..S: benchmark.csv.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = Scheme::ALL)]
        schemes: Vec<Scheme>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-3.0, -2.0, -1.0, 0.0])]
        pmax: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Monte Carlo localization error against the bound: rmse.csv.
    Rmse {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Base seed of the range noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-3.0, -2.0, -1.0, 0.0])]
        pmax: Vec<f64>,
    },
    /// Print the default scenario as TOML, or write it to a file.
    Scenario {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>, cli: &Cli) -> Result<ScenarioFile, AppError> {
    let mut file = match path {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    if cli.literal_bandwidth {
        file.rf.uses_per_step = file.rf.bandwidth;
    }
    if let Some(c) = cli.rate_convention {
        file.rf.rate_convention = c;
    }
    Ok(file)
}

fn axis(param: SweepParam, from: f64, to: f64, steps: usize) -> Result<SweepAxis, AppError> {
    if steps == 0 || !from.is_finite() || !to.is_finite() {
        return Err(AppError::Input(format!("{}: need finite bounds and at least one step", param.name())));
    }
    Ok(SweepAxis { param, values: linspace(from, to, steps) })
}

fn manifest(args: &[String], file: &ScenarioFile, seed: u64, wall_time: f64) -> RunManifest {
    RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command_line: args.to_vec(),
        scenario_sha256: scenario_hash(&file.to_toml()),
        seed,
        wall_time,
        outputs: Vec::new(),
    }
}

/// Runs a parsed command. `args` is recorded in the manifest.
pub fn execute(cli: &Cli, args: &[String]) -> Result<(), AppError> {
    match &cli.command {
        Command::Scenario { out } => {
            let text = ScenarioFile::default().to_toml();
            match out {
                Some(p) => std::fs::write(p, text).map_err(|e| AppError::io(p, e))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Solve { common, eta, seed } => {
            let mut file = load(common.scenario.as_deref(), cli)?;
            if let Some(e) = eta {
                file.objective.eta = *e;
            }
            if let Some(s) = seed {
                file.seed = *s;
            }
            let report = run_solve(&file, cli.timing)?;
            let mut out = OutputDir::create(&common.out)?;
            out.write("trace.csv", &trace_csv(&report))?;
            let json = serde_json::to_string_pretty(&DecisionFile::new(&report)).expect("decision serializes") + "\n";
            out.write("decision.json", &json)?;
            out.finish(manifest(args, &file, file.seed, report.wall_time))?;
            Ok(())
        }
        Command::Sweep { common, param, from, to, steps, param2, from2, to2, steps2, seeds } => {
            let file = load(common.scenario.as_deref(), cli)?;
            let first = axis(*param, *from, *to, *steps)?;
            let second = match param2 {
                Some(p2) => Some(axis(
                    *p2,
                    from2.unwrap_or(f64::NAN),
                    to2.unwrap_or(f64::NAN),
                    steps2.unwrap_or(0),
                )?),
                None => None,
            };
            let (rows, wall) = timed(cli.timing, || run_sweep(&file, &first, second.as_ref(), *seeds, cli.timing));
            let mut out = OutputDir::create(&common.out)?;
            out.write("sweep.csv", &sweep_csv(&rows))?;
            out.finish(manifest(args, &file, file.seed, wall))?;
            Ok(())
        }
        Command::Benchmark { common, schemes, pmax, seeds } => {
            let file = load(common.scenario.as_deref(), cli)?;
            let (rows, wall) = timed(cli.timing, || run_benchmark(&file, schemes, pmax, *seeds, cli.timing));
            let mut out = OutputDir::create(&common.out)?;
            out.write("benchmark.csv", &benchmark_csv(&rows))?;
            out.finish(manifest(args, &file, file.seed, wall))?;
            Ok(())
        }
        Command::Rmse { common, trials, seed, seeds, pmax } => {
            let file = load(common.scenario.as_deref(), cli)?;
            let (rows, wall) = timed(cli.timing, || run_rmse(&file, pmax, *seeds, *trials, *seed));
            let mut out = OutputDir::create(&common.out)?;
            out.write("rmse.csv", &rmse_csv(&rows))?;
            out.finish(manifest(args, &file, *seed, wall))?;
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs, mapping failures to the
/// documented exit codes: 0 ok, 1 solver abort, 2 input error.
pub fn main_with(args: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lawn: {e}");
            e.exit_code()
        }
    }
}
