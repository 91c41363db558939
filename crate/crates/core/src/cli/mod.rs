//! Command-line front end and its file formats.
//!
//! - `simulate` writes a measurement log (`log.jsonl`), the ground truth
//!   (`truth.csv`) and the run configuration (`config.json`).
//! - `run` filters a log into `states.csv`, `tags.csv`, `summary.json` and
//!   `timing.json`.
//! - `eval` compares a run with the truth: `metrics.csv`, `metrics.json`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 threshold failure.

mod commands;
pub mod config;
pub mod log;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{
    cmd_eval, cmd_run, cmd_simulate, EvalSummary, Metric, SimulateSource, CONFIG_FILE, LOG_FILE, METRICS_CSV,
    METRICS_JSON, STATES_FILE, SUMMARY_FILE, TAGS_FILE, TIMING_FILE, TRUTH_FILE,
};
pub use config::{MocapNoise, RunConfig, ScenarioTruth, Thresholds};

/// Environment variable holding the log filter, e.g. `info` or `debug`.
pub const VERBOSITY_ENV: &str = "FIDUCIAL_EKF_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fiducial-ekf",
    version,
    about = "Visual-inertial EKF-SLAM on square fiducial tags",
    after_help = "Quaternions are [w, x, y, z] in JSON files and w,x,y,z columns in CSV files.\n\
                  Set FIDUCIAL_EKF_LOG=info (or debug) for progress messages.\n\
                  Exit codes: 0 success, 1 usage error, 2 data error, 3 threshold failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a measurement log, truth and run configuration.
    Simulate {
        /// Built-in scenario: table, dataset_1, loop or calibration.
        #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
        preset: Option<String>,
        /// Scenario definition as JSON.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter a measurement log.
    Run {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against simulation truth.
    Eval {
        /// Output directory of `run`.
        #[arg(long)]
        run: PathBuf,
        /// Output directory of `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate { preset, scenario, seed, out } => {
            let source = match (preset, scenario) {
                (Some(p), None) => SimulateSource::Preset(p.clone()),
                (None, Some(f)) => SimulateSource::File(f.clone()),
                _ => return Err(CliError::Usage("give exactly one of --preset and --scenario".into())),
            };
            cmd_simulate(&source, *seed, out)?;
            Ok(0)
        }
        Command::Run { log, config, out } => {
            cmd_run(log, config, out)?;
            Ok(0)
        }
        Command::Eval { run, truth, out } => {
            let res = cmd_eval(run, truth, out.as_deref().unwrap_or(run))?;
            Ok(if res.passed { 0 } else { 3 })
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(VERBOSITY_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
