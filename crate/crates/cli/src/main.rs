//! `gmkit`: run verification suites, train models, simulate them and
//! summarize results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod theta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::ExperimentConfig;

const AFTER_HELP: &str = "\
Exit codes: 0 success, 1 a check failed or training diverged, 2 bad input
(config, model file, results directory).

Output files (floats written with 17 significant digits):
  verify_<suite>.csv  experiment,metric,value,std_error,tolerance,pass,wall_time_s
  verify_<suite>.json suite summary with the failing checks
  theta.txt           parameter file: header lines, blank line, one value per line
  trace.csv           step,loss,std_error
  metrics.json        final loss and probe errors of a training run
  samples.csv         x (flow_x1 simulate, one row per trajectory)
  counts.csv          state,count (jump_masked simulate; state 0 is the mask)
  distance.json       distance between simulated and target distributions
  report.md           per-suite table of all records found by `report`
  tidy.csv            experiment,t,metric,value

GMKIT_OUT, when set, overrides --out.";

#[derive(Parser)]
#[command(name = "gmkit", version, about = "Generator matching toolkit", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sampling and simulation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite: bregman, reweight, prop1, prop2, editflows, kfe or all.
    Verify { suite: String },
    /// Train the configured model; writes theta.txt, trace.csv and metrics.json.
    Train {
        /// Continue from a parameter file written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Simulate a trained model; writes samples or counts and distance.json.
    Simulate {
        /// Parameter file (default: <out>/theta.txt).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Aggregate the result CSVs in a directory into report.md and tidy.csv.
    Report { dir: PathBuf },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("model file corrupt: {0}")]
    ModelFileCorrupt(String),
    #[error("no result records in {0}")]
    EmptyResults(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("checks failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Lib(#[from] gmkit::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Lib(gmkit::Error::Diverged { .. } | gmkit::Error::TrajectoryDiverged(_) | gmkit::Error::RateBoundExceeded { .. }) => 1,
            _ => 2,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if matches!(cli.command, Command::Train { .. } | Command::Simulate { .. }) => {
            return Err(CliError::Config("--config is required for this command".into()))
        }
        None => ExperimentConfig::parse("seed = 7\n")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let explicit_out = std::env::var_os("GMKIT_OUT").is_some_and(|v| !v.is_empty()) || cli.out.is_some();
    let out = std::env::var_os("GMKIT_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or(cli.out)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("gmkit-out"));
    match cli.command {
        Command::Verify { suite } => commands::verify(&Ctx { out, quiet: cli.quiet }, &suite, &cfg),
        Command::Train { resume } => commands::train_cmd(&Ctx { out, quiet: cli.quiet }, &cfg, resume.as_deref()),
        Command::Simulate { model } => {
            let model = model.unwrap_or_else(|| out.join("theta.txt"));
            commands::simulate_cmd(&Ctx { out, quiet: cli.quiet }, &cfg, &model)
        }
        Command::Report { dir } => {
            // the report lands next to the inputs unless an output directory is named
            let out = if explicit_out { out } else { dir.clone() };
            commands::report(&Ctx { out, quiet: cli.quiet }, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmkit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
