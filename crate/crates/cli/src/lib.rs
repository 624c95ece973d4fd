//! `robust-iv` command line: dataset analysis with a sweep over `U`,
//! simulation experiments and power curves.

pub mod analyze;
pub mod bundled;
pub mod csv_input;
pub mod simulate;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use robust_iv::{Error, TestKind};

/// Exit code for usage, configuration and data errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for internal failures.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "robust-iv",
    version,
    about = "Confidence intervals robust to invalid instruments"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ROBUST_IV_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust intervals for a CSV dataset, one column per U.
    Analyze(AnalyzeArgs),
    /// Run a simulation plan (a TOML file or a bundled plan name).
    Simulate(SimulateArgs),
    /// Exact AR power curve on a fixed simulated design.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input CSV with a header row.
    pub csv: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub exposure: String,
    /// Candidate instrument columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub instruments: Vec<String>,
    /// Exogenous covariates partialled out before the analysis.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Do not add an intercept to the covariates.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Pretest level (default alpha / 5).
    #[arg(long)]
    pub alpha1: Option<f64>,
    /// Level of the pretested per-subset sets (default alpha - alpha1).
    #[arg(long)]
    pub alpha2: Option<f64>,
    /// Values of U, e.g. `1,2,3` or `1-3` (default 1 to L-1).
    #[arg(long = "u", value_delimiter = ',')]
    pub u: Vec<String>,
    /// Tests to invert (default all).
    #[arg(long, value_delimiter = ',')]
    pub test: Vec<TestKind>,
    /// Add Sargan-pretested rows.
    #[arg(long)]
    pub pretest: bool,
    /// CLR grid lower end (with --grid-hi and --grid-step).
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Value whose inclusion the sensitivity summary reports.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub null: f64,
    /// Seed of the CLR Monte Carlo draws.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "robust-iv-output")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plan file, or the name of a bundled plan.
    pub config: String,
    /// Override the plan's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "robust-iv-output")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Power plan file, or the name of a bundled plan.
    pub config: String,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0_hi: Option<f64>,
    #[arg(long)]
    pub beta0_step: Option<f64>,
    /// Monte Carlo replicates per point for a `power_mc` column.
    #[arg(long)]
    pub mc_reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "robust-iv-output")]
    pub out_dir: PathBuf,
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) => EXIT_INTERNAL,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                code: EXIT_INTERNAL,
                message: e.to_string(),
            })?;
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = configure_threads(cli.threads).and_then(|_| match &cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(a) => simulate::run_simulate(a),
        Command::Power(a) => simulate::run_power(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
