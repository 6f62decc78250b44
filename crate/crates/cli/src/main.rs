mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssrf_core::KernelFamily;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssrf_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for bad input, 1 for everything else.
    fn exit_code(&self) -> u8 {
        use ssrf_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::InvalidArgument(_)
                | E::InsufficientData(_)
                | E::DegenerateData(_)
                | E::InsufficientPairs { .. }
                | E::DegenerateLayout(_)
                | E::Parse(_)
                | E::Csv(_),
            ) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ssrf",
    version,
    about = "Spartan spatial random field inference from scattered samples"
)]
struct Cli {
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only report errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample constraints (variance, gradient, curvature) of a CSV dataset.
    Constraints(ConstraintsArgs),
    /// Fit SSRF parameters to a CSV dataset.
    Fit(FitArgs),
    /// Simulate Gaussian random fields at random locations.
    Simulate(SimulateArgs),
    /// Simulate, fit and tabulate covariance curves for reference models.
    ExperimentCov(ExperimentArgs),
    /// Kriging cross-validation with the true and the fitted covariance.
    Crossval(ExperimentArgs),
    /// Kernel moment ratios and leading relative biases.
    Table1(Table1Args),
    /// Monte Carlo bias and variance of the constraint estimators.
    McBias(McBiasArgs),
}

#[derive(Args, Debug)]
pub struct ConstraintsArgs {
    /// CSV with header `x1,..,xd,value`.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub kernel: Option<KernelFamily>,
    /// Expected spatial dimension; checked against the CSV columns.
    #[arg(short, long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub min_pairs: Option<usize>,
    /// Grid-binned pair sums instead of the direct double loop.
    #[arg(long)]
    pub binned: bool,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// JSON destination (default: stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub kernel: Option<KernelFamily>,
    /// Weight of the curvature term in the objective.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Hold kc at 2π/a1.
    #[arg(long)]
    pub freeze_kc: bool,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Seed of the restart jitter.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest lag of the covariance curve.
    #[arg(long)]
    pub max_lag: Option<f64>,
    /// Number of lag intervals of the covariance curve.
    #[arg(long)]
    pub lag_intervals: Option<usize>,
    /// Covariance curve CSV destination.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// JSON destination (default: stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of sampling locations.
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// CSV destination for a single replicate (default: stdout).
    #[arg(short, long, conflicts_with = "out_dir")]
    pub output: Option<PathBuf>,
    /// Directory for one CSV per replicate.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct Table1Args {
    /// Comma-separated kernel names (default: all).
    #[arg(short, long, value_delimiter = ',')]
    pub kernels: Vec<KernelFamily>,
    #[arg(short, long, default_value_t = 2)]
    pub dimension: usize,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct McBiasArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();

    let sequential = cli.sequential;
    let result = ssrf_core::par::with_jobs(cli.jobs, || match cli.command {
        Command::Constraints(a) => commands::constraints(&a, sequential),
        Command::Fit(a) => commands::fit(&a, sequential),
        Command::Simulate(a) => commands::simulate(&a, sequential),
        Command::ExperimentCov(a) => commands::experiment_cov(&a, sequential),
        Command::Crossval(a) => commands::crossval(&a, sequential),
        Command::Table1(a) => commands::table1(&a),
        Command::McBias(a) => commands::mc_bias(&a, sequential),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
