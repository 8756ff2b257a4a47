//! The `dosekit` command line: argument parsing, dispatch and exit codes.
//!
//! Every analysis subcommand consumes first-stage summaries `(μ̂, Ŝ)`, either
//! as a `dose,mu` CSV plus a covariance CSV or as the JSON written by
//! `dosekit firststage`. A human-readable table goes to stdout, or the JSON
//! document with `--json`; `--out` writes the JSON document to a file.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dosekit::glsfit::Direction;
use dosekit::simharness::Endpoint;
use dosekit::ModelFamily;

mod commands;
pub mod input;
pub mod svg;

/// Seed used when neither a flag nor `DOSEKIT_SEED` provides one.
pub const DEFAULT_SEED: u64 = 20_240_101;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Csv { path: PathBuf, line: u64, msg: String },

    #[error("{}: {err}", path.display())]
    InFile { path: PathBuf, err: dosekit::Error },

    #[error("plot: {0}")]
    Plot(String),

    #[error(transparent)]
    Core(#[from] dosekit::Error),
}

impl CliError {
    /// 2 for bad input or usage, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dosekit", version, about = "Generalized MCPMod dose-finding analyses")]
pub struct Cli {
    /// Default seed for QMC, bootstrap and simulation streams
    #[arg(long, global = true, env = "DOSEKIT_SEED")]
    pub seed: Option<u64>,

    /// Print the JSON document instead of the table
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal contrast matrix for a candidate set as CSV
    Contrasts(ContrastsArgs),
    /// Multiple contrast test of a flat dose-response
    Mctest(MctestArgs),
    /// GLS fit of one dose-response model
    Fit(FitArgs),
    /// Contrast test, model selection, fit and target dose in one pass
    Mcpmod(McpmodArgs),
    /// First-stage estimates from subject-level CSV data
    Firststage(FirststageArgs),
    /// Coverage and RMSE simulation over the built-in scenarios
    Simulate(SimulateArgs),
    /// Equicoordinate critical value for a correlation matrix
    Crit(CritArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Per-dose estimates, CSV with columns dose,mu
    #[arg(long, value_name = "CSV")]
    pub mu: Option<PathBuf>,

    /// Covariance of the estimates, dense KxK CSV with a header row of doses
    #[arg(long, value_name = "CSV")]
    pub cov: Option<PathBuf>,

    /// First-stage estimate JSON (alternative to --mu/--cov)
    #[arg(long, value_name = "JSON", conflicts_with_all = ["mu", "cov"])]
    pub estimate: Option<PathBuf>,

    /// Analyse differences from placebo instead of the per-dose means
    #[arg(long)]
    pub plac_adj: bool,

    /// Whether a beneficial effect increases or decreases the response
    #[arg(long, default_value = "inc")]
    pub direction: Direction,
}

#[derive(Debug, Args)]
pub struct QmcArgs {
    /// Seed of the randomized lattice shifts
    #[arg(long)]
    pub mvn_seed: Option<u64>,

    /// Target standard error of the MVN probabilities
    #[arg(long)]
    pub mvn_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ContrastsArgs {
    /// Candidate set JSON with "models" and "doses"
    #[arg(long, value_name = "JSON")]
    pub models: PathBuf,

    /// Covariance used to compute the contrasts
    #[arg(long, value_name = "CSV")]
    pub cov: PathBuf,

    /// Contrasts for differences from placebo
    #[arg(long)]
    pub plac_adj: bool,

    /// Where to write the contrast CSV (stdout if omitted)
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,

    /// Render the candidate shapes as SVG
    #[arg(long, value_name = "SVG")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MctestArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,

    /// Candidate set JSON with "models" and "doses"
    #[arg(long, value_name = "JSON")]
    pub models: PathBuf,

    /// One-sided level of the test
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,

    /// Planning-stage covariance for the contrasts (default: the observed one)
    #[arg(long, value_name = "CSV")]
    pub contrast_cov: Option<PathBuf>,

    #[command(flatten)]
    pub qmc: QmcArgs,

    /// Where to write the JSON document
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,

    /// Model family: linear, emax, sigemax, quadratic or exponential
    #[arg(long)]
    pub model: ModelFamily,

    /// Search interval of ED50 or delta, as lo,hi
    #[arg(long, value_name = "LO,HI", value_parser = input::parse_bounds)]
    pub bounds: Option<(f64, f64)>,

    /// Parametric bootstrap draws (0 for none)
    #[arg(long, default_value_t = 0)]
    pub boot: usize,

    /// Clinically relevant effect for the target dose
    #[arg(long)]
    pub delta: Option<f64>,

    /// Confidence level of the reported intervals
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,

    /// Render the fitted curve as SVG
    #[arg(long, value_name = "SVG")]
    pub plot: Option<PathBuf>,

    /// Where to write the JSON document
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionRule {
    /// Smallest gAIC among significant models
    Aic,
    /// Largest contrast statistic
    Maxz,
    /// gAIC-weighted average of the significant models
    Average,
}

#[derive(Debug, Args)]
pub struct McpmodArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,

    /// Candidate set JSON with "models" and "doses"
    #[arg(long, value_name = "JSON")]
    pub models: PathBuf,

    /// One-sided level of the test
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,

    /// Clinically relevant effect for the target dose
    #[arg(long)]
    pub delta: Option<f64>,

    /// How the reference model is chosen
    #[arg(long, value_enum, default_value = "aic")]
    pub selection: SelectionRule,

    /// Planning-stage covariance for the contrasts (default: the observed one)
    #[arg(long, value_name = "CSV")]
    pub contrast_cov: Option<PathBuf>,

    #[command(flatten)]
    pub qmc: QmcArgs,

    /// Confidence level of the reported intervals
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,

    /// Render the fitted curve as SVG
    #[arg(long, value_name = "SVG")]
    pub plot: Option<PathBuf>,

    /// Where to write the JSON document
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FirststageArgs {
    /// Endpoint type of the data
    #[arg(long = "type", value_name = "TYPE")]
    pub endpoint: Endpoint,

    /// Subject-level CSV: dose,resp | dose,successes,trials | dose,time,event
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,

    /// Add one half to both cells of binary groups with 0% or 100% responders
    #[arg(long)]
    pub haldane: bool,

    /// Estimate JSON, readable by --estimate
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,

    /// Where to write the dose,mu CSV
    #[arg(long, value_name = "CSV")]
    pub mu_out: Option<PathBuf>,

    /// Where to write the covariance CSV
    #[arg(long, value_name = "CSV")]
    pub cov_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario name such as table1-count-emax, or "all"
    #[arg(long)]
    pub scenario: String,

    /// Subjects per arm
    #[arg(long, default_value_t = 30, conflicts_with = "full_paper")]
    pub n: usize,

    /// Replicates per scenario
    #[arg(long, default_value_t = 500, conflicts_with = "full_paper")]
    pub reps: usize,

    /// Bootstrap draws per replicate for GLS-B (0 disables it)
    #[arg(long, default_value_t = 500)]
    pub boot: usize,

    /// Confidence level of the reported intervals
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,

    /// 2000 replicates at each of n = 15, 30, 50, 100, 300, 1000
    #[arg(long)]
    pub full_paper: bool,

    /// Where to write the JSON document
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,

    /// Coverage and RMSE chart
    #[arg(long, value_name = "SVG")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CritArgs {
    /// Correlation matrix, dense CSV with a header row of labels
    #[arg(long, value_name = "CSV")]
    pub corr: PathBuf,

    /// One-sided level of the test
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,

    #[command(flatten)]
    pub qmc: QmcArgs,

    /// Where to write the JSON document
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

/// Run with the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(args, &mut out, &mut err)
}

/// Parse `args` (program name first), execute, and return the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match commands::execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
