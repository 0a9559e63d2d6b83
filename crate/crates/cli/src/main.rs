//! `bnppc`: simulate, fit and summarise partially clustered
//! multinomial-logit panels.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bnppc", version, about = "Bayesian nonparametric partial clustering for multinomial-logit panels")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for all random streams.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Key-value file (`key = value` per line) supplying any flag.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel and write it with its ground truth.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler on a panel.
    Fit(FitArgs),
    /// Binder point estimate and similarity matrix from a chain.
    Partition(PartitionArgs),
    /// Posterior marginal effects per cluster of a partition.
    Effects(EffectsArgs),
    /// Effective sample sizes, autocorrelations and traces.
    Diagnose(DiagnoseArgs),
    /// Joint-distribution calibration test of the sampler.
    Geweke(GewekeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 120)]
    pub units: usize,
    #[arg(long, default_value_t = 8)]
    pub periods: usize,
    #[arg(long, default_value_t = 3)]
    pub categories: usize,
    /// Number of well-separated true clusters; draws the truth from the
    /// prior when absent.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Cluster covariates besides the intercept.
    #[arg(long, default_value_t = 1)]
    pub cluster_covariates: usize,
    #[arg(long, default_value_t = 1)]
    pub global_covariates: usize,
    /// Trials per cell.
    #[arg(long, default_value_t = 20)]
    pub trials: u32,
    /// Spacing of the cluster coefficients for separated truths.
    #[arg(long, default_value_t = 2.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 3.0)]
    pub alpha_shape: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_sd: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Ingestion spec (JSON): column roles, lag, standardisation.
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value_t = 5000)]
    pub burnin: usize,
    /// Retained draws.
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha_shape: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha_rate: f64,
    /// Auxiliary clusters per allocation step.
    #[arg(long, default_value_t = 3)]
    pub n_aux: usize,
    /// Prior standard deviation of every coefficient.
    #[arg(long, default_value_t = 1.0)]
    pub prior_sd: f64,
    /// Start from this many random clusters instead of one.
    #[arg(long)]
    pub init_clusters: Option<usize>,
    #[arg(long)]
    pub initial_alpha: Option<f64>,
    /// Also save per-unit coefficient draws.
    #[arg(long)]
    pub store_unit_coefficients: bool,
    /// Restarts of the partition search between stages.
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    /// Free run, Binder partition, then a run conditional on it.
    #[arg(long, conflicts_with = "fix_partition")]
    pub two_stage: bool,
    #[arg(long)]
    pub stage_two_burnin: Option<usize>,
    #[arg(long)]
    pub stage_two_draws: Option<usize>,
    /// Condition on the partition in this `unit,cluster` CSV.
    #[arg(long)]
    pub fix_partition: Option<PathBuf>,
    /// Keep updating the concentration when the partition is fixed.
    #[arg(long)]
    pub sample_alpha: bool,
    #[arg(long, default_value = "csv", value_parser = ["csv", "binary"])]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Chain directory written by `fit`.
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long)]
    pub max_clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// `unit,cluster` CSV, e.g. from `partition`.
    #[arg(long)]
    pub partition: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Covariates to report (comma separated); all but the intercept by default.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Multiply the effects of one covariate, e.g. `--scale subsidies=100`.
    #[arg(long, value_parser = parse_scale)]
    pub scale: Vec<(String, f64)>,
    /// Report effects per standard deviation of the covariate instead of
    /// per original unit.
    #[arg(long)]
    pub standardized: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub max_lag: usize,
    /// Keep every n-th draw in the trace extract.
    #[arg(long, default_value_t = 10)]
    pub trace_every: usize,
}

#[derive(Debug, Args)]
pub struct GewekeArgs {
    /// Samples per simulator.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub trials: u32,
    /// Fail when any |z| reaches this value.
    #[arg(long, default_value_t = 4.0)]
    pub threshold: f64,
}

fn parse_scale(raw: &str) -> Result<(String, f64), String> {
    let (name, factor) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected name=factor, got '{raw}'"))?;
    let factor: f64 = factor
        .trim()
        .parse()
        .map_err(|_| format!("'{factor}' is not a number"))?;
    if !factor.is_finite() {
        return Err("scale factor must be finite".into());
    }
    Ok((name.trim().to_string(), factor))
}

fn main() -> ExitCode {
    let cli = match config::parse_args(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(config::ParseError::Clap(e)) => e.exit(),
        Err(config::ParseError::Config(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
