//! `latent-krig`: fit latent-factor kriging models from CSV panels, predict
//! at new sites and future times, and run the simulation benchmarks.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_krig::kriging::{ImputeMethod, KernelFamily};
use latent_krig::simbench::TableId;
use latent_krig::stdata::DistanceMetric;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "latent-krig", version, about = "Latent-factor spatio-temporal kriging")]
struct Cli {
    /// Output format for tables written to stdout or `--out`.
    #[arg(long, value_enum, global = true, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a panel from the simulation model into a data directory.
    Simulate(SimulateArgs),
    /// Fit the latent field and write a model JSON.
    Fit(FitArgs),
    /// Predict the latent field at new sites from a model JSON.
    KrigeSpace(KrigeArgs),
    /// Forecast every observed site one or more steps ahead.
    Forecast(ForecastArgs),
    /// Fill missing cells and write the completed panel.
    Impute(ImputeArgs),
    /// Cross-validate the penalty over a grid.
    Cv(CvArgs),
    /// Run a simulation table or figure.
    Bench(BenchArgs),
    /// Remove the per-location mean of each seasonal phase.
    Deseason(DeseasonArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    GreatCircle,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::GreatCircle => DistanceMetric::great_circle(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Epanechnikov,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Epanechnikov => KernelFamily::Epanechnikov,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ImputeArg {
    Structured,
    Pairwise,
}

impl From<ImputeArg> for ImputeMethod {
    fn from(m: ImputeArg) -> Self {
        match m {
            ImputeArg::Structured => ImputeMethod::Structured,
            ImputeArg::Pairwise => ImputeMethod::Pairwise,
        }
    }
}

/// A data directory holding `locations.csv`, `observations.csv` and
/// optionally `covariates.csv`.
#[derive(Debug, Args)]
struct DataArgs {
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    metric: MetricArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct TauArgs {
    /// Fixed penalty.
    #[arg(long)]
    tau: Option<f64>,
    /// Cross-validate over a comma-separated grid, or `default` for 101
    /// points on [0, 10]. This is the default when `--tau` is absent.
    #[arg(long, value_name = "GRID")]
    tau_grid: Option<String>,
}

#[derive(Debug, Args)]
struct FitSettings {
    #[command(flatten)]
    tau: TauArgs,
    /// Random partitions aggregated.
    #[arg(long, default_value_t = latent_krig::ensemble::DEFAULT_MEMBERS)]
    members: usize,
    #[arg(long)]
    seed: u64,
    /// Autocovariance lags added to the target matrices.
    #[arg(long, default_value_t = 0)]
    k0: usize,
    #[arg(long)]
    p_star: Option<usize>,
    /// Number of factors, overriding the ratio estimator.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    settings: FitSettings,
    /// Model path; defaults to `<dir>/model.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-location regression coefficients when covariates are present.
    #[arg(long)]
    betas_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KrigeArgs {
    model: PathBuf,
    /// Prediction site `x1,x2`; repeat for several sites.
    #[arg(long = "at", value_name = "X1,X2", required = true, allow_hyphen_values = true)]
    at: Vec<String>,
    /// Bandwidth, or `auto` for leave-one-out selection.
    #[arg(long, default_value = "auto")]
    h: String,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,
    /// Use the first member's field instead of the aggregated one.
    #[arg(long)]
    single: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    settings: FitSettings,
    /// Comma-separated forecast horizons.
    #[arg(long, default_value = "1")]
    horizons: String,
    #[arg(long, default_value_t = latent_krig::forecast::DEFAULT_J0)]
    j0: usize,
    /// Ridge added to the lag-covariance system.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = ImputeArg::Structured)]
    method: ImputeArg,
    /// Latent rank for the structured method; estimated when absent.
    #[arg(long)]
    rank: Option<usize>,
    /// Output directory for the completed panel.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "default")]
    tau_grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    k0: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_table)]
    table: TableId,
    /// Comma-separated sample sizes; with `--p` forms every pair.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    /// Multiplies the default ensemble size.
    #[arg(long, default_value_t = 1.0, conflicts_with = "members")]
    scale_factor: f64,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long, default_value = "default")]
    tau_grid: String,
    #[arg(long, default_value_t = latent_krig::forecast::DEFAULT_J0)]
    j0: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    kernel: KernelArg,
    /// Directory for `reports` and `summary` files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DeseasonArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    period: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_table(s: &str) -> Result<TableId, String> {
    s.parse::<TableId>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = latent_krig::threads_from_env();
    match latent_krig::with_threads(threads, || commands::run(cli.command, cli.format)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
