//! Simulation study: data generation with ground truth, error metrics and
//! replicated table runs.

mod metrics;
mod model;
mod tables;

pub use metrics::{mean_se, mse_xi, mspe, MeanSe};
pub use model::{
    latent_covariance, loading_at, loadings, simulate, simulate_factors, snr_monte_carlo, SimConfig, Simulation,
    SnrEstimate, BURN_IN, D, FUTURE_STEPS, HOLDOUT_SITES, STATIONARY_VARIANCES,
};
pub use tables::{
    default_settings, replicate_seed, run_replicate, run_table, BenchConfig, BenchReport, BenchSummary, MetricReport,
    SettingSummary, TableId,
};
