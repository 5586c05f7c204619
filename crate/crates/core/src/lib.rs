//! Latent-factor spatio-temporal kriging.
//!
//! Panel data `y_t(s_i)` observed at `p` irregular locations and `n` regular
//! times are modelled as a low-dimensional latent field plus a nugget:
//! `y_t(s) = z_t(s)'β(s) + Σ_j a_j(s) x_tj + ε_t(s)`. The crate estimates the
//! loading space by a graph-Laplacian penalized eigenanalysis of cross-set
//! sample covariances, aggregates over random location partitions, and uses
//! the fitted structure for kriging over space, kriging in time and
//! imputation of missing cells.
//!
//! Module map:
//!
//! - [`stdata`]: locations, frames, partitions and CSV ingestion.
//! - [`covariance`]: cross-set, lagged and pairwise-complete covariances.
//! - [`factors`]: graph Laplacian, penalized eigenvectors, ratio estimator, fits.
//! - [`ensemble`]: random-partition aggregation and divide-and-conquer fitting.
//! - [`regress`]: per-location least squares detrending and β smoothing.
//! - [`kriging`]: kernel kriging over space, best linear predictor, imputation.
//! - [`forecast`]: block-Toeplitz recursion and factor-based forecasting.
//! - [`tuning`]: cross-validation of the penalty and the kernel bandwidth.
//! - [`simbench`]: the simulation design and the table/figure harness.

pub mod covariance;
pub mod ensemble;
pub mod error;
pub mod factors;
pub mod forecast;
pub mod kriging;
mod linalg;
pub mod regress;
pub mod simbench;
pub mod stdata;
pub mod tuning;

pub use error::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "LATENT_KRIG_THREADS";

/// Runs `f` inside a rayon pool with `threads` workers (`None` keeps the
/// global pool). Results never depend on the worker count: every parallel
/// reduction in the crate is collected and reduced in index order.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .expect("failed to build rayon thread pool")
            .install(f),
        None => f(),
    }
}

/// Worker count requested through [`THREADS_ENV`], if set and valid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Deterministic per-task seed derived from a base seed and a task index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed input
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
