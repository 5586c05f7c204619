//! The three-factor simulation model on `[−1, 1]²`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::stdata::{LocationSet, SpatioTemporalFrame};
use crate::{Error, Result};

pub const D: usize = 3;
pub const BURN_IN: usize = 500;
pub const HOLDOUT_SITES: usize = 50;
pub const FUTURE_STEPS: usize = 2;

/// Stationary variances of the AR(1), MA(1) and ARMA(1,1) factors.
pub const STATIONARY_VARIANCES: [f64; D] = [1.0 / (1.0 - 0.64), 1.0 + 0.25, (1.0 - 0.36 + 0.09) / (1.0 - 0.36)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        SimConfig { n, p, seed }
    }
}

/// `a₁(s) = s₁/2`, `a₂(s) = s₂/2`, `a₃(s) = (s₁² + s₂²)/2`.
pub fn loading_at(s: [f64; 2]) -> [f64; D] {
    [s[0] / 2.0, s[1] / 2.0, (s[0] * s[0] + s[1] * s[1]) / 2.0]
}

pub fn loadings(coords: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(coords.len(), D, |i, j| loading_at(coords[i])[j])
}

/// `Var ξ_t` over the given sites: `A diag(v) Aᵀ`.
pub fn latent_covariance(coords: &[[f64; 2]]) -> DMatrix<f64> {
    let a = loadings(coords);
    let v = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&STATIONARY_VARIANCES));
    &a * v * a.transpose()
}

/// A simulated data set with its ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    /// Observations at the `p` training sites for `t = 1..n`.
    pub frame: SpatioTemporalFrame,
    /// `n × p` true latent field at the training sites.
    pub xi: DMatrix<f64>,
    /// `(n + 2) × 3` factor series, the last rows being the future.
    pub factors: DMatrix<f64>,
    /// `p × 3` true loadings.
    pub loadings: DMatrix<f64>,
    pub holdout_coords: Vec<[f64; 2]>,
    /// `n × 50` observations at the hold-out sites.
    pub holdout_y: DMatrix<f64>,
    pub holdout_xi: DMatrix<f64>,
    /// `2 × p` observations at `t = n+1, n+2`.
    pub future_y: DMatrix<f64>,
    pub future_xi: DMatrix<f64>,
}

fn uniform_site(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

/// Factor paths of length `len` after a burn-in, driven by unit normal
/// innovations.
pub fn simulate_factors(len: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let total = BURN_IN + len;
    let mut x = DMatrix::zeros(total, D);
    let mut e_prev = [0.0; D];
    for t in 0..total {
        let e: [f64; D] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let (x1, x3) = if t == 0 {
            (0.0, 0.0)
        } else {
            (x[(t - 1, 0)], x[(t - 1, 2)])
        };
        x[(t, 0)] = -0.8 * x1 + e[0];
        x[(t, 1)] = e[1] - 0.5 * e_prev[1];
        x[(t, 2)] = -0.6 * x3 + e[2] + 0.3 * e_prev[2];
        e_prev = e;
    }
    x.rows(BURN_IN, len).into_owned()
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let SimConfig { n, p, seed } = *config;
    if n < 4 || p < 4 {
        return Err(Error::InvalidArgument(format!(
            "simulation needs n, p ≥ 4, got n = {n}, p = {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<[f64; 2]> = (0..p).map(|_| uniform_site(&mut rng)).collect();
    let holdout_coords: Vec<[f64; 2]> = (0..HOLDOUT_SITES).map(|_| uniform_site(&mut rng)).collect();
    let factors = simulate_factors(n + FUTURE_STEPS, &mut rng);

    let a = loadings(&coords);
    let xi_all = &factors * a.transpose();
    let noise = DMatrix::from_fn(n + FUTURE_STEPS, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y_all = &xi_all + noise;

    let ah = loadings(&holdout_coords);
    let holdout_xi = factors.rows(0, n) * ah.transpose();
    let holdout_noise = DMatrix::from_fn(n, HOLDOUT_SITES, |_, _| rng.sample::<f64, _>(StandardNormal));
    let holdout_y = &holdout_xi + holdout_noise;

    let frame = SpatioTemporalFrame::new(LocationSet::from_coords(coords)?, y_all.rows(0, n).into_owned())?;
    Ok(Simulation {
        config: *config,
        frame,
        xi: xi_all.rows(0, n).into_owned(),
        future_y: y_all.rows(n, FUTURE_STEPS).into_owned(),
        future_xi: xi_all.rows(n, FUTURE_STEPS).into_owned(),
        factors,
        loadings: a,
        holdout_coords,
        holdout_y,
        holdout_xi,
    })
}

/// Signal-to-noise ratio of the simulation model against the unit nugget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    /// `sqrt(mean_s Var ξ(s))`: root of the average latent variance.
    pub rms: f64,
    /// `mean_s sqrt(Var ξ(s))`: average latent standard deviation.
    pub mean_sd: f64,
}

/// Monte Carlo integral over `[−1, 1]²` with `draws` uniform points.
pub fn snr_monte_carlo(draws: usize, seed: u64) -> SnrEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut var_sum, mut sd_sum) = (0.0, 0.0);
    for _ in 0..draws {
        let a = loading_at(uniform_site(&mut rng));
        let v: f64 = a.iter().zip(STATIONARY_VARIANCES).map(|(x, s)| x * x * s).sum();
        var_sum += v;
        sd_sum += v.sqrt();
    }
    SnrEstimate {
        rms: (var_sum / draws as f64).sqrt(),
        mean_sd: sd_sum / draws as f64,
    }
}
