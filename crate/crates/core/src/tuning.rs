//! Data-driven choice of the smoothness penalty `τ` and kernel bandwidth `h`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::factors::{FactorProblem, FitOptions};
use crate::kriging::{kernel_weight_matrix, KernelFamily, KernelSpec};
use crate::stdata::{pairwise_distances, random_partition, LocationSet, SpatioTemporalFrame};
use crate::{derive_seed, Error, Result};

pub const BANDWIDTH_GRID_LEN: usize = 30;

/// 101 equally spaced values on `[0, 10]`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 10.0).collect()
}

/// Log-spaced grid from a tenth of the median nearest-neighbour spacing to
/// twice the largest pairwise distance.
pub fn bandwidth_grid(locs: &LocationSet) -> Vec<f64> {
    let dist = pairwise_distances(locs);
    let p = locs.len();
    let mut nn: Vec<f64> = (0..p)
        .map(|i| {
            (0..p)
                .filter(|&j| j != i)
                .map(|j| dist[(i, j)])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let median = if p % 2 == 1 {
        nn[p / 2]
    } else {
        0.5 * (nn[p / 2 - 1] + nn[p / 2])
    };
    let diameter = dist.max();
    let hi = 2.0 * diameter;
    let mut lo = 0.1 * median;
    if lo.is_nan() || lo <= 0.0 || lo >= hi {
        lo = hi * 1e-3;
    }
    let steps = (BANDWIDTH_GRID_LEN - 1) as f64;
    (0..BANDWIDTH_GRID_LEN)
        .map(|k| lo * (hi / lo).powf(k as f64 / steps))
        .collect()
}

/// Leave-one-location-out squared error of reconstructing each column of
/// `latent` from the others; `None` if some site has an empty window.
fn loo_error(latent: &DMatrix<f64>, dist: &DMatrix<f64>, kernel: &KernelSpec) -> Option<f64> {
    let p = dist.nrows();
    let mut w = DMatrix::zeros(p, p);
    for i in 0..p {
        let others = (0..p).filter(|&j| j != i).map(|j| dist[(i, j)]);
        let row = crate::kriging::weights_from_distances(others, kernel)?;
        let mut it = row.into_iter();
        for j in (0..p).filter(|&j| j != i) {
            w[(i, j)] = it.next().unwrap_or(0.0);
        }
    }
    let pred = latent * w.transpose();
    Some((latent - pred).norm_squared())
}

/// Bandwidth minimizing the leave-one-location-out error over
/// [`bandwidth_grid`]. Near-ties go to the smaller bandwidth.
pub fn select_bandwidth(latent: &DMatrix<f64>, locs: &LocationSet, family: KernelFamily) -> Result<f64> {
    let p = locs.len();
    if p < 3 {
        return Err(Error::TooFewLocations { required: 3, got: p });
    }
    if latent.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "latent field has {} columns for {p} locations",
            latent.ncols()
        )));
    }
    let dist = pairwise_distances(locs);
    let tol = 1e-12 * latent.norm_squared() + f64::MIN_POSITIVE;
    let mut best: Option<(f64, f64)> = None;
    for h in bandwidth_grid(locs) {
        let Some(err) = loo_error(latent, &dist, &KernelSpec { family, h }) else {
            continue;
        };
        if best.is_none_or(|(_, e)| err < e - tol) {
            best = Some((h, err));
        }
    }
    best.map(|(h, _)| h).ok_or(Error::InvalidArgument(
        "no bandwidth on the grid gives every site a neighbour".into(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSelection {
    pub tau: f64,
    pub grid: Vec<f64>,
    /// Mean squared hold-out error per grid value.
    pub cv_errors: Vec<f64>,
}

/// `folds`-fold location cross-validation of `τ`.
///
/// Sites are shuffled with `seed` and dealt into folds. For each fold the
/// remaining sites are fitted (the partition seeded per fold), the kernel
/// bandwidth is chosen once from the `τ = 0` latent field, and the held-out
/// observations are predicted by kriging for every `τ` in `grid`.
pub fn select_tau(
    frame: &SpatioTemporalFrame,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &FitOptions,
    family: KernelFamily,
) -> Result<TauSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty tau grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("{folds} folds, need at least 2")));
    }
    let p = frame.p();
    if p < 2 * folds {
        return Err(Error::TooFewLocations {
            required: 2 * folds,
            got: p,
        });
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0usize; p];
    for (k, &i) in order.iter().enumerate() {
        assignment[i] = k % folds;
    }

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..p).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..p).filter(|&i| assignment[i] == f).collect();
            let sub = frame.select_locations(&train);
            let part = random_partition(train.len(), derive_seed(seed, f as u64 + 1))?;
            let problem = FactorProblem::new(&sub, &part, opts)?;
            let h = select_bandwidth(&problem.latent(0.0)?, sub.locations(), family)?;
            let targets: Vec<[f64; 2]> = test.iter().map(|&i| frame.locations().coord(i)).collect();
            let w = kernel_weight_matrix(sub.locations(), &targets, &KernelSpec::new(family, h)?)?;
            let held = frame.columns(&test);
            grid.iter()
                .map(|&tau| Ok((&held - problem.latent(tau)? * w.transpose()).norm_squared()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let total = (frame.n() * p) as f64;
    let cv_errors: Vec<f64> = (0..grid.len())
        .map(|g| per_fold.iter().map(|e| e[g]).sum::<f64>() / total)
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        if cv_errors[g] < cv_errors[best] {
            best = g;
        }
    }
    Ok(TauSelection {
        tau: grid[best],
        grid: grid.to_vec(),
        cv_errors,
    })
}
