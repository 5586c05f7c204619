//! Kriging over space and missing-value imputation.
//!
//! The spatial predictor at a new site `s₀` is a Nadaraya–Watson average
//! of the estimated latent field over observed sites. It coincides with the
//! plug-in best linear predictor `c(s₀) Σ̂_y⁻¹ y_t`, which
//! [`verify_f10_equivalence`] checks numerically.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{pairwise_on_times, sample_covariance};
use crate::factors::FactorModelFit;
use crate::factors::{default_p_star, estimate_d};
use crate::linalg::{invert_checked, symmetric_eigen_desc, symmetrize};
use crate::stdata::{io_err, write_err, LocationSet, SpatioTemporalFrame};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    /// Radial `(1 − r²)₊`, compactly supported.
    Epanechnikov,
}

/// A kernel on R² applied to the distance `‖s − s₀‖ / h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub h: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth h = {h}")));
        }
        Ok(KernelSpec { family, h })
    }

    pub fn gaussian(h: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, h)
    }

    /// Log of the unnormalized kernel at distance `r`; `None` outside the support.
    fn log_kernel(&self, r: f64) -> Option<f64> {
        let u = r / self.h;
        match self.family {
            KernelFamily::Gaussian => Some(-0.5 * u * u),
            KernelFamily::Epanechnikov => (u < 1.0).then(|| (1.0 - u * u).ln()),
        }
    }

    /// Normalized density value `K_h` in R², `h⁻² K(r/h)`.
    pub fn density(&self, r: f64) -> f64 {
        let u = r / self.h;
        let k = match self.family {
            KernelFamily::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI),
            KernelFamily::Epanechnikov => 2.0 / std::f64::consts::PI * (1.0 - u * u).max(0.0),
        };
        k / (self.h * self.h)
    }
}

/// Normalized weights `K_h(s_j − s₀) / Σ K_h` from a set of distances.
/// Gaussian weights are computed in log space, so a far-away `s₀` still
/// gets its nearest sites rather than an all-zero window.
pub(crate) fn weights_from_distances(dist: impl Iterator<Item = f64>, kernel: &KernelSpec) -> Option<Vec<f64>> {
    let logs: Vec<Option<f64>> = dist.map(|r| kernel.log_kernel(r)).collect();
    let top = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return None;
    }
    let mut w: Vec<f64> = logs.iter().map(|l| l.map_or(0.0, |v| (v - top).exp())).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

pub fn kernel_weights(locs: &LocationSet, s0: [f64; 2], kernel: &KernelSpec) -> Result<DVector<f64>> {
    let w = weights_from_distances((0..locs.len()).map(|j| locs.distance_to(j, s0)), kernel)
        .ok_or(Error::EmptyKernelWindow(s0[0], s0[1]))?;
    Ok(DVector::from_vec(w))
}

/// Weights for several target sites at once, one row per target.
pub fn kernel_weight_matrix(locs: &LocationSet, targets: &[[f64; 2]], kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(targets.len(), locs.len());
    for (r, &s0) in targets.iter().enumerate() {
        out.set_row(r, &kernel_weights(locs, s0, kernel)?.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPrediction {
    pub s0: [f64; 2],
    /// `ξ̂_t(s₀)` for every time `t`.
    pub xi_hat_series: DVector<f64>,
    pub weights: DVector<f64>,
}

/// `ξ̂_t(s₀) = Σ_j w_j ξ̂_t(s_j)` for an `n × p` latent field.
pub fn krige_space(
    latent: &DMatrix<f64>,
    locs: &LocationSet,
    s0: [f64; 2],
    kernel: &KernelSpec,
) -> Result<SpatialPrediction> {
    if latent.ncols() != locs.len() {
        return Err(Error::ShapeMismatch(format!(
            "latent field has {} columns for {} locations",
            latent.ncols(),
            locs.len()
        )));
    }
    let weights = kernel_weights(locs, s0, kernel)?;
    Ok(SpatialPrediction {
        s0,
        xi_hat_series: latent * &weights,
        weights,
    })
}

/// Largest time-wise gap between the plug-in predictor `c(s₀) Σ̂_y⁻¹ y_t`
/// and the kernel predictor `Σ_j w_j ξ̂_t(s_j)`.
pub fn verify_f10_equivalence(
    fit: &FactorModelFit,
    frame: &SpatioTemporalFrame,
    s0: [f64; 2],
    kernel: &KernelSpec,
) -> Result<f64> {
    let p = frame.p();
    if p > 200 {
        return Err(Error::InvalidArgument(format!(
            "p = {p} too large for a dense check (limit 200)"
        )));
    }
    if frame.n() <= p {
        return Err(Error::NonInvertible);
    }
    let sigma_y = sample_covariance(frame)?;
    let sigma_inv = invert_checked(&sigma_y, 1e-13).ok_or(Error::NonInvertible)?;
    let w = kernel_weights(frame.locations(), s0, kernel)?;

    // ξ̂_t = B y_t with B the block projector in the original site order.
    let mut b = DMatrix::zeros(p, p);
    for (set, a) in [(&fit.partition.set1, &fit.a1_hat), (&fit.partition.set2, &fit.a2_hat)] {
        let proj = a * a.transpose();
        for (r, &i) in set.iter().enumerate() {
            for (c, &j) in set.iter().enumerate() {
                b[(i, j)] = proj[(r, c)];
            }
        }
    }
    // c(s₀) = Σ_j w_j Cov(ξ̂_t(s_j), y_t)
    let c = w.transpose() * &b * &sigma_y;
    let y = frame.obs();
    let plug_in = y * (c * sigma_inv).transpose();
    let kernel_pred = y * b.transpose() * &w;
    Ok((plug_in - kernel_pred).abs().max())
}

/// Best linear predictor `α₀ + B₀η` of `ζ` from `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestLinearPredictor {
    pub b0: DMatrix<f64>,
    pub alpha0: DVector<f64>,
    /// `Var ζ − B₀ Cov(η, ζ)`.
    pub error_covariance: DMatrix<f64>,
}

impl BestLinearPredictor {
    pub fn predict(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.alpha0 + &self.b0 * eta
    }
}

pub fn best_linear_predictor(
    cov_zeta_eta: &DMatrix<f64>,
    var_eta: &DMatrix<f64>,
    var_zeta: &DMatrix<f64>,
    mean_zeta: &DVector<f64>,
    mean_eta: &DVector<f64>,
) -> Result<BestLinearPredictor> {
    let q = var_eta.nrows();
    if var_eta.ncols() != q
        || cov_zeta_eta.ncols() != q
        || mean_eta.len() != q
        || cov_zeta_eta.nrows() != mean_zeta.len()
        || var_zeta.shape() != (mean_zeta.len(), mean_zeta.len())
    {
        return Err(Error::ShapeMismatch(
            "best linear predictor inputs disagree in size".into(),
        ));
    }
    let vals = symmetrize(var_eta).symmetric_eigenvalues();
    if vals.max().is_nan() || vals.max() <= 0.0 || vals.min() <= 1e-12 * vals.max() {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = symmetrize(var_eta).cholesky().ok_or(Error::NotPositiveDefinite)?;
    let b0 = chol.solve(&cov_zeta_eta.transpose()).transpose();
    let alpha0 = mean_zeta - &b0 * mean_eta;
    let error_covariance = var_zeta - &b0 * cov_zeta_eta.transpose();
    Ok(BestLinearPredictor {
        b0,
        alpha0,
        error_covariance,
    })
}

/// A completed frame and the `(t, i)` cells that were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputation {
    pub frame: SpatioTemporalFrame,
    pub filled: Vec<(usize, usize)>,
    /// Rank of the latent covariance used, for the structured method.
    pub rank: Option<usize>,
}

/// Covariance model behind the imputation predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    /// Pairwise-complete sample covariances, used as they are.
    Pairwise,
    /// Pairwise-complete covariances projected onto a rank-`d` latent part
    /// plus a diagonal nugget part.
    #[default]
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputeOptions {
    pub method: ImputeMethod,
    /// Latent rank for [`ImputeMethod::Structured`]; estimated when `None`.
    pub rank: Option<usize>,
}

/// Mean of every column over the times where both it and column `target`
/// are observed.
fn restricted_means(frame: &SpatioTemporalFrame, target: usize) -> Vec<f64> {
    let y = frame.obs();
    (0..frame.p())
        .map(|j| {
            let (mut sum, mut count) = (0.0, 0usize);
            for t in 0..frame.n() {
                if frame.is_observed(t, target) && frame.is_observed(t, j) {
                    sum += y[(t, j)];
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect()
}

/// Fills every missing cell `(t, i)` with the best linear predictor
/// `μ_i + Cov(y_t(s_i), y_tᵃ) Var(y_tᵃ)⁻¹ (y_tᵃ − μ_a)` from the sites
/// observed at time `t`. Observed cells are copied bit for bit.
pub fn impute_missing(frame: &SpatioTemporalFrame, opts: &ImputeOptions) -> Result<Imputation> {
    match opts.method {
        ImputeMethod::Pairwise => impute_pairwise(frame),
        ImputeMethod::Structured => impute_structured(frame, opts.rank),
    }
}

/// Covariances are pairwise-complete over the times where site `i` is
/// observed, and means are taken over the same times.
fn impute_pairwise(frame: &SpatioTemporalFrame) -> Result<Imputation> {
    let (n, p) = (frame.n(), frame.p());
    let y = frame.obs();
    let mut values = y.clone();
    let mut filled = Vec::new();
    let all: Vec<usize> = (0..p).collect();
    for i in 0..p {
        let gaps: Vec<usize> = (0..n).filter(|&t| !frame.is_observed(t, i)).collect();
        if gaps.is_empty() {
            continue;
        }
        let cov = pairwise_on_times(frame, &all, &all, Some(i))?;
        let means = restricted_means(frame, i);
        for t in gaps {
            let avail = available(frame, t, i)?;
            let v = cov.select_rows(&avail).select_columns(&avail);
            let c = DVector::from_iterator(avail.len(), avail.iter().map(|&j| cov[(i, j)]));
            let eta = DVector::from_iterator(avail.len(), avail.iter().map(|&j| y[(t, j)] - means[j]));
            values[(t, i)] = means[i] + solve_ridged(&v, &c)?.dot(&eta);
            filled.push((t, i));
        }
    }
    filled.sort_unstable();
    Ok(Imputation {
        frame: frame.with_complete_values(values),
        filled,
        rank: None,
    })
}

fn available(frame: &SpatioTemporalFrame, t: usize, i: usize) -> Result<Vec<usize>> {
    let avail: Vec<usize> = (0..frame.p()).filter(|&j| j != i && frame.is_observed(t, j)).collect();
    if avail.is_empty() {
        return Err(Error::InsufficientOverlap(i, i));
    }
    Ok(avail)
}

const PRINCIPAL_FACTOR_STEPS: usize = 50;

/// Splits a pairwise covariance `S` into a rank-`d` latent part `Λ` and a
/// positive diagonal `D` by principal-factor iteration on the off-diagonal
/// entries. `d` comes from the ratio estimator on the squared off-diagonal
/// part unless given.
pub(crate) fn latent_nugget_split(
    s: &DMatrix<f64>,
    rank: Option<usize>,
) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    let p = s.nrows();
    let diag = s.diagonal();
    let mut off = s.clone();
    off.fill_diagonal(0.0);
    let d = match rank {
        Some(d) if d >= 1 && d < p => d,
        Some(d) => return Err(Error::InvalidArgument(format!("latent rank {d} outside [1, {p})"))),
        None => {
            let (vals, _) = symmetric_eigen_desc(&(&off * &off));
            estimate_d(&vals, default_p_star(p / 2, p - p / 2).min(p))?
        }
    };
    let mut work = off.clone();
    work.set_diagonal(&(&diag * 0.5));
    let mut low = DMatrix::zeros(p, p);
    for _ in 0..PRINCIPAL_FACTOR_STEPS {
        let (vals, vecs) = symmetric_eigen_desc(&work);
        let u = vecs.columns(0, d);
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(d, vals[..d].iter().map(|v| v.max(0.0))));
        low = u * lam * u.transpose();
        work = off.clone();
        work.set_diagonal(&low.diagonal().zip_map(&diag, f64::min));
    }
    let nugget = DVector::from_fn(p, |i, _| (diag[i] - low[(i, i)]).max(1e-3 * diag[i]));
    Ok((low, nugget, d))
}

/// Predictor covariances from [`latent_nugget_split`]: `Var y = Λ + D` and
/// `Cov(y_i, y_j) = Λ_ij` for `i ≠ j`.
fn impute_structured(frame: &SpatioTemporalFrame, rank: Option<usize>) -> Result<Imputation> {
    let (n, p) = (frame.n(), frame.p());
    let y = frame.obs();
    let mut values = y.clone();
    let mut filled = Vec::new();
    if frame.is_complete() {
        return Ok(Imputation {
            frame: frame.clone(),
            filled,
            rank: None,
        });
    }
    let all: Vec<usize> = (0..p).collect();
    let s = symmetrize(&pairwise_on_times(frame, &all, &all, None)?);
    let (low, nugget, d) = latent_nugget_split(&s, rank)?;
    let means: Vec<f64> = (0..p)
        .map(|j| {
            let obs: Vec<f64> = (0..n).filter(|&t| frame.is_observed(t, j)).map(|t| y[(t, j)]).collect();
            obs.iter().sum::<f64>() / obs.len() as f64
        })
        .collect();
    for t in 0..n {
        for i in (0..p).filter(|&i| !frame.is_observed(t, i)) {
            let avail = available(frame, t, i)?;
            let mut v = low.select_rows(&avail).select_columns(&avail);
            for (k, &j) in avail.iter().enumerate() {
                v[(k, k)] += nugget[j];
            }
            let c = DVector::from_iterator(avail.len(), avail.iter().map(|&j| low[(i, j)]));
            let eta = DVector::from_iterator(avail.len(), avail.iter().map(|&j| y[(t, j)] - means[j]));
            values[(t, i)] = means[i] + solve_ridged(&v, &c)?.dot(&eta);
            filled.push((t, i));
        }
    }
    Ok(Imputation {
        frame: frame.with_complete_values(values),
        filled,
        rank: Some(d),
    })
}

fn solve_ridged(v: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    let v = symmetrize(v);
    if let Some(ch) = v.clone().cholesky() {
        let sol = ch.solve(c);
        if sol.iter().all(|x| x.is_finite()) {
            return Ok(sol);
        }
    }
    let ridge = 1e-8 * v.trace() / v.nrows() as f64;
    log::warn!("predictor covariance not positive definite; adding ridge {ridge:.3e}");
    let ridged = &v + DMatrix::identity(v.nrows(), v.nrows()) * ridge;
    ridged.lu().solve(c).ok_or(Error::NonInvertible)
}

/// Writes `t,x1,x2,value` rows, one per time and prediction site.
pub fn save_predictions(preds: &[SpatialPrediction], times: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(["t", "x1", "x2", "value"])
        .map_err(|e| write_err(path, e))?;
    for pred in preds {
        for (t, v) in pred.xi_hat_series.iter().enumerate() {
            let label = times.get(t).cloned().unwrap_or_else(|| (t + 1).to_string());
            w.write_record([label, pred.s0[0].to_string(), pred.s0[1].to_string(), v.to_string()])
                .map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
