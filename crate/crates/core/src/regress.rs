//! Per-location least-squares detrending and kernel smoothing of the
//! fitted coefficients to new sites.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::kriging::{kernel_weights, KernelSpec};
use crate::stdata::{io_err, write_err, LocationSet, SpatioTemporalFrame};
use crate::{Error, Result};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// `p × m`, row `i` is `β̂(s_i)ᵀ`.
    pub betas: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    /// `y − zᵀβ̂` on the original mask, without covariates.
    pub residual_frame: SpatioTemporalFrame,
}

/// OLS of each location's series on its own covariates, using the
/// location's observed times only.
pub fn detrend(frame: &SpatioTemporalFrame) -> Result<RegressionFit> {
    let cov = frame
        .covariates()
        .ok_or_else(|| Error::InvalidArgument("detrending needs covariates".into()))?;
    let (n, p, m) = (frame.n(), frame.p(), cov.names.len());
    let y = frame.obs();
    let columns = (0..p)
        .into_par_iter()
        .map(|i| {
            let rows: Vec<usize> = (0..n).filter(|&t| frame.is_observed(t, i)).collect();
            let z = cov.per_location[i].select_rows(&rows);
            let yi = DVector::from_iterator(rows.len(), rows.iter().map(|&t| y[(t, i)]));
            let gram = z.transpose() * &z;
            let vals = gram.clone().symmetric_eigenvalues();
            let id = || Error::SingularDesign(frame.locations().ids()[i].clone());
            if vals.min().is_nan() || vals.min() <= 0.0 || vals.max() / vals.min() > MAX_CONDITION {
                return Err(id());
            }
            let beta = gram.cholesky().ok_or_else(id)?.solve(&(z.transpose() * &yi));
            let mut resid = DVector::from_element(n, f64::NAN);
            for &t in &rows {
                resid[t] = y[(t, i)] - cov.per_location[i].row(t).dot(&beta.transpose());
            }
            Ok((beta, resid))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut betas = DMatrix::zeros(p, m);
    let mut values = DMatrix::from_element(n, p, f64::NAN);
    for (i, (beta, resid)) in columns.into_iter().enumerate() {
        betas.set_row(i, &beta.transpose());
        values.set_column(i, &resid);
    }
    Ok(RegressionFit {
        betas,
        covariate_names: cov.names.clone(),
        residual_frame: frame.with_values(values).without_covariates(),
    })
}

/// Nadaraya–Watson average `Σ_j w_j β̂(s_j)` at `s0`.
pub fn smooth_beta(fit: &RegressionFit, locs: &LocationSet, s0: [f64; 2], kernel: &KernelSpec) -> Result<DVector<f64>> {
    if fit.betas.nrows() != locs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient rows for {} locations",
            fit.betas.nrows(),
            locs.len()
        )));
    }
    let w = kernel_weights(locs, s0, kernel)?;
    Ok(fit.betas.transpose() * w)
}

/// Writes `id,b1,...,bm`.
pub fn save_betas(fit: &RegressionFit, locs: &LocationSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=fit.betas.ncols()).map(|k| format!("b{k}")));
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (i, id) in locs.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(fit.betas.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Subtracts from every cell the mean of its location over the observed
/// times congruent to it modulo `period`.
pub fn deseason(frame: &SpatioTemporalFrame, period: usize) -> Result<SpatioTemporalFrame> {
    let n = frame.n();
    if period < 2 {
        return Err(Error::InvalidArgument(format!(
            "period must be at least 2, got {period}"
        )));
    }
    if n < 2 * period {
        return Err(Error::PeriodTooLarge { period, n });
    }
    let y = frame.obs();
    let mut values = y.clone();
    for i in 0..frame.p() {
        for phase in 0..period {
            let times: Vec<usize> = (phase..n)
                .step_by(period)
                .filter(|&t| frame.is_observed(t, i))
                .collect();
            if times.is_empty() {
                continue;
            }
            let mean = times.iter().map(|&t| y[(t, i)]).sum::<f64>() / times.len() as f64;
            for t in times {
                values[(t, i)] -= mean;
            }
        }
    }
    Ok(frame.with_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn line_locs(p: usize) -> LocationSet {
        LocationSet::from_coords((0..p).map(|i| [i as f64, 0.0]).collect()).unwrap()
    }

    fn with_design(y: DMatrix<f64>, z: Vec<DMatrix<f64>>, names: &[&str]) -> SpatioTemporalFrame {
        let p = y.ncols();
        SpatioTemporalFrame::new(line_locs(p), y)
            .unwrap()
            .with_covariates(names.iter().map(|s| s.to_string()).collect(), z)
            .unwrap()
    }

    #[test]
    fn intercept_only_demeans() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(20, 3, |_, _| rng.sample::<f64, _>(StandardNormal) + 5.0);
        let z = vec![DMatrix::from_element(20, 1, 1.0); 3];
        let fit = detrend(&with_design(y.clone(), z, &["one"])).unwrap();
        for i in 0..3 {
            let mean = y.column(i).mean();
            assert!((fit.betas[(i, 0)] - mean).abs() < 1e-12);
            for t in 0..20 {
                assert!((fit.residual_frame.obs()[(t, i)] - (y[(t, i)] - mean)).abs() < 1e-12);
            }
        }
        assert!(fit.residual_frame.covariates().is_none());
    }

    #[test]
    fn exact_linear_data_leaves_no_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 30;
        let z: Vec<DMatrix<f64>> = (0..4)
            .map(|_| DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-2.0..2.0) }))
            .collect();
        let y = DMatrix::from_fn(n, 4, |t, i| z[i][(t, 0)] * (i as f64 + 1.0) - 2.0 * z[i][(t, 1)]);
        let fit = detrend(&with_design(y, z, &["one", "x"])).unwrap();
        assert!(fit.residual_frame.obs().abs().max() <= 1e-10);
        assert!((fit.betas[(2, 0)] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn matches_normal_equation_oracle_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let z: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal)))
            .collect();
        let y = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = detrend(&with_design(y.clone(), z.clone(), &["u", "v"])).unwrap();
        for i in 0..2 {
            // closed-form 2×2 inverse of the normal equations
            let (mut a, mut b, mut d, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for t in 0..n {
                let (u, v) = (z[i][(t, 0)], z[i][(t, 1)]);
                a += u * u;
                b += u * v;
                d += v * v;
                r0 += u * y[(t, i)];
                r1 += v * y[(t, i)];
            }
            let det = a * d - b * b;
            let beta = [(d * r0 - b * r1) / det, (a * r1 - b * r0) / det];
            assert!((fit.betas[(i, 0)] - beta[0]).abs() < 1e-10);
            assert!((fit.betas[(i, 1)] - beta[1]).abs() < 1e-10);
            let e = fit.residual_frame.obs().column(i).into_owned();
            let ze = z[i].transpose() * &e;
            assert!(ze.norm() <= 1e-8 * z[i].norm() * e.norm());
        }
    }

    #[test]
    fn missing_rows_are_dropped_and_kept_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut y = DMatrix::from_fn(10, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        y[(3, 1)] = f64::NAN;
        let z = vec![DMatrix::from_element(10, 1, 1.0); 2];
        let fit = detrend(&with_design(y.clone(), z, &["one"])).unwrap();
        let observed: Vec<f64> = (0..10).filter(|&t| t != 3).map(|t| y[(t, 1)]).collect();
        let mean = observed.iter().sum::<f64>() / 9.0;
        assert!((fit.betas[(1, 0)] - mean).abs() < 1e-12);
        assert!(!fit.residual_frame.is_observed(3, 1));
    }

    #[test]
    fn collinear_design_is_rejected() {
        let y = DMatrix::from_fn(10, 2, |t, i| (t * (i + 1)) as f64);
        let z = vec![DMatrix::from_fn(10, 2, |t, _| t as f64 + 1.0); 2];
        assert!(matches!(
            detrend(&with_design(y, z, &["a", "b"])),
            Err(Error::SingularDesign(_))
        ));
    }

    fn fit_with_betas(betas: DMatrix<f64>, locs: &LocationSet) -> RegressionFit {
        let p = locs.len();
        RegressionFit {
            betas,
            covariate_names: vec!["b".into()],
            residual_frame: SpatioTemporalFrame::new(locs.clone(), DMatrix::zeros(2, p)).unwrap(),
        }
    }

    #[test]
    fn smoothing_limits() {
        let locs = line_locs(5);
        let betas = DMatrix::from_fn(5, 1, |i, _| (i * i) as f64);
        let fit = fit_with_betas(betas, &locs);
        let tiny = KernelSpec::gaussian(1e-3).unwrap();
        assert!((smooth_beta(&fit, &locs, [3.0, 0.0], &tiny).unwrap()[0] - 9.0).abs() < 1e-12);
        let flat = fit_with_betas(DMatrix::from_element(5, 1, 4.0), &locs);
        let wide = KernelSpec::new(KernelFamily::Epanechnikov, 2.5).unwrap();
        assert!((smooth_beta(&flat, &locs, [1.7, 0.4], &wide).unwrap()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_bias_is_second_order() {
        let side = 121;
        let coords: Vec<[f64; 2]> = (0..side * side)
            .map(|k| [0.2 + 0.005 * (k % side) as f64, 0.2 + 0.005 * (k / side) as f64])
            .collect();
        let locs = LocationSet::from_coords(coords.clone()).unwrap();
        let betas = DMatrix::from_fn(coords.len(), 1, |i, _| coords[i][0] * coords[i][0]);
        let fit = fit_with_betas(betas, &locs);
        let s0 = [0.5, 0.5];
        let err = |h: f64| (smooth_beta(&fit, &locs, s0, &KernelSpec::gaussian(h).unwrap()).unwrap()[0] - 0.25).abs();
        let ratio = err(0.02) / err(0.04);
        assert!((ratio - 0.25).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn deseason_examples() {
        let (n, p) = (48, 3);
        let constant = SpatioTemporalFrame::new(line_locs(p), DMatrix::from_element(n, p, 4.5)).unwrap();
        assert!(deseason(&constant, 12).unwrap().obs().iter().all(|&v| v == 0.0));

        let seasonal = DMatrix::from_fn(n, p, |t, i| {
            (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin() * (i + 1) as f64 + i as f64
        });
        let frame = SpatioTemporalFrame::new(line_locs(p), seasonal).unwrap();
        assert!(deseason(&frame, 12).unwrap().obs().abs().max() <= 1e-10);

        // a linear trend survives: only its per-phase mean is removed
        let trended = DMatrix::from_fn(n, p, |t, _| (t % 12) as f64 + 0.1 * t as f64);
        let out = deseason(&SpatioTemporalFrame::new(line_locs(p), trended).unwrap(), 12).unwrap();
        let slope = (out.obs()[(36, 0)] - out.obs()[(0, 0)]) / 36.0;
        assert!((slope - 0.1).abs() < 1e-12);

        assert!(matches!(
            deseason(&frame, 30),
            Err(Error::PeriodTooLarge { period: 30, n: 48 })
        ));
        assert!(matches!(deseason(&frame, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn deseason_keeps_missing_cells() {
        let mut y = DMatrix::from_fn(24, 2, |t, _| (t % 4) as f64);
        y[(5, 1)] = f64::NAN;
        let out = deseason(&SpatioTemporalFrame::new(line_locs(2), y).unwrap(), 4).unwrap();
        assert!(!out.is_observed(5, 1));
        assert_eq!(out.missing_count(), 1);
        assert!(out.obs().iter().filter(|v| !v.is_nan()).all(|&v| v.abs() < 1e-12));
    }
}
