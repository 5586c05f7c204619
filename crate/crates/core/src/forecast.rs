//! Kriging in time: linear prediction of future latent factors from the
//! block-Toeplitz system of factor lag covariances, inverted recursively
//! with only `d × d` inversions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::lagged_product;
use crate::ensemble::{run_members, EnsembleConfig};
use crate::factors::FactorModelFit;
use crate::linalg::{center_columns, eigen_range, invert_checked, max_abs};
use crate::stdata::{io_err, write_err, LocationSet, SpatioTemporalFrame};
use crate::{Error, Result};

pub const DEFAULT_J0: usize = 6;

const BLOCK_RCOND: f64 = 1e-9;
const INNOVATION_RCOND: f64 = 1e-12;

/// Inverts a block, refusing it when its smallest singular value is
/// negligible against `scale`, the magnitude of the whole matrix.
fn invert_block(m: &DMatrix<f64>, scale: f64, name: &'static str) -> Result<DMatrix<f64>> {
    let smin = m.singular_values().min();
    if smin.is_nan() || smin <= BLOCK_RCOND * scale {
        return Err(Error::SingularBlock(name));
    }
    invert_checked(m, BLOCK_RCOND).ok_or(Error::SingularBlock(name))
}

fn block_scale(blocks: [&DMatrix<f64>; 4]) -> f64 {
    blocks.iter().map(|b| max_abs(b)).fold(0.0, f64::max)
}

fn check_blocks(h11: &DMatrix<f64>, h12: &DMatrix<f64>, h21: &DMatrix<f64>, h22: &DMatrix<f64>) -> Result<()> {
    let (a, b) = (h11.nrows(), h22.nrows());
    if h11.ncols() != a || h22.ncols() != b || h12.shape() != (a, b) || h21.shape() != (b, a) {
        return Err(Error::ShapeMismatch("blocks do not tile a square matrix".into()));
    }
    Ok(())
}

/// Inverse of `[[H₁₁, H₁₂], [H₂₁, H₂₂]]` through `H₁₁⁻¹` and the Schur
/// complement `S = H₂₂ − H₂₁H₁₁⁻¹H₁₂`.
pub fn partitioned_inverse(
    h11: &DMatrix<f64>,
    h12: &DMatrix<f64>,
    h21: &DMatrix<f64>,
    h22: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_blocks(h11, h12, h21, h22)?;
    let (a, b) = (h11.nrows(), h22.nrows());
    let scale = block_scale([h11, h12, h21, h22]);
    let h11_inv = invert_block(h11, scale, "H11")?;
    let s_inv = invert_block(&(h22 - h21 * &h11_inv * h12), scale, "Schur complement of H11")?;
    let left = &h11_inv * h12 * &s_inv;
    let right = &s_inv * h21 * &h11_inv;
    let mut out = DMatrix::zeros(a + b, a + b);
    out.view_mut((0, 0), (a, a))
        .copy_from(&(&h11_inv + &left * h21 * &h11_inv));
    out.view_mut((0, a), (a, b)).copy_from(&(-left));
    out.view_mut((a, 0), (b, a)).copy_from(&(-right));
    out.view_mut((a, a), (b, b)).copy_from(&s_inv);
    Ok(out)
}

/// Evaluates both sides of
/// `(H₂₂ − H₂₁H₁₁⁻¹H₁₂)⁻¹ = H₂₂⁻¹ + H₂₂⁻¹H₂₁(H₁₁ − H₁₂H₂₂⁻¹H₂₁)⁻¹H₁₂H₂₂⁻¹`
/// and returns their largest absolute difference.
pub fn woodbury_identity_check(
    h11: &DMatrix<f64>,
    h12: &DMatrix<f64>,
    h21: &DMatrix<f64>,
    h22: &DMatrix<f64>,
) -> Result<f64> {
    check_blocks(h11, h12, h21, h22)?;
    let scale = block_scale([h11, h12, h21, h22]);
    let h11_inv = invert_block(h11, scale, "H11")?;
    let h22_inv = invert_block(h22, scale, "H22")?;
    let lhs = invert_block(&(h22 - h21 * &h11_inv * h12), scale, "Schur complement of H11")?;
    let inner = invert_block(&(h11 - h12 * &h22_inv * h21), scale, "Schur complement of H22")?;
    let rhs = &h22_inv + &h22_inv * h21 * inner * h12 * &h22_inv;
    Ok(max_abs(&(lhs - rhs)))
}

fn factor_lags(y: &DMatrix<f64>, a: &DMatrix<f64>, max_lag: usize) -> Vec<DMatrix<f64>> {
    let x = center_columns(y) * a;
    (0..=max_lag as i64).map(|k| lagged_product(&x, &x, k)).collect()
}

fn check_lag(max_lag: usize, n: usize) -> Result<()> {
    if 2 * max_lag >= n {
        return Err(Error::LagTooLarge { lag: max_lag, n });
    }
    Ok(())
}

/// `Σ̂_x(k) = Â₁ᵀ Σ̂_{y,1}(k) Â₁` for `k = 0..=max_lag`.
pub fn estimate_sigma_x(
    frame: &SpatioTemporalFrame,
    fit: &FactorModelFit,
    max_lag: usize,
) -> Result<Vec<DMatrix<f64>>> {
    check_lag(max_lag, frame.n())?;
    if !frame.columns_complete(&fit.partition.set1) {
        return Err(Error::MissingData("estimate_sigma_x"));
    }
    Ok(factor_lags(&frame.columns(&fit.partition.set1), &fit.a1_hat, max_lag))
}

/// `W_k`, the covariance of `(x_n; x_{n−1}; …; x_{n−k})`: block `(i, j)`
/// is `Σ_x(j − i)` above the diagonal and `Σ_x(i − j)ᵀ` below.
pub fn assemble_block_toeplitz(sigma_x: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let d = sigma_x[0].nrows();
    let mut w = DMatrix::zeros((k + 1) * d, (k + 1) * d);
    for i in 0..=k {
        for j in 0..=k {
            let blk = if j >= i {
                sigma_x[j - i].clone()
            } else {
                sigma_x[i - j].transpose()
            };
            w.view_mut((i * d, j * d), (d, d)).copy_from(&blk);
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockToeplitzSystem {
    pub sigma_x: Vec<DMatrix<f64>>,
    pub w_inv: DMatrix<f64>,
    pub k: usize,
    pub d: usize,
    /// Largest matrix dimension passed to an inversion while building `w_inv`.
    pub max_inverted_dim: usize,
}

/// `W_{j0}⁻¹` grown one block at a time from `W₀⁻¹ = Σ_x(0)⁻¹`:
/// with `U_k = (Σ_x(k+1); …; Σ_x(1))` and
/// `V_k = (Σ_x(0) − U_kᵀW_k⁻¹U_k)⁻¹`,
/// `W_{k+1}⁻¹ = [[W_k⁻¹ + W_k⁻¹U_kV_kU_kᵀW_k⁻¹, −W_k⁻¹U_kV_k], [−V_kU_kᵀW_k⁻¹, V_k]]`.
pub fn recursive_toeplitz_inverse(sigma_x: &[DMatrix<f64>], j0: usize) -> Result<BlockToeplitzSystem> {
    if sigma_x.len() < j0 + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} lag covariances given, need {}",
            sigma_x.len(),
            j0 + 1
        )));
    }
    let d = sigma_x[0].nrows();
    let s0 = &sigma_x[0];
    let (lo, hi) = eigen_range(s0);
    if hi.is_nan() || hi <= 0.0 || lo <= 1e-10 * hi {
        return Err(Error::SingularBlock("sigma_x(0)"));
    }
    let mut w_inv = invert_checked(s0, INNOVATION_RCOND).ok_or(Error::SingularBlock("sigma_x(0)"))?;
    let mut max_inverted_dim = d;
    for k in 0..j0 {
        let mut u = DMatrix::zeros((k + 1) * d, d);
        for i in 0..=k {
            u.view_mut((i * d, 0), (d, d)).copy_from(&sigma_x[k + 1 - i]);
        }
        let wu = &w_inv * &u;
        let schur = s0 - u.transpose() * &wu;
        let v = invert_checked(&schur, INNOVATION_RCOND).ok_or(Error::SingularInnovation(k))?;
        max_inverted_dim = max_inverted_dim.max(schur.nrows());
        let m = (k + 1) * d;
        let wuv = &wu * &v;
        let mut next = DMatrix::zeros(m + d, m + d);
        next.view_mut((0, 0), (m, m))
            .copy_from(&(&w_inv + &wuv * wu.transpose()));
        next.view_mut((0, m), (m, d)).copy_from(&(-&wuv));
        next.view_mut((m, 0), (d, m)).copy_from(&(-wuv.transpose()));
        next.view_mut((m, m), (d, d)).copy_from(&v);
        w_inv = next;
    }
    Ok(BlockToeplitzSystem {
        sigma_x: sigma_x.to_vec(),
        w_inv,
        k: j0,
        d,
        max_inverted_dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub j0: usize,
    /// Added to the diagonal of `Σ̂_x(0)` when set.
    pub ridge: Option<f64>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            j0: DEFAULT_J0,
            ridge: None,
        }
    }
}

/// `x̂_n(j) = R W_{j0}⁻¹ X̂` for one set, mapped back through the loadings.
fn forecast_set(y: &DMatrix<f64>, a: &DMatrix<f64>, j: usize, opts: &ForecastOptions) -> Result<DVector<f64>> {
    let (n, d) = (y.nrows(), a.ncols());
    let j0 = opts.j0;
    let mut sigma = factor_lags(y, a, j + j0);
    if let Some(lambda) = opts.ridge {
        sigma[0] += DMatrix::identity(d, d) * lambda;
    }
    let sys = recursive_toeplitz_inverse(&sigma, j0)?;
    let mut r = DMatrix::zeros(d, (j0 + 1) * d);
    for i in 0..=j0 {
        r.view_mut((0, i * d), (d, d)).copy_from(&sigma[j + i]);
    }
    let mut x = DVector::zeros((j0 + 1) * d);
    for i in 0..=j0 {
        let xt = a.transpose() * y.row(n - 1 - i).transpose();
        x.rows_mut(i * d, d).copy_from(&xt);
    }
    Ok(a * (r * sys.w_inv * x))
}

/// `j`-step-ahead prediction `ŷ_n(j)` at every site.
pub fn forecast(
    frame: &SpatioTemporalFrame,
    fit: &FactorModelFit,
    j: usize,
    opts: &ForecastOptions,
) -> Result<DVector<f64>> {
    if j == 0 {
        return Err(Error::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    check_lag(opts.j0 + j, frame.n())?;
    if !frame.is_complete() {
        return Err(Error::MissingData("forecast"));
    }
    let mut out = DVector::zeros(frame.p());
    for (set, a) in [(&fit.partition.set1, &fit.a1_hat), (&fit.partition.set2, &fit.a2_hat)] {
        let pred = forecast_set(&frame.columns(set), a, j, opts)?;
        for (r, &i) in set.iter().enumerate() {
            out[i] = pred[r];
        }
    }
    Ok(out)
}

/// Forecasts for several horizons, one row per horizon.
pub fn forecast_horizons(
    frame: &SpatioTemporalFrame,
    fit: &FactorModelFit,
    horizons: &[usize],
    opts: &ForecastOptions,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(horizons.len(), frame.p());
    for (r, &j) in horizons.iter().enumerate() {
        out.set_row(r, &forecast(frame, fit, j, opts)?.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub horizons: Vec<usize>,
    /// Mean over members, one row per horizon.
    pub aggregated: DMatrix<f64>,
    /// The first member's forecasts.
    pub lead: DMatrix<f64>,
}

/// Per-site mean of member forecasts over random partitions.
pub fn forecast_ensemble(
    frame: &SpatioTemporalFrame,
    config: &EnsembleConfig,
    horizons: &[usize],
    opts: &ForecastOptions,
) -> Result<EnsembleForecast> {
    let (_, members) = run_members(frame, config, |_, fit| forecast_horizons(frame, fit, horizons, opts))?;
    let lead = members[0].clone();
    Ok(EnsembleForecast {
        horizons: horizons.to_vec(),
        aggregated: crate::ensemble::mean_of(&members),
        lead,
    })
}

/// Writes `horizon,id,value`.
pub fn save_forecasts(horizons: &[usize], values: &DMatrix<f64>, locs: &LocationSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(["horizon", "id", "value"])
        .map_err(|e| write_err(path, e))?;
    for (r, h) in horizons.iter().enumerate() {
        for (i, id) in locs.ids().iter().enumerate() {
            w.write_record([h.to_string(), id.clone(), values[(r, i)].to_string()])
                .map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TauPolicy;
    use crate::factors::{fit_factors, FitOptions};
    use crate::stdata::{random_partition, Partition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(dim, dim, |_, _| normal(rng));
        &b * b.transpose() + DMatrix::identity(dim, dim) * dim as f64 * 0.1
    }

    fn split(h: &DMatrix<f64>, a: usize) -> [DMatrix<f64>; 4] {
        let b = h.nrows() - a;
        [
            h.view((0, 0), (a, a)).into_owned(),
            h.view((0, a), (a, b)).into_owned(),
            h.view((a, 0), (b, a)).into_owned(),
            h.view((a, a), (b, b)).into_owned(),
        ]
    }

    #[test]
    fn partitioned_inverse_cases() {
        let [h11, h12, h21, h22] = split(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), 1);
        let inv = partitioned_inverse(&h11, &h12, &h21, &h22).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0]);
        assert!((inv - expected).abs().max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(3, &mut rng);
        let b = random_spd(2, &mut rng);
        let inv = partitioned_inverse(&a, &DMatrix::zeros(3, 2), &DMatrix::zeros(2, 3), &b).unwrap();
        assert!((inv.view((0, 0), (3, 3)) - a.try_inverse().unwrap()).abs().max() < 1e-12);
        assert!(inv.view((0, 3), (3, 2)).abs().max() == 0.0);

        let h = random_spd(6, &mut rng);
        let [h11, h12, h21, h22] = split(&h, 4);
        let inv = partitioned_inverse(&h11, &h12, &h21, &h22).unwrap();
        assert!((inv - h.try_inverse().unwrap()).abs().max() < 1e-10);
    }

    #[test]
    fn woodbury_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(2, &mut rng);
        let b = random_spd(2, &mut rng);
        let z = DMatrix::zeros(2, 2);
        assert_eq!(woodbury_identity_check(&a, &z, &z, &b).unwrap(), 0.0);

        let h = random_spd(8, &mut rng);
        let [h11, h12, h21, h22] = split(&h, 5);
        assert!(woodbury_identity_check(&h11, &h12, &h21, &h22).unwrap() <= 1e-10);

        // [[1, 1], [1, 1 + 1e-10]]: Schur complement of H11 is 1e-10
        let one = DMatrix::from_element(1, 1, 1.0);
        let tail = DMatrix::from_element(1, 1, 1.0 + 1e-10);
        assert!(matches!(
            woodbury_identity_check(&one, &one, &one, &tail),
            Err(Error::SingularBlock(_))
        ));
    }

    #[test]
    fn partitioned_agrees_with_woodbury_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_spd(7, &mut rng);
        let [h11, h12, h21, h22] = split(&h, 4);
        let inv = partitioned_inverse(&h11, &h12, &h21, &h22).unwrap();
        let h22_inv = h22.clone().try_inverse().unwrap();
        let inner = (&h11 - &h12 * &h22_inv * &h21).try_inverse().unwrap();
        let rhs = &h22_inv + &h22_inv * &h21 * inner * &h12 * &h22_inv;
        assert!((inv.view((4, 4), (3, 3)) - rhs).abs().max() < 1e-10);
    }

    fn geometric_lags(d: usize, count: usize) -> Vec<DMatrix<f64>> {
        (0..count)
            .map(|k| DMatrix::identity(d, d) * 0.5f64.powi(k as i32))
            .collect()
    }

    #[test]
    fn recursion_base_case_and_dense_oracle() {
        let lags = geometric_lags(3, 7);
        let base = recursive_toeplitz_inverse(&lags, 0).unwrap();
        assert_eq!(base.w_inv, lags[0].clone().try_inverse().unwrap());
        let sys = recursive_toeplitz_inverse(&lags, 6).unwrap();
        let dense = assemble_block_toeplitz(&lags, 6).try_inverse().unwrap();
        assert_eq!(sys.w_inv.nrows(), 21);
        assert!((&sys.w_inv - dense).abs().max() <= 1e-10);
        assert_eq!(sys.max_inverted_dim, 3);
    }

    fn var1_lags(d: usize, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
        // Σ(k) = Φᵏ Γ for a stable VAR(1) with Γ solving Γ = ΦΓΦᵀ + I.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = DMatrix::from_fn(d, d, |_, _| 0.3 * normal(&mut rng) / (d as f64).sqrt());
        let mut gamma = DMatrix::identity(d, d);
        for _ in 0..500 {
            gamma = &phi * &gamma * phi.transpose() + DMatrix::identity(d, d);
        }
        let mut out = vec![gamma.clone()];
        for _ in 1..count {
            let next = &phi * out.last().unwrap();
            out.push(next);
        }
        out
    }

    #[test]
    fn recursion_matches_dense_for_var_lags() {
        for d in [1, 2, 5] {
            for j0 in [1, 4, 10] {
                let lags = var1_lags(d, j0 + 1, d as u64 * 31 + j0 as u64);
                let sys = recursive_toeplitz_inverse(&lags, j0).unwrap();
                let w = assemble_block_toeplitz(&lags, j0);
                let eye = DMatrix::identity(w.nrows(), w.nrows());
                assert!((&sys.w_inv * w - eye).abs().max() <= 1e-8);
                assert_eq!(sys.max_inverted_dim, d);
            }
        }
    }

    #[test]
    fn reversed_lags_reverse_blocks() {
        let (d, k) = (2, 4);
        let lags = var1_lags(d, k + 1, 9);
        let rev: Vec<DMatrix<f64>> = lags.iter().map(|m| m.transpose()).collect();
        let a = recursive_toeplitz_inverse(&lags, k).unwrap().w_inv;
        let b = recursive_toeplitz_inverse(&rev, k).unwrap().w_inv;
        for i in 0..=k {
            for j in 0..=k {
                let x = a.view(((k - i) * d, (k - j) * d), (d, d));
                let y = b.view((i * d, j * d), (d, d));
                assert!((x - y).abs().max() < 1e-10);
            }
        }
    }

    fn factor_frame(x: &DMatrix<f64>, p: usize, noise: f64, seed: u64) -> SpatioTemporalFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = x.nrows();
        let coords: Vec<[f64; 2]> = (0..p)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let a = DMatrix::from_fn(p, x.ncols(), |i, k| coords[i][k % 2] + 1.0 + k as f64);
        let y = x * a.transpose() + DMatrix::from_fn(n, p, |_, _| noise * normal(&mut rng));
        SpatioTemporalFrame::new(LocationSet::from_coords(coords).unwrap(), y).unwrap()
    }

    #[test]
    fn sigma_x_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4000;
        let mut x = DMatrix::zeros(n, 1);
        for t in 1..n {
            x[(t, 0)] = -0.8 * x[(t - 1, 0)] + normal(&mut rng);
        }
        let frame = factor_frame(&x, 10, 0.0, 5);
        let part = random_partition(10, 1).unwrap();
        let fit = fit_factors(
            &frame,
            &part,
            &FitOptions {
                d_override: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let s = estimate_sigma_x(&frame, &fit, 3).unwrap();
        assert!((s[1][(0, 0)] / s[0][(0, 0)] + 0.8).abs() < 0.05);
        assert!(s[0][(0, 0)] > 0.0);
        assert!(matches!(
            estimate_sigma_x(&frame, &fit, 2000),
            Err(Error::LagTooLarge { .. })
        ));

        // white noise: lag covariances inside a 5σ null band
        let y = DMatrix::from_fn(n, 6, |_, _| normal(&mut rng));
        let wn = SpatioTemporalFrame::new(
            LocationSet::from_coords((0..6).map(|i| [i as f64, 0.0]).collect()).unwrap(),
            y,
        )
        .unwrap();
        let part = Partition::new(vec![0, 1, 2], vec![3, 4, 5], 6).unwrap();
        let fit = fit_factors(
            &wn,
            &part,
            &FitOptions {
                d_override: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let s = estimate_sigma_x(&wn, &fit, 3).unwrap();
        for k in 1..=3 {
            assert!(s[k][(0, 0)].abs() < 5.0 * s[0][(0, 0)] / (n as f64).sqrt());
        }
    }

    #[test]
    fn zero_window_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 300;
        let mut x = DMatrix::zeros(n, 2);
        for t in 1..n {
            x[(t, 0)] = 0.7 * x[(t - 1, 0)] + normal(&mut rng);
            x[(t, 1)] = -0.4 * x[(t - 1, 1)] + normal(&mut rng);
        }
        let frame = factor_frame(&x, 12, 0.5, 7);
        let part = random_partition(12, 2).unwrap();
        let fit = fit_factors(
            &frame,
            &part,
            &FitOptions {
                d_override: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        let opts = ForecastOptions { j0: 0, ridge: None };
        let pred = forecast(&frame, &fit, 2, &opts).unwrap();
        let s = estimate_sigma_x(&frame, &fit, 2).unwrap();
        let yn = frame.columns(&part.set1).row(n - 1).transpose();
        let closed = &fit.a1_hat * (&s[2] * s[0].clone().try_inverse().unwrap() * fit.a1_hat.transpose() * yn);
        for (r, &i) in part.set1.iter().enumerate() {
            assert!((pred[i] - closed[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn white_noise_forecast_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 2000;
        let y = DMatrix::from_fn(n, 10, |_, _| normal(&mut rng));
        let frame = SpatioTemporalFrame::new(
            LocationSet::from_coords((0..10).map(|i| [i as f64, 0.0]).collect()).unwrap(),
            y,
        )
        .unwrap();
        let part = random_partition(10, 3).unwrap();
        let fit = fit_factors(
            &frame,
            &part,
            &FitOptions {
                d_override: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        let pred = forecast(&frame, &fit, 1, &ForecastOptions::default()).unwrap();
        // each coordinate is a sum of O(n^-1/2) lag covariances times O(1) data
        assert!(pred.norm_squared() / 10.0 < 0.05);
    }

    #[test]
    fn alternating_factor_is_recovered() {
        let n = 2000;
        let x = DMatrix::from_fn(n, 1, |t, _| if t % 2 == 0 { 1.0 } else { -1.0 });
        let frame = factor_frame(&x, 8, 0.0, 9);
        let part = random_partition(8, 4).unwrap();
        let fit = fit_factors(
            &frame,
            &part,
            &FitOptions {
                d_override: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let opts = ForecastOptions {
            j0: 20,
            ridge: Some(1e-3),
        };
        let last = frame.obs().row(n - 1).transpose();
        for j in [1usize, 2] {
            let pred = forecast(&frame, &fit, j, &opts).unwrap();
            let truth = &last * if j % 2 == 1 { -1.0 } else { 1.0 };
            assert!((pred - truth).abs().max() < 1e-2, "horizon {j}");
        }
    }

    #[test]
    fn single_member_ensemble_equals_forecast() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 200;
        let mut x = DMatrix::zeros(n, 1);
        for t in 1..n {
            x[(t, 0)] = 0.6 * x[(t - 1, 0)] + normal(&mut rng);
        }
        let frame = factor_frame(&x, 10, 0.5, 11);
        let cfg = EnsembleConfig::new(1, TauPolicy::Fixed(0.0), 5);
        let ens = forecast_ensemble(&frame, &cfg, &[1, 2], &ForecastOptions::default()).unwrap();
        let part = random_partition(10, cfg.member_seeds()[0]).unwrap();
        let fit = fit_factors(&frame, &part, &FitOptions::default()).unwrap();
        let direct = forecast_horizons(&frame, &fit, &[1, 2], &ForecastOptions::default()).unwrap();
        assert_eq!(ens.aggregated, direct);
        assert_eq!(ens.lead, direct);
    }
}
