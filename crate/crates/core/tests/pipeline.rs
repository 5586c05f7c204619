use latent_krig::factors::{fit_factors, subspace_distance, FactorModelFit, FitOptions};
use latent_krig::forecast::{forecast_horizons, ForecastOptions};
use latent_krig::kriging::{impute_missing, krige_space, ImputeOptions, KernelFamily, KernelSpec};
use latent_krig::regress::detrend;
use latent_krig::simbench::{latent_covariance, loadings, mspe, simulate, SimConfig};
use latent_krig::stdata::{load_frame, random_partition, save_frame, DistanceMetric, SpatioTemporalFrame};
use latent_krig::tuning::select_bandwidth;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn csv_round_trip_preserves_frame() {
    let sim = simulate(&SimConfig::new(30, 12, 2)).unwrap();
    let mut y = sim.frame.obs().clone();
    y[(4, 3)] = f64::NAN;
    let frame = SpatioTemporalFrame::new(sim.frame.locations().clone(), y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (locs, obs) = (dir.path().join("locations.csv"), dir.path().join("observations.csv"));
    save_frame(&frame, &locs, &obs, None).unwrap();
    let back = load_frame(&locs, &obs, None, DistanceMetric::Euclidean).unwrap();
    assert_eq!(back.missing(), frame.missing());
    assert_eq!(back.locations(), frame.locations());
    for (a, b) in back.obs().iter().zip(frame.obs().iter()) {
        assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
    }
}

#[test]
fn detrend_impute_fit_predict() {
    let (n, p) = (240, 40);
    let sim = simulate(&SimConfig::new(n, p, 31)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) }))
        .collect();
    let betas: Vec<[f64; 2]> = sim
        .frame
        .locations()
        .coords()
        .iter()
        .map(|c| [1.0 + c[0], 2.0 * c[1]])
        .collect();
    let mut y = sim.frame.obs().clone();
    for i in 0..p {
        for t in 0..n {
            y[(t, i)] += betas[i][0] * z[i][(t, 0)] + betas[i][1] * z[i][(t, 1)];
            if rng.random::<f64>() < 0.03 {
                y[(t, i)] = f64::NAN;
            }
        }
    }
    let frame = SpatioTemporalFrame::new(sim.frame.locations().clone(), y)
        .unwrap()
        .with_covariates(vec!["one".into(), "z".into()], z)
        .unwrap();

    let reg = detrend(&frame).unwrap();
    for (i, b) in betas.iter().enumerate() {
        assert!((reg.betas[(i, 0)] - b[0]).abs() < 0.5);
        assert!((reg.betas[(i, 1)] - b[1]).abs() < 0.5);
    }
    let filled = impute_missing(&reg.residual_frame, &ImputeOptions::default()).unwrap();
    assert!(filled.frame.is_complete());

    let part = random_partition(p, 7).unwrap();
    let fit = fit_factors(&filled.frame, &part, &FitOptions::with_tau(0.2)).unwrap();
    assert_eq!(fit.d_hat, 3);
    let d1 = subspace_distance(&fit.a1_hat, &sim.loadings.select_rows(&part.set1)).unwrap();
    assert!(d1 < 0.35, "distance {d1}");

    let h = select_bandwidth(&fit.xi_hat, filled.frame.locations(), KernelFamily::Gaussian).unwrap();
    let kernel = KernelSpec::gaussian(h).unwrap();
    let pred = krige_space(&fit.xi_hat, filled.frame.locations(), sim.holdout_coords[0], &kernel).unwrap();
    let truth = sim.holdout_xi.column(0);
    let err = (&pred.xi_hat_series - truth).norm_squared() / n as f64;
    let var = truth.map(|v| v * v).sum() / n as f64;
    assert!(err < var, "spatial error {err} vs signal {var}");

    let fc = forecast_horizons(&filled.frame, &fit, &[1], &ForecastOptions::default()).unwrap();
    assert!(fc.iter().all(|v| v.is_finite()));
}

#[test]
fn model_document_survives_json() {
    let sim = simulate(&SimConfig::new(50, 16, 6)).unwrap();
    let fit = fit_factors(
        &sim.frame,
        &random_partition(16, 2).unwrap(),
        &FitOptions::with_tau(1.0),
    )
    .unwrap();
    let json = serde_json::to_string(&fit.to_document()).unwrap();
    let back = FactorModelFit::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.xi_hat, fit.xi_hat);
    assert_eq!(back.a1_hat, fit.a1_hat);
    assert_eq!(back.project(sim.frame.obs()), fit.project(sim.frame.obs()));
}

#[test]
fn latent_covariance_is_spanned_by_the_loadings() {
    let grid: Vec<[f64; 2]> = (0..15)
        .flat_map(|i| (0..15).map(move |j| [-1.0 + i as f64 / 7.0, -1.0 + j as f64 / 7.0]))
        .collect();
    let sigma = latent_covariance(&grid);
    let eig = sigma.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    assert!(eig.eigenvalues[order[3]].abs() < 1e-10 * eig.eigenvalues[order[0]]);
    assert!(eig.eigenvalues[order[2]] > 1e-3 * eig.eigenvalues[order[0]]);
    let top = eig.eigenvectors.select_columns(&order[..3]);
    let dist = subspace_distance(&top, &loadings(&grid)).unwrap();
    // the distance is a square root, so it resolves only to about sqrt(eps)
    assert!(dist < 1e-6, "distance {dist}");
}

#[test]
fn forecast_beats_the_zero_predictor_on_average() {
    let (mut fc_err, mut zero_err) = (0.0, 0.0);
    for seed in 0..20u64 {
        let sim = simulate(&SimConfig::new(400, 40, 100 + seed)).unwrap();
        let fit = fit_factors(&sim.frame, &random_partition(40, seed).unwrap(), &FitOptions::default()).unwrap();
        let fc = forecast_horizons(&sim.frame, &fit, &[1], &ForecastOptions::default()).unwrap();
        let target = sim.future_y.rows(0, 1).into_owned();
        fc_err += mspe(&fc, &target).unwrap();
        zero_err += mspe(&DMatrix::zeros(1, 40), &target).unwrap();
    }
    assert!(fc_err < zero_err, "forecast {fc_err} vs zero {zero_err}");
}
