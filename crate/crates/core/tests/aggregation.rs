use std::time::Instant;

use latent_krig::ensemble::{
    aggregate_fit, aggregate_over_partitions, divide_and_conquer_fit, EnsembleConfig, TauPolicy,
};
use latent_krig::factors::{fit_factors, FitOptions};
use latent_krig::simbench::{simulate, SimConfig};
use latent_krig::stdata::{random_partition, LocationSet, Partition, SpatioTemporalFrame};
use latent_krig::with_threads;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn all_partitions(p: usize) -> Vec<Partition> {
    (0u32..1 << p)
        .filter(|m| m.count_ones() as usize == p / 2)
        .map(|mask| {
            let set1 = (0..p).filter(|&i| mask & (1 << i) != 0).collect();
            let set2 = (0..p).filter(|&i| mask & (1 << i) == 0).collect();
            Partition::new(set1, set2, p).unwrap()
        })
        .collect()
}

fn factor_frame(n: usize, p: usize, seed: u64) -> (SpatioTemporalFrame, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..p).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let a = DVector::from_fn(p, |_, _| 0.5 + rng.random::<f64>());
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xi = &x * a.transpose();
    let y = &xi + DMatrix::from_fn(n, p, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal));
    (
        SpatioTemporalFrame::new(LocationSet::from_coords(coords).unwrap(), y).unwrap(),
        xi,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enumerated_aggregation_never_increases_deviation(seed in any::<u64>(), six in any::<bool>(), tau in 0.0f64..5.0) {
        let p = if six { 6 } else { 4 };
        let (frame, xi) = factor_frame(10, p, seed);
        let partitions = all_partitions(p);
        prop_assert_eq!(partitions.len(), if six { 20 } else { 6 });
        let (agg, fits) = aggregate_over_partitions(&frame, &partitions, &FitOptions::with_tau(tau)).unwrap();
        for target in [frame.obs(), &xi] {
            let members = fits.iter().map(|f| (&f.xi_hat - target).norm_squared()).sum::<f64>() / fits.len() as f64;
            let aggregated = (&agg - target).norm_squared();
            prop_assert!(aggregated <= members * (1.0 + 1e-12), "{} > {}", aggregated, members);
        }
    }
}

#[test]
fn single_member_ensemble_is_the_member_fit() {
    let sim = simulate(&SimConfig::new(60, 20, 3)).unwrap();
    let config = EnsembleConfig::new(1, TauPolicy::Fixed(0.3), 11);
    let ens = aggregate_fit(&sim.frame, &config).unwrap();
    let part = random_partition(20, config.member_seeds()[0]).unwrap();
    let fit = fit_factors(&sim.frame, &part, &FitOptions::with_tau(0.3)).unwrap();
    assert_eq!(ens.xi_tilde, fit.xi_hat);
    assert_eq!(ens.d_hats, vec![fit.d_hat]);
}

#[test]
fn ensemble_is_identical_across_thread_counts() {
    let sim = simulate(&SimConfig::new(80, 30, 12)).unwrap();
    let config = EnsembleConfig::new(
        12,
        TauPolicy::CvOnce {
            grid: vec![0.0, 0.5, 2.0],
            folds: 3,
            kernel: Default::default(),
        },
        99,
    );
    let run = |t| with_threads(Some(t), || aggregate_fit(&sim.frame, &config).unwrap());
    let base = run(1);
    for t in [2, 4, 8] {
        let other = run(t);
        assert_eq!(other.tau, base.tau);
        assert!(other
            .xi_tilde
            .iter()
            .zip(base.xi_tilde.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(other.d_hats, base.d_hats);
    }
}

#[test]
fn divide_and_conquer_beats_the_full_fit_at_scale() {
    let sim = simulate(&SimConfig::new(200, 400, 8)).unwrap();
    let config = EnsembleConfig::new(1, TauPolicy::Fixed(0.0), 5);
    let part = random_partition(400, 1).unwrap();
    let time = |f: &dyn Fn()| {
        (0..3)
            .map(|_| {
                let start = Instant::now();
                f();
                start.elapsed()
            })
            .min()
            .unwrap()
    };
    let full = time(&|| {
        fit_factors(&sim.frame, &part, &FitOptions::default()).unwrap();
    });
    let blocked = time(&|| {
        let ens = divide_and_conquer_fit(&sim.frame, 50, &config).unwrap();
        assert_eq!(ens.per_location_counts, vec![1; 400]);
    });
    assert!(blocked < full, "blocked {blocked:?} vs full {full:?}");
}
