//! Aggregation of latent-field estimates over random partitions, and the
//! block-wise divide-and-conquer variant for large `p`.
//!
//! Members are fitted in parallel and reduced in member-index order, so
//! results do not depend on the number of worker threads.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::factors::{to_rows, FactorModelFit, FactorProblem, FitOptions};
use crate::kriging::KernelFamily;
use crate::stdata::{random_partition, Partition, SpatioTemporalFrame};
use crate::tuning::select_tau;
use crate::{derive_seed, Error, Result};

pub const DEFAULT_MEMBERS: usize = 100;

/// How each member's penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    Fixed(f64),
    /// Cross-validate once with the first member's seed and reuse the
    /// selected `τ` for every member.
    CvOnce {
        grid: Vec<f64>,
        folds: usize,
        kernel: KernelFamily,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub members: usize,
    pub tau: TauPolicy,
    /// `k0`, `p*` and `d` override; the `tau` field is ignored.
    pub options: FitOptions,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn new(members: usize, tau: TauPolicy, seed: u64) -> Self {
        EnsembleConfig {
            members,
            tau,
            options: FitOptions::default(),
            seed,
        }
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        (0..self.members as u64).map(|j| derive_seed(self.seed, j)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        Ok(())
    }
}

/// Resolves a penalty policy to a single `τ`.
pub fn resolve_tau(frame: &SpatioTemporalFrame, policy: &TauPolicy, options: &FitOptions, seed: u64) -> Result<f64> {
    match policy {
        TauPolicy::Fixed(tau) => Ok(*tau),
        TauPolicy::CvOnce { grid, folds, kernel } => Ok(select_tau(frame, grid, *folds, seed, options, *kernel)?.tau),
    }
}

/// Fits one member per seed on a random partition and maps each fit
/// through `f`. Outputs are in member order.
pub fn run_members<T, F>(frame: &SpatioTemporalFrame, config: &EnsembleConfig, f: F) -> Result<(f64, Vec<T>)>
where
    T: Send,
    F: Fn(usize, &FactorModelFit) -> Result<T> + Sync,
{
    config.validate()?;
    let seeds = config.member_seeds();
    let tau = resolve_tau(frame, &config.tau, &config.options, seeds[0])?;
    let out = seeds
        .par_iter()
        .enumerate()
        .map(|(j, &seed)| {
            let part = random_partition(frame.p(), seed)?;
            let fit = FactorProblem::new(frame, &part, &config.options)?.fit(tau)?;
            f(j, &fit)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok((tau, out))
}

/// `ξ̃ = J⁻¹ Σ_j ξ̂⁽ʲ⁾` over random partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFit {
    pub members: usize,
    pub member_seeds: Vec<u64>,
    pub xi_tilde: DMatrix<f64>,
    pub per_location_counts: Vec<usize>,
    pub d_hats: Vec<usize>,
    pub tau: f64,
    /// The first member's fit, kept for single-partition comparisons.
    pub lead: Option<FactorModelFit>,
}

impl EnsembleFit {
    pub fn to_document(&self) -> EnsembleDocument {
        EnsembleDocument {
            members: self.members,
            member_seeds: self.member_seeds.clone(),
            tau: self.tau,
            d_hats: self.d_hats.clone(),
            per_location_counts: self.per_location_counts.clone(),
            xi_tilde: to_rows(&self.xi_tilde),
        }
    }

    pub fn d_hat_mean(&self) -> f64 {
        self.d_hats.iter().sum::<usize>() as f64 / self.d_hats.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub members: usize,
    pub member_seeds: Vec<u64>,
    pub tau: f64,
    pub d_hats: Vec<usize>,
    pub per_location_counts: Vec<usize>,
    pub xi_tilde: Vec<Vec<f64>>,
}

/// Entrywise mean of equally shaped matrices, summed in slice order.
pub fn mean_of(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for m in mats {
        acc += m;
    }
    acc / mats.len() as f64
}

pub fn aggregate_fit(frame: &SpatioTemporalFrame, config: &EnsembleConfig) -> Result<EnsembleFit> {
    let (tau, fits) = run_members(frame, config, |j, fit| {
        Ok((fit.xi_hat.clone(), fit.d_hat, (j == 0).then(|| fit.clone())))
    })?;
    let mut lead = None;
    let mut latents = Vec::with_capacity(fits.len());
    let mut d_hats = Vec::with_capacity(fits.len());
    for (xi, d, first) in fits {
        latents.push(xi);
        d_hats.push(d);
        if first.is_some() {
            lead = first;
        }
    }
    Ok(EnsembleFit {
        members: config.members,
        member_seeds: config.member_seeds(),
        xi_tilde: mean_of(&latents),
        per_location_counts: vec![config.members; frame.p()],
        d_hats,
        tau,
        lead,
    })
}

/// Aggregates over an explicit list of partitions, returning `ξ̃` and the
/// member fits.
pub fn aggregate_over_partitions(
    frame: &SpatioTemporalFrame,
    partitions: &[Partition],
    options: &FitOptions,
) -> Result<(DMatrix<f64>, Vec<FactorModelFit>)> {
    if partitions.is_empty() {
        return Err(Error::InvalidArgument("no partitions to aggregate".into()));
    }
    let fits = partitions
        .par_iter()
        .map(|part| FactorProblem::new(frame, part, options)?.fit(options.tau))
        .collect::<Result<Vec<_>>>()?;
    let latents: Vec<DMatrix<f64>> = fits.iter().map(|f| f.xi_hat.clone()).collect();
    Ok((mean_of(&latents), fits))
}

/// Splits a shuffled `0..p` into `⌈p/q⌉` blocks whose sizes differ by at most one.
fn blocks(p: usize, q: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = p.div_ceil(q);
    let (base, extra) = (p / count, p % count);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 0..count {
        let len = base + usize::from(b < extra);
        let mut block = order[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    out
}

/// Block-wise fitting: each block of at most `q` sites is paired `J` times
/// with `q` random companions from the rest, fitted on the `2q`-site
/// subframe, and only the block's own estimates are kept and averaged.
pub fn divide_and_conquer_fit(frame: &SpatioTemporalFrame, q: usize, config: &EnsembleConfig) -> Result<EnsembleFit> {
    config.validate()?;
    let p = frame.p();
    if 2 * q < 4 || 2 * q > p {
        return Err(Error::BlockTooLarge { q, p });
    }
    let blocks = blocks(p, q, config.seed);
    let j = config.members;
    let jobs: Vec<(usize, u64)> = (0..blocks.len() * j)
        .map(|k| (k / j, derive_seed(config.seed, k as u64 + 1)))
        .collect();

    let subframe = |b: usize, seed: u64| {
        let block = &blocks[b];
        let mut rest: Vec<usize> = (0..p).filter(|i| block.binary_search(i).is_err()).collect();
        rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut cols = block.clone();
        cols.extend_from_slice(&rest[..q]);
        let part = Partition::new(
            (0..block.len()).collect(),
            (block.len()..block.len() + q).collect(),
            cols.len(),
        );
        (frame.select_locations(&cols), part)
    };

    let tau = match &config.tau {
        TauPolicy::Fixed(t) => *t,
        policy => {
            let (sub, _) = subframe(jobs[0].0, jobs[0].1);
            resolve_tau(&sub, policy, &config.options, jobs[0].1)?
        }
    };

    let results = jobs
        .par_iter()
        .map(|&(b, seed)| {
            let (sub, part) = subframe(b, seed);
            let fit = FactorProblem::new(&sub, &part?, &config.options)?.fit(tau)?;
            let len = blocks[b].len();
            Ok((fit.xi_hat.columns(0, len).into_owned(), fit.d_hat))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc = DMatrix::zeros(frame.n(), p);
    let mut counts = vec![0usize; p];
    let mut d_hats = Vec::with_capacity(results.len());
    for (&(b, _), (xi, d)) in jobs.iter().zip(&results) {
        for (c, &i) in blocks[b].iter().enumerate() {
            let mut col = acc.column_mut(i);
            col += xi.column(c);
            counts[i] += 1;
        }
        d_hats.push(*d);
    }
    for (i, &c) in counts.iter().enumerate() {
        let mut col = acc.column_mut(i);
        col /= c as f64;
    }
    Ok(EnsembleFit {
        members: j,
        member_seeds: jobs.iter().map(|&(_, s)| s).collect(),
        xi_tilde: acc,
        per_location_counts: counts,
        d_hats,
        tau,
        lead: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::fit_factors;
    use crate::stdata::LocationSet;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn frame(n: usize, p: usize, seed: u64) -> SpatioTemporalFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<[f64; 2]> = (0..p)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = DMatrix::from_fn(p, 2, |i, k| coords[i][k] + 0.5);
        let y = &x * a.transpose() + DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        SpatioTemporalFrame::new(LocationSet::from_coords(coords).unwrap(), y).unwrap()
    }

    #[test]
    fn single_member_is_the_member() {
        let f = frame(40, 12, 1);
        let cfg = EnsembleConfig::new(1, TauPolicy::Fixed(0.2), 7);
        let ens = aggregate_fit(&f, &cfg).unwrap();
        let part = random_partition(12, cfg.member_seeds()[0]).unwrap();
        let single = fit_factors(&f, &part, &FitOptions::with_tau(0.2)).unwrap();
        assert_eq!(ens.xi_tilde, single.xi_hat);
        assert_eq!(ens.lead.unwrap(), single);
        assert_eq!(ens.per_location_counts, vec![1; 12]);
    }

    #[test]
    fn seeds_are_reproducible() {
        let f = frame(40, 12, 2);
        let cfg = EnsembleConfig::new(5, TauPolicy::Fixed(0.0), 3);
        let a = aggregate_fit(&f, &cfg).unwrap();
        let b = aggregate_fit(&f, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d_hats.len(), 5);
    }

    #[test]
    fn blocks_cover_everything_once() {
        let b = blocks(23, 5, 4);
        assert_eq!(b.len(), 5);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(b.iter().all(|blk| blk.len() == 4 || blk.len() == 5));
    }

    #[test]
    fn divide_and_conquer_counts() {
        let f = frame(50, 24, 5);
        let cfg = EnsembleConfig::new(3, TauPolicy::Fixed(0.0), 11);
        let ens = divide_and_conquer_fit(&f, 5, &cfg).unwrap();
        assert_eq!(ens.per_location_counts, vec![3; 24]);
        assert!(ens.xi_tilde.iter().all(|v| v.is_finite()));
        assert!(matches!(
            divide_and_conquer_fit(&f, 13, &cfg),
            Err(Error::BlockTooLarge { .. })
        ));
        assert!(matches!(
            divide_and_conquer_fit(&f, 1, &cfg),
            Err(Error::BlockTooLarge { .. })
        ));
    }

    #[test]
    fn half_blocks_reduce_to_full_partition_fits() {
        let f = frame(60, 12, 6);
        let cfg = EnsembleConfig::new(2, TauPolicy::Fixed(0.0), 2);
        let ens = divide_and_conquer_fit(&f, 6, &cfg).unwrap();
        let b = blocks(12, 6, 2);
        let part = Partition::new(b[0].clone(), b[1].clone(), 12).unwrap();
        let full = fit_factors(&f, &part, &FitOptions::default()).unwrap();
        let swapped = fit_factors(&f, &part.swap(), &FitOptions::default()).unwrap();
        for &i in &b[0] {
            assert!((ens.xi_tilde.column(i) - full.xi_hat.column(i)).abs().max() < 1e-10);
        }
        for &i in &b[1] {
            assert!((ens.xi_tilde.column(i) - swapped.xi_hat.column(i)).abs().max() < 1e-10);
        }
    }
}
