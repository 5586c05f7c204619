//! Replicated experiments over `(n, p)` settings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_se, mse_xi, mspe, MeanSe};
use super::model::{simulate, SimConfig, Simulation, FUTURE_STEPS};
use crate::ensemble::{mean_of, run_members, EnsembleConfig, TauPolicy, DEFAULT_MEMBERS};
use crate::factors::{subspace_distance, FactorProblem, FitOptions};
use crate::forecast::{forecast_horizons, ForecastOptions, DEFAULT_J0};
use crate::kriging::{kernel_weight_matrix, KernelFamily, KernelSpec};
use crate::stdata::{io_err, random_partition, write_err, LocationSet};
use crate::tuning::{default_tau_grid, select_bandwidth, select_tau};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableId {
    /// `MSE(ξ̂)` with `τ = 0` and with cross-validated `τ`.
    MseTable1,
    /// `d̂`, spatial and temporal prediction errors, single vs aggregated.
    KrigingTable2,
    /// Loading-space distance `½{D(Â₁, A₁) + D(Â₂, A₂)}` at `τ = 0`.
    Fig1Distance,
    /// `MSE(ξ̂)` against `MSE(ξ̃)`.
    Fig2Mse,
}

impl TableId {
    pub const ALL: [TableId; 4] = [
        TableId::MseTable1,
        TableId::KrigingTable2,
        TableId::Fig1Distance,
        TableId::Fig2Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableId::MseTable1 => "mse_table1",
            TableId::KrigingTable2 => "kriging_table2",
            TableId::Fig1Distance => "fig1_distance",
            TableId::Fig2Mse => "fig2_mse",
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown table '{s}'")))
    }
}

/// The `(n, p)` grid of the tables: `n ∈ {80, 160, 320}`, `p ∈ {50, 100, 200}`.
pub fn default_settings() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for n in [80, 160, 320] {
        for p in [50, 100, 200] {
            out.push((n, p));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub table: TableId,
    pub settings: Vec<(usize, usize)>,
    pub replicates: usize,
    pub seed: u64,
    /// Multiplies the default ensemble size of 100.
    pub scale_factor: f64,
    /// Explicit ensemble size, overriding `scale_factor`.
    pub members: Option<usize>,
    pub tau_grid: Vec<f64>,
    pub folds: usize,
    pub kernel: KernelFamily,
    pub j0: usize,
}

impl BenchConfig {
    pub fn new(table: TableId, settings: Vec<(usize, usize)>, replicates: usize, seed: u64) -> Self {
        BenchConfig {
            table,
            settings,
            replicates,
            seed,
            scale_factor: 1.0,
            members: None,
            tau_grid: default_tau_grid(),
            folds: 5,
            kernel: KernelFamily::Gaussian,
            j0: DEFAULT_J0,
        }
    }

    pub fn ensemble_size(&self) -> usize {
        self.members
            .unwrap_or_else(|| ((DEFAULT_MEMBERS as f64 * self.scale_factor).round() as usize).max(1))
    }
}

/// Metrics of one replicate; fields a table does not compute are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub table: TableId,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub seed: u64,
    pub d_hat: usize,
    /// Mean `d̂` over ensemble members, or `d̂` itself without an ensemble.
    pub d_hat_mean: f64,
    pub tau: f64,
    pub mse_xi_tau0: Option<f64>,
    pub mse_xi_hat: Option<f64>,
    pub mse_xi_tilde: Option<f64>,
    pub h_hat: Option<f64>,
    pub h_tilde: Option<f64>,
    pub mspe_space_hat: Option<f64>,
    pub mspe_space_tilde: Option<f64>,
    pub mspe_time_hat_1: Option<f64>,
    pub mspe_time_hat_2: Option<f64>,
    pub mspe_time_tilde_1: Option<f64>,
    pub mspe_time_tilde_2: Option<f64>,
    pub subspace_distance: Option<f64>,
}

impl MetricReport {
    fn empty(table: TableId, n: usize, p: usize, replicate: usize, seed: u64) -> Self {
        MetricReport {
            table,
            n,
            p,
            replicate,
            seed,
            d_hat: 0,
            d_hat_mean: 0.0,
            tau: 0.0,
            mse_xi_tau0: None,
            mse_xi_hat: None,
            mse_xi_tilde: None,
            h_hat: None,
            h_tilde: None,
            mspe_space_hat: None,
            mspe_space_tilde: None,
            mspe_time_hat_1: None,
            mspe_time_hat_2: None,
            mspe_time_tilde_1: None,
            mspe_time_tilde_2: None,
            subspace_distance: None,
        }
    }

    /// Named numeric fields, for summaries.
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("d_hat", Some(self.d_hat as f64)),
            ("d_hat_mean", Some(self.d_hat_mean)),
            ("tau", Some(self.tau)),
            ("mse_xi_tau0", self.mse_xi_tau0),
            ("mse_xi_hat", self.mse_xi_hat),
            ("mse_xi_tilde", self.mse_xi_tilde),
            ("h_hat", self.h_hat),
            ("h_tilde", self.h_tilde),
            ("mspe_space_hat", self.mspe_space_hat),
            ("mspe_space_tilde", self.mspe_space_tilde),
            ("mspe_time_hat_1", self.mspe_time_hat_1),
            ("mspe_time_hat_2", self.mspe_time_hat_2),
            ("mspe_time_tilde_1", self.mspe_time_tilde_1),
            ("mspe_time_tilde_2", self.mspe_time_tilde_2),
            ("subspace_distance", self.subspace_distance),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub n: usize,
    pub p: usize,
    pub metrics: BTreeMap<String, MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub table: TableId,
    pub replicates: usize,
    pub seed: u64,
    pub scale_factor: f64,
    pub members: usize,
    pub settings: Vec<SettingSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub reports: Vec<MetricReport>,
    pub summary: BenchSummary,
}

impl BenchReport {
    pub fn setting(&self, n: usize, p: usize) -> Option<&SettingSummary> {
        self.summary.settings.iter().find(|s| s.n == n && s.p == p)
    }

    /// Per-replicate reports for one setting, in replicate order.
    pub fn replicates_of(&self, n: usize, p: usize) -> Vec<&MetricReport> {
        self.reports.iter().filter(|r| r.n == n && r.p == p).collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
        for r in &self.reports {
            w.serialize(r).map_err(|e| write_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.summary).map_err(|e| io_err(path, e.into()))
    }
}

fn krige_mspe(latent: &DMatrix<f64>, locs: &LocationSet, sim: &Simulation, kernel: KernelFamily) -> Result<(f64, f64)> {
    let h = select_bandwidth(latent, locs, kernel)?;
    let w = kernel_weight_matrix(locs, &sim.holdout_coords, &KernelSpec::new(kernel, h)?)?;
    Ok((h, mspe(&(latent * w.transpose()), &sim.holdout_y)?))
}

fn horizon_mspe(pred: &DMatrix<f64>, sim: &Simulation, row: usize) -> Result<f64> {
    mspe(&pred.rows(row, 1).into_owned(), &sim.future_y.rows(row, 1).into_owned())
}

/// Runs one replicate of `config.table` at `(n, p)`.
pub fn run_replicate(config: &BenchConfig, n: usize, p: usize, replicate: usize, seed: u64) -> Result<MetricReport> {
    let sim = simulate(&SimConfig::new(n, p, seed))?;
    let frame = &sim.frame;
    let locs = frame.locations();
    let mut report = MetricReport::empty(config.table, n, p, replicate, seed);
    let defaults = FitOptions::default();
    let cv_tau = || -> Result<f64> {
        Ok(select_tau(
            frame,
            &config.tau_grid,
            config.folds,
            derive_seed(seed, 2),
            &defaults,
            config.kernel,
        )?
        .tau)
    };

    match config.table {
        TableId::MseTable1 => {
            let part = random_partition(p, derive_seed(seed, 1))?;
            let problem = FactorProblem::new(frame, &part, &defaults)?;
            report.tau = cv_tau()?;
            report.d_hat = problem.d_hat();
            report.d_hat_mean = problem.d_hat() as f64;
            report.mse_xi_tau0 = Some(mse_xi(&problem.latent(0.0)?, &sim.xi)?);
            report.mse_xi_hat = Some(mse_xi(&problem.latent(report.tau)?, &sim.xi)?);
        }
        TableId::Fig1Distance => {
            let part = random_partition(p, derive_seed(seed, 1))?;
            let fit = FactorProblem::new(frame, &part, &defaults)?.fit(0.0)?;
            let d1 = subspace_distance(&fit.a1_hat, &sim.loadings.select_rows(&part.set1))?;
            let d2 = subspace_distance(&fit.a2_hat, &sim.loadings.select_rows(&part.set2))?;
            report.d_hat = fit.d_hat;
            report.d_hat_mean = fit.d_hat as f64;
            report.subspace_distance = Some(0.5 * (d1 + d2));
            report.mse_xi_hat = Some(mse_xi(&fit.xi_hat, &sim.xi)?);
        }
        TableId::Fig2Mse | TableId::KrigingTable2 => {
            report.tau = cv_tau()?;
            let ens = EnsembleConfig::new(
                config.ensemble_size(),
                TauPolicy::Fixed(report.tau),
                derive_seed(seed, 3),
            );
            let with_forecast = config.table == TableId::KrigingTable2;
            let horizons: Vec<usize> = (1..=FUTURE_STEPS).collect();
            let fopts = ForecastOptions {
                j0: config.j0,
                ridge: None,
            };
            let (_, members) = run_members(frame, &ens, |_, fit| {
                let fc = if with_forecast {
                    Some(forecast_horizons(frame, fit, &horizons, &fopts)?)
                } else {
                    None
                };
                Ok((fit.xi_hat.clone(), fit.d_hat, fc))
            })?;
            let latents: Vec<DMatrix<f64>> = members.iter().map(|m| m.0.clone()).collect();
            let xi_hat = &latents[0];
            let xi_tilde = mean_of(&latents);
            report.d_hat = members[0].1;
            report.d_hat_mean = members.iter().map(|m| m.1 as f64).sum::<f64>() / members.len() as f64;
            report.mse_xi_hat = Some(mse_xi(xi_hat, &sim.xi)?);
            report.mse_xi_tilde = Some(mse_xi(&xi_tilde, &sim.xi)?);
            if with_forecast {
                let (h_hat, space_hat) = krige_mspe(xi_hat, locs, &sim, config.kernel)?;
                let (h_tilde, space_tilde) = krige_mspe(&xi_tilde, locs, &sim, config.kernel)?;
                report.h_hat = Some(h_hat);
                report.h_tilde = Some(h_tilde);
                report.mspe_space_hat = Some(space_hat);
                report.mspe_space_tilde = Some(space_tilde);
                let forecasts: Vec<DMatrix<f64>> = members.into_iter().filter_map(|m| m.2).collect();
                let lead = &forecasts[0];
                let agg = mean_of(&forecasts);
                report.mspe_time_hat_1 = Some(horizon_mspe(lead, &sim, 0)?);
                report.mspe_time_hat_2 = Some(horizon_mspe(lead, &sim, 1)?);
                report.mspe_time_tilde_1 = Some(horizon_mspe(&agg, &sim, 0)?);
                report.mspe_time_tilde_2 = Some(horizon_mspe(&agg, &sim, 1)?);
            }
        }
    }
    Ok(report)
}

/// Seed of replicate `r` in setting `k`.
pub fn replicate_seed(base: u64, setting: usize, replicate: usize) -> u64 {
    derive_seed(derive_seed(base, setting as u64), replicate as u64)
}

pub fn run_table(config: &BenchConfig) -> Result<BenchReport> {
    if config.replicates < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} replicates, need at least 3",
            config.replicates
        )));
    }
    if config.settings.is_empty() {
        return Err(Error::InvalidArgument("no (n, p) settings".into()));
    }
    let jobs: Vec<(usize, usize, usize, usize)> = config
        .settings
        .iter()
        .enumerate()
        .flat_map(|(k, &(n, p))| (0..config.replicates).map(move |r| (k, n, p, r)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(k, n, p, r)| {
            log::info!("{} n={n} p={p} replicate {r}", config.table);
            run_replicate(config, n, p, r, replicate_seed(config.seed, k, r))
        })
        .collect::<Result<Vec<_>>>()?;

    let settings = config
        .settings
        .iter()
        .map(|&(n, p)| {
            let rows: Vec<&MetricReport> = reports.iter().filter(|r| r.n == n && r.p == p).collect();
            let mut metrics = BTreeMap::new();
            for (idx, (name, _)) in rows[0].metrics().into_iter().enumerate() {
                let values: Vec<f64> = rows.iter().filter_map(|r| r.metrics()[idx].1).collect();
                if let Some(s) = mean_se(&values) {
                    metrics.insert(name.to_string(), s);
                }
            }
            SettingSummary { n, p, metrics }
        })
        .collect();
    Ok(BenchReport {
        summary: BenchSummary {
            table: config.table,
            replicates: config.replicates,
            seed: config.seed,
            scale_factor: config.scale_factor,
            members: config.ensemble_size(),
            settings,
        },
        reports,
    })
}
