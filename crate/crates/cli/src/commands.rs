use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use latent_krig::ensemble::{aggregate_fit, EnsembleConfig, EnsembleDocument, TauPolicy};
use latent_krig::factors::{FactorModelFit, FitDocument, FitOptions};
use latent_krig::forecast::{forecast_ensemble, ForecastOptions};
use latent_krig::kriging::{impute_missing, krige_space, ImputeOptions, KernelSpec};
use latent_krig::regress::{deseason, detrend, save_betas};
use latent_krig::simbench::{default_settings, run_table, simulate, BenchConfig, SimConfig};
use latent_krig::stdata::{load_frame, save_frame, save_locations, LocationSet, SpatioTemporalFrame};
use latent_krig::tuning::{default_tau_grid, select_bandwidth, select_tau};
use latent_krig::Error;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::output::{int, num, text, write_stdout, Format, Table};
use crate::{
    BenchArgs, Command, CvArgs, DataArgs, DeseasonArgs, FitArgs, FitSettings, ForecastArgs, ImputeArgs, KrigeArgs,
    SimulateArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core { op: &'static str, source: Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core { op, source } => write!(f, "{op} failed: {source}"),
        }
    }
}

trait During<T> {
    fn during(self, op: &'static str) -> Result<T, CliError>;
}

impl<T> During<T> for latent_krig::Result<T> {
    fn during(self, op: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { op, source })
    }
}

/// The model file written by `fit` and read by `krige-space`.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    seed: u64,
    d_hat: usize,
    d_hat_mean: f64,
    tau: f64,
    detrended: bool,
    imputed_cells: usize,
    fit: FitDocument,
    ensemble: EnsembleDocument,
}

pub fn run(command: Command, format: Format) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a, format),
        Command::KrigeSpace(a) => cmd_krige_space(a, format),
        Command::Forecast(a) => cmd_forecast(a, format),
        Command::Impute(a) => cmd_impute(a),
        Command::Cv(a) => cmd_cv(a, format),
        Command::Bench(a) => cmd_bench(a, format),
        Command::Deseason(a) => cmd_deseason(a),
    }
}

fn echo_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn load(data: &DataArgs) -> Result<SpatioTemporalFrame, CliError> {
    let covariates = data.dir.join("covariates.csv");
    load_frame(
        &data.dir.join("locations.csv"),
        &data.dir.join("observations.csv"),
        covariates.exists().then_some(covariates.as_path()),
        data.metric.into(),
    )
    .during("loading data")
}

/// Detrends on covariates when present and fills missing cells, returning
/// the prepared frame, the regression if any and the number of filled cells.
fn prepare(
    frame: SpatioTemporalFrame,
) -> Result<(SpatioTemporalFrame, Option<latent_krig::regress::RegressionFit>, usize), CliError> {
    let (frame, reg) = if frame.covariates().is_some() {
        let reg = detrend(&frame).during("detrending")?;
        (reg.residual_frame.clone(), Some(reg))
    } else {
        (frame, None)
    };
    if frame.is_complete() {
        return Ok((frame, reg, 0));
    }
    let imputed = impute_missing(&frame, &ImputeOptions::default()).during("imputation")?;
    log::info!("filled {} missing cells", imputed.filled.len());
    Ok((imputed.frame, reg, imputed.filled.len()))
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    let out = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("invalid {what} value {s:?}")))
        })
        .collect::<Result<Vec<T>, _>>()?;
    if out.is_empty() {
        return Err(CliError::Usage(format!("empty {what} list")));
    }
    Ok(out)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>, CliError> {
    if raw == "default" {
        return Ok(default_tau_grid());
    }
    let grid: Vec<f64> = parse_list(raw, "tau grid")?;
    if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CliError::Usage(
            "tau grid values must be finite and non-negative".into(),
        ));
    }
    Ok(grid)
}

fn parse_site(raw: &str) -> Result<[f64; 2], CliError> {
    match parse_list::<f64>(raw, "coordinate")?.as_slice() {
        [x, y] if x.is_finite() && y.is_finite() => Ok([*x, *y]),
        _ => Err(CliError::Usage(format!("expected a site as x1,x2, got {raw:?}"))),
    }
}

fn ensemble_config(s: &FitSettings) -> Result<EnsembleConfig, CliError> {
    let policy = match (s.tau.tau, &s.tau.tau_grid) {
        (Some(tau), _) if !(tau.is_finite() && tau >= 0.0) => {
            return Err(CliError::Usage(format!(
                "tau must be finite and non-negative, got {tau}"
            )))
        }
        (Some(tau), _) => TauPolicy::Fixed(tau),
        (None, grid) => TauPolicy::CvOnce {
            grid: parse_grid(grid.as_deref().unwrap_or("default"))?,
            folds: s.folds,
            kernel: s.kernel.into(),
        },
    };
    let mut config = EnsembleConfig::new(s.members, policy, s.seed);
    config.options = FitOptions {
        tau: 0.0,
        k0: s.k0,
        p_star: s.p_star,
        d_override: s.d,
    };
    Ok(config)
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    echo_seed(a.seed);
    let sim = simulate(&SimConfig::new(a.n, a.p, a.seed)).during("simulation")?;
    create_dir(&a.out)?;
    let out = |name: &str| a.out.join(name);
    save_frame(&sim.frame, &out("locations.csv"), &out("observations.csv"), None).during("writing panel")?;

    let latent =
        SpatioTemporalFrame::new(sim.frame.locations().clone(), sim.xi.clone()).during("writing latent field")?;
    latent_krig::stdata::save_observations(&latent, &out("latent.csv")).during("writing latent field")?;

    let holdout_locs = LocationSet::new(
        (1..=sim.holdout_coords.len()).map(|i| format!("h{i}")).collect(),
        sim.holdout_coords.clone(),
        Default::default(),
    )
    .during("writing holdout sites")?;
    save_locations(&holdout_locs, &out("holdout_locations.csv")).during("writing holdout sites")?;
    let holdout = SpatioTemporalFrame::new(holdout_locs, sim.holdout_y.clone()).during("writing holdout sites")?;
    latent_krig::stdata::save_observations(&holdout, &out("holdout_observations.csv"))
        .during("writing holdout sites")?;

    let mut future = Table::new(&["horizon", "id", "value"]);
    for h in 0..sim.future_y.nrows() {
        for (i, id) in sim.frame.locations().ids().iter().enumerate() {
            future.push(vec![int(h + 1), text(id.clone()), num(sim.future_y[(h, i)])]);
        }
    }
    future.write(Format::Csv, Some(&out("future_observations.csv")))?;
    eprintln!("wrote n = {}, p = {} panel to {}", a.n, a.p, a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs, format: Format) -> Result<(), CliError> {
    echo_seed(a.settings.seed);
    let raw = load(&a.data)?;
    let (frame, reg, imputed_cells) = prepare(raw)?;
    if let (Some(path), Some(reg)) = (&a.betas_out, &reg) {
        save_betas(reg, frame.locations(), path).during("writing coefficients")?;
    } else if a.betas_out.is_some() {
        log::warn!("no covariates.csv in {}; --betas-out ignored", a.data.dir.display());
    }
    let config = ensemble_config(&a.settings)?;
    let ens = aggregate_fit(&frame, &config).during("fitting")?;
    let lead = ens.lead.as_ref().expect("ensemble keeps its first member");
    let model = ModelFile {
        seed: a.settings.seed,
        d_hat: lead.d_hat,
        d_hat_mean: ens.d_hat_mean(),
        tau: ens.tau,
        detrended: reg.is_some(),
        imputed_cells,
        fit: lead.to_document(),
        ensemble: ens.to_document(),
    };
    let path = a.out.unwrap_or_else(|| a.data.dir.join("model.json"));
    let json = serde_json::to_string(&model).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;

    let mut summary = Table::new(&["model", "d_hat", "d_hat_mean", "tau", "members", "imputed_cells"]);
    summary.push(vec![
        text(path.display().to_string()),
        int(model.d_hat),
        num(model.d_hat_mean),
        num(model.tau),
        int(config.members),
        int(imputed_cells),
    ]);
    summary.write(format, None)
}

fn read_model(path: &Path) -> Result<(ModelFile, FactorModelFit, DMatrix<f64>), CliError> {
    let body = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let model: ModelFile =
        serde_json::from_str(&body).map_err(|e| CliError::Io(format!("{}: not a model file: {e}", path.display())))?;
    let fit = FactorModelFit::from_document(&model.fit).during("reading model")?;
    let rows = &model.ensemble.xi_tilde;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.len() != fit.xi_hat.nrows() || ncols != fit.xi_hat.ncols() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Io(format!(
            "{}: aggregated field has the wrong shape",
            path.display()
        )));
    }
    let xi_tilde = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok((model, fit, xi_tilde))
}

fn cmd_krige_space(a: KrigeArgs, format: Format) -> Result<(), CliError> {
    let sites = a.at.iter().map(|s| parse_site(s)).collect::<Result<Vec<_>, _>>()?;
    let (_, fit, xi_tilde) = read_model(&a.model)?;
    let latent = if a.single { &fit.xi_hat } else { &xi_tilde };
    let family = a.kernel.into();
    let h = match a.h.as_str() {
        "auto" => select_bandwidth(latent, &fit.locations, family).during("bandwidth selection")?,
        raw => raw
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--h must be a number or auto, got {raw:?}")))?,
    };
    let kernel = KernelSpec::new(family, h).during("kernel setup")?;
    eprintln!("bandwidth: {h}");
    let mut table = Table::new(&["t", "x1", "x2", "value"]);
    for s0 in sites {
        let pred = krige_space(latent, &fit.locations, s0, &kernel).during("spatial kriging")?;
        for (t, v) in pred.xi_hat_series.iter().enumerate() {
            table.push(vec![text(fit.times[t].clone()), num(s0[0]), num(s0[1]), num(*v)]);
        }
    }
    table.write(format, a.out.as_deref())
}

fn cmd_forecast(a: ForecastArgs, format: Format) -> Result<(), CliError> {
    echo_seed(a.settings.seed);
    let horizons: Vec<usize> = parse_list(&a.horizons, "horizon")?;
    let (frame, _, _) = prepare(load(&a.data)?)?;
    let config = ensemble_config(&a.settings)?;
    let opts = ForecastOptions {
        j0: a.j0,
        ridge: a.ridge,
    };
    let fc = forecast_ensemble(&frame, &config, &horizons, &opts).during("forecasting")?;
    let mut table = Table::new(&["horizon", "id", "value"]);
    for (r, h) in horizons.iter().enumerate() {
        for (i, id) in frame.locations().ids().iter().enumerate() {
            table.push(vec![int(*h), text(id.clone()), num(fc.aggregated[(r, i)])]);
        }
    }
    table.write(format, a.out.as_deref())
}

fn write_panel(frame: &SpatioTemporalFrame, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    save_frame(frame, &dir.join("locations.csv"), &dir.join("observations.csv"), None).during("writing panel")
}

fn cmd_impute(a: ImputeArgs) -> Result<(), CliError> {
    let frame = load(&a.data)?;
    let opts = ImputeOptions {
        method: a.method.into(),
        rank: a.rank,
    };
    let out = impute_missing(&frame, &opts).during("imputation")?;
    write_panel(&out.frame, &a.out)?;
    eprintln!("filled {} cells", out.filled.len());
    Ok(())
}

fn cmd_cv(a: CvArgs, format: Format) -> Result<(), CliError> {
    echo_seed(a.seed);
    let grid = parse_grid(&a.tau_grid)?;
    let (frame, _, _) = prepare(load(&a.data)?)?;
    let opts = FitOptions {
        k0: a.k0,
        ..Default::default()
    };
    let sel = select_tau(&frame, &grid, a.folds, a.seed, &opts, a.kernel.into()).during("cross-validation")?;
    eprintln!("selected tau: {}", sel.tau);
    let mut table = Table::new(&["tau", "cv_error", "selected"]);
    for (tau, err) in sel.grid.iter().zip(&sel.cv_errors) {
        table.push(vec![num(*tau), num(*err), serde_json::Value::Bool(*tau == sel.tau)]);
    }
    table.write(format, a.out.as_deref())
}

fn cmd_bench(a: BenchArgs, format: Format) -> Result<(), CliError> {
    echo_seed(a.seed);
    let settings = match (&a.n, &a.p) {
        (None, None) => default_settings(),
        (n, p) => {
            let ns: Vec<usize> = n.as_deref().map_or(Ok(vec![80, 160, 320]), |s| parse_list(s, "n"))?;
            let ps: Vec<usize> = p.as_deref().map_or(Ok(vec![50, 100, 200]), |s| parse_list(s, "p"))?;
            ns.iter().flat_map(|&n| ps.iter().map(move |&p| (n, p))).collect()
        }
    };
    if !(a.scale_factor.is_finite() && a.scale_factor > 0.0) {
        return Err(CliError::Usage(format!(
            "--scale-factor must be positive, got {}",
            a.scale_factor
        )));
    }
    let mut config = BenchConfig::new(a.table, settings, a.replicates, a.seed);
    config.scale_factor = a.scale_factor;
    config.members = a.members;
    config.tau_grid = parse_grid(&a.tau_grid)?;
    config.j0 = a.j0;
    config.kernel = a.kernel.into();
    let report = run_table(&config).during("benchmark")?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        report.save_csv(&dir.join("reports.csv")).during("writing reports")?;
        report.save_json(&dir.join("summary.json")).during("writing summary")?;
    }
    match format {
        Format::Json => {
            let mut json = serde_json::to_vec_pretty(&report.summary).map_err(|e| CliError::Io(e.to_string()))?;
            json.push(b'\n');
            write_stdout(&json)
        }
        Format::Csv => {
            let mut table = Table::new(&["table", "n", "p", "metric", "mean", "se", "sd", "count"]);
            for s in &report.summary.settings {
                for (name, m) in &s.metrics {
                    table.push(vec![
                        text(a.table.name()),
                        int(s.n),
                        int(s.p),
                        text(name.clone()),
                        num(m.mean),
                        num(m.se),
                        num(m.sd),
                        int(m.count),
                    ]);
                }
            }
            table.write(Format::Csv, None)
        }
    }
}

fn cmd_deseason(a: DeseasonArgs) -> Result<(), CliError> {
    let frame = load(&a.data)?;
    let out = deseason(&frame, a.period).during("deseasoning")?;
    write_panel(&out, &a.out)?;
    copy_if_present(&a.data.dir, &a.out, "covariates.csv")
}

fn copy_if_present(from: &Path, to: &Path, name: &str) -> Result<(), CliError> {
    let src: PathBuf = from.join(name);
    if src.exists() {
        fs::copy(&src, to.join(name)).map_err(|e| CliError::Io(format!("{}: {e}", src.display())))?;
    }
    Ok(())
}
