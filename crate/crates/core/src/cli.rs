//! Command-line front end. Each subcommand is a thin wrapper over library
//! calls and writes its artifacts plus a `manifest.txt` into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::agesex;
use crate::config::RunConfig;
use crate::data::{self, ClusterSet, GridStack};
use crate::diagnostics::{self, NeighborRule, ScatterPoint, Table1Row};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::mcmc::{self, ChainConfig, PosteriorDraws};
use crate::model::{self, EffectMode};
use crate::plot;
use crate::predict::{self, CellSummary, PredictConfig};
use crate::raster::AsciiGrid;
use crate::stats;
use crate::synth;

/// Largest R-hat accepted as converged.
pub const RHAT_THRESHOLD: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(name = "popgrid", version, about = "Gridded population estimates from survey clusters and building footprints")]
pub struct Cli {
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    pub plots: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate inputs, drop unusable clusters and standardise covariates.
    Ingest(IngestArgs),
    /// Fit the density model by MCMC.
    Fit(FitArgs),
    /// Predict gridded population from posterior draws.
    Predict(PredictArgs),
    /// K-fold cross-validation with in- and out-of-sample fit tables.
    Cv(CvArgs),
    /// In-sample fit table, scatter data and residual spatial statistics.
    Diagnose(DiagnoseArgs),
    /// Generate synthetic worlds, fit them and report parameter recovery.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub grid_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `fit` (or its `draws` subdirectory).
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub grid_dir: PathBuf,
    /// Age-sex survey records for group rasters.
    #[arg(long)]
    pub agesex: Option<PathBuf>,
    /// Zone-id raster for zonal totals.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub agesex: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a completed command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Outputs were written but some R-hat reached the threshold.
    Unconverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Unconverged => 2,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already initialised: {e}");
        }
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a, cli.plots),
        Command::Predict(a) => cmd_predict(a, cli.plots),
        Command::Cv(a) => cmd_cv(a, cli.plots),
        Command::Diagnose(a) => cmd_diagnose(a, cli.plots),
        Command::Simulate(a) => cmd_simulate(a, cli.plots),
    }
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, String)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok((RunConfig::parse(&text)?, text))
        }
        None => Ok((RunConfig::default(), String::new())),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn finish(mut manifest: RunManifest, started: Instant, out: &Path) -> Result<()> {
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)
}

/// Keeps the configured covariates in both inputs, in configured order.
fn select_grid_covariates(grid: GridStack, names: &[String]) -> Result<GridStack> {
    let mut layers = Vec::with_capacity(names.len());
    for n in names {
        let k = grid.covariate_index(n).ok_or_else(|| {
            Error::CovariateMismatch(format!(
                "covariate `{n}` not in grid [{}]",
                grid.covariate_names.join(", ")
            ))
        })?;
        layers.push(grid.covariates[k].clone());
    }
    GridStack::new(
        grid.header,
        grid.footprint_area,
        names.to_vec(),
        layers,
        grid.settlement,
        grid.province,
        grid.region,
    )
}

/// Cluster set ready for fitting: configured covariates, discards removed,
/// weights truncated and normalised.
pub fn prepare_clusters(set: ClusterSet, cfg: &RunConfig) -> Result<ClusterSet> {
    let names = cfg.resolve_covariates(&set.covariate_names)?;
    let mut set = set.select_covariates(&names)?;
    if !cfg.weights.use_sampling_weights {
        for c in &mut set.clusters {
            c.sampling_weight = None;
        }
    }
    let (set, report) = data::prepare_for_fit(set, cfg.weights.truncation_percentile)?;
    if !report.discarded.is_empty() {
        info!("discarded {} clusters", report.discarded.len());
    }
    Ok(set)
}

/// Effect modes from the configuration, or from a pilot fit with every
/// covariate random when the configuration says `auto`.
pub fn resolve_modes(set: &ClusterSet, cfg: &RunConfig, chain: &ChainConfig) -> Result<Vec<EffectMode>> {
    if let Some(m) = cfg.explicit_modes(set.n_covariates())? {
        return Ok(m);
    }
    if set.n_covariates() == 0 {
        return Ok(Vec::new());
    }
    let n = chain.n_iterations.min(2000);
    let pilot_cfg = ChainConfig {
        n_iterations: n,
        burn_in: n / 2,
        thin: 1,
        seed: stats::mix_keys(chain.seed, &[0x9170]),
        audit: false,
        ..chain.clone()
    };
    info!("pilot fit for effect modes ({n} iterations)");
    let pilot = model::fit(
        set,
        &vec![EffectMode::RandomByType; set.n_covariates()],
        cfg.priors,
        &pilot_cfg,
    )?;
    model::resolve_effect_modes(&pilot, &set.covariate_names)
}

fn modes_csv(names: &[String], modes: &[EffectMode]) -> String {
    let mut out = String::from("covariate,mode\n");
    for (n, m) in names.iter().zip(modes) {
        out.push_str(&format!("{n},{m}\n"));
    }
    out
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let set = data::load_clusters(&a.clusters)?;
    data::validate_nesting(&set.clusters)?;
    let grid = GridStack::load_dir(&a.grid_dir)?;
    let names = cfg.resolve_covariates(&set.covariate_names)?;
    let set = set.select_covariates(&names)?;
    let grid = select_grid_covariates(grid, &names)?;
    let (kept, report) = data::filter_spurious(set.clusters);
    if kept.is_empty() {
        return Err(Error::invalid("no clusters left after discard filter"));
    }
    let set = ClusterSet {
        covariate_names: names,
        clusters: kept,
    };
    let (set, grid, scaling) = data::scale_covariates(set, grid)?;

    create_dir(&a.out)?;
    data::write_clusters(a.out.join("clusters.csv"), &set)?;
    grid.write_dir(a.out.join("grid"))?;
    scaling.write(a.out.join("scaling.csv"))?;
    write(&a.out.join("discards.csv"), &report.to_csv())?;
    match crate::footprint::covariate_screen(&set) {
        Ok(screen) => {
            let mut s = String::from("covariate,r\n");
            for r in &screen {
                let v = r.r.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
                s.push_str(&format!("{},{v}\n", r.covariate));
            }
            write(&a.out.join("covariate_screen.csv"), &s)?;
        }
        Err(e) => warn!("covariate screen skipped: {e}"),
    }

    let mut m = RunManifest::new("ingest", &text, 0);
    m.add_input("clusters", &a.clusters)?;
    m.add_input("grid", &a.grid_dir)?;
    finish(m, started, &a.out)?;
    Ok(Outcome::Success)
}

fn chain_config(cfg: &RunConfig, chains: Option<usize>, iters: Option<usize>, burn: Option<usize>, thin: Option<usize>, seed: Option<u64>) -> Result<ChainConfig> {
    let mut c = cfg.mcmc.clone();
    if let Some(v) = chains {
        c.n_chains = v;
    }
    if let Some(v) = iters {
        c.n_iterations = v;
        if burn.is_none() && c.burn_in >= v {
            c.burn_in = v / 2;
        }
    }
    if let Some(v) = burn {
        c.burn_in = v;
    }
    if let Some(v) = thin {
        c.thin = v;
    }
    if let Some(v) = seed {
        c.seed = v;
    }
    c.validate()?;
    Ok(c)
}

fn max_rhat(r: &[mcmc::Rhat]) -> f64 {
    r.iter().map(|x| x.rhat).fold(f64::NEG_INFINITY, f64::max)
}

pub fn cmd_fit(a: &FitArgs, plots: bool) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let chain = chain_config(&cfg, a.chains, a.iterations, a.burnin, a.thin, a.seed)?;
    let set = prepare_clusters(data::load_clusters(&a.clusters)?, &cfg)?;
    let modes = resolve_modes(&set, &cfg, &chain)?;
    info!("fitting {} clusters, {} chains x {} iterations", set.len(), chain.n_chains, chain.n_iterations);
    let draws = model::fit(&set, &modes, cfg.priors, &chain)?;

    create_dir(&a.out)?;
    let outcome = write_fit_outputs(&a.out, &draws, &set, &modes, plots)?;
    let mut m = RunManifest::new("fit", &text, chain.seed);
    m.add_input("clusters", &a.clusters)?;
    finish(m, started, &a.out)?;
    Ok(outcome)
}

fn write_fit_outputs(
    out: &Path,
    draws: &PosteriorDraws,
    set: &ClusterSet,
    modes: &[EffectMode],
    plots: bool,
) -> Result<Outcome> {
    draws.write_dir(out.join("draws"))?;
    write(&out.join("effect_modes.csv"), &modes_csv(&set.covariate_names, modes))?;
    let summaries = mcmc::summarize_draws(draws);
    let (rhat, outcome) = if draws.chains.len() >= 2 {
        let r = mcmc::gelman_rubin(draws)?;
        let mut s = String::from("parameter,rhat\n");
        for x in &r {
            s.push_str(&format!("{},{}\n", x.name, x.rhat));
        }
        write(&out.join("rhat.csv"), &s)?;
        let worst = max_rhat(&r);
        let outcome = if worst < RHAT_THRESHOLD {
            Outcome::Success
        } else {
            warn!("max R-hat {worst:.3} is not below {RHAT_THRESHOLD}");
            Outcome::Unconverged
        };
        (Some(r), outcome)
    } else {
        warn!("R-hat needs at least two chains; convergence not assessed");
        (None, Outcome::Success)
    };
    write(&out.join("summary.csv"), &mcmc::summary_csv(&summaries, rhat.as_deref()))?;
    if let Some(v) = draws.audit_violations() {
        write(&out.join("audit.txt"), &format!("violations = {v}\n"))?;
    }
    if plots {
        for prefix in ["alpha[", "beta["] {
            let rows: Vec<(String, f64, f64, f64)> = summaries
                .iter()
                .filter(|s| s.name.starts_with(prefix))
                .map(|s| (s.name.clone(), s.mean, s.q025, s.q975))
                .collect();
            if !rows.is_empty() {
                let name = prefix.trim_end_matches('[');
                write(
                    &out.join(format!("caterpillar_{name}.svg")),
                    &plot::caterpillar_svg(name, &rows),
                )?;
            }
        }
    }
    Ok(outcome)
}

fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let nested = path.join("draws");
    if nested.join("acceptance.csv").exists() {
        PosteriorDraws::read_dir(nested)
    } else {
        PosteriorDraws::read_dir(path)
    }
}

pub fn cmd_predict(a: &PredictArgs, plots: bool) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let pcfg = PredictConfig {
        n_draws: a.pred_draws.unwrap_or(cfg.predict.n_draws),
        seed: a.seed.unwrap_or(cfg.predict.seed),
    };
    let draws = read_draws(&a.draws)?;
    let grid = GridStack::load_dir(&a.grid_dir)?;
    let zones = a.zones.as_ref().map(AsciiGrid::read).transpose()?;
    if let Some(z) = &zones {
        if !z.header.is_coregistered(&grid.header) {
            return Err(Error::HeaderMismatch(format!(
                "zone raster {} is not co-registered with the grid",
                a.zones.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            )));
        }
    }
    let records = a.agesex.as_ref().map(agesex::load_records).transpose()?;

    let pred = predict::predict_grid(&draws, &grid, &pcfg)?;
    create_dir(&a.out)?;
    pred.write_rasters(&a.out)?;
    let totals: Vec<f64> = pred.total_draws().iter().map(|&t| t as f64).collect();
    let s = stats::Summary::of(&totals);
    write(
        &a.out.join("total.csv"),
        &format!("mean,median,lo95,hi95\n{},{},{},{}\n", s.mean, s.median, s.lo95, s.hi95),
    )?;

    if let Some(records) = &records {
        let table = agesex::aggregate_counts(records)?;
        let pi = agesex::sample_pi(&table, pcfg.n_draws, pcfg.seed)?;
        let groups = predict::disaggregate_agesex(&pred, &pi)?;
        let gdir = a.out.join("agesex");
        create_dir(&gdir)?;
        groups.write_rasters(&pred, &gdir)?;
        let summary = agesex::proportion_summary(&pi)?;
        write(&a.out.join("agesex_proportions.csv"), &agesex::summary_csv(&summary))?;
        if plots {
            for &p in &pi.provinces {
                let rows: Vec<_> = summary.iter().filter(|r| r.province_id == p).cloned().collect();
                write(
                    &a.out.join(format!("pyramid_{p}.svg")),
                    &plot::pyramid_svg(&format!("Province {p}"), &rows),
                )?;
            }
        }
    }
    if let Some(z) = &zones {
        let zs = predict::aggregate_zones(&pred, z)?;
        write(&a.out.join("zones.csv"), &predict::zones_csv(&zs))?;
    }

    let mut m = RunManifest::new("predict", &text, pcfg.seed);
    m.add_input("draws", &a.draws)?;
    m.add_input("grid", &a.grid_dir)?;
    if let Some(p) = &a.agesex {
        m.add_input("agesex", p)?;
    }
    if let Some(p) = &a.zones {
        m.add_input("zones", p)?;
    }
    finish(m, started, &a.out)?;
    Ok(Outcome::Success)
}

fn scatter_points(set: &ClusterSet, mode: &str, counts: &[CellSummary], dens: &[CellSummary]) -> Vec<ScatterPoint> {
    let mut pts = Vec::with_capacity(2 * set.len());
    for (target, sums) in [("total", counts), ("density", dens)] {
        for (c, s) in set.clusters.iter().zip(sums) {
            pts.push(ScatterPoint {
                target: target.into(),
                mode: mode.into(),
                cluster_id: c.cluster_id.clone(),
                settlement_type: c.settlement_type.to_string(),
                observed: if target == "total" { c.population as f64 } else { c.density() },
                predicted: *s,
            });
        }
    }
    pts
}

fn fit_rows(set: &ClusterSet, label: &str, counts: &[CellSummary], dens: &[CellSummary]) -> Result<Vec<Table1Row>> {
    let obs_n: Vec<f64> = set.clusters.iter().map(|c| c.population as f64).collect();
    let obs_d: Vec<f64> = set.clusters.iter().map(|c| c.density()).collect();
    Ok(vec![
        Table1Row {
            estimate: "Population totals".into(),
            prediction: label.into(),
            metrics: diagnostics::residual_metrics(&obs_n, counts)?,
        },
        Table1Row {
            estimate: "Population densities".into(),
            prediction: label.into(),
            metrics: diagnostics::residual_metrics(&obs_d, dens)?,
        },
    ])
}

fn in_sample(draws: &PosteriorDraws, set: &ClusterSet, pcfg: &PredictConfig) -> Result<(Vec<CellSummary>, Vec<CellSummary>)> {
    let pred = predict::predict_clusters(draws, set, pcfg)?;
    let areas: Vec<f64> = set.clusters.iter().map(|c| c.footprint_area).collect();
    Ok((
        diagnostics::count_summaries(&pred, set.len()),
        diagnostics::density_summaries(&pred, &areas),
    ))
}

fn write_table(out: &Path, rows: &[Table1Row], points: &[ScatterPoint], plots: bool) -> Result<()> {
    write(&out.join("table1.csv"), &diagnostics::table1_csv(rows))?;
    write(&out.join("table1.txt"), &diagnostics::table1_text(rows))?;
    write(&out.join("scatter.csv"), &diagnostics::scatter_csv(points))?;
    if plots {
        let modes: Vec<&str> = {
            let mut m: Vec<&str> = points.iter().map(|p| p.mode.as_str()).collect();
            m.dedup();
            m
        };
        for mode in modes {
            for target in ["total", "density"] {
                let pts: Vec<_> = points
                    .iter()
                    .filter(|p| p.mode == mode && p.target == target)
                    .map(|p| (p.observed, p.predicted.mean, p.predicted.lo95, p.predicted.hi95))
                    .collect();
                let file = format!("scatter_{target}_{}.svg", mode.replace(' ', "_").to_lowercase());
                write(&out.join(file), &plot::scatter_svg(&format!("{target} ({mode})"), &pts))?;
            }
        }
    }
    Ok(())
}

pub fn cmd_cv(a: &CvArgs, plots: bool) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let chain = chain_config(&cfg, None, a.iterations, a.burnin, None, a.seed)?;
    let k = a.k.unwrap_or(cfg.cv.k);
    let cv_seed = a.seed.unwrap_or(cfg.cv.seed);
    let set = prepare_clusters(data::load_clusters(&a.clusters)?, &cfg)?;
    let modes = resolve_modes(&set, &cfg, &chain)?;

    let draws = model::fit(&set, &modes, cfg.priors, &chain)?;
    let (in_n, in_d) = in_sample(&draws, &set, &cfg.predict)?;
    let cv = diagnostics::kfold_cv(&set, &modes, cfg.priors, &chain, &cfg.predict, k, cv_seed)?;

    let mut rows = fit_rows(&set, "In-sample", &in_n, &in_d)?;
    rows.extend(fit_rows(&set, "Out-of-sample", &cv.counts, &cv.densities)?);
    if let Some(p) = &a.agesex {
        let records = agesex::load_records(p)?;
        let (ins, outs) = diagnostics::agesex_cv(&records, cfg.cv.agesex_holdout, cfg.predict.n_draws, cv_seed)?;
        for (label, m) in [("In-sample", ins), ("Out-of-sample", outs)] {
            rows.push(Table1Row {
                estimate: "Age-sex proportions".into(),
                prediction: label.into(),
                metrics: m,
            });
        }
    }
    let mut points = scatter_points(&set, "In-sample", &in_n, &in_d);
    points.extend(scatter_points(&set, "Out-of-sample", &cv.counts, &cv.densities));

    create_dir(&a.out)?;
    write_table(&a.out, &rows, &points, plots)?;
    let mut folds = String::from("cluster_id,fold\n");
    for (c, f) in set.clusters.iter().zip(&cv.folds) {
        folds.push_str(&format!("{},{f}\n", c.cluster_id));
    }
    write(&a.out.join("folds.csv"), &folds)?;
    write(&a.out.join("effect_modes.csv"), &modes_csv(&set.covariate_names, &modes))?;

    let mut m = RunManifest::new("cv", &text, chain.seed);
    m.add_input("clusters", &a.clusters)?;
    if let Some(p) = &a.agesex {
        m.add_input("agesex", p)?;
    }
    finish(m, started, &a.out)?;
    Ok(Outcome::Success)
}

pub fn cmd_diagnose(a: &DiagnoseArgs, plots: bool) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let pcfg = PredictConfig {
        seed: a.seed.unwrap_or(cfg.predict.seed),
        ..cfg.predict
    };
    let draws = read_draws(&a.draws)?;
    let set = prepare_clusters(data::load_clusters(&a.clusters)?, &cfg)?;
    let (n_sum, d_sum) = in_sample(&draws, &set, &pcfg)?;
    let rows = fit_rows(&set, "In-sample", &n_sum, &d_sum)?;
    let points = scatter_points(&set, "In-sample", &n_sum, &d_sum);

    create_dir(&a.out)?;
    write_table(&a.out, &rows, &points, plots)?;

    let coords: Vec<(f64, f64)> = set.clusters.iter().map(|c| c.centroid).collect();
    let resid: Vec<f64> = set
        .clusters
        .iter()
        .zip(&d_sum)
        .map(|(c, s)| s.mean - c.density())
        .collect();
    let rule = match cfg.spatial.distance {
        Some(d) => NeighborRule::Distance(d),
        None => NeighborRule::Knn(cfg.spatial.neighbors),
    };
    if set.len() > cfg.spatial.neighbors.max(2) {
        let moran = diagnostics::morans_i(&resid, &coords, rule, cfg.spatial.permutations, cfg.spatial.seed)?;
        write(&a.out.join("moran.csv"), &diagnostics::moran_csv("density_residual", &moran))?;
        let edges = diagnostics::default_bin_edges(&coords, cfg.spatial.variogram_bins);
        let bins = diagnostics::semivariogram(&resid, &coords, &edges)?;
        write(&a.out.join("variogram.csv"), &diagnostics::variogram_csv(&bins))?;
    } else {
        warn!("too few clusters for residual spatial statistics");
    }

    let outcome = if draws.chains.len() >= 2 {
        let r = mcmc::gelman_rubin(&draws)?;
        if max_rhat(&r) < RHAT_THRESHOLD {
            Outcome::Success
        } else {
            Outcome::Unconverged
        }
    } else {
        Outcome::Success
    };
    let mut m = RunManifest::new("diagnose", &text, pcfg.seed);
    m.add_input("draws", &a.draws)?;
    m.add_input("clusters", &a.clusters)?;
    finish(m, started, &a.out)?;
    Ok(outcome)
}

/// One simulated replicate: world, fit, prediction and recovery table.
pub struct Replicate {
    pub seed: u64,
    pub world: synth::SyntheticWorld,
    pub report: synth::RecoveryReport,
    pub max_rhat: Option<f64>,
}

pub fn simulate_replicate(cfg: &RunConfig, chain: &ChainConfig, seed: u64) -> Result<Replicate> {
    let world = synth::gen_world(&cfg.simulate, seed)?;
    let set = prepare_clusters(world.survey.clusters.clone(), cfg)?;
    let chain = ChainConfig {
        seed: stats::mix_keys(seed, &[chain.seed]),
        ..chain.clone()
    };
    let modes = resolve_modes(&set, cfg, &chain)?;
    let draws = model::fit(&set, &modes, cfg.priors, &chain)?;
    let pcfg = PredictConfig {
        seed: stats::mix_keys(seed, &[cfg.predict.seed]),
        ..cfg.predict
    };
    let pred = predict::predict_grid(&draws, &world.truth.grid, &pcfg)?;
    let pi = agesex::sample_pi(&world.survey.agesex_table()?, pcfg.n_draws, pcfg.seed)?;
    let total = pred.total_draws();
    let report = synth::recovery_report(&world.truth, &draws, Some(&pi), Some(&total));
    let max_rhat = if chain.n_chains >= 2 {
        Some(max_rhat(&mcmc::gelman_rubin(&draws)?))
    } else {
        None
    };
    Ok(Replicate {
        seed,
        world,
        report,
        max_rhat,
    })
}

pub fn cmd_simulate(a: &SimulateArgs, plots: bool) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, text) = load_config(a.config.as_deref())?;
    let chain = chain_config(&cfg, None, a.iterations, a.burnin, None, a.seed)?;
    let seed = a.seed.unwrap_or(cfg.mcmc.seed);
    if a.replicates == 0 {
        return Err(Error::invalid("--replicates must be positive"));
    }
    let reps = (0..a.replicates as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(&cfg, &chain, stats::mix_keys(seed, &[r])))
        .collect::<Result<Vec<_>>>()?;

    create_dir(&a.out)?;
    let mut summary = String::from(
        "replicate,seed,coverage,alpha_coverage,beta_coverage,tau_coverage,pi_coverage,total_truth,total_mean,total_lo95,total_hi95,relative_error,max_rhat\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    let mut outcome = Outcome::Success;
    for (i, rep) in reps.iter().enumerate() {
        let dir = a.out.join(format!("replicate_{i}"));
        rep.world.write_dir(dir.join("world"))?;
        write(&dir.join("recovery.csv"), &rep.report.to_csv())?;
        if plots {
            let rows: Vec<_> = rep
                .report
                .rows
                .iter()
                .filter(|r| r.class == "alpha")
                .map(|r| (r.name.clone(), r.mean - r.truth, r.lo95 - r.truth, r.hi95 - r.truth))
                .collect();
            write(&dir.join("recovery_alpha.svg"), &plot::caterpillar_svg("alpha minus truth", &rows))?;
        }
        let t = rep.report.total;
        summary.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rep.seed,
            opt(rep.report.coverage()),
            opt(rep.report.class_coverage("alpha")),
            opt(rep.report.class_coverage("beta")),
            opt(rep.report.class_coverage("tau")),
            opt(rep.report.class_coverage("pi")),
            t.map(|t| t.truth.to_string()).unwrap_or_else(|| "NA".into()),
            opt(t.map(|t| t.mean)),
            opt(t.map(|t| t.lo95)),
            opt(t.map(|t| t.hi95)),
            opt(t.map(|t| t.relative_error)),
            opt(rep.max_rhat),
        ));
        if rep.max_rhat.is_some_and(|r| !(r < RHAT_THRESHOLD)) {
            outcome = Outcome::Unconverged;
        }
    }
    write(&a.out.join("simulation.csv"), &summary)?;
    let mut m = RunManifest::new("simulate", &text, seed);
    if let Some(p) = &a.config {
        m.add_input("config", p)?;
    }
    finish(m, started, &a.out)?;
    Ok(outcome)
}
