//! Synthetic worlds with known generating parameters, survey draws from
//! them, and recovery checks for fitted models.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agesex::{self, AgeSexRecord, AgeSexTable, ProportionDraws, N_AGE_BANDS, N_GROUPS};
use crate::data::{self, ClusterRecord, ClusterSet, GridStack, SettlementType};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::raster::GridHeader;
use crate::stats::{self, keyed_rng, Summary};

const STREAM: u64 = 0x5e7d;

/// How survey clusters are picked from the settled cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Random,
    PopWeighted,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Random => "random",
            Design::PopWeighted => "pop_weighted",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Design> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Design::Random),
            "pop_weighted" | "pop-weighted" | "weighted" => Ok(Design::PopWeighted),
            other => Err(Error::invalid(format!("unknown sampling design `{other}`"))),
        }
    }
}

/// Generating ranges and layout. Provinces are horizontal bands of rows and
/// regions are column blocks inside each band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub nrows: usize,
    pub ncols: usize,
    pub cellsize: f64,
    pub n_provinces: usize,
    pub regions_per_province: usize,
    pub n_covariates: usize,
    pub settled_fraction: f64,
    pub urban_fraction: f64,
    /// Footprint hectares per settled cell.
    pub area_range: [f64; 2],
    /// Range of the local intercepts on the log-density scale.
    pub alpha_range: [f64; 2],
    /// Half-width of the region offsets around each stratum mean.
    pub alpha_spread: f64,
    pub beta_max: f64,
    pub sd_range: [f64; 2],
    /// Overrides `sd_range` with one value for every stratum.
    pub sd: Option<f64>,
    /// Dirichlet concentration of the true age-sex proportions.
    pub agesex_concentration: f64,
    pub n_clusters: usize,
    pub design: Design,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            nrows: 100,
            ncols: 200,
            cellsize: 100.0,
            n_provinces: 2,
            regions_per_province: 2,
            n_covariates: 2,
            settled_fraction: 0.9,
            urban_fraction: 0.3,
            area_range: [1.0, 5.0],
            alpha_range: [2.0, 5.0],
            alpha_spread: 0.5,
            beta_max: 1.0,
            sd_range: [0.2, 1.0],
            sd: None,
            agesex_concentration: 200.0,
            n_clusters: 200,
            design: Design::Random,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nrows == 0 || self.ncols == 0 || !(self.cellsize > 0.0) {
            return bad("grid needs positive rows, columns and cell size".into());
        }
        if self.n_provinces == 0 || self.n_provinces > self.nrows {
            return bad(format!(
                "{} provinces cannot be laid out as bands of {} rows",
                self.n_provinces, self.nrows
            ));
        }
        if self.regions_per_province == 0 || self.regions_per_province > self.ncols {
            return bad(format!(
                "{} regions per province do not nest in {} columns",
                self.regions_per_province, self.ncols
            ));
        }
        if self.n_covariates == 0 {
            return bad("at least one covariate is required".into());
        }
        for (name, v) in [
            ("settled_fraction", self.settled_fraction),
            ("urban_fraction", self.urban_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let [a0, a1] = self.area_range;
        if !(a0 > 0.0 && a0 <= a1) {
            return bad(format!("area_range [{a0}, {a1}] must be positive and ordered"));
        }
        let [l0, l1] = self.alpha_range;
        if !(l0 <= l1) || !(self.alpha_spread >= 0.0) || 2.0 * self.alpha_spread > l1 - l0 {
            return bad("alpha_range must be ordered and wider than twice alpha_spread".into());
        }
        if !(self.beta_max >= 0.0) {
            return bad("beta_max must be non-negative".into());
        }
        let [s0, s1] = self.sd_range;
        if !(s0 >= 0.0 && s0 <= s1) {
            return bad(format!("sd_range [{s0}, {s1}] must be non-negative and ordered"));
        }
        if let Some(s) = self.sd {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("sd override must be finite and non-negative, got {s}"));
            }
        }
        if !(self.agesex_concentration > 0.0) {
            return bad("agesex_concentration must be positive".into());
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.n_covariates).map(|k| format!("cov_{k}")).collect()
    }

    pub fn province_of_row(&self, row: usize) -> u32 {
        (row * self.n_provinces / self.nrows) as u32 + 1
    }

    pub fn region_of(&self, row: usize, col: usize) -> u32 {
        let p = self.province_of_row(row) as usize - 1;
        let block = col * self.regions_per_province / self.ncols;
        (p * self.regions_per_province + block) as u32 + 1
    }
}

/// Known truth behind a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueWorld {
    pub config: WorldConfig,
    pub seed: u64,
    /// Standardised covariates, areas and admin layers.
    pub grid: GridStack,
    /// Per cell `log D`; NaN off the settled mask.
    pub log_density: Vec<f64>,
    /// Per cell `Dbar`; NaN off the settled mask.
    pub mean_log_density: Vec<f64>,
    pub population: Vec<u64>,
    pub xi: BTreeMap<(SettlementType, u32), f64>,
    /// Generating sd of `log D` per stratum.
    pub sd: BTreeMap<(SettlementType, u32), f64>,
    pub alpha: BTreeMap<(SettlementType, u32, u32), f64>,
    /// Slope per covariate and settlement type.
    pub beta: Vec<[f64; 2]>,
    pub pi: BTreeMap<u32, Vec<f64>>,
}

/// Clusters and age-sex records drawn from a world.
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    pub design: Design,
    pub cells: Vec<usize>,
    pub clusters: ClusterSet,
    pub agesex: Vec<AgeSexRecord>,
}

impl Survey {
    pub fn agesex_table(&self) -> Result<AgeSexTable> {
        agesex::aggregate_counts(&self.agesex)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub truth: TrueWorld,
    pub survey: Survey,
}

impl SyntheticWorld {
    /// Writes `grid/`, `clusters.csv`, `agesex.csv` and `truth.csv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.truth.grid.write_dir(dir.join("grid"))?;
        data::write_clusters(dir.join("clusters.csv"), &self.survey.clusters)?;
        agesex::write_records(dir.join("agesex.csv"), &self.survey.agesex)?;
        let path = dir.join("truth.csv");
        fs::write(&path, self.truth.truth_csv()).map_err(|e| Error::io(&path, e))
    }
}

impl TrueWorld {
    pub fn total_population(&self) -> u64 {
        self.population.iter().sum()
    }

    /// Generating values under the names used for posterior draws.
    pub fn named_values(&self) -> Vec<(&'static str, String, f64)> {
        let mut out = Vec::new();
        for (&(t, p), &v) in &self.xi {
            out.push(("xi", format!("xi[{t},{p}]"), v));
        }
        for (&(t, p), &v) in &self.sd {
            out.push(("tau", format!("tau_hat[{t},{p}]"), v));
        }
        for (&(t, p, l), &v) in &self.alpha {
            out.push(("alpha", format!("alpha[{t},{p},{l}]"), v));
        }
        for (name, b) in self.grid.covariate_names.iter().zip(&self.beta) {
            for t in [SettlementType::Urban, SettlementType::Rural] {
                out.push(("beta", format!("beta[{name},{t}]"), b[t.index()]));
            }
        }
        for (p, pi) in &self.pi {
            for (g, &v) in pi.iter().enumerate() {
                out.push(("pi", format!("pi[{p},{}]", agesex::group_key(g)), v));
            }
        }
        out
    }

    pub fn truth_csv(&self) -> String {
        let mut out = String::from("class,name,value\n");
        for (class, name, v) in self.named_values() {
            out.push_str(&format!("{class},{name},{v}\n"));
        }
        out.push_str(&format!("total,population,{}\n", self.total_population()));
        out
    }
}

/// Generates a world and a survey of `config.n_clusters` clusters under
/// `config.design`. Deterministic in `(config, seed)`.
pub fn gen_world(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    let truth = gen_truth(config, seed)?;
    let survey = weighted_sampling_sim(
        &truth,
        config.n_clusters,
        config.design,
        stats::mix_keys(seed, &[STREAM, 9]),
    )?;
    Ok(SyntheticWorld { truth, survey })
}

pub fn gen_truth(config: &WorldConfig, seed: u64) -> Result<TrueWorld> {
    config.validate()?;
    let types = [SettlementType::Urban, SettlementType::Rural];
    let n_prov = config.n_provinces as u32;
    let per = config.regions_per_province as u32;

    let mut rng = keyed_rng(seed, &[STREAM, 1]);
    let [l0, l1] = config.alpha_range;
    let spread = config.alpha_spread;
    let mut xi = BTreeMap::new();
    let mut sd = BTreeMap::new();
    let mut alpha = BTreeMap::new();
    for t in types {
        for p in 1..=n_prov {
            let x = rng.random_range(l0 + spread..=l1 - spread);
            xi.insert((t, p), x);
            let s = match config.sd {
                Some(s) => s,
                None => rng.random_range(config.sd_range[0]..=config.sd_range[1]),
            };
            sd.insert((t, p), s);
            for l in (p - 1) * per + 1..=p * per {
                alpha.insert((t, p, l), x + rng.random_range(-spread..=spread));
            }
        }
    }
    let beta: Vec<[f64; 2]> = (0..config.n_covariates)
        .map(|_| {
            [
                rng.random_range(-config.beta_max..=config.beta_max),
                rng.random_range(-config.beta_max..=config.beta_max),
            ]
        })
        .collect();

    let header = GridHeader::new(config.ncols, config.nrows, config.cellsize);
    let n = header.n_cells();
    let mut rng = keyed_rng(seed, &[STREAM, 2]);
    let mut area = vec![0.0; n];
    let mut settlement = vec![None; n];
    let mut province = vec![None; n];
    let mut region = vec![None; n];
    let mut covariates = vec![vec![f64::NAN; n]; config.n_covariates];
    let mut noise = vec![0.0; n];
    for i in 0..n {
        let (row, col) = (i / config.ncols, i % config.ncols);
        province[i] = Some(config.province_of_row(row));
        region[i] = Some(config.region_of(row, col));
        if rng.random::<f64>() >= config.settled_fraction {
            continue;
        }
        let t = if rng.random::<f64>() < config.urban_fraction {
            SettlementType::Urban
        } else {
            SettlementType::Rural
        };
        settlement[i] = Some(t);
        area[i] = rng.random_range(config.area_range[0]..=config.area_range[1]);
        for layer in covariates.iter_mut() {
            layer[i] = rng.sample(StandardNormal);
        }
        noise[i] = rng.sample(StandardNormal);
    }
    let settled: Vec<usize> = (0..n).filter(|&i| settlement[i].is_some()).collect();
    if settled.len() < 2 {
        return Err(Error::Config(format!(
            "world has {} settled cells; at least 2 are needed",
            settled.len()
        )));
    }
    for (k, layer) in covariates.iter_mut().enumerate() {
        let vals: Vec<f64> = settled.iter().map(|&i| layer[i]).collect();
        let (m, s) = (stats::mean(&vals), stats::sd(&vals));
        if !(s > 0.0) {
            return Err(Error::ZeroVariance(format!("cov_{}", k + 1)));
        }
        for &i in &settled {
            layer[i] = (layer[i] - m) / s;
        }
    }

    let mut log_density = vec![f64::NAN; n];
    let mut mean_log_density = vec![f64::NAN; n];
    let mut population = vec![0u64; n];
    for &i in &settled {
        let t = settlement[i].expect("settled cell has a type");
        let (p, l) = (province[i].unwrap_or(0), region[i].unwrap_or(0));
        let mut dbar = alpha[&(t, p, l)];
        for (k, b) in beta.iter().enumerate() {
            dbar += b[t.index()] * covariates[k][i];
        }
        let y = dbar + sd[&(t, p)] * noise[i];
        mean_log_density[i] = dbar;
        log_density[i] = y;
        population[i] = poisson(y.exp() * area[i], &mut rng)?;
    }

    let grid = GridStack::new(
        header,
        area,
        config.covariate_names(),
        covariates,
        settlement,
        province,
        region,
    )?;

    let mut rng = keyed_rng(seed, &[STREAM, 3]);
    let base = agesex_base(config.agesex_concentration);
    let mut pi = BTreeMap::new();
    for p in 1..=n_prov {
        pi.insert(p, agesex::sample_dirichlet(&base, &mut rng)?);
    }

    Ok(TrueWorld {
        config: config.clone(),
        seed,
        grid,
        log_density,
        mean_log_density,
        population,
        xi,
        sd,
        alpha,
        beta,
        pi,
    })
}

/// Dirichlet shapes for a young, slowly tapering pyramid.
fn agesex_base(concentration: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..N_GROUPS)
        .map(|g| {
            let band = g % N_AGE_BANDS;
            let width = match band {
                0 => 1.0,
                1 => 4.0,
                _ => 5.0,
            };
            width * (-(band as f64) / 5.0).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| concentration * x / total).collect()
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lambda)
        .map_err(|e| Error::invalid(format!("poisson mean {lambda}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Lower edge in years of an age band.
pub fn band_lower_age(band: usize) -> f64 {
    match band {
        0 => 0.0,
        1 => 1.0,
        b => 5.0 * (b as f64 - 1.0),
    }
}

/// Picks `n` of `populations.len()` candidates. `PopWeighted` draws without
/// replacement with weights proportional to population; zero-population
/// candidates are never chosen. Returned indices are ascending.
pub fn select_cells<R: Rng + ?Sized>(
    populations: &[u64],
    n: usize,
    design: Design,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut picked = match design {
        Design::Random => {
            if n > populations.len() {
                return Err(Error::invalid(format!(
                    "cannot sample {n} clusters from {} cells",
                    populations.len()
                )));
            }
            index::sample(rng, populations.len(), n).into_vec()
        }
        Design::PopWeighted => {
            let positive = populations.iter().filter(|&&p| p > 0).count();
            if n > positive {
                return Err(Error::invalid(format!(
                    "cannot sample {n} clusters from {positive} populated cells"
                )));
            }
            index::sample_weighted(rng, populations.len(), |i| populations[i] as f64, n)
                .map_err(|e| Error::invalid(format!("weighted selection failed: {e}")))?
                .into_vec()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Draws a survey from a world. Under `PopWeighted` each cluster records the
/// weight `n N_i / sum N`, its approximate inclusion probability; under
/// `Random` no weight is recorded.
pub fn weighted_sampling_sim(
    world: &TrueWorld,
    n_clusters: usize,
    design: Design,
    seed: u64,
) -> Result<Survey> {
    let grid = &world.grid;
    let candidates: Vec<usize> = grid.settled_cells().collect();
    let pops: Vec<u64> = candidates.iter().map(|&i| world.population[i]).collect();
    let mut rng = keyed_rng(seed, &[STREAM, 4]);
    let picked = select_cells(&pops, n_clusters, design, &mut rng)?;
    let total: f64 = pops.iter().map(|&p| p as f64).sum();

    let cells: Vec<usize> = picked.iter().map(|&j| candidates[j]).collect();
    let mut clusters = Vec::with_capacity(cells.len());
    let mut records = Vec::new();
    for &i in &cells {
        let unit = grid.unit(i).expect("candidate cells are settled");
        let n_i = world.population[i];
        let sampling_weight = match design {
            Design::Random => None,
            Design::PopWeighted => Some(n_clusters as f64 * n_i as f64 / total),
        };
        let id = format!("c{i}");
        clusters.push(ClusterRecord {
            cluster_id: id.clone(),
            province_id: unit.province_id,
            region_id: unit.region_id,
            settlement_type: unit.settlement_type,
            population: n_i,
            footprint_area: unit.footprint_area,
            covariates: unit.covariates,
            sampling_weight,
            model_weight: 1.0,
            reduced_coverage: false,
            centroid: grid.header.cell_center(i),
        });
        let pi = &world.pi[&unit.province_id];
        let counts = multinomial(n_i, pi, &mut rng)?;
        for (g, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            records.push(AgeSexRecord {
                province_id: unit.province_id,
                cluster_id: Some(id.clone()),
                sex: agesex::group_sex(g),
                age_years: band_lower_age(g % N_AGE_BANDS),
                count: c,
            });
        }
    }
    data::compute_model_weights(&mut clusters);
    Ok(Survey {
        design,
        cells,
        clusters: ClusterSet {
            covariate_names: grid.covariate_names.clone(),
            clusters,
        },
        agesex: records,
    })
}

/// Multinomial counts by sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut out = vec![0u64; p.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (g, &pg) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if g + 1 == p.len() {
            out[g] = left;
            break;
        }
        let q = if mass > 0.0 { (pg / mass).clamp(0.0, 1.0) } else { 0.0 };
        let b = Binomial::new(left, q).map_err(|e| Error::invalid(e.to_string()))?;
        out[g] = b.sample(rng);
        left -= out[g];
        mass -= pg;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub class: &'static str,
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalRecovery {
    pub truth: u64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub total: Option<TotalRecovery>,
}

impl RecoveryReport {
    /// Share of rows whose 95% interval holds the truth.
    pub fn coverage(&self) -> Option<f64> {
        coverage_of(self.rows.iter())
    }

    pub fn class_coverage(&self, class: &str) -> Option<f64> {
        coverage_of(self.rows.iter().filter(|r| r.class == class))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,name,truth,mean,lo95,hi95,covered\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.class, r.name, r.truth, r.mean, r.lo95, r.hi95, r.covered
            ));
        }
        if let Some(t) = &self.total {
            out.push_str(&format!(
                "total,population,{},{},{},{},{}\n",
                t.truth,
                t.mean,
                t.lo95,
                t.hi95,
                (t.truth as f64) >= t.lo95 && (t.truth as f64) <= t.hi95
            ));
        }
        out
    }
}

fn coverage_of<'a>(rows: impl Iterator<Item = &'a RecoveryRow>) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for r in rows {
        n += 1;
        hit += usize::from(r.covered);
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Compares posterior draws with the generating values. Parameters absent
/// from `draws` (unsampled units, fixed-mode slopes) are skipped; `pi` and
/// `total_draws` add age-sex and total-population rows when given.
pub fn recovery_report(
    world: &TrueWorld,
    draws: &PosteriorDraws,
    pi: Option<&ProportionDraws>,
    total_draws: Option<&[u64]>,
) -> RecoveryReport {
    let mut rows = Vec::new();
    for (class, name, truth) in world.named_values() {
        let sample = match class {
            "alpha" | "beta" | "tau" => draws.pooled_by_name(&name),
            "pi" => pi.and_then(|d| pi_draws(d, &name)),
            _ => None,
        };
        let Some(sample) = sample else { continue };
        if sample.is_empty() {
            continue;
        }
        let s = Summary::of(&sample);
        rows.push(RecoveryRow {
            class,
            name,
            truth,
            mean: s.mean,
            lo95: s.lo95,
            hi95: s.hi95,
            covered: s.contains(truth),
        });
    }
    let total = total_draws.filter(|t| !t.is_empty()).map(|t| {
        let vals: Vec<f64> = t.iter().map(|&x| x as f64).collect();
        let s = Summary::of(&vals);
        let truth = world.total_population();
        TotalRecovery {
            truth,
            mean: s.mean,
            lo95: s.lo95,
            hi95: s.hi95,
            relative_error: (s.mean - truth as f64) / truth as f64,
        }
    });
    RecoveryReport { rows, total }
}

fn pi_draws(draws: &ProportionDraws, name: &str) -> Option<Vec<f64>> {
    let inner = name.strip_prefix("pi[")?.strip_suffix(']')?;
    let (p, key) = inner.split_once(',')?;
    let p = draws.province_index(p.parse().ok()?)?;
    let g = (0..N_GROUPS).find(|&g| agesex::group_key(g) == key)?;
    Some(draws.group_draws(p, g))
}
