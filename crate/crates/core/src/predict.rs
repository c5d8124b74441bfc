//! Posterior predictive population for grid cells, clusters and zones.
//!
//! Every retained posterior draw used for prediction yields one fresh
//! stochastic count per location: `log D ~ Normal(Dbar, tau_hat)` and
//! `N ~ Poisson(D A)`. Randomness for location `i` and draw `d` comes from a
//! substream keyed by `(seed, domain, i, d)`, so outputs do not depend on
//! traversal order or thread count.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agesex::{self, ProportionDraws, N_GROUPS};
use crate::data::{GridStack, PredictionUnit, SettlementType};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::raster::{AsciiGrid, GridHeader};
use crate::stats::{keyed_rng, quantile_sorted};

/// RNG domain tags.
const DOMAIN_CELL: u64 = 1;
const DOMAIN_CLUSTER: u64 = 2;
const DOMAIN_ALPHA: u64 = 3;
const DOMAIN_STRATUM: u64 = 4;

type UnitKey = (SettlementType, u32, u32);
type StratumKey = (SettlementType, u32);

/// Column positions of the parameters prediction needs, recovered from draw
/// names.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub covariates: Vec<String>,
    beta: Vec<[usize; 2]>,
    alpha: HashMap<UnitKey, usize>,
    stratum_xi: HashMap<StratumKey, usize>,
    stratum_nu: HashMap<StratumKey, usize>,
    stratum_tau_hat: HashMap<StratumKey, usize>,
    type_xi: [Option<usize>; 2],
    type_nu: [Option<usize>; 2],
    type_tau_hat: [Option<usize>; 2],
}

fn split_name(name: &str) -> Option<(&str, Vec<&str>)> {
    let open = name.find('[')?;
    let inner = name[open + 1..].strip_suffix(']')?;
    Some((&name[..open], inner.split(',').collect()))
}

impl FittedModel {
    pub fn from_names(names: &[String]) -> Result<FittedModel> {
        let bad = |n: &str| Error::Format {
            file: "draws".into(),
            message: format!("cannot read parameter name `{n}`"),
        };
        let ty = |s: &str, n: &str| s.parse::<SettlementType>().map_err(|_| bad(n));
        let id = |s: &str, n: &str| s.parse::<u32>().map_err(|_| bad(n));
        let mut m = FittedModel {
            covariates: Vec::new(),
            beta: Vec::new(),
            alpha: HashMap::new(),
            stratum_xi: HashMap::new(),
            stratum_nu: HashMap::new(),
            stratum_tau_hat: HashMap::new(),
            type_xi: [None; 2],
            type_nu: [None; 2],
            type_tau_hat: [None; 2],
        };
        let mut beta: BTreeMap<usize, [Option<usize>; 2]> = BTreeMap::new();
        for (j, name) in names.iter().enumerate() {
            let Some((head, parts)) = split_name(name) else {
                continue;
            };
            match (head, parts.as_slice()) {
                ("alpha", [t, p, l]) => {
                    m.alpha.insert((ty(t, name)?, id(p, name)?, id(l, name)?), j);
                }
                ("xi", [t, p]) => {
                    m.stratum_xi.insert((ty(t, name)?, id(p, name)?), j);
                }
                ("nu", [t, p]) => {
                    m.stratum_nu.insert((ty(t, name)?, id(p, name)?), j);
                }
                ("tau_hat", [t, p]) => {
                    m.stratum_tau_hat.insert((ty(t, name)?, id(p, name)?), j);
                }
                ("xi", [t]) => m.type_xi[ty(t, name)?.index()] = Some(j),
                ("nu", [t]) => m.type_nu[ty(t, name)?.index()] = Some(j),
                ("tau_hat", [t]) => m.type_tau_hat[ty(t, name)?.index()] = Some(j),
                ("beta", [cov, rest @ ..]) if rest.len() <= 1 => {
                    let k = match m.covariates.iter().position(|c| c == cov) {
                        Some(k) => k,
                        None => {
                            m.covariates.push(cov.to_string());
                            m.covariates.len() - 1
                        }
                    };
                    let slot = beta.entry(k).or_insert([None; 2]);
                    match rest {
                        [t] => slot[ty(t, name)?.index()] = Some(j),
                        _ => *slot = [Some(j), Some(j)],
                    }
                }
                _ => {}
            }
        }
        for (k, cov) in m.covariates.iter().enumerate() {
            match beta[&k] {
                [Some(a), Some(b)] => m.beta.push([a, b]),
                _ => {
                    return Err(Error::Format {
                        file: "draws".into(),
                        message: format!("covariate `{cov}` is missing a slope for one settlement type"),
                    })
                }
            }
        }
        if m.alpha.is_empty() {
            return Err(Error::Format {
                file: "draws".into(),
                message: "no intercept columns found".into(),
            });
        }
        Ok(m)
    }

    /// Prediction parameters of one posterior row for a set of units.
    fn draw_context(
        &self,
        row: &[f64],
        units: &[UnitKey],
        seed: u64,
        draw: usize,
    ) -> Result<DrawContext> {
        let beta = self.beta.iter().map(|b| [row[b[0]], row[b[1]]]).collect();
        let mut alpha = HashMap::with_capacity(units.len());
        let mut sd = HashMap::new();
        let mut stratum_draws: HashMap<StratumKey, (f64, f64)> = HashMap::new();
        for &key @ (t, p, l) in units {
            let s_key = (t, p);
            let a = match self.alpha.get(&key) {
                Some(&j) => row[j],
                None => {
                    let (xi, nu) = match (self.stratum_xi.get(&s_key), self.stratum_nu.get(&s_key)) {
                        (Some(&jx), Some(&jn)) => (row[jx], row[jn]),
                        _ => *match stratum_draws.entry(s_key) {
                            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(self.unseen_stratum(row, t, p, seed, draw)?)
                            }
                        },
                    };
                    let mut rng = keyed_rng(
                        seed,
                        &[DOMAIN_ALPHA, t.index() as u64, u64::from(p), u64::from(l), draw as u64],
                    );
                    xi + nu * rng.sample::<f64, _>(StandardNormal)
                }
            };
            alpha.insert(key, a);
            if let std::collections::hash_map::Entry::Vacant(e) = sd.entry(s_key) {
                let j = self
                    .stratum_tau_hat
                    .get(&s_key)
                    .copied()
                    .or(self.type_tau_hat[t.index()])
                    .ok_or_else(|| {
                        Error::invalid(format!("model has no {t} clusters to predict {t} cells"))
                    })?;
                e.insert(row[j]);
            }
        }
        Ok(DrawContext { alpha, sd, beta })
    }

    /// Intercept hyper-mean and sd for a stratum with no survey data, drawn
    /// from the type-level hyper-distribution.
    fn unseen_stratum(&self, row: &[f64], t: SettlementType, p: u32, seed: u64, draw: usize) -> Result<(f64, f64)> {
        let (Some(jx), Some(jn)) = (self.type_xi[t.index()], self.type_nu[t.index()]) else {
            return Err(Error::invalid(format!("model has no {t} clusters to predict {t} cells")));
        };
        let mut rng = keyed_rng(seed, &[DOMAIN_STRATUM, t.index() as u64, u64::from(p), draw as u64]);
        let xi = row[jx] + row[jn] * rng.sample::<f64, _>(StandardNormal);
        let nu = row[jn] * rng.random::<f64>();
        Ok((xi, nu))
    }
}

struct DrawContext {
    alpha: HashMap<UnitKey, f64>,
    sd: HashMap<StratumKey, f64>,
    beta: Vec<[f64; 2]>,
}

impl DrawContext {
    fn dbar_sd(&self, u: &PredictionUnit) -> (f64, f64) {
        let t = u.settlement_type;
        let mut dbar = self.alpha[&(t, u.province_id, u.region_id)];
        for (b, x) in self.beta.iter().zip(&u.covariates) {
            dbar += b[t.index()] * x;
        }
        (dbar, self.sd[&(t, u.province_id)])
    }
}

/// One predictive count: `log D ~ Normal(dbar, sd)`, `N ~ Poisson(D area)`.
/// Returns the count and the drawn density.
pub fn predict_cell_draw<R: Rng + ?Sized>(dbar: f64, sd: f64, area: f64, rng: &mut R) -> (u64, f64) {
    let z: f64 = rng.sample(StandardNormal);
    let density = (dbar + sd * z).exp();
    (poisson_draw(density * area, rng), density)
}

fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda > 1e12 {
        let z: f64 = rng.sample(StandardNormal);
        return (lambda + lambda.sqrt() * z).round().max(0.0) as u64;
    }
    match Poisson::new(lambda) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Evenly spaced row indices: all rows when `n >= total`.
pub fn subsample_rows(total: usize, n: usize) -> Vec<usize> {
    if n >= total {
        (0..total).collect()
    } else {
        (0..n).map(|i| i * total / n).collect()
    }
}

/// Predictive draws per location, location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDraws {
    pub n_draws: usize,
    pub counts: Vec<u64>,
    pub densities: Vec<f64>,
}

impl UnitDraws {
    pub fn counts_of(&self, i: usize) -> &[u64] {
        &self.counts[i * self.n_draws..(i + 1) * self.n_draws]
    }

    pub fn densities_of(&self, i: usize) -> &[f64] {
        &self.densities[i * self.n_draws..(i + 1) * self.n_draws]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            n_draws: 1000,
            seed: 1,
        }
    }
}

/// Predicts every unit for each subsampled posterior draw. `keys[i]` labels
/// unit `i` in the RNG stream.
fn predict_units(
    draws: &PosteriorDraws,
    model: &FittedModel,
    units: &[PredictionUnit],
    keys: &[u64],
    domain: u64,
    config: &PredictConfig,
) -> Result<UnitDraws> {
    if config.n_draws == 0 {
        return Err(Error::invalid("prediction needs at least one draw"));
    }
    let rows = subsample_rows(draws.total_rows(), config.n_draws);
    if rows.is_empty() {
        return Err(Error::invalid("no posterior draws to predict from"));
    }
    let mut unit_keys: Vec<UnitKey> = units
        .iter()
        .map(|u| (u.settlement_type, u.province_id, u.region_id))
        .collect();
    unit_keys.sort();
    unit_keys.dedup();
    let contexts = rows
        .par_iter()
        .enumerate()
        .map(|(d, &r)| {
            let row = draws.pooled_row(r).expect("row index within range");
            model.draw_context(row, &unit_keys, config.seed, d)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let per_unit: Vec<(Vec<u64>, Vec<f64>)> = units
        .par_iter()
        .zip(keys.par_iter())
        .map(|(u, &key)| {
            let mut counts = Vec::with_capacity(n);
            let mut dens = Vec::with_capacity(n);
            for (d, ctx) in contexts.iter().enumerate() {
                let (dbar, sd) = ctx.dbar_sd(u);
                let mut rng = keyed_rng(config.seed, &[domain, key, d as u64]);
                let (c, dd) = predict_cell_draw(dbar, sd, u.footprint_area, &mut rng);
                counts.push(c);
                dens.push(dd);
            }
            (counts, dens)
        })
        .collect();
    let mut counts = Vec::with_capacity(units.len() * n);
    let mut densities = Vec::with_capacity(units.len() * n);
    for (c, d) in per_unit {
        counts.extend(c);
        densities.extend(d);
    }
    Ok(UnitDraws {
        n_draws: n,
        counts,
        densities,
    })
}

fn reorder_covariates(
    model: &FittedModel,
    names: &[String],
) -> Result<Vec<usize>> {
    model
        .covariates
        .iter()
        .map(|c| {
            names.iter().position(|n| n == c).ok_or_else(|| {
                Error::CovariateMismatch(format!("model covariate `{c}` not among [{}]", names.join(", ")))
            })
        })
        .collect()
}

/// Posterior predictive draws for survey clusters, e.g. for in-sample fit.
pub fn predict_clusters(
    draws: &PosteriorDraws,
    clusters: &crate::data::ClusterSet,
    config: &PredictConfig,
) -> Result<UnitDraws> {
    let model = FittedModel::from_names(&draws.names)?;
    let order = reorder_covariates(&model, &clusters.covariate_names)?;
    let units: Vec<PredictionUnit> = clusters
        .clusters
        .iter()
        .map(|c| PredictionUnit {
            settlement_type: c.settlement_type,
            province_id: c.province_id,
            region_id: c.region_id,
            footprint_area: c.footprint_area,
            covariates: order.iter().map(|&k| c.covariates[k]).collect(),
        })
        .collect();
    let keys: Vec<u64> = (0..units.len() as u64).collect();
    predict_units(draws, &model, &units, &keys, DOMAIN_CLUSTER, config)
}

/// Per-cell summary of predictive counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl CellSummary {
    pub fn of_counts(counts: &[u64]) -> CellSummary {
        let mut v: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Self::of_values(&mut v)
    }

    pub fn of_values(v: &mut [f64]) -> CellSummary {
        v.sort_by(f64::total_cmp);
        CellSummary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile_sorted(v, 0.5),
            lo95: quantile_sorted(v, 0.025),
            hi95: quantile_sorted(v, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub header: GridHeader,
    /// Settled cell indices, in raster order.
    pub cells: Vec<usize>,
    pub provinces: Vec<u32>,
    pub draws: UnitDraws,
    pub summaries: Vec<CellSummary>,
}

impl GridPrediction {
    fn raster(&self, f: impl Fn(&CellSummary) -> f64) -> AsciiGrid {
        let mut g = AsciiGrid::filled(self.header, self.header.nodata);
        for (pos, &cell) in self.cells.iter().enumerate() {
            g.data[cell] = f(&self.summaries[pos]);
        }
        g
    }

    pub fn mean_raster(&self) -> AsciiGrid {
        self.raster(|s| s.mean)
    }

    pub fn median_raster(&self) -> AsciiGrid {
        self.raster(|s| s.median)
    }

    pub fn lo95_raster(&self) -> AsciiGrid {
        self.raster(|s| s.lo95)
    }

    pub fn hi95_raster(&self) -> AsciiGrid {
        self.raster(|s| s.hi95)
    }

    /// Writes `pop_mean.asc`, `pop_median.asc`, `pop_lo95.asc` and
    /// `pop_hi95.asc`.
    pub fn write_rasters(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mean_raster().write(dir.join("pop_mean.asc"))?;
        self.median_raster().write(dir.join("pop_median.asc"))?;
        self.lo95_raster().write(dir.join("pop_lo95.asc"))?;
        self.hi95_raster().write(dir.join("pop_hi95.asc"))?;
        Ok(())
    }

    /// Per-draw total over all settled cells.
    pub fn total_draws(&self) -> Vec<u64> {
        let n = self.draws.n_draws;
        let mut totals = vec![0u64; n];
        for pos in 0..self.cells.len() {
            for (t, c) in totals.iter_mut().zip(self.draws.counts_of(pos)) {
                *t += c;
            }
        }
        totals
    }
}

/// Predicts every settled cell of a grid whose covariates were scaled with
/// the training statistics.
pub fn predict_grid(draws: &PosteriorDraws, grid: &GridStack, config: &PredictConfig) -> Result<GridPrediction> {
    let model = FittedModel::from_names(&draws.names)?;
    let order = reorder_covariates(&model, &grid.covariate_names)?;
    let cells: Vec<usize> = grid.settled_cells().collect();
    let units: Vec<PredictionUnit> = cells
        .iter()
        .map(|&c| {
            let mut u = grid.unit(c).expect("settled cell");
            u.covariates = order.iter().map(|&k| grid.covariates[k][c]).collect();
            u
        })
        .collect();
    let keys: Vec<u64> = cells.iter().map(|&c| c as u64).collect();
    let unit_draws = predict_units(draws, &model, &units, &keys, DOMAIN_CELL, config)?;
    let summaries = (0..cells.len())
        .into_par_iter()
        .map(|pos| CellSummary::of_counts(unit_draws.counts_of(pos)))
        .collect();
    Ok(GridPrediction {
        header: grid.header,
        provinces: units.iter().map(|u| u.province_id).collect(),
        cells,
        draws: unit_draws,
        summaries,
    })
}

/// Splits an integer total across groups by largest remainder, so the parts
/// always sum to `total`. Ties go to the lower group index.
pub fn split_total(total: u64, pi: &[f64]) -> Vec<u64> {
    let quotas: Vec<f64> = pi.iter().map(|p| total as f64 * p.max(0.0)).collect();
    let mut parts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    if assigned <= total {
        order.sort_by(|&a, &b| {
            let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut left = total - assigned;
        for &g in order.iter().cycle() {
            if left == 0 || parts.is_empty() {
                break;
            }
            parts[g] += 1;
            left -= 1;
        }
    } else {
        order.sort_by(|&a, &b| {
            let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            fa.total_cmp(&fb).then(b.cmp(&a))
        });
        let mut excess = assigned - total;
        while excess > 0 {
            for &g in &order {
                if excess > 0 && parts[g] > 0 {
                    parts[g] -= 1;
                    excess -= 1;
                }
            }
        }
    }
    parts
}

/// Per-group summaries, `[group][cell position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub summaries: Vec<Vec<CellSummary>>,
}

fn province_positions(pred: &GridPrediction, pi: &ProportionDraws) -> Result<Vec<usize>> {
    if pi.n_draws < pred.draws.n_draws {
        return Err(Error::invalid(format!(
            "{} proportion draws for {} prediction draws",
            pi.n_draws, pred.draws.n_draws
        )));
    }
    pred.provinces
        .iter()
        .map(|&p| {
            pi.province_index(p)
                .ok_or_else(|| Error::invalid(format!("no age-sex table for province {p}")))
        })
        .collect()
}

fn split_cell(counts: &[u64], pi: &ProportionDraws, p: usize) -> Vec<Vec<u64>> {
    counts
        .iter()
        .enumerate()
        .map(|(d, &c)| split_total(c, pi.draw(p, d)))
        .collect()
}

/// Per-draw group counts of the cell at `pos`, `[draw][group]`; draw `d`
/// of the total is split with proportion draw `d` of the cell's province.
pub fn cell_agesex_draws(pred: &GridPrediction, pi: &ProportionDraws, pos: usize) -> Result<Vec<Vec<u64>>> {
    if pos >= pred.cells.len() {
        return Err(Error::Index(format!("cell position {pos} out of range")));
    }
    let prov = province_positions(pred, pi)?;
    Ok(split_cell(pred.draws.counts_of(pos), pi, prov[pos]))
}

pub fn disaggregate_agesex(pred: &GridPrediction, pi: &ProportionDraws) -> Result<GroupPrediction> {
    let prov_idx = province_positions(pred, pi)?;
    let per_cell: Vec<Vec<CellSummary>> = (0..pred.cells.len())
        .into_par_iter()
        .map(|pos| {
            let split = split_cell(pred.draws.counts_of(pos), pi, prov_idx[pos]);
            (0..N_GROUPS)
                .map(|g| {
                    let mut v: Vec<f64> = split.iter().map(|s| s[g] as f64).collect();
                    CellSummary::of_values(&mut v)
                })
                .collect()
        })
        .collect();
    let summaries = (0..N_GROUPS)
        .map(|g| per_cell.iter().map(|c| c[g]).collect())
        .collect();
    Ok(GroupPrediction { summaries })
}

impl GroupPrediction {
    pub fn mean_raster(&self, pred: &GridPrediction, group: usize) -> AsciiGrid {
        let mut g = AsciiGrid::filled(pred.header, pred.header.nodata);
        for (pos, &cell) in pred.cells.iter().enumerate() {
            g.data[cell] = self.summaries[group][pos].mean;
        }
        g
    }

    /// Writes `pop_<group key>.asc` with the mean per group.
    pub fn write_rasters(&self, pred: &GridPrediction, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for g in 0..N_GROUPS {
            self.mean_raster(pred, g)
                .write(dir.join(format!("pop_{}.asc", agesex::group_key(g))))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary {
    pub zone_id: i64,
    pub n_cells: usize,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Sums cell draws per zone within each draw, then summarises the sums.
pub fn aggregate_zones(pred: &GridPrediction, zones: &AsciiGrid) -> Result<Vec<ZoneSummary>> {
    if !zones.header.is_coregistered(&pred.header) {
        return Err(Error::HeaderMismatch("zone raster does not match the prediction grid".into()));
    }
    let n = pred.draws.n_draws;
    let mut sums: BTreeMap<i64, (usize, Vec<u64>)> = BTreeMap::new();
    for (pos, &cell) in pred.cells.iter().enumerate() {
        let Some(z) = zones.get(cell) else { continue };
        let entry = sums.entry(z.round() as i64).or_insert_with(|| (0, vec![0; n]));
        entry.0 += 1;
        for (s, c) in entry.1.iter_mut().zip(pred.draws.counts_of(pos)) {
            *s += c;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(zone_id, (n_cells, totals))| {
            let s = CellSummary::of_counts(&totals);
            ZoneSummary {
                zone_id,
                n_cells,
                mean: s.mean,
                lo95: s.lo95,
                hi95: s.hi95,
            }
        })
        .collect())
}

pub fn zones_csv(zones: &[ZoneSummary]) -> String {
    let mut out = String::from("zone_id,mean,lo95,hi95\n");
    for z in zones {
        out.push_str(&format!("{},{},{},{}\n", z.zone_id, z.mean, z.lo95, z.hi95));
    }
    out
}
