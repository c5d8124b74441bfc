//! Model checking: residual metrics, k-fold cross-validation, Moran's I and
//! empirical semivariograms.

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::agesex::{self, AgeSexRecord, N_GROUPS};
use crate::data::{compute_model_weights, ClusterSet};
use crate::error::{Error, Result};
use crate::mcmc::ChainConfig;
use crate::model::{self, EffectMode, Priors};
use crate::predict::{self, CellSummary, PredictConfig, UnitDraws};
use crate::stats::{self, keyed_rng, mix_keys};

/// Residuals are `mean prediction - observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMetrics {
    pub n: usize,
    pub bias: f64,
    pub imprecision: f64,
    pub inaccuracy: f64,
    /// Same three statistics on `residual / mean prediction`, over units
    /// with a nonzero mean prediction.
    pub bias_scaled: Option<f64>,
    pub imprecision_scaled: Option<f64>,
    pub inaccuracy_scaled: Option<f64>,
    /// Squared correlation of observed and mean predicted values.
    pub r2: Option<f64>,
    /// Percent of observations inside the 95% predictive interval.
    pub coverage95: f64,
}

pub fn residual_metrics(observed: &[f64], predicted: &[CellSummary]) -> Result<ResidualMetrics> {
    if observed.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} observations for {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::invalid("residual metrics need at least 2 units"));
    }
    let resid: Vec<f64> = predicted.iter().zip(observed).map(|(p, o)| p.mean - o).collect();
    let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
    let scaled: Vec<f64> = resid
        .iter()
        .zip(predicted)
        .filter(|(_, p)| p.mean != 0.0)
        .map(|(r, p)| r / p.mean)
        .collect();
    let scaled_abs: Vec<f64> = scaled.iter().map(|r| r.abs()).collect();
    let means: Vec<f64> = predicted.iter().map(|p| p.mean).collect();
    let inside = predicted
        .iter()
        .zip(observed)
        .filter(|(p, &o)| p.lo95 <= o && o <= p.hi95)
        .count();
    let some_if = |ok: bool, v: f64| ok.then_some(v);
    Ok(ResidualMetrics {
        n: observed.len(),
        bias: stats::mean(&resid),
        imprecision: stats::sd(&resid),
        inaccuracy: stats::mean(&abs),
        bias_scaled: some_if(!scaled.is_empty(), stats::mean(&scaled)),
        imprecision_scaled: some_if(scaled.len() > 1, stats::sd(&scaled)),
        inaccuracy_scaled: some_if(!scaled.is_empty(), stats::mean(&scaled_abs)),
        r2: stats::pearson(observed, &means).map(|r| r * r),
        coverage95: 100.0 * inside as f64 / observed.len() as f64,
    })
}

/// Summaries of predictive counts per unit.
pub fn count_summaries(draws: &UnitDraws, n_units: usize) -> Vec<CellSummary> {
    (0..n_units).map(|i| CellSummary::of_counts(draws.counts_of(i))).collect()
}

/// Summaries of predictive densities `N / A` per unit.
pub fn density_summaries(draws: &UnitDraws, areas: &[f64]) -> Vec<CellSummary> {
    areas
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut v: Vec<f64> = draws.counts_of(i).iter().map(|&c| c as f64 / a).collect();
            CellSummary::of_values(&mut v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub estimate: String,
    pub prediction: String,
    pub metrics: ResidualMetrics,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from(
        "Estimate,Prediction,Bias,Bias (scaled),Imprecision,Imprecision (scaled),Inaccuracy,Inaccuracy (scaled),R²,95% CI\n",
    );
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.estimate,
            r.prediction,
            m.bias,
            opt(m.bias_scaled),
            m.imprecision,
            opt(m.imprecision_scaled),
            m.inaccuracy,
            opt(m.inaccuracy_scaled),
            opt(m.r2),
            m.coverage95
        ));
    }
    out
}

/// Tab-separated, two decimals, scaled values in parentheses:
/// `13.43 (-0.03)  173.28 (0.44)  105.61 (0.29)  0.79  90.50%`.
pub fn table1_text(rows: &[Table1Row]) -> String {
    let pair = |v: f64, s: Option<f64>| match s {
        Some(s) => format!("{v:.2} ({s:.2})"),
        None => format!("{v:.2} (NA)"),
    };
    let mut out = String::from("Estimate\tPrediction\tBias\tImprecision\tInaccuracy\tR^2\t95% CI\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.2}%\n",
            r.estimate,
            r.prediction,
            pair(m.bias, m.bias_scaled),
            pair(m.imprecision, m.imprecision_scaled),
            pair(m.inaccuracy, m.inaccuracy_scaled),
            m.r2.map(|r| format!("{r:.2}")).unwrap_or_else(|| "NA".into()),
            m.coverage95
        ));
    }
    out
}

/// One point of an observed-versus-predicted scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub target: String,
    pub mode: String,
    pub cluster_id: String,
    pub settlement_type: String,
    pub observed: f64,
    pub predicted: CellSummary,
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("target,mode,cluster_id,settlement_type,observed,mean,lo95,hi95\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.target,
            p.mode,
            p.cluster_id,
            p.settlement_type,
            p.observed,
            p.predicted.mean,
            p.predicted.lo95,
            p.predicted.hi95
        ));
    }
    out
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most
/// one. Returns the fold of each unit.
pub fn kfold_assign(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds {n} units")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, &[0xf01d]));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// Held-out predictive draws for every cluster, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<usize>,
    pub counts: Vec<CellSummary>,
    pub densities: Vec<CellSummary>,
}

/// Refits the model `k` times, each time without one fold, and predicts the
/// held-out clusters. Folds run concurrently with fold-keyed seeds.
pub fn kfold_cv(
    set: &ClusterSet,
    modes: &[EffectMode],
    priors: Priors,
    chain: &ChainConfig,
    predict_cfg: &PredictConfig,
    k: usize,
    seed: u64,
) -> Result<CrossValidation> {
    let folds = kfold_assign(set.len(), k, seed)?;
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..set.len()).filter(|&i| folds[i] != f).collect();
            let test_idx: Vec<usize> = (0..set.len()).filter(|&i| folds[i] == f).collect();
            let mut train = set.subset(&train_idx);
            compute_model_weights(&mut train.clusters);
            let cfg = ChainConfig {
                seed: mix_keys(chain.seed, &[f as u64]),
                ..chain.clone()
            };
            info!("fold {}/{k}: fitting on {} clusters", f + 1, train.len());
            let draws = model::fit(&train, modes, priors, &cfg)?;
            let test = set.subset(&test_idx);
            let pcfg = PredictConfig {
                seed: mix_keys(predict_cfg.seed, &[f as u64]),
                ..*predict_cfg
            };
            let pred = predict::predict_clusters(&draws, &test, &pcfg)?;
            let areas: Vec<f64> = test.clusters.iter().map(|c| c.footprint_area).collect();
            Ok((
                test_idx,
                count_summaries(&pred, areas.len()),
                density_summaries(&pred, &areas),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let empty = CellSummary {
        mean: f64::NAN,
        median: f64::NAN,
        lo95: f64::NAN,
        hi95: f64::NAN,
    };
    let mut counts = vec![empty; set.len()];
    let mut densities = vec![empty; set.len()];
    for (idx, c, d) in per_fold {
        for (j, &i) in idx.iter().enumerate() {
            counts[i] = c[j];
            densities[i] = d[j];
        }
    }
    Ok(CrossValidation {
        folds,
        counts,
        densities,
    })
}

/// In- and out-of-sample fit of province age-sex proportions. For each
/// province a fraction of clusters is held out; the out-of-sample posterior
/// comes from the remaining clusters and is compared with the held-out
/// proportions, the in-sample posterior from all clusters with all records.
pub fn agesex_cv(
    records: &[AgeSexRecord],
    holdout_fraction: f64,
    n_draws: usize,
    seed: u64,
) -> Result<(ResidualMetrics, ResidualMetrics)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
    }
    let mut clusters: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for r in records {
        let id = r.cluster_id.as_deref().ok_or_else(|| {
            Error::invalid("age-sex cross-validation needs a cluster_id column")
        })?;
        clusters.entry(r.province_id).or_default().push(id);
    }
    let mut held: std::collections::HashSet<(u32, String)> = Default::default();
    for (&p, ids) in clusters.iter_mut() {
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::invalid(format!(
                "province {p} has {} surveyed cluster(s); need 2 to hold one out",
                ids.len()
            )));
        }
        let n_out = ((ids.len() as f64 * holdout_fraction).round() as usize).clamp(1, ids.len() - 1);
        let mut rng = keyed_rng(seed, &[0xa6e, u64::from(p)]);
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        for id in &shuffled[..n_out] {
            held.insert((p, id.to_string()));
        }
    }
    let is_held = |r: &AgeSexRecord| held.contains(&(r.province_id, r.cluster_id.clone().unwrap_or_default()));
    let train: Vec<AgeSexRecord> = records.iter().filter(|r| !is_held(r)).cloned().collect();
    let test: Vec<AgeSexRecord> = records.iter().filter(|r| is_held(r)).cloned().collect();

    let all = agesex::aggregate_counts(records)?;
    let in_draws = agesex::sample_pi(&all, n_draws, seed)?;
    let (obs_in, pred_in) = compare_proportions(&all, &in_draws)?;

    let train_t = agesex::aggregate_counts(&train)?;
    let test_t = agesex::aggregate_counts(&test)?;
    let out_draws = agesex::sample_pi(&train_t, n_draws, mix_keys(seed, &[1]))?;
    let (obs_out, pred_out) = compare_proportions(&test_t, &out_draws)?;
    Ok((
        residual_metrics(&obs_in, &pred_in)?,
        residual_metrics(&obs_out, &pred_out)?,
    ))
}

fn compare_proportions(
    observed: &agesex::AgeSexTable,
    draws: &agesex::ProportionDraws,
) -> Result<(Vec<f64>, Vec<CellSummary>)> {
    let mut obs = Vec::new();
    let mut pred = Vec::new();
    for (p, &pid) in observed.provinces.iter().enumerate() {
        let q = draws
            .province_index(pid)
            .ok_or_else(|| Error::invalid(format!("no proportions for province {pid}")))?;
        let props = observed.proportions(p);
        for (g, &o) in props.iter().enumerate().take(N_GROUPS) {
            obs.push(o);
            pred.push(CellSummary::of_values(&mut draws.group_draws(q, g)));
        }
    }
    Ok((obs, pred))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborRule {
    /// The `k` nearest other units; ties broken by index.
    Knn(usize),
    /// Every other unit within this distance, inclusive.
    Distance(f64),
}

impl Default for NeighborRule {
    fn default() -> Self {
        NeighborRule::Knn(5)
    }
}

/// Row-standardised neighbour weights as sparse rows.
pub fn spatial_weights(coords: &[(f64, f64)], rule: NeighborRule) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = coords.len();
    let dist = |i: usize, j: usize| {
        let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
        (dx * dx + dy * dy).sqrt()
    };
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let neighbors: Vec<usize> = match rule {
                NeighborRule::Knn(k) => {
                    let mut others: Vec<(f64, usize)> =
                        (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
                    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    others.into_iter().take(k).map(|(_, j)| j).collect()
                }
                NeighborRule::Distance(d) => (0..n).filter(|&j| j != i && dist(i, j) <= d).collect(),
            };
            let w = 1.0 / neighbors.len().max(1) as f64;
            neighbors.into_iter().map(|j| (j, w)).collect()
        })
        .collect();
    match rule {
        NeighborRule::Knn(0) => Err(Error::invalid("k-nearest neighbours needs k >= 1")),
        NeighborRule::Distance(d) if !(d > 0.0) => Err(Error::invalid("distance threshold must be positive")),
        _ => Ok(rows),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoranResult {
    /// `None` when the values are constant.
    pub i: Option<f64>,
    pub expected: f64,
    /// Two-sided permutation p-value, `(1 + extreme) / (1 + permutations)`.
    pub p_value: Option<f64>,
    pub permutation_mean: Option<f64>,
    pub permutation_sd: Option<f64>,
    pub n_permutations: usize,
}

fn moran_statistic(z: &[f64], weights: &[Vec<(usize, f64)>], s0: f64) -> f64 {
    let n = z.len() as f64;
    let denom: f64 = z.iter().map(|v| v * v).sum();
    let num: f64 = weights
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|&(j, w)| w * z[i] * z[j]).sum::<f64>())
        .sum();
    n / s0 * num / denom
}

pub const MIN_PERMUTATIONS: usize = 999;

pub fn morans_i(
    values: &[f64],
    coords: &[(f64, f64)],
    rule: NeighborRule,
    n_permutations: usize,
    seed: u64,
) -> Result<MoranResult> {
    let n = values.len();
    if n != coords.len() {
        return Err(Error::invalid("values and coordinates differ in length"));
    }
    if n < 4 {
        return Err(Error::invalid("Moran's I needs at least 4 units"));
    }
    let expected = -1.0 / (n as f64 - 1.0);
    let weights = spatial_weights(coords, rule)?;
    let s0: f64 = weights.iter().flatten().map(|(_, w)| w).sum();
    let m = stats::mean(values);
    let z: Vec<f64> = values.iter().map(|v| v - m).collect();
    if z.iter().all(|v| *v == 0.0) || s0 == 0.0 {
        return Ok(MoranResult {
            i: None,
            expected,
            p_value: None,
            permutation_mean: None,
            permutation_sd: None,
            n_permutations: 0,
        });
    }
    let observed = moran_statistic(&z, &weights, s0);
    let n_perm = n_permutations.max(MIN_PERMUTATIONS);
    let perms: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut zp = z.clone();
            zp.shuffle(&mut keyed_rng(seed, &[0x3012, r as u64]));
            moran_statistic(&zp, &weights, s0)
        })
        .collect();
    let dev = (observed - expected).abs();
    let extreme = perms.iter().filter(|p| (*p - expected).abs() >= dev - 1e-12).count();
    Ok(MoranResult {
        i: Some(observed),
        expected,
        p_value: Some((1 + extreme) as f64 / (1 + n_perm) as f64),
        permutation_mean: Some(stats::mean(&perms)),
        permutation_sd: Some(stats::sd(&perms)),
        n_permutations: n_perm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramBin {
    pub lo: f64,
    pub hi: f64,
    pub lag: f64,
    pub gamma: Option<f64>,
    pub pairs: usize,
}

/// Empirical semivariogram over half-open distance bins `[lo, hi)`.
pub fn semivariogram(values: &[f64], coords: &[(f64, f64)], bin_edges: &[f64]) -> Result<Vec<VariogramBin>> {
    if values.len() != coords.len() {
        return Err(Error::invalid("values and coordinates differ in length"));
    }
    if bin_edges.len() < 3 {
        return Err(Error::invalid("semivariogram needs at least 2 bins"));
    }
    if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bin edges must increase strictly"));
    }
    let nb = bin_edges.len() - 1;
    let n = values.len();
    let (sums, counts) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = vec![0.0; nb];
            let mut c = vec![0usize; nb];
            for j in i + 1..n {
                let d = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
                if d < bin_edges[0] || d >= bin_edges[nb] {
                    continue;
                }
                let b = bin_edges.partition_point(|&e| e <= d) - 1;
                s[b] += (values[i] - values[j]).powi(2);
                c[b] += 1;
            }
            (s, c)
        })
        .reduce(
            || (vec![0.0; nb], vec![0; nb]),
            |(mut s1, mut c1), (s2, c2)| {
                for b in 0..nb {
                    s1[b] += s2[b];
                    c1[b] += c2[b];
                }
                (s1, c1)
            },
        );
    Ok((0..nb)
        .map(|b| VariogramBin {
            lo: bin_edges[b],
            hi: bin_edges[b + 1],
            lag: 0.5 * (bin_edges[b] + bin_edges[b + 1]),
            gamma: (counts[b] > 0).then(|| sums[b] / (2.0 * counts[b] as f64)),
            pairs: counts[b],
        })
        .collect())
}

/// `n_bins` equal bins up to half the largest pairwise distance.
pub fn default_bin_edges(coords: &[(f64, f64)], n_bins: usize) -> Vec<f64> {
    let mut max_d: f64 = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let d = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
            max_d = max_d.max(d);
        }
    }
    let top = (max_d / 2.0).max(f64::MIN_POSITIVE);
    (0..=n_bins.max(2)).map(|b| top * b as f64 / n_bins.max(2) as f64).collect()
}

pub fn variogram_csv(bins: &[VariogramBin]) -> String {
    let mut out = String::from("lo,hi,lag,gamma,pairs\n");
    for b in bins {
        out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.lag, opt(b.gamma), b.pairs));
    }
    out
}

pub fn moran_csv(label: &str, m: &MoranResult) -> String {
    format!(
        "series,I,expected,p_value,permutation_mean,permutation_sd,permutations\n{label},{},{},{},{},{},{}\n",
        opt(m.i),
        m.expected,
        opt(m.p_value),
        opt(m.permutation_mean),
        opt(m.permutation_sd),
        m.n_permutations
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = keyed_rng(seed, &[]);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn exact(vals: &[f64]) -> Vec<CellSummary> {
        vals.iter()
            .map(|&v| CellSummary {
                mean: v,
                median: v,
                lo95: v,
                hi95: v,
            })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let obs = [10.0, 20.0, 35.0, 4.0];
        let m = residual_metrics(&obs, &exact(&obs)).unwrap();
        assert_eq!((m.bias, m.imprecision, m.inaccuracy), (0.0, 0.0, 0.0));
        assert_eq!(m.coverage95, 100.0);
        assert!((m.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let obs = [10.0, 20.0, 35.0, 4.0];
        let pred: Vec<f64> = obs.iter().map(|o| o + 3.0).collect();
        let m = residual_metrics(&obs, &exact(&pred)).unwrap();
        assert!((m.bias - 3.0).abs() < 1e-12);
        assert!(m.imprecision.abs() < 1e-12);
        assert!((m.inaccuracy - 3.0).abs() < 1e-12);
        assert_eq!(m.coverage95, 0.0);
        let flat = residual_metrics(&obs, &exact(&[5.0; 4])).unwrap();
        assert_eq!(flat.r2, None);
    }

    #[test]
    fn scaled_skips_zero_predictions() {
        let obs = [1.0, 2.0, 3.0];
        let m = residual_metrics(&obs, &exact(&[0.0, 4.0, 6.0])).unwrap();
        assert!((m.bias_scaled.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_formats() {
        let m = ResidualMetrics {
            n: 905,
            bias: 13.43,
            imprecision: 173.28,
            inaccuracy: 105.61,
            bias_scaled: Some(-0.03),
            imprecision_scaled: Some(0.44),
            inaccuracy_scaled: Some(0.29),
            r2: Some(0.79),
            coverage95: 90.5,
        };
        let rows = [Table1Row {
            estimate: "Population totals".into(),
            prediction: "Out-of-sample".into(),
            metrics: m,
        }];
        let text = table1_text(&rows);
        assert!(text.contains("13.43 (-0.03)\t173.28 (0.44)\t105.61 (0.29)\t0.79\t90.50%"), "{text}");
        let csv = table1_csv(&rows);
        assert!(csv.starts_with("Estimate,Prediction,Bias,Bias (scaled),Imprecision"));
    }

    #[test]
    fn kfold_sizes() {
        let f = kfold_assign(905, 10, 1).unwrap();
        let mut sizes = [0usize; 10];
        for &x in &f {
            sizes[x] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 90 || s == 91), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 905);
        assert_eq!(f, kfold_assign(905, 10, 1).unwrap());
        assert_ne!(f, kfold_assign(905, 10, 2).unwrap());
        let loo = kfold_assign(7, 7, 3).unwrap();
        let mut sorted = loo.clone();
        sorted.sort();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert!(kfold_assign(10, 1, 0).is_err());
        assert!(kfold_assign(3, 4, 0).is_err());
    }

    fn grid_coords(n: usize) -> Vec<(f64, f64)> {
        (0..n * n).map(|i| ((i % n) as f64, (i / n) as f64)).collect()
    }

    /// Direct O(n^2) double sum with a dense weight matrix.
    fn moran_brute(vals: &[f64], w: &[Vec<f64>]) -> f64 {
        let n = vals.len();
        let m = vals.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut s0 = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += w[i][j] * (vals[i] - m) * (vals[j] - m);
                s0 += w[i][j];
            }
        }
        let den: f64 = vals.iter().map(|v| (v - m).powi(2)).sum();
        n as f64 / s0 * num / den
    }

    fn rook_dense(n: usize) -> Vec<Vec<f64>> {
        let c = grid_coords(n);
        (0..c.len())
            .map(|i| {
                let nb: Vec<usize> = (0..c.len())
                    .filter(|&j| (c[i].0 - c[j].0).abs() + (c[i].1 - c[j].1).abs() == 1.0)
                    .collect();
                (0..c.len())
                    .map(|j| if nb.contains(&j) { 1.0 / nb.len() as f64 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn checkerboards() {
        for n in [4, 6] {
            let c = grid_coords(n);
            let vals: Vec<f64> = c.iter().map(|(x, y)| ((*x + *y) as usize % 2) as f64).collect();
            let r = morans_i(&vals, &c, NeighborRule::Distance(1.0), 999, 1).unwrap();
            let brute = moran_brute(&vals, &rook_dense(n));
            assert!((r.i.unwrap() - brute).abs() < 1e-12);
            assert!((r.i.unwrap() + 1.0).abs() < 1e-12);
            assert!(r.p_value.unwrap() < 0.01);
            assert_eq!(r.expected, -1.0 / (n * n - 1) as f64);
        }
    }

    #[test]
    fn line_trend_is_positive() {
        let c: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 0.0)).collect();
        let vals: Vec<f64> = c.iter().map(|p| p.0).collect();
        let r = morans_i(&vals, &c, NeighborRule::Knn(2), 999, 2).unwrap();
        // brute force with the same 2-nearest weights
        let w: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let nb: Vec<usize> = if i == 0 {
                    vec![1, 2]
                } else if i == 49 {
                    vec![48, 47]
                } else {
                    vec![i - 1, i + 1]
                };
                (0..50).map(|j| if nb.contains(&j) { 0.5 } else { 0.0 }).collect()
            })
            .collect();
        assert!((r.i.unwrap() - moran_brute(&vals, &w)).abs() < 1e-12);
        assert!(r.i.unwrap() > 0.9);
    }

    #[test]
    fn random_values_near_expectation() {
        let c = grid_coords(20);
        let vals = uniform_values(400, 5);
        let r = morans_i(&vals, &c, NeighborRule::Knn(5), 999, 5).unwrap();
        assert!((r.permutation_mean.unwrap() - r.expected).abs() < 3.0 * r.permutation_sd.unwrap() / (999f64).sqrt() + 1e-3);
        assert!(r.p_value.unwrap() > 0.001);
        let constant = morans_i(&[1.0; 5], &c[..5], NeighborRule::Knn(2), 999, 1).unwrap();
        assert_eq!(constant.i, None);
    }

    #[test]
    fn variogram_cases() {
        let b = semivariogram(&[0.0, 2.0], &[(0.0, 0.0), (1.0, 0.0)], &[0.5, 1.5, 2.5]).unwrap();
        assert_eq!(b[0].gamma, Some(2.0));
        assert_eq!(b[0].pairs, 1);
        assert_eq!(b[1].gamma, None);

        let c = grid_coords(5);
        let flat = semivariogram(&[3.0; 25], &c, &[0.0, 1.5, 3.0, 6.0]).unwrap();
        assert!(flat.iter().all(|b| b.gamma == Some(0.0)));

        let c = grid_coords(30);
        let vals = uniform_values(900, 7);
        let var = stats::variance(&vals);
        let bins = semivariogram(&vals, &c, &[0.5, 3.0, 6.0, 10.0]).unwrap();
        for b in &bins {
            assert!((b.gamma.unwrap() - var).abs() < 0.1 * var, "{b:?} vs {var}");
        }
        assert!(semivariogram(&vals, &c, &[0.0, 1.0]).is_err());
        assert!(semivariogram(&vals, &c, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn agesex_cv_needs_clusters() {
        let recs: Vec<AgeSexRecord> = (0..40)
            .map(|i| AgeSexRecord {
                province_id: 1 + (i % 2) as u32,
                cluster_id: Some(format!("c{}", i % 10)),
                sex: if i % 3 == 0 { agesex::Sex::Male } else { agesex::Sex::Female },
                age_years: (i * 7 % 90) as f64,
                count: 5,
            })
            .collect();
        let (ins, outs) = agesex_cv(&recs, 0.1, 200, 3).unwrap();
        assert_eq!(ins.n, 72);
        assert!(ins.coverage95 >= 0.0 && outs.coverage95 <= 100.0);
        let mut anon = recs.clone();
        anon[0].cluster_id = None;
        assert!(agesex_cv(&anon, 0.1, 200, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kfold_partition(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
                prop_assume!(k <= n);
                let f = kfold_assign(n, k, seed).unwrap();
                prop_assert_eq!(f.len(), n);
                let mut sizes = vec![0usize; k];
                for &x in &f { prop_assert!(x < k); sizes[x] += 1; }
                let lo = *sizes.iter().min().unwrap();
                let hi = *sizes.iter().max().unwrap();
                prop_assert!(hi - lo <= 1);
            }

            #[test]
            fn metrics_translation_invariant(
                pairs in proptest::collection::vec((0f64..100.0, 0f64..100.0), 3..30),
                c in -50f64..50.0,
            ) {
                let obs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let a = residual_metrics(&obs, &exact(&pred)).unwrap();
                let obs2: Vec<f64> = obs.iter().map(|o| o + c).collect();
                let pred2: Vec<f64> = pred.iter().map(|p| p + c).collect();
                let b = residual_metrics(&obs2, &exact(&pred2)).unwrap();
                prop_assert!((a.bias - b.bias).abs() < 1e-9);
                prop_assert!((a.imprecision - b.imprecision).abs() < 1e-9);
                prop_assert!((a.inaccuracy - b.inaccuracy).abs() < 1e-9);
                match (a.r2, b.r2) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                    (x, y) => prop_assert_eq!(x.is_some(), y.is_some()),
                }
                prop_assert!(a.inaccuracy >= a.bias.abs() - 1e-12);
                prop_assert!((0.0..=100.0).contains(&a.coverage95));
            }
        }
    }
}
