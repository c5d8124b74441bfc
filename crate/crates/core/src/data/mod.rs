//! Survey cluster records and their ingestion: CSV loading, weight
//! truncation, household nonresponse imputation, model weights, discard
//! rules. Grid layers live in [`grid`], covariate scaling in [`scaling`].

pub mod grid;
pub mod scaling;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

pub use grid::{GridStack, PredictionUnit};
pub use scaling::{scale_covariates, ScalingStats};

/// Fixed leading columns of the cluster CSV; covariates follow.
pub const CLUSTER_COLUMNS: [&str; 10] = [
    "cluster_id",
    "province_id",
    "region_id",
    "settlement_type",
    "population",
    "footprint_area_ha",
    "sampling_weight",
    "reduced_coverage",
    "x",
    "y",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SettlementType {
    Urban,
    Rural,
}

impl SettlementType {
    pub const ALL: [SettlementType; 2] = [SettlementType::Urban, SettlementType::Rural];

    pub fn index(self) -> usize {
        match self {
            SettlementType::Urban => 0,
            SettlementType::Rural => 1,
        }
    }

    pub fn from_index(i: usize) -> SettlementType {
        Self::ALL[i]
    }

    /// Integer code used in settlement rasters.
    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_code(code: f64) -> Option<SettlementType> {
        match code as i64 {
            1 if code == 1.0 => Some(SettlementType::Urban),
            2 if code == 2.0 => Some(SettlementType::Rural),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SettlementType::Urban => "urban",
            SettlementType::Rural => "rural",
        }
    }
}

impl fmt::Display for SettlementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettlementType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Ok(SettlementType::Urban),
            "rural" => Ok(SettlementType::Rural),
            other => Err(format!("unknown settlement type `{other}` (expected urban or rural)")),
        }
    }
}

/// One microcensus cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub cluster_id: String,
    pub province_id: u32,
    pub region_id: u32,
    pub settlement_type: SettlementType,
    /// Enumerated people.
    pub population: u64,
    /// Total building footprint area, hectares.
    pub footprint_area: f64,
    pub covariates: Vec<f64>,
    pub sampling_weight: Option<f64>,
    /// Normalised inverse sampling weight; set by [`compute_model_weights`].
    pub model_weight: f64,
    pub reduced_coverage: bool,
    pub centroid: (f64, f64),
}

impl ClusterRecord {
    /// Observed people per footprint hectare.
    pub fn density(&self) -> f64 {
        self.population as f64 / self.footprint_area
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub covariate_names: Vec<String>,
    pub clusters: Vec<ClusterRecord>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Keeps only the named covariates, in the given order.
    pub fn select_covariates(&self, names: &[String]) -> Result<ClusterSet> {
        let idx = names
            .iter()
            .map(|n| {
                self.covariate_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::CovariateMismatch(format!("`{n}` not in cluster file")))
            })
            .collect::<Result<Vec<_>>>()?;
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.covariates = idx.iter().map(|&i| c.covariates[i]).collect();
                c
            })
            .collect();
        Ok(ClusterSet {
            covariate_names: names.to_vec(),
            clusters,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> ClusterSet {
        ClusterSet {
            covariate_names: self.covariate_names.clone(),
            clusters: indices.iter().map(|&i| self.clusters[i].clone()).collect(),
        }
    }
}

pub fn load_clusters(path: impl AsRef<Path>) -> Result<ClusterSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_clusters(file, &path.display().to_string())
}

pub fn parse_clusters<R: Read>(reader: R, file: &str) -> Result<ClusterSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format {
            file: file.into(),
            message: e.to_string(),
        })?
        .clone();
    for (i, expected) in CLUSTER_COLUMNS.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *expected => {}
            found => {
                return Err(Error::Format {
                    file: file.into(),
                    message: format!(
                        "header column {} must be `{expected}`, found `{}`",
                        i + 1,
                        found.unwrap_or("")
                    ),
                })
            }
        }
    }
    let covariate_names: Vec<String> = headers
        .iter()
        .skip(CLUSTER_COLUMNS.len())
        .map(str::to_string)
        .collect();
    let n_cols = headers.len();

    let mut clusters = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let row = row_idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            file: file.into(),
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        if rec.len() != n_cols {
            return Err(Error::Parse {
                file: file.into(),
                row,
                column: "-".into(),
                message: format!("expected {n_cols} fields, found {}", rec.len()),
            });
        }
        let perr = |col: &str, message: String| Error::Parse {
            file: file.into(),
            row,
            column: col.into(),
            message,
        };
        let field = |i: usize| rec.get(i).unwrap_or("");

        let cluster_id = field(0).to_string();
        if cluster_id.is_empty() {
            return Err(perr("cluster_id", "empty".into()));
        }
        let province_id = parse_id(field(1)).map_err(|m| perr("province_id", m))?;
        let region_id = parse_id(field(2)).map_err(|m| perr("region_id", m))?;
        let settlement_type = field(3)
            .parse::<SettlementType>()
            .map_err(|m| perr("settlement_type", m))?;
        let population = field(4)
            .parse::<u64>()
            .map_err(|_| perr("population", format!("`{}` is not a nonnegative integer", field(4))))?;
        let footprint_area = parse_real(field(5)).map_err(|m| perr("footprint_area_ha", m))?;
        if footprint_area < 0.0 {
            return Err(perr("footprint_area_ha", format!("negative area {footprint_area}")));
        }
        let sampling_weight = match field(6) {
            "" | "NA" => None,
            s => {
                let w = parse_real(s).map_err(|m| perr("sampling_weight", m))?;
                if !(w > 0.0) {
                    return Err(perr("sampling_weight", format!("weight {w} is not positive")));
                }
                Some(w)
            }
        };
        let reduced_coverage = match field(7).to_ascii_lowercase().as_str() {
            "" | "0" | "false" | "no" => false,
            "1" | "true" | "yes" => true,
            other => return Err(perr("reduced_coverage", format!("`{other}` is not a flag"))),
        };
        let x = parse_real(field(8)).map_err(|m| perr("x", m))?;
        let y = parse_real(field(9)).map_err(|m| perr("y", m))?;
        let covariates = covariate_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_real(field(CLUSTER_COLUMNS.len() + k)).map_err(|m| perr(name, m)))
            .collect::<Result<Vec<_>>>()?;

        clusters.push(ClusterRecord {
            cluster_id,
            province_id,
            region_id,
            settlement_type,
            population,
            footprint_area,
            covariates,
            sampling_weight,
            model_weight: 0.0,
            reduced_coverage,
            centroid: (x, y),
        });
    }
    validate_nesting(&clusters)?;
    Ok(ClusterSet {
        covariate_names,
        clusters,
    })
}

fn parse_id(s: &str) -> std::result::Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("`{s}` is not a positive integer id")),
    }
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite number")),
    }
}

/// Every region must belong to exactly one province.
pub fn validate_nesting(clusters: &[ClusterRecord]) -> Result<()> {
    let mut parents: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for c in clusters {
        parents.entry(c.region_id).or_default().insert(c.province_id);
    }
    let broken: Vec<String> = parents
        .iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(r, p)| {
            let ps: Vec<String> = p.iter().map(u32::to_string).collect();
            format!("region {r} under provinces {}", ps.join(","))
        })
        .collect();
    if broken.is_empty() {
        Ok(())
    } else {
        Err(Error::Nesting(broken.join("; ")))
    }
}

pub fn write_clusters(path: impl AsRef<Path>, set: &ClusterSet) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(clusters_to_csv(set).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn clusters_to_csv(set: &ClusterSet) -> String {
    let mut out = CLUSTER_COLUMNS.join(",");
    for name in &set.covariate_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for c in &set.clusters {
        let w = c.sampling_weight.map(|w| w.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            c.cluster_id,
            c.province_id,
            c.region_id,
            c.settlement_type,
            c.population,
            c.footprint_area,
            w,
            u8::from(c.reduced_coverage),
            c.centroid.0,
            c.centroid.1
        ));
        for v in &c.covariates {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// The `percentile` quantile of the weights (linear interpolation,
/// rank h = 1 + (n - 1) p).
pub fn weight_cap(weights: &[f64], percentile: f64) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("cannot truncate an empty weight vector"));
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::invalid(format!(
            "truncation percentile {percentile} outside (0, 1)"
        )));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, percentile))
}

/// Caps weights at their `percentile` quantile. Order is preserved.
///
/// Re-running this on its own output recomputes the quantile of the capped
/// set, which sits at or below the first cap; the cap itself is idempotent.
pub fn truncate_weights(weights: &[f64], percentile: f64) -> Result<Vec<f64>> {
    let cap = weight_cap(weights, percentile)?;
    Ok(cap_weights(weights, cap))
}

pub fn cap_weights(weights: &[f64], cap: f64) -> Vec<f64> {
    weights.iter().map(|&w| w.min(cap)).collect()
}

/// Truncates the observed sampling weights of a cluster list in place.
pub fn truncate_cluster_weights(clusters: &mut [ClusterRecord], percentile: f64) -> Result<()> {
    let observed: Vec<f64> = clusters.iter().filter_map(|c| c.sampling_weight).collect();
    if observed.is_empty() {
        return Ok(());
    }
    let capped = truncate_weights(&observed, percentile)?;
    let mut it = capped.into_iter();
    for c in clusters.iter_mut() {
        if c.sampling_weight.is_some() {
            c.sampling_weight = it.next();
        }
    }
    Ok(())
}

/// Cluster total from per-household counts; nonresponding households get the
/// mean of the responding ones. Rounds half up.
pub fn impute_cluster_population(household_counts: &[Option<u64>]) -> Result<u64> {
    let observed: Vec<u64> = household_counts.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::invalid(
            "no responding household in cluster; population cannot be imputed",
        ));
    }
    let sum: u64 = observed.iter().sum();
    let missing = (household_counts.len() - observed.len()) as f64;
    let total = sum as f64 + missing * sum as f64 / observed.len() as f64;
    Ok((total + 0.5).floor() as u64)
}

/// Sets `model_weight` to the normalised inverse sampling weight. Clusters
/// without a weight get the mean of the observed weights first. Returns
/// `false` when no cluster carried a weight and uniform weights were used.
pub fn compute_model_weights(clusters: &mut [ClusterRecord]) -> bool {
    if clusters.is_empty() {
        return true;
    }
    let observed: Vec<f64> = clusters.iter().filter_map(|c| c.sampling_weight).collect();
    if observed.is_empty() {
        warn!(
            "no sampling weights observed; using uniform model weights over {} clusters",
            clusters.len()
        );
        let v = 1.0 / clusters.len() as f64;
        for c in clusters.iter_mut() {
            c.model_weight = v;
        }
        return false;
    }
    let imputed = observed.iter().sum::<f64>() / observed.len() as f64;
    let inverse: Vec<f64> = clusters
        .iter()
        .map(|c| 1.0 / c.sampling_weight.unwrap_or(imputed))
        .collect();
    let total: f64 = inverse.iter().sum();
    for (c, inv) in clusters.iter_mut().zip(inverse) {
        c.model_weight = inv / total;
    }
    true
}

/// Sets every model weight to 1/I, ignoring sampling weights.
pub fn equal_model_weights(clusters: &mut [ClusterRecord]) {
    let v = 1.0 / clusters.len().max(1) as f64;
    for c in clusters.iter_mut() {
        c.model_weight = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    ReducedCoverage,
    NoFootprints,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::ReducedCoverage => "reduced_coverage",
            DiscardReason::NoFootprints => "no_footprints",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscardReport {
    pub discarded: Vec<(String, DiscardReason)>,
    /// Set when nothing survived the filter.
    pub empty_retained: bool,
}

impl DiscardReport {
    pub fn count(&self, reason: DiscardReason) -> usize {
        self.discarded.iter().filter(|(_, r)| *r == reason).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster_id,reason\n");
        for (id, r) in &self.discarded {
            out.push_str(&format!("{id},{}\n", r.as_str()));
        }
        out
    }
}

/// Drops clusters flagged for reduced coverage or without footprint area.
pub fn filter_spurious(clusters: Vec<ClusterRecord>) -> (Vec<ClusterRecord>, DiscardReport) {
    let mut report = DiscardReport::default();
    let mut retained = Vec::with_capacity(clusters.len());
    for c in clusters {
        let reason = if c.reduced_coverage {
            Some(DiscardReason::ReducedCoverage)
        } else if !(c.footprint_area > 0.0) {
            Some(DiscardReason::NoFootprints)
        } else {
            None
        };
        match reason {
            Some(r) => report.discarded.push((c.cluster_id.clone(), r)),
            None => retained.push(c),
        }
    }
    if retained.is_empty() {
        warn!("no clusters retained after discard filter");
        report.empty_retained = true;
    }
    (retained, report)
}

/// Ingestion chain used before every fit: discard, truncate, weight.
pub fn prepare_for_fit(
    set: ClusterSet,
    truncation: Option<f64>,
) -> Result<(ClusterSet, DiscardReport)> {
    let (mut retained, report) = filter_spurious(set.clusters);
    if retained.is_empty() {
        return Err(Error::invalid("no clusters left after discard filter"));
    }
    if let Some(p) = truncation {
        truncate_cluster_weights(&mut retained, p)?;
    }
    compute_model_weights(&mut retained);
    Ok((
        ClusterSet {
            covariate_names: set.covariate_names,
            clusters: retained,
        },
        report,
    ))
}
