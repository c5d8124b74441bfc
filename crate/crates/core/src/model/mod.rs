//! The population-density model.
//!
//! ```text
//! N_i ~ Poisson(D_i A_i)
//! D_i ~ LogNormal(Dbar_i, sd_i),   sd_i = sqrt(1 / (v_i tau_{t,p}^2))
//! Dbar_i = alpha_{t,p,l} + sum_k beta_{k,t} x_{k,i}
//! ```
//!
//! with nested Normal/Uniform priors on the intercepts, Half-Normal priors on
//! the scale `tau_{t,p}`, and either per-type (random) or shared (fixed)
//! covariate slopes. The second LogNormal argument is the standard deviation
//! of `log D`, and every `Normal(m, s)` takes `s` as a standard deviation.

mod target;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ClusterRecord, SettlementType};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::stats::{half_normal_ln_pdf, normal_ln_pdf, poisson_ln_pmf, quantile, uniform_ln_pdf, lognormal_ln_pdf};

pub use target::{Coord, DensityTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMode {
    /// One slope per settlement type, tied by a shared hyper-distribution.
    #[serde(alias = "random")]
    RandomByType,
    /// One slope shared by every settlement type.
    Fixed,
}

impl fmt::Display for EffectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectMode::RandomByType => "random",
            EffectMode::Fixed => "fixed",
        })
    }
}

impl FromStr for EffectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" | "random_by_type" => Ok(EffectMode::RandomByType),
            "fixed" => Ok(EffectMode::Fixed),
            other => Err(Error::Config(format!("unknown effect mode `{other}`"))),
        }
    }
}

/// Prior constants: `Normal(0, location_sd)` for top-level locations and
/// `Uniform(0, scale_upper)` for top-level scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub location_sd: f64,
    pub scale_upper: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            location_sd: 1000.0,
            scale_upper: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub settlement_type: SettlementType,
    pub province_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalUnit {
    pub settlement_type: SettlementType,
    pub province_id: u32,
    pub region_id: u32,
}

impl LocalUnit {
    pub fn stratum(&self) -> Stratum {
        Stratum {
            settlement_type: self.settlement_type,
            province_id: self.province_id,
        }
    }
}

/// Settlement type x province strata and type x region intercept units that
/// contain at least one cluster, in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub types_present: [bool; 2],
    pub strata: Vec<Stratum>,
    pub units: Vec<LocalUnit>,
    /// Stratum of each unit.
    pub unit_stratum: Vec<usize>,
    pub cluster_unit: Vec<usize>,
    pub cluster_stratum: Vec<usize>,
    pub n_covariates: usize,
    stratum_index: BTreeMap<Stratum, usize>,
    unit_index: BTreeMap<LocalUnit, usize>,
}

impl Hierarchy {
    pub fn from_clusters(clusters: &[ClusterRecord]) -> Result<Hierarchy> {
        crate::data::validate_nesting(clusters)?;
        if clusters.is_empty() {
            return Err(Error::invalid("model needs at least one cluster"));
        }
        let n_covariates = clusters[0].covariates.len();
        if let Some(c) = clusters.iter().find(|c| c.covariates.len() != n_covariates) {
            return Err(Error::invalid(format!(
                "cluster {} has {} covariates, expected {n_covariates}",
                c.cluster_id,
                c.covariates.len()
            )));
        }
        let unit_of = |c: &ClusterRecord| LocalUnit {
            settlement_type: c.settlement_type,
            province_id: c.province_id,
            region_id: c.region_id,
        };
        let mut units: Vec<LocalUnit> = clusters.iter().map(unit_of).collect();
        units.sort();
        units.dedup();
        let mut strata: Vec<Stratum> = units.iter().map(LocalUnit::stratum).collect();
        strata.dedup();
        let stratum_index: BTreeMap<Stratum, usize> =
            strata.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let unit_index: BTreeMap<LocalUnit, usize> =
            units.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let unit_stratum = units.iter().map(|u| stratum_index[&u.stratum()]).collect();
        let cluster_unit: Vec<usize> = clusters.iter().map(|c| unit_index[&unit_of(c)]).collect();
        let cluster_stratum = clusters
            .iter()
            .map(|c| stratum_index[&unit_of(c).stratum()])
            .collect();
        let mut types_present = [false; 2];
        for s in &strata {
            types_present[s.settlement_type.index()] = true;
        }
        Ok(Hierarchy {
            types_present,
            strata,
            units,
            unit_stratum,
            cluster_unit,
            cluster_stratum,
            n_covariates,
            stratum_index,
            unit_index,
        })
    }

    pub fn stratum_of(&self, t: SettlementType, province_id: u32) -> Option<usize> {
        self.stratum_index.get(&Stratum {
            settlement_type: t,
            province_id,
        }).copied()
    }

    pub fn unit_of(&self, t: SettlementType, province_id: u32, region_id: u32) -> Option<usize> {
        self.unit_index.get(&LocalUnit {
            settlement_type: t,
            province_id,
            region_id,
        }).copied()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_unit.len()
    }
}

/// One point in parameter space, latent densities included.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub type_xi: [f64; 2],
    pub type_nu: [f64; 2],
    pub type_mu: [f64; 2],
    pub type_sigma: [f64; 2],
    pub stratum_xi: Vec<f64>,
    pub stratum_nu: Vec<f64>,
    pub stratum_tau: Vec<f64>,
    pub stratum_mu: Vec<f64>,
    pub stratum_sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Random-mode hyper-mean and sd per covariate; unused for fixed ones.
    pub rho: Vec<f64>,
    pub omega: Vec<f64>,
    /// Slope per covariate and settlement type; equal entries in fixed mode.
    pub beta: Vec<[f64; 2]>,
    /// Latent people per footprint hectare, one per cluster.
    pub density: Vec<f64>,
}

/// `Dbar` for a cluster, looked up by its type and region.
pub fn linear_predictor(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    cluster: &ClusterRecord,
) -> Result<f64> {
    let unit = hierarchy
        .unit_of(cluster.settlement_type, cluster.province_id, cluster.region_id)
        .ok_or_else(|| {
            Error::Index(format!(
                "no intercept for {} region {} in province {}",
                cluster.settlement_type, cluster.region_id, cluster.province_id
            ))
        })?;
    if cluster.covariates.len() != params.beta.len() {
        return Err(Error::Index(format!(
            "cluster {} has {} covariates, model has {}",
            cluster.cluster_id,
            cluster.covariates.len(),
            params.beta.len()
        )));
    }
    let alpha = *params
        .alpha
        .get(unit)
        .ok_or_else(|| Error::Index(format!("intercept {unit} missing from parameters")))?;
    Ok(linear_predictor_raw(
        alpha,
        &params.beta,
        cluster.settlement_type,
        &cluster.covariates,
    ))
}

pub fn linear_predictor_raw(
    alpha: f64,
    beta: &[[f64; 2]],
    t: SettlementType,
    covariates: &[f64],
) -> f64 {
    alpha
        + beta
            .iter()
            .zip(covariates)
            .map(|(b, x)| b[t.index()] * x)
            .sum::<f64>()
}

/// Per-cluster sd of log density, `sqrt(1 / (v tau^2))`.
pub fn cluster_sd(model_weight: f64, tau: f64) -> Result<f64> {
    if !(model_weight > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "cluster_sd needs positive inputs, got v = {model_weight}, tau = {tau}"
        )));
    }
    Ok(cluster_sd_unchecked(model_weight, tau))
}

#[inline]
pub(crate) fn cluster_sd_unchecked(model_weight: f64, tau: f64) -> f64 {
    (1.0 / (model_weight * tau * tau)).sqrt()
}

/// `sqrt(v)`-weighted mean of per-cluster sds within a stratum.
pub fn pooled_sd(sds: &[f64], model_weights: &[f64]) -> Result<f64> {
    if sds.is_empty() || sds.len() != model_weights.len() {
        return Err(Error::invalid("pooled_sd needs a nonempty, aligned stratum"));
    }
    let (num, den) = sds
        .iter()
        .zip(model_weights)
        .fold((0.0, 0.0), |(n, d), (s, v)| {
            let w = v.sqrt();
            (n + s * w, d + w)
        });
    Ok(num / den)
}

/// Poisson counts plus LogNormal latent densities, summed over clusters.
pub fn log_likelihood(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    clusters: &[ClusterRecord],
) -> Result<f64> {
    if params.density.len() != clusters.len() {
        return Err(Error::Index(format!(
            "{} latent densities for {} clusters",
            params.density.len(),
            clusters.len()
        )));
    }
    let mut total = 0.0;
    for (i, c) in clusters.iter().enumerate() {
        let d = params.density[i];
        if !(d > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let dbar = linear_predictor(params, hierarchy, c)?;
        let tau = params.stratum_tau[hierarchy.cluster_stratum[i]];
        if !(tau > 0.0) || !(c.model_weight > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let sd = cluster_sd_unchecked(c.model_weight, tau);
        total += poisson_ln_pmf(c.population, d * c.footprint_area);
        total += lognormal_ln_pdf(d, dbar, sd);
    }
    Ok(total)
}

/// Sum of every prior term; `-inf` outside any support.
pub fn log_prior(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    modes: &[EffectMode],
    priors: &Priors,
) -> f64 {
    let l = priors.location_sd;
    let u = priors.scale_upper;
    let mut lp = 0.0;
    for t in 0..2 {
        if !hierarchy.types_present[t] {
            continue;
        }
        lp += normal_ln_pdf(params.type_xi[t], 0.0, l);
        lp += uniform_ln_pdf(params.type_nu[t], u);
        lp += normal_ln_pdf(params.type_mu[t], 0.0, l);
        lp += uniform_ln_pdf(params.type_sigma[t], u);
    }
    for (s, stratum) in hierarchy.strata.iter().enumerate() {
        let t = stratum.settlement_type.index();
        lp += normal_ln_pdf(params.stratum_xi[s], params.type_xi[t], params.type_nu[t]);
        lp += uniform_ln_pdf(params.stratum_nu[s], params.type_nu[t]);
        lp += half_normal_ln_pdf(params.stratum_tau[s], params.stratum_mu[s], params.stratum_sigma[s]);
        lp += half_normal_ln_pdf(params.stratum_mu[s], params.type_mu[t], params.type_sigma[t]);
        lp += uniform_ln_pdf(params.stratum_sigma[s], params.type_sigma[t]);
    }
    for (u_idx, &s) in hierarchy.unit_stratum.iter().enumerate() {
        lp += normal_ln_pdf(params.alpha[u_idx], params.stratum_xi[s], params.stratum_nu[s]);
    }
    for (k, mode) in modes.iter().enumerate() {
        match mode {
            EffectMode::RandomByType => {
                for t in 0..2 {
                    lp += normal_ln_pdf(params.beta[k][t], params.rho[k], params.omega[k]);
                }
                lp += normal_ln_pdf(params.rho[k], 0.0, l);
                lp += uniform_ln_pdf(params.omega[k], u);
            }
            EffectMode::Fixed => {
                if params.beta[k][0] != params.beta[k][1] {
                    return f64::NEG_INFINITY;
                }
                lp += normal_ln_pdf(params.beta[k][0], 0.0, l);
            }
        }
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Minimum pilot draws for [`resolve_effect_modes`].
pub const MIN_PILOT_DRAWS: usize = 100;

/// A covariate becomes fixed when the equal-tailed 95% interval of
/// `beta[k, urban] - beta[k, rural]` contains zero.
pub fn resolve_effect_modes(pilot: &PosteriorDraws, covariates: &[String]) -> Result<Vec<EffectMode>> {
    let n = pilot.total_rows();
    if n < MIN_PILOT_DRAWS {
        return Err(Error::invalid(format!(
            "pilot run has {n} retained draws, need at least {MIN_PILOT_DRAWS}"
        )));
    }
    covariates
        .iter()
        .map(|name| {
            let urban = pilot
                .pooled_by_name(&format!("beta[{name},urban]"))
                .ok_or_else(|| Error::invalid(format!("pilot has no random slope for `{name}`")))?;
            let rural = pilot
                .pooled_by_name(&format!("beta[{name},rural]"))
                .ok_or_else(|| Error::invalid(format!("pilot has no random slope for `{name}`")))?;
            let diff: Vec<f64> = urban.iter().zip(&rural).map(|(a, b)| a - b).collect();
            let lo = quantile(&diff, 0.025);
            let hi = quantile(&diff, 0.975);
            Ok(if lo <= 0.0 && hi >= 0.0 {
                EffectMode::Fixed
            } else {
                EffectMode::RandomByType
            })
        })
        .collect()
}

/// Builds the target for weighted clusters and runs the sampler.
pub fn fit(
    set: &crate::data::ClusterSet,
    modes: &[EffectMode],
    priors: Priors,
    config: &crate::mcmc::ChainConfig,
) -> Result<PosteriorDraws> {
    let target = DensityTarget::new(&set.clusters, &set.covariate_names, modes, priors)?;
    crate::mcmc::run_chains(&target, config)
}
