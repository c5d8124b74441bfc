use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{cluster_sd_unchecked, EffectMode, Hierarchy, ModelParams, Priors};
use crate::data::{ClusterRecord, SettlementType};
use crate::error::{Error, Result};
use crate::mcmc::Target;
use crate::stats::{half_normal_ln_pdf, ln_factorial, normal_ln_pdf, uniform_ln_pdf};

/// What one coordinate of the sampler state stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    TypeXi(usize),
    TypeNu(usize),
    TypeMu(usize),
    TypeSigma(usize),
    StratumXi(usize),
    StratumNu(usize),
    StratumTau(usize),
    StratumMu(usize),
    StratumSigma(usize),
    Alpha(usize),
    Rho(usize),
    Omega(usize),
    /// `t` is `None` for a fixed slope shared by both types.
    Beta { k: usize, t: Option<usize> },
    /// `log D_i`, sampled on the log scale.
    LogDensity(usize),
}

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Layout {
    coords: Vec<Coord>,
    type_xi: [usize; 2],
    type_nu: [usize; 2],
    type_mu: [usize; 2],
    type_sigma: [usize; 2],
    stratum_xi: Vec<usize>,
    stratum_nu: Vec<usize>,
    stratum_tau: Vec<usize>,
    stratum_mu: Vec<usize>,
    stratum_sigma: Vec<usize>,
    alpha: Vec<usize>,
    rho: Vec<usize>,
    omega: Vec<usize>,
    beta: Vec<[usize; 2]>,
    log_d: Vec<usize>,
}

impl Layout {
    fn new(h: &Hierarchy, modes: &[EffectMode]) -> Layout {
        let mut coords = Vec::new();
        let mut push = |c: Coord| {
            coords.push(c);
            coords.len() - 1
        };
        let mut type_xi = [NONE; 2];
        let mut type_nu = [NONE; 2];
        let mut type_mu = [NONE; 2];
        let mut type_sigma = [NONE; 2];
        for t in 0..2 {
            if h.types_present[t] {
                type_xi[t] = push(Coord::TypeXi(t));
                type_nu[t] = push(Coord::TypeNu(t));
                type_mu[t] = push(Coord::TypeMu(t));
                type_sigma[t] = push(Coord::TypeSigma(t));
            }
        }
        let ns = h.strata.len();
        let mut stratum_xi = Vec::with_capacity(ns);
        let mut stratum_nu = Vec::with_capacity(ns);
        let mut stratum_tau = Vec::with_capacity(ns);
        let mut stratum_mu = Vec::with_capacity(ns);
        let mut stratum_sigma = Vec::with_capacity(ns);
        for s in 0..ns {
            stratum_xi.push(push(Coord::StratumXi(s)));
            stratum_nu.push(push(Coord::StratumNu(s)));
            stratum_tau.push(push(Coord::StratumTau(s)));
            stratum_mu.push(push(Coord::StratumMu(s)));
            stratum_sigma.push(push(Coord::StratumSigma(s)));
        }
        let alpha = (0..h.units.len()).map(|u| push(Coord::Alpha(u))).collect();
        let mut rho = vec![NONE; modes.len()];
        let mut omega = vec![NONE; modes.len()];
        let mut beta = vec![[NONE; 2]; modes.len()];
        for (k, mode) in modes.iter().enumerate() {
            match mode {
                EffectMode::RandomByType => {
                    rho[k] = push(Coord::Rho(k));
                    omega[k] = push(Coord::Omega(k));
                    beta[k] = [
                        push(Coord::Beta { k, t: Some(0) }),
                        push(Coord::Beta { k, t: Some(1) }),
                    ];
                }
                EffectMode::Fixed => {
                    let j = push(Coord::Beta { k, t: None });
                    beta[k] = [j, j];
                }
            }
        }
        let log_d = (0..h.n_clusters()).map(|i| push(Coord::LogDensity(i))).collect();
        Layout {
            coords,
            type_xi,
            type_nu,
            type_mu,
            type_sigma,
            stratum_xi,
            stratum_nu,
            stratum_tau,
            stratum_mu,
            stratum_sigma,
            alpha,
            rho,
            omega,
            beta,
            log_d,
        }
    }
}

/// Posterior of the density model over `(parameters, log D)` for the
/// coordinate-wise sampler in [`crate::mcmc`].
#[derive(Debug, Clone)]
pub struct DensityTarget {
    hierarchy: Hierarchy,
    modes: Vec<EffectMode>,
    priors: Priors,
    covariate_names: Vec<String>,
    layout: Layout,
    cluster_ids: Vec<String>,
    population: Vec<u64>,
    area: Vec<f64>,
    ln_fact: Vec<f64>,
    x: Vec<Vec<f64>>,
    weight: Vec<f64>,
    sqrt_weight: Vec<f64>,
    cluster_type: Vec<usize>,
    unit_clusters: Vec<Vec<usize>>,
    stratum_clusters: Vec<Vec<usize>>,
    stratum_units: Vec<Vec<usize>>,
    type_strata: [Vec<usize>; 2],
    type_clusters: [Vec<usize>; 2],
}

impl DensityTarget {
    /// Clusters must already carry model weights.
    pub fn new(
        clusters: &[ClusterRecord],
        covariate_names: &[String],
        modes: &[EffectMode],
        priors: Priors,
    ) -> Result<DensityTarget> {
        let hierarchy = Hierarchy::from_clusters(clusters)?;
        if modes.len() != hierarchy.n_covariates || covariate_names.len() != modes.len() {
            return Err(Error::CovariateMismatch(format!(
                "{} effect modes and {} names for {} cluster covariates",
                modes.len(),
                covariate_names.len(),
                hierarchy.n_covariates
            )));
        }
        if !(priors.location_sd > 0.0) || !(priors.scale_upper > 0.0) {
            return Err(Error::Config("prior constants must be positive".into()));
        }
        for c in clusters {
            if !(c.model_weight > 0.0) || !c.model_weight.is_finite() {
                return Err(Error::invalid(format!(
                    "cluster {} has model weight {}",
                    c.cluster_id, c.model_weight
                )));
            }
            if !(c.footprint_area > 0.0) {
                return Err(Error::invalid(format!(
                    "cluster {} has no building footprint",
                    c.cluster_id
                )));
            }
            if c.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "cluster {} has a non-finite covariate",
                    c.cluster_id
                )));
            }
        }
        let layout = Layout::new(&hierarchy, modes);
        let mut unit_clusters = vec![Vec::new(); hierarchy.units.len()];
        let mut stratum_clusters = vec![Vec::new(); hierarchy.strata.len()];
        let mut type_clusters = [Vec::new(), Vec::new()];
        for i in 0..clusters.len() {
            unit_clusters[hierarchy.cluster_unit[i]].push(i);
            stratum_clusters[hierarchy.cluster_stratum[i]].push(i);
            type_clusters[clusters[i].settlement_type.index()].push(i);
        }
        let mut stratum_units = vec![Vec::new(); hierarchy.strata.len()];
        for (u, &s) in hierarchy.unit_stratum.iter().enumerate() {
            stratum_units[s].push(u);
        }
        let mut type_strata = [Vec::new(), Vec::new()];
        for (s, st) in hierarchy.strata.iter().enumerate() {
            type_strata[st.settlement_type.index()].push(s);
        }
        Ok(DensityTarget {
            modes: modes.to_vec(),
            priors,
            covariate_names: covariate_names.to_vec(),
            layout,
            cluster_ids: clusters.iter().map(|c| c.cluster_id.clone()).collect(),
            population: clusters.iter().map(|c| c.population).collect(),
            area: clusters.iter().map(|c| c.footprint_area).collect(),
            ln_fact: clusters.iter().map(|c| ln_factorial(c.population)).collect(),
            x: clusters.iter().map(|c| c.covariates.clone()).collect(),
            weight: clusters.iter().map(|c| c.model_weight).collect(),
            sqrt_weight: clusters.iter().map(|c| c.model_weight.sqrt()).collect(),
            cluster_type: clusters.iter().map(|c| c.settlement_type.index()).collect(),
            unit_clusters,
            stratum_clusters,
            stratum_units,
            type_strata,
            type_clusters,
            hierarchy,
        })
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn modes(&self) -> &[EffectMode] {
        &self.modes
    }

    pub fn coord(&self, j: usize) -> Coord {
        self.layout.coords[j]
    }

    /// Parameters for a state vector; unsampled type-level entries are NaN.
    pub fn params(&self, state: &[f64]) -> ModelParams {
        let l = &self.layout;
        let get = |j: usize| if j == NONE { f64::NAN } else { state[j] };
        let many = |js: &[usize]| js.iter().map(|&j| get(j)).collect::<Vec<f64>>();
        ModelParams {
            type_xi: l.type_xi.map(get),
            type_nu: l.type_nu.map(get),
            type_mu: l.type_mu.map(get),
            type_sigma: l.type_sigma.map(get),
            stratum_xi: many(&l.stratum_xi),
            stratum_nu: many(&l.stratum_nu),
            stratum_tau: many(&l.stratum_tau),
            stratum_mu: many(&l.stratum_mu),
            stratum_sigma: many(&l.stratum_sigma),
            alpha: many(&l.alpha),
            rho: many(&l.rho),
            omega: many(&l.omega),
            beta: l.beta.iter().map(|b| [get(b[0]), get(b[1])]).collect(),
            density: l.log_d.iter().map(|&j| state[j].exp()).collect(),
        }
    }

    #[inline]
    fn dbar(&self, s: &[f64], i: usize) -> f64 {
        let t = self.cluster_type[i];
        let mut v = s[self.layout.alpha[self.hierarchy.cluster_unit[i]]];
        for (b, x) in self.layout.beta.iter().zip(&self.x[i]) {
            v += s[b[t]] * x;
        }
        v
    }

    /// LogNormal term for cluster `i` on the `log D` scale, Jacobian included.
    #[inline]
    fn obs_term(&self, s: &[f64], i: usize) -> f64 {
        let tau = s[self.layout.stratum_tau[self.hierarchy.cluster_stratum[i]]];
        if !(tau > 0.0) {
            return f64::NEG_INFINITY;
        }
        let sd = cluster_sd_unchecked(self.weight[i], tau);
        normal_ln_pdf(s[self.layout.log_d[i]], self.dbar(s, i), sd)
    }

    #[inline]
    fn count_term(&self, s: &[f64], i: usize) -> f64 {
        let y = s[self.layout.log_d[i]];
        let lambda = y.exp() * self.area[i];
        if !(lambda > 0.0) || !lambda.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.population[i] as f64 * lambda.ln() - lambda - self.ln_fact[i]
    }

    fn stratum_type(&self, st: usize) -> usize {
        self.hierarchy.strata[st].settlement_type.index()
    }

    fn tau_prior(&self, s: &[f64], st: usize) -> f64 {
        let l = &self.layout;
        half_normal_ln_pdf(s[l.stratum_tau[st]], s[l.stratum_mu[st]], s[l.stratum_sigma[st]])
    }

    fn xi_link(&self, s: &[f64], st: usize) -> f64 {
        let l = &self.layout;
        let t = self.stratum_type(st);
        normal_ln_pdf(s[l.stratum_xi[st]], s[l.type_xi[t]], s[l.type_nu[t]])
    }

    fn nu_link(&self, s: &[f64], st: usize) -> f64 {
        let l = &self.layout;
        let t = self.stratum_type(st);
        uniform_ln_pdf(s[l.stratum_nu[st]], s[l.type_nu[t]])
    }

    fn mu_link(&self, s: &[f64], st: usize) -> f64 {
        let l = &self.layout;
        let t = self.stratum_type(st);
        half_normal_ln_pdf(s[l.stratum_mu[st]], s[l.type_mu[t]], s[l.type_sigma[t]])
    }

    fn sigma_link(&self, s: &[f64], st: usize) -> f64 {
        let l = &self.layout;
        let t = self.stratum_type(st);
        uniform_ln_pdf(s[l.stratum_sigma[st]], s[l.type_sigma[t]])
    }

    fn alpha_link(&self, s: &[f64], u: usize) -> f64 {
        let l = &self.layout;
        let st = self.hierarchy.unit_stratum[u];
        normal_ln_pdf(s[l.alpha[u]], s[l.stratum_xi[st]], s[l.stratum_nu[st]])
    }

    fn beta_link(&self, s: &[f64], k: usize, t: usize) -> f64 {
        let l = &self.layout;
        normal_ln_pdf(s[l.beta[k][t]], s[l.rho[k]], s[l.omega[k]])
    }

    /// sqrt(v)-weighted pooled sd per stratum, then per settlement type.
    pub fn pooled_sds(&self, s: &[f64]) -> (Vec<f64>, [f64; 2]) {
        let l = &self.layout;
        let mut num = [0.0; 2];
        let mut den = [0.0; 2];
        let strata = self
            .stratum_clusters
            .iter()
            .enumerate()
            .map(|(st, members)| {
                let tau = s[l.stratum_tau[st]];
                let t = self.stratum_type(st);
                let (mut n, mut d) = (0.0, 0.0);
                for &i in members {
                    let sd = cluster_sd_unchecked(self.weight[i], tau);
                    n += sd * self.sqrt_weight[i];
                    d += self.sqrt_weight[i];
                }
                num[t] += n;
                den[t] += d;
                n / d
            })
            .collect();
        let types = [0, 1].map(|t| if den[t] > 0.0 { num[t] / den[t] } else { f64::NAN });
        (strata, types)
    }

    fn stratum_label(&self, st: usize) -> String {
        let s = &self.hierarchy.strata[st];
        format!("{},{}", s.settlement_type, s.province_id)
    }

    fn default_step(&self, j: usize, value: f64) -> f64 {
        match self.layout.coords[j] {
            Coord::LogDensity(i) => (1.0 / (self.population[i] as f64 + 1.0).sqrt()).clamp(0.02, 0.5),
            Coord::TypeXi(_) | Coord::StratumXi(_) | Coord::Alpha(_) | Coord::Rho(_) => 0.1,
            Coord::Beta { .. } => 0.05,
            _ => (0.1 * value.abs()).max(1e-3),
        }
    }
}

impl Target for DensityTarget {
    fn dim(&self) -> usize {
        self.layout.coords.len()
    }

    fn names(&self) -> Vec<String> {
        self.layout
            .coords
            .iter()
            .map(|c| match *c {
                Coord::TypeXi(t) => format!("xi[{}]", SettlementType::from_index(t)),
                Coord::TypeNu(t) => format!("nu[{}]", SettlementType::from_index(t)),
                Coord::TypeMu(t) => format!("mu[{}]", SettlementType::from_index(t)),
                Coord::TypeSigma(t) => format!("sigma[{}]", SettlementType::from_index(t)),
                Coord::StratumXi(s) => format!("xi[{}]", self.stratum_label(s)),
                Coord::StratumNu(s) => format!("nu[{}]", self.stratum_label(s)),
                Coord::StratumTau(s) => format!("tau[{}]", self.stratum_label(s)),
                Coord::StratumMu(s) => format!("mu[{}]", self.stratum_label(s)),
                Coord::StratumSigma(s) => format!("sigma[{}]", self.stratum_label(s)),
                Coord::Alpha(u) => {
                    let unit = &self.hierarchy.units[u];
                    format!(
                        "alpha[{},{},{}]",
                        unit.settlement_type, unit.province_id, unit.region_id
                    )
                }
                Coord::Rho(k) => format!("rho[{}]", self.covariate_names[k]),
                Coord::Omega(k) => format!("omega[{}]", self.covariate_names[k]),
                Coord::Beta { k, t: Some(t) } => format!(
                    "beta[{},{}]",
                    self.covariate_names[k],
                    SettlementType::from_index(t)
                ),
                Coord::Beta { k, t: None } => format!("beta[{}]", self.covariate_names[k]),
                Coord::LogDensity(i) => format!("logD[{}]", self.cluster_ids[i]),
            })
            .collect()
    }

    fn log_density(&self, s: &[f64]) -> f64 {
        let l = &self.layout;
        let loc = self.priors.location_sd;
        let up = self.priors.scale_upper;
        let mut lp = 0.0;
        for t in 0..2 {
            if self.hierarchy.types_present[t] {
                lp += normal_ln_pdf(s[l.type_xi[t]], 0.0, loc);
                lp += uniform_ln_pdf(s[l.type_nu[t]], up);
                lp += normal_ln_pdf(s[l.type_mu[t]], 0.0, loc);
                lp += uniform_ln_pdf(s[l.type_sigma[t]], up);
            }
        }
        for st in 0..self.hierarchy.strata.len() {
            lp += self.xi_link(s, st)
                + self.nu_link(s, st)
                + self.tau_prior(s, st)
                + self.mu_link(s, st)
                + self.sigma_link(s, st);
        }
        for u in 0..self.hierarchy.units.len() {
            lp += self.alpha_link(s, u);
        }
        for (k, mode) in self.modes.iter().enumerate() {
            match mode {
                EffectMode::RandomByType => {
                    lp += self.beta_link(s, k, 0) + self.beta_link(s, k, 1);
                    lp += normal_ln_pdf(s[l.rho[k]], 0.0, loc);
                    lp += uniform_ln_pdf(s[l.omega[k]], up);
                }
                EffectMode::Fixed => lp += normal_ln_pdf(s[l.beta[k][0]], 0.0, loc),
            }
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        for i in 0..self.population.len() {
            lp += self.count_term(s, i) + self.obs_term(s, i);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    fn log_conditional(&self, s: &[f64], j: usize) -> f64 {
        let l = &self.layout;
        let loc = self.priors.location_sd;
        let up = self.priors.scale_upper;
        let lp = match l.coords[j] {
            Coord::TypeXi(t) => {
                normal_ln_pdf(s[j], 0.0, loc)
                    + self.type_strata[t].iter().map(|&st| self.xi_link(s, st)).sum::<f64>()
            }
            Coord::TypeNu(t) => {
                uniform_ln_pdf(s[j], up)
                    + self.type_strata[t]
                        .iter()
                        .map(|&st| self.xi_link(s, st) + self.nu_link(s, st))
                        .sum::<f64>()
            }
            Coord::TypeMu(t) => {
                normal_ln_pdf(s[j], 0.0, loc)
                    + self.type_strata[t].iter().map(|&st| self.mu_link(s, st)).sum::<f64>()
            }
            Coord::TypeSigma(t) => {
                uniform_ln_pdf(s[j], up)
                    + self.type_strata[t]
                        .iter()
                        .map(|&st| self.mu_link(s, st) + self.sigma_link(s, st))
                        .sum::<f64>()
            }
            Coord::StratumXi(st) => {
                self.xi_link(s, st)
                    + self.stratum_units[st].iter().map(|&u| self.alpha_link(s, u)).sum::<f64>()
            }
            Coord::StratumNu(st) => {
                self.nu_link(s, st)
                    + self.stratum_units[st].iter().map(|&u| self.alpha_link(s, u)).sum::<f64>()
            }
            Coord::StratumTau(st) => {
                self.tau_prior(s, st)
                    + self.stratum_clusters[st].iter().map(|&i| self.obs_term(s, i)).sum::<f64>()
            }
            Coord::StratumMu(st) => self.tau_prior(s, st) + self.mu_link(s, st),
            Coord::StratumSigma(st) => self.tau_prior(s, st) + self.sigma_link(s, st),
            Coord::Alpha(u) => {
                self.alpha_link(s, u)
                    + self.unit_clusters[u].iter().map(|&i| self.obs_term(s, i)).sum::<f64>()
            }
            Coord::Rho(k) => {
                normal_ln_pdf(s[j], 0.0, loc) + self.beta_link(s, k, 0) + self.beta_link(s, k, 1)
            }
            Coord::Omega(k) => {
                uniform_ln_pdf(s[j], up) + self.beta_link(s, k, 0) + self.beta_link(s, k, 1)
            }
            Coord::Beta { k, t: Some(t) } => {
                self.beta_link(s, k, t)
                    + self.type_clusters[t].iter().map(|&i| self.obs_term(s, i)).sum::<f64>()
            }
            Coord::Beta { t: None, .. } => {
                normal_ln_pdf(s[j], 0.0, loc)
                    + (0..self.population.len()).map(|i| self.obs_term(s, i)).sum::<f64>()
            }
            Coord::LogDensity(i) => self.count_term(s, i) + self.obs_term(s, i),
        };
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Starts from moment estimates of the data, jittered per chain.
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let l = &self.layout;
        let h = &self.hierarchy;
        let mut s = vec![0.0; self.dim()];
        let mut z = |sd: f64| -> f64 { sd * rng.sample::<f64, _>(StandardNormal) };

        let y0: Vec<f64> = (0..self.population.len())
            .map(|i| ((self.population[i] as f64 + 0.5) / self.area[i]).ln())
            .collect();
        let alpha0: Vec<f64> = self
            .unit_clusters
            .iter()
            .map(|m| m.iter().map(|&i| y0[i]).sum::<f64>() / m.len() as f64)
            .collect();
        let spread = |xs: &[f64], floor: f64| {
            if xs.len() > 1 {
                crate::stats::sd(xs).max(floor)
            } else {
                floor.max(0.5)
            }
        };

        let ns = h.strata.len();
        let mut xi_s = vec![0.0; ns];
        let mut nu_s = vec![0.0; ns];
        let mut tau_s = vec![0.0; ns];
        for st in 0..ns {
            let a: Vec<f64> = self.stratum_units[st].iter().map(|&u| alpha0[u]).collect();
            xi_s[st] = crate::stats::mean(&a);
            nu_s[st] = spread(&a, 0.1);
            let resid: Vec<f64> = self.stratum_clusters[st]
                .iter()
                .map(|&i| y0[i] - alpha0[h.cluster_unit[i]])
                .collect();
            let r = spread(&resid, 0.2);
            let mean_sqrt_v = crate::stats::mean(
                &self.stratum_clusters[st]
                    .iter()
                    .map(|&i| self.sqrt_weight[i])
                    .collect::<Vec<_>>(),
            );
            tau_s[st] = 1.0 / (r * mean_sqrt_v);
        }

        let cap = 0.9 * self.priors.scale_upper;
        let jitter_scale = |v: f64, z: f64| v * z.exp();
        let mut max_nu = [0.0f64; 2];
        let mut max_sigma = [0.0f64; 2];
        let mut xi_sum = [0.0; 2];
        let mut mu_sum = [0.0; 2];
        for st in 0..ns {
            let t = self.stratum_type(st);
            let tau = jitter_scale(tau_s[st], z(0.2));
            let mu = jitter_scale(tau_s[st], z(0.2));
            let sigma = jitter_scale(tau_s[st].max(0.5), z(0.2)).min(cap * 0.8);
            let nu = jitter_scale(nu_s[st], z(0.2)).min(cap * 0.8);
            let xi = xi_s[st] + z(0.2);
            s[l.stratum_xi[st]] = xi;
            s[l.stratum_nu[st]] = nu;
            s[l.stratum_tau[st]] = tau;
            s[l.stratum_mu[st]] = mu;
            s[l.stratum_sigma[st]] = sigma;
            max_nu[t] = max_nu[t].max(nu);
            max_sigma[t] = max_sigma[t].max(sigma);
            xi_sum[t] += xi;
            mu_sum[t] += mu;
        }
        for t in 0..2 {
            if !h.types_present[t] {
                continue;
            }
            let n = self.type_strata[t].len() as f64;
            s[l.type_xi[t]] = xi_sum[t] / n + z(0.2);
            s[l.type_mu[t]] = mu_sum[t] / n;
            s[l.type_nu[t]] = (max_nu[t] * jitter_scale(1.5, z(0.2)).max(1.05)).min(cap);
            s[l.type_sigma[t]] = (max_sigma[t] * jitter_scale(1.5, z(0.2)).max(1.05)).min(cap);
        }
        for (u, &a) in alpha0.iter().enumerate() {
            s[l.alpha[u]] = a + z(0.2);
        }
        for (k, mode) in self.modes.iter().enumerate() {
            if *mode == EffectMode::RandomByType {
                s[l.rho[k]] = z(0.1);
                s[l.omega[k]] = jitter_scale(1.0, z(0.2));
                s[l.beta[k][1]] = z(0.1);
            }
            s[l.beta[k][0]] = z(0.1);
        }
        for (i, &y) in y0.iter().enumerate() {
            s[l.log_d[i]] = y + z(0.05);
        }
        s
    }

    fn initial_steps(&self, state: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.default_step(j, state[j])).collect()
    }

    fn generated_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.hierarchy.strata.len())
            .map(|st| format!("tau_hat[{}]", self.stratum_label(st)))
            .collect();
        for t in 0..2 {
            if self.hierarchy.types_present[t] {
                names.push(format!("tau_hat[{}]", SettlementType::from_index(t)));
            }
        }
        names
    }

    fn generated(&self, state: &[f64]) -> Vec<f64> {
        let (mut strata, types) = self.pooled_sds(state);
        for t in 0..2 {
            if self.hierarchy.types_present[t] {
                strata.push(types[t]);
            }
        }
        strata
    }
}
