//! Coordinate-wise random-walk Metropolis with adaptive step sizes.
//!
//! Each sweep updates every scalar coordinate in turn with a Gaussian
//! proposal. During burn-in the log step size of each coordinate follows a
//! Robbins-Monro recursion toward the target acceptance rate; afterwards the
//! step sizes are frozen. Chains run in parallel, each on its own keyed RNG
//! substream, so results do not depend on scheduling.

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::{self, keyed_rng};

/// An unnormalised log posterior over `R^dim`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn names(&self) -> Vec<String>;

    fn log_density(&self, state: &[f64]) -> f64;

    /// Terms of [`Target::log_density`] that involve coordinate `index`.
    /// Differences in this value between two states that differ only in
    /// `index` must equal differences in the full log density.
    fn log_conditional(&self, state: &[f64], index: usize) -> f64 {
        let _ = index;
        self.log_density(state)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn initial_steps(&self, state: &[f64]) -> Vec<f64> {
        vec![0.1; state.len()]
    }

    /// Names of derived quantities stored alongside each retained state.
    fn generated_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn generated(&self, state: &[f64]) -> Vec<f64> {
        let _ = state;
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_window: usize,
    pub target_accept: f64,
    /// Record and check every accepted move.
    pub audit: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_chains: 3,
            n_iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            adapt_window: 50,
            target_accept: 0.44,
            audit: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("thin and adapt_window must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }
}

/// One accepted move: `delta` is the change in log posterior, `log_u` the
/// log uniform it had to beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditEntry {
    pub iteration: usize,
    pub index: usize,
    pub delta: f64,
    pub log_u: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub accepted: u64,
    /// Accepted moves whose full log posterior fell by more than `-log_u`.
    pub violations: u64,
    /// The first entries, up to [`AUDIT_KEEP`].
    pub entries: Vec<AuditEntry>,
}

pub const AUDIT_KEEP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// Row-major, `n_rows x n_cols`.
    pub values: Vec<f64>,
    pub n_cols: usize,
    /// Post-burn-in acceptance rate per sampled coordinate.
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub audit: Option<AuditLog>,
}

impl ChainDraws {
    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.values.len() / self.n_cols
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.n_cols).copied().collect()
    }
}

/// Retained draws of every chain. The first `n_sampled` columns are the
/// sampler state; the rest are generated quantities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub n_sampled: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn total_rows(&self) -> usize {
        self.chains.iter().map(ChainDraws::n_rows).sum()
    }

    /// Column `j` of every chain, concatenated in chain order.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.column(j)).collect()
    }

    pub fn pooled_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|j| self.pooled(j))
    }

    /// Pooled row `r`, counting through chains in order.
    pub fn pooled_row(&self, mut r: usize) -> Option<&[f64]> {
        for c in &self.chains {
            let n = c.n_rows();
            if r < n {
                return Some(c.row(r));
            }
            r -= n;
        }
        None
    }

    pub fn audit_violations(&self) -> Option<u64> {
        self.chains
            .iter()
            .map(|c| c.audit.as_ref().map(|a| a.violations))
            .sum()
    }

    /// Writes `draws_chain_<c>.csv` per chain and `acceptance.csv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (c, chain) in self.chains.iter().enumerate() {
            let path = dir.join(format!("draws_chain_{}.csv", c + 1));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(&self.names).map_err(|e| csv_err(&path, e))?;
            for r in 0..chain.n_rows() {
                w.write_record(chain.row(r).iter().map(|v| v.to_string()))
                    .map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("acceptance.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["parameter".to_string()];
        for c in 0..self.chains.len() {
            header.push(format!("chain_{}", c + 1));
        }
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for j in 0..self.n_sampled {
            let mut rec = vec![self.names[j].clone()];
            rec.extend(self.chains.iter().map(|c| c.acceptance[j].to_string()));
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<PosteriorDraws> {
        let dir = dir.as_ref();
        let mut names: Option<Vec<String>> = None;
        let mut chains = Vec::new();
        for c in 1.. {
            let path = dir.join(format!("draws_chain_{c}.csv"));
            if !path.exists() {
                break;
            }
            let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
            let header: Vec<String> = r
                .headers()
                .map_err(|e| csv_err(&path, e))?
                .iter()
                .map(str::to_string)
                .collect();
            match &names {
                Some(n) if *n != header => {
                    return Err(Error::Format {
                        file: path.display().to_string(),
                        message: "header differs from chain 1".into(),
                    })
                }
                Some(_) => {}
                None => names = Some(header.clone()),
            }
            let mut values = Vec::new();
            for (row, rec) in r.records().enumerate() {
                let rec = rec.map_err(|e| csv_err(&path, e))?;
                for (j, field) in rec.iter().enumerate() {
                    values.push(field.parse::<f64>().map_err(|e| Error::Parse {
                        file: path.display().to_string(),
                        row: row + 1,
                        column: header.get(j).cloned().unwrap_or_default(),
                        message: e.to_string(),
                    })?);
                }
            }
            chains.push(ChainDraws {
                values,
                n_cols: header.len(),
                acceptance: Vec::new(),
                step_sizes: Vec::new(),
                audit: None,
            });
        }
        let names = names.ok_or_else(|| Error::Format {
            file: dir.display().to_string(),
            message: "no draws_chain_1.csv".into(),
        })?;
        let acc_path = dir.join("acceptance.csv");
        let mut n_sampled = names.len();
        if acc_path.exists() {
            let mut r = csv::Reader::from_path(&acc_path).map_err(|e| csv_err(&acc_path, e))?;
            let mut per_chain = vec![Vec::new(); chains.len()];
            let mut count = 0;
            for rec in r.records() {
                let rec = rec.map_err(|e| csv_err(&acc_path, e))?;
                count += 1;
                for (c, acc) in per_chain.iter_mut().enumerate() {
                    acc.push(rec.get(c + 1).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN));
                }
            }
            n_sampled = count;
            for (chain, acc) in chains.iter_mut().zip(per_chain) {
                chain.acceptance = acc;
            }
        }
        Ok(PosteriorDraws {
            names,
            n_sampled,
            chains,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        file: path.display().to_string(),
        message: e.to_string(),
    }
}

const MAX_INIT_TRIES: usize = 1000;

/// Runs `config.n_chains` chains in parallel.
pub fn run_chains<T: Target>(target: &T, config: &ChainConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let mut names = target.names();
    if names.len() != target.dim() {
        return Err(Error::Sampler(format!(
            "target reports {} names for dimension {}",
            names.len(),
            target.dim()
        )));
    }
    let n_sampled = names.len();
    names.extend(target.generated_names());
    info!(
        "sampling {} chains x {} iterations over {} coordinates",
        config.n_chains,
        config.n_iterations,
        target.dim()
    );
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        names,
        n_sampled,
        chains,
    })
}

fn run_chain<T: Target>(target: &T, config: &ChainConfig, chain: usize) -> Result<ChainDraws> {
    let dim = target.dim();
    let mut init_rng = keyed_rng(config.seed, &[chain as u64, 0]);
    let mut rng = keyed_rng(config.seed, &[chain as u64, 1]);

    let mut state = Vec::new();
    let mut found = false;
    for _ in 0..MAX_INIT_TRIES {
        state = target.initial_state(&mut init_rng);
        if state.len() != dim {
            return Err(Error::Sampler(format!(
                "initial state has length {}, expected {dim}",
                state.len()
            )));
        }
        if target.log_density(&state).is_finite() {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Sampler(format!(
            "chain {}: no initial state with finite log posterior after {MAX_INIT_TRIES} draws",
            chain + 1
        )));
    }

    let mut log_step: Vec<f64> = target
        .initial_steps(&state)
        .into_iter()
        .map(|s| s.max(1e-8).ln())
        .collect();
    let n_keep = config.retained_per_chain();
    let n_gen = target.generated_names().len();
    let n_cols = dim + n_gen;
    let mut values = Vec::with_capacity(n_keep * n_cols);
    let mut window_accepts = vec![0u32; dim];
    let mut kept_accepts = vec![0u64; dim];
    let mut n_windows = 0usize;
    let mut audit = config.audit.then(AuditLog::default);

    for it in 0..config.n_iterations {
        for j in 0..dim {
            let old = state[j];
            let before = target.log_conditional(&state, j);
            let full_before = if audit.is_some() {
                target.log_density(&state)
            } else {
                0.0
            };
            let z: f64 = rng.sample(StandardNormal);
            state[j] = old + log_step[j].exp() * z;
            let after = target.log_conditional(&state, j);
            let log_u = rng.random::<f64>().ln();
            if after.is_finite() && log_u < after - before {
                window_accepts[j] += 1;
                if it >= config.burn_in {
                    kept_accepts[j] += 1;
                }
                if let Some(log) = audit.as_mut() {
                    let delta = target.log_density(&state) - full_before;
                    log.accepted += 1;
                    if delta < log_u - 1e-8 * (1.0 + full_before.abs()) {
                        log.violations += 1;
                    }
                    if log.entries.len() < AUDIT_KEEP {
                        log.entries.push(AuditEntry {
                            iteration: it,
                            index: j,
                            delta,
                            log_u,
                        });
                    }
                }
            } else {
                state[j] = old;
            }
        }

        if it < config.burn_in && (it + 1) % config.adapt_window == 0 {
            n_windows += 1;
            let gain = 1.0 / (n_windows as f64).sqrt();
            for j in 0..dim {
                let rate = f64::from(window_accepts[j]) / config.adapt_window as f64;
                log_step[j] += gain * (rate - config.target_accept);
                window_accepts[j] = 0;
            }
        }
        if it + 1 == config.burn_in {
            window_accepts.iter_mut().for_each(|a| *a = 0);
            debug!("chain {}: step sizes frozen after {} windows", chain + 1, n_windows);
        }

        if it >= config.burn_in && (it + 1 - config.burn_in) % config.thin == 0 {
            values.extend_from_slice(&state);
            values.extend(target.generated(&state));
        }
    }

    let n_post = (config.n_iterations - config.burn_in) as f64;
    Ok(ChainDraws {
        values,
        n_cols,
        acceptance: kept_accepts.iter().map(|&a| a as f64 / n_post).collect(),
        step_sizes: log_step.iter().map(|s| s.exp()).collect(),
        audit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rhat {
    pub name: String,
    pub rhat: f64,
}

/// Potential scale reduction factor per column, over the common chain
/// length.
pub fn gelman_rubin(draws: &PosteriorDraws) -> Result<Vec<Rhat>> {
    let m = draws.chains.len();
    if m < 2 {
        return Err(Error::invalid("R-hat needs at least 2 chains"));
    }
    let n = draws.chains.iter().map(ChainDraws::n_rows).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::invalid(format!(
            "R-hat needs at least 10 draws per chain, shortest has {n}"
        )));
    }
    let mut out = Vec::with_capacity(draws.names.len());
    for (j, name) in draws.names.iter().enumerate() {
        let cols: Vec<Vec<f64>> = draws
            .chains
            .iter()
            .map(|c| c.column(j).into_iter().take(n).collect())
            .collect();
        let rhat = rhat_of(&cols);
        if rhat.is_nan() {
            warn!("R-hat for `{name}` is undefined");
        }
        out.push(Rhat {
            name: name.clone(),
            rhat,
        });
    }
    Ok(out)
}

/// R-hat for equal-length chains.
pub fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = stats::mean(&chains.iter().map(|c| stats::variance(c)).collect::<Vec<_>>());
    let b_over_n = stats::variance(&means);
    if w == 0.0 {
        if b_over_n == 0.0 {
            debug!("constant parameter; R-hat reported as 1");
            return 1.0;
        }
        return f64::INFINITY;
    }
    (((n - 1.0) / n * w + b_over_n) / w).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Mean acceptance over chains; `None` for generated quantities.
    pub acceptance: Option<f64>,
}

pub fn summarize_draws(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let s = stats::Summary::of(&draws.pooled(j));
            let acc: Vec<f64> = draws
                .chains
                .iter()
                .filter_map(|c| c.acceptance.get(j).copied())
                .collect();
            ParamSummary {
                name: name.clone(),
                mean: s.mean,
                sd: s.sd,
                q025: s.lo95,
                q50: s.median,
                q975: s.hi95,
                acceptance: (j < draws.n_sampled && !acc.is_empty()).then(|| stats::mean(&acc)),
            }
        })
        .collect()
}

pub fn summary_csv(summaries: &[ParamSummary], rhat: Option<&[Rhat]>) -> String {
    let mut out = String::from("parameter,mean,sd,q2.5,q50,q97.5,acceptance,rhat\n");
    for (j, s) in summaries.iter().enumerate() {
        let acc = s.acceptance.map(|a| a.to_string()).unwrap_or_default();
        let r = rhat
            .and_then(|r| r.get(j))
            .map(|r| r.rhat.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{},{},{}\n",
            s.name.replace('"', "\"\""),
            s.mean,
            s.sd,
            s.q025,
            s.q50,
            s.q975,
            acc,
            r
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One coordinate with a Normal(m, s) density.
    struct Gaussian {
        m: f64,
        s: f64,
    }

    impl Target for Gaussian {
        fn dim(&self) -> usize {
            1
        }
        fn names(&self) -> Vec<String> {
            vec!["alpha".into()]
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            stats::normal_ln_pdf(x[0], self.m, self.s)
        }
        fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
            vec![self.m + 3.0 * self.s * rng.sample::<f64, _>(StandardNormal)]
        }
    }

    /// A single free log density with Poisson counts and a wide prior.
    struct PoissonRate {
        n: u64,
        area: f64,
    }

    impl PoissonRate {
        fn ln_post(&self, y: f64) -> f64 {
            stats::poisson_ln_pmf(self.n, y.exp() * self.area) + stats::normal_ln_pdf(y, 0.0, 100.0)
        }
    }

    impl Target for PoissonRate {
        fn dim(&self) -> usize {
            1
        }
        fn names(&self) -> Vec<String> {
            vec!["y".into()]
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            self.ln_post(x[0])
        }
        fn initial_state(&self, _: &mut ChaCha8Rng) -> Vec<f64> {
            vec![0.0]
        }
    }

    fn config(iters: usize, chains: usize) -> ChainConfig {
        ChainConfig {
            n_chains: chains,
            n_iterations: iters,
            burn_in: iters / 2,
            seed: 11,
            ..ChainConfig::default()
        }
    }

    #[test]
    fn gaussian_moments_within_three_standard_errors() {
        let target = Gaussian { m: 2.0, s: 0.7 };
        let draws = run_chains(&target, &config(40_000, 3)).unwrap();
        let x = draws.pooled(0);
        let mean = stats::mean(&x);
        let sd = stats::sd(&x);
        // effective sample size from the lag-sum of autocorrelations
        let n = x.len() as f64;
        let ess = n / integrated_autocorr(&x);
        let se_mean = 0.7 / ess.sqrt();
        let se_sd = 0.7 / (2.0 * ess).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se_mean, "mean {mean} se {se_mean}");
        assert!((sd - 0.7).abs() < 3.0 * se_sd, "sd {sd} se {se_sd}");
        let r = gelman_rubin(&draws).unwrap();
        assert!(r[0].rhat < 1.1);
    }

    fn integrated_autocorr(x: &[f64]) -> f64 {
        let m = stats::mean(x);
        let v: f64 = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / x.len() as f64;
        let mut tau = 1.0;
        for lag in 1..x.len() / 10 {
            let c: f64 = x
                .iter()
                .zip(&x[lag..])
                .map(|(a, b)| (a - m) * (b - m))
                .sum::<f64>()
                / x.len() as f64
                / v;
            if c < 0.05 {
                break;
            }
            tau += 2.0 * c;
        }
        tau
    }

    #[test]
    fn autocorrelation_decays() {
        let target = Gaussian { m: 0.0, s: 1.0 };
        let draws = run_chains(&target, &config(10_000, 3)).unwrap();
        let x = draws.chains[0].column(0);
        let m = stats::mean(&x);
        let v = stats::variance(&x);
        let acf = |lag: usize| {
            x.iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>()
                / (x.len() - lag) as f64
                / v
        };
        assert!(acf(1) < 0.9);
        assert!(acf(50).abs() < 0.1, "acf(50) = {}", acf(50));
        let r = gelman_rubin(&draws).unwrap();
        assert!(r[0].rhat < 1.1);
    }

    #[test]
    fn poisson_posterior_mode_near_log_rate() {
        let target = PoissonRate { n: 240, area: 3.0 };
        let draws = run_chains(&target, &config(20_000, 2)).unwrap();
        // grid integration of the same 1-D posterior
        let grid: Vec<f64> = (0..20_001).map(|i| 2.0 + 0.0002 * i as f64).collect();
        let lp: Vec<f64> = grid.iter().map(|&y| target.ln_post(y)).collect();
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        let grid_mean: f64 = grid.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / z;
        let mode = grid[lp.iter().position(|&l| l == top).unwrap()];
        assert!((mode - (240.0f64 / 3.0).ln()).abs() < 1e-3);
        let mean = stats::mean(&draws.pooled(0));
        // posterior sd is about 1/sqrt(240)
        assert!((mean - grid_mean).abs() < 0.01, "{mean} vs {grid_mean}");
    }

    #[test]
    fn same_seed_same_bits() {
        let target = Gaussian { m: 1.0, s: 2.0 };
        let c = config(2_000, 3);
        let a = run_chains(&target, &c).unwrap();
        let b = run_chains(&target, &c).unwrap();
        assert_eq!(a, b);
        let mut c2 = c.clone();
        c2.seed = 12;
        assert_ne!(run_chains(&target, &c2).unwrap().chains[0].values, a.chains[0].values);
    }

    #[test]
    fn retained_count_and_frozen_steps() {
        let target = Gaussian { m: 0.0, s: 1.0 };
        let c = ChainConfig {
            thin: 3,
            ..config(1_000, 2)
        };
        let d = run_chains(&target, &c).unwrap();
        for chain in &d.chains {
            assert_eq!(chain.n_rows(), 500 / 3);
            assert!(chain.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn audit_has_no_violations() {
        let target = PoissonRate { n: 12, area: 0.5 };
        let c = ChainConfig {
            audit: true,
            ..config(2_000, 2)
        };
        let d = run_chains(&target, &c).unwrap();
        assert_eq!(d.audit_violations(), Some(0));
        let log = d.chains[0].audit.as_ref().unwrap();
        assert!(log.accepted > 0);
        assert!(log.entries.iter().all(|e| e.delta >= e.log_u - 1e-9));
    }

    #[test]
    fn impossible_start_is_an_error() {
        struct Nowhere;
        impl Target for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn names(&self) -> Vec<String> {
                vec!["x".into()]
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
            fn initial_state(&self, _: &mut ChaCha8Rng) -> Vec<f64> {
                vec![0.0]
            }
        }
        let err = run_chains(&Nowhere, &config(100, 2)).unwrap_err();
        assert!(matches!(err, Error::Sampler(_)));
    }

    fn two_chain_draws(a: Vec<f64>, b: Vec<f64>) -> PosteriorDraws {
        let chain = |v: Vec<f64>| ChainDraws {
            values: v,
            n_cols: 1,
            acceptance: vec![0.5],
            step_sizes: vec![1.0],
            audit: None,
        };
        PosteriorDraws {
            names: vec!["x".into()],
            n_sampled: 1,
            chains: vec![chain(a), chain(b)],
        }
    }

    #[test]
    fn rhat_identical_chains() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let r = rhat_of(&[x.clone(), x]);
        assert!((r - (19.0f64 / 20.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rhat_hand_sized_case() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 4.0, 6.0, 8.0];
        // means 2.5 and 5; variances 5/3 and 20/3
        let w = (5.0 / 3.0 + 20.0 / 3.0) / 2.0;
        let b_over_n = (2.5f64 - 3.75).powi(2) * 2.0; // var of {2.5, 5} with n-1 = 1
        let expected = ((0.75 * w + b_over_n) / w).sqrt();
        assert!((rhat_of(&[a, b]) - expected).abs() < 1e-12);
    }

    #[test]
    fn rhat_separated_chains() {
        let mut rng = keyed_rng(3, &[]);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| 100.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = gelman_rubin(&two_chain_draws(a, b)).unwrap();
        assert!(r[0].rhat > 10.0);
    }

    #[test]
    fn rhat_constant_is_one() {
        let r = gelman_rubin(&two_chain_draws(vec![4.0; 12], vec![4.0; 12])).unwrap();
        assert_eq!(r[0].rhat, 1.0);
        assert!(gelman_rubin(&two_chain_draws(vec![4.0; 5], vec![4.0; 5])).is_err());
    }

    #[test]
    fn summaries() {
        let s = summarize_draws(&two_chain_draws(vec![3.0; 10], vec![3.0; 10]));
        assert_eq!(s[0].mean, 3.0);
        assert_eq!(s[0].q975 - s[0].q025, 0.0);

        let s = summarize_draws(&two_chain_draws(vec![1.0; 10], vec![5.0; 10]));
        assert_eq!(s[0].mean, 3.0);

        let mut rng = keyed_rng(8, &[]);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s = summarize_draws(&two_chain_draws(x[..50_000].to_vec(), x[50_000..].to_vec()));
        assert!((s[0].q025 + 1.96).abs() < 0.03);
        assert!((s[0].q975 - 1.96).abs() < 0.03);
    }

    #[test]
    fn draws_directory_round_trip() {
        let target = Gaussian { m: 0.3, s: 1e-3 };
        let d = run_chains(&target, &config(200, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write_dir(dir.path()).unwrap();
        let back = PosteriorDraws::read_dir(dir.path()).unwrap();
        assert_eq!(back.names, d.names);
        assert_eq!(back.n_sampled, 1);
        assert_eq!(back.chains[1].values, d.chains[1].values);
        assert_eq!(back.chains[0].acceptance, d.chains[0].acceptance);
    }
}
