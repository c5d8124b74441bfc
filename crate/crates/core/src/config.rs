//! Run configuration read from a single TOML file. Every table and key is
//! optional; command-line flags override the file.
//!
//! ```toml
//! covariates = ["cov_1", "cov_2"]
//! effect_modes = "auto"            # or ["random", "fixed"]
//!
//! [mcmc]
//! n_chains = 3
//! n_iterations = 10000
//! burn_in = 5000
//! seed = 1
//!
//! [weights]
//! truncation_percentile = 0.9
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainConfig;
use crate::model::{EffectMode, Priors};
use crate::predict::PredictConfig;
use crate::synth::WorldConfig;

/// Either the keyword `"auto"` or one mode per selected covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EffectModes {
    Keyword(String),
    List(Vec<EffectMode>),
}

impl Default for EffectModes {
    fn default() -> Self {
        EffectModes::Keyword("auto".into())
    }
}

impl EffectModes {
    pub fn is_auto(&self) -> bool {
        matches!(self, EffectModes::Keyword(k) if k == "auto")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    /// Percentile at which sampling weights are capped; `None` disables.
    pub truncation_percentile: Option<f64>,
    /// When false every cluster gets the same model weight.
    pub use_sampling_weights: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            truncation_percentile: Some(0.9),
            use_sampling_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub agesex_holdout: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            seed: 1,
            agesex_holdout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    /// Nearest neighbours per unit in the Moran weights.
    pub neighbors: usize,
    /// Distance band used instead of `neighbors` when set.
    pub distance: Option<f64>,
    pub permutations: usize,
    pub variogram_bins: usize,
    pub seed: u64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            neighbors: 5,
            distance: None,
            permutations: 999,
            variogram_bins: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Covariates entering the model; empty means all in the cluster file.
    pub covariates: Vec<String>,
    pub effect_modes: EffectModes,
    pub mcmc: ChainConfig,
    pub priors: Priors,
    pub weights: WeightConfig,
    pub predict: PredictConfig,
    pub cv: CvConfig,
    pub spatial: SpatialConfig,
    pub simulate: WorldConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let EffectModes::Keyword(k) = &self.effect_modes {
            if k != "auto" {
                return Err(Error::Config(format!(
                    "effect_modes must be \"auto\" or a list, got \"{k}\""
                )));
            }
        }
        if let EffectModes::List(modes) = &self.effect_modes {
            if !self.covariates.is_empty() && modes.len() != self.covariates.len() {
                return Err(Error::Config(format!(
                    "{} effect modes for {} covariates",
                    modes.len(),
                    self.covariates.len()
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.covariates {
            if !seen.insert(c) {
                return Err(Error::Config(format!("covariate `{c}` listed twice")));
            }
        }
        self.mcmc.validate()?;
        if let Some(p) = self.weights.truncation_percentile {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!(
                    "truncation_percentile must lie in (0, 1], got {p}"
                )));
            }
        }
        if !(self.priors.location_sd > 0.0 && self.priors.scale_upper > 0.0) {
            return Err(Error::Config("prior scales must be positive".into()));
        }
        if self.predict.n_draws == 0 {
            return Err(Error::Config("predict.n_draws must be positive".into()));
        }
        if self.cv.k < 2 {
            return Err(Error::Config("cv.k must be at least 2".into()));
        }
        if self.spatial.neighbors == 0 && self.spatial.distance.is_none() {
            return Err(Error::Config("spatial.neighbors must be positive".into()));
        }
        self.simulate.validate()
    }

    /// Covariates to model, checked against those available.
    pub fn resolve_covariates(&self, available: &[String]) -> Result<Vec<String>> {
        if self.covariates.is_empty() {
            return Ok(available.to_vec());
        }
        let missing: Vec<&String> = self
            .covariates
            .iter()
            .filter(|c| !available.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::CovariateMismatch(format!(
                "configured covariates not found: {}",
                missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(self.covariates.clone())
    }

    /// Fixed modes when listed; `None` asks for the pilot-fit rule.
    pub fn explicit_modes(&self, n_covariates: usize) -> Result<Option<Vec<EffectMode>>> {
        match &self.effect_modes {
            EffectModes::List(m) if m.len() == n_covariates => Ok(Some(m.clone())),
            EffectModes::List(m) => Err(Error::Config(format!(
                "{} effect modes for {n_covariates} covariates",
                m.len()
            ))),
            _ => Ok(None),
        }
    }
}
