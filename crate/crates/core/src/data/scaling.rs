use std::fs;
use std::path::Path;

use super::{ClusterSet, GridStack};
use crate::error::{Error, Result};

/// Per-covariate mean and standard deviation over settled grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ScalingStats {
    /// Sample (n - 1) moments of each covariate over the settled cells.
    pub fn from_grid(grid: &GridStack) -> Result<ScalingStats> {
        let settled: Vec<usize> = grid.settled_cells().collect();
        if settled.len() < 2 {
            return Err(Error::invalid(format!(
                "covariate scaling needs at least 2 settled cells, found {}",
                settled.len()
            )));
        }
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for (name, layer) in grid.covariate_names.iter().zip(&grid.covariates) {
            let vals: Vec<f64> = settled.iter().map(|&i| layer[i]).collect();
            let m = crate::stats::mean(&vals);
            let s = crate::stats::sd(&vals);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ZeroVariance(name.clone()));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(ScalingStats {
            names: grid.covariate_names.clone(),
            mean,
            sd,
        })
    }

    pub fn scale(&self, k: usize, x: f64) -> f64 {
        (x - self.mean[k]) / self.sd[k]
    }

    pub fn unscale(&self, k: usize, z: f64) -> f64 {
        z * self.sd[k] + self.mean[k]
    }

    pub fn apply_grid(&self, grid: &mut GridStack) {
        for (k, layer) in grid.covariates.iter_mut().enumerate() {
            for v in layer.iter_mut() {
                if v.is_finite() {
                    *v = self.scale(k, *v);
                }
            }
        }
    }

    pub fn apply_clusters(&self, clusters: &mut ClusterSet) {
        for c in &mut clusters.clusters {
            for (k, v) in c.covariates.iter_mut().enumerate() {
                *v = self.scale(k, *v);
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("covariate,mean,sd\n");
        for ((n, m), s) in self.names.iter().zip(&self.mean).zip(&self.sd) {
            out.push_str(&format!("{n},{m},{s}\n"));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Z-scores cluster and grid covariates with moments taken over the settled
/// grid cells. Both inputs must name the same covariates in the same order.
pub fn scale_covariates(
    mut clusters: ClusterSet,
    mut grid: GridStack,
) -> Result<(ClusterSet, GridStack, ScalingStats)> {
    if clusters.covariate_names != grid.covariate_names {
        return Err(Error::CovariateMismatch(format!(
            "clusters have [{}], grid has [{}]",
            clusters.covariate_names.join(", "),
            grid.covariate_names.join(", ")
        )));
    }
    let stats = ScalingStats::from_grid(&grid)?;
    stats.apply_grid(&mut grid);
    stats.apply_clusters(&mut clusters);
    Ok((clusters, grid, stats))
}
