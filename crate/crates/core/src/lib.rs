//! Bottom-up gridded population estimation.
//!
//! Fits a hierarchical Poisson-LogNormal density model with weighted
//! precision to microcensus survey clusters, samples province age-sex
//! proportions from their conjugate Dirichlet posterior, and predicts
//! population totals and breakdowns for every settled grid cell.

pub mod agesex;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod footprint;
pub mod manifest;
pub mod mcmc;
pub mod model;
pub mod plot;
pub mod predict;
pub mod raster;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
