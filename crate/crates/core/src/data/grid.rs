//! Co-registered prediction layers.
//!
//! On disk a stack is a directory:
//!
//! ```text
//! stack.toml            covariates = ["name", ...]
//! footprint_area.asc    hectares of building footprint per cell
//! settlement_type.asc   1 = urban, 2 = rural, nodata elsewhere
//! province.asc
//! region.asc
//! covariates/<name>.asc
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SettlementType;
use crate::error::{Error, Result};
use crate::raster::{AsciiGrid, GridHeader};

#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub header: GridHeader,
    /// Hectares; 0 where the source layer is nodata.
    pub footprint_area: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// `[k][cell]`, NaN where the source layer is nodata.
    pub covariates: Vec<Vec<f64>>,
    pub settlement: Vec<Option<SettlementType>>,
    pub province: Vec<Option<u32>>,
    pub region: Vec<Option<u32>>,
    pub settled: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StackManifest {
    covariates: Vec<String>,
}

/// Attributes of one prediction location, a grid cell or a survey cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionUnit {
    pub settlement_type: SettlementType,
    pub province_id: u32,
    pub region_id: u32,
    pub footprint_area: f64,
    pub covariates: Vec<f64>,
}

impl GridStack {
    /// Builds a stack and derives the settled mask.
    pub fn new(
        header: GridHeader,
        footprint_area: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        settlement: Vec<Option<SettlementType>>,
        province: Vec<Option<u32>>,
        region: Vec<Option<u32>>,
    ) -> Result<GridStack> {
        let n = header.n_cells();
        let lens = [
            ("footprint_area", footprint_area.len()),
            ("settlement_type", settlement.len()),
            ("province", province.len()),
            ("region", region.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::HeaderMismatch(format!(
                    "layer `{name}` has {len} cells, header says {n}"
                )));
            }
        }
        if covariates.len() != covariate_names.len() {
            return Err(Error::invalid("covariate names and layers differ in count"));
        }
        for (name, layer) in covariate_names.iter().zip(&covariates) {
            if layer.len() != n {
                return Err(Error::HeaderMismatch(format!(
                    "covariate `{name}` has {} cells, header says {n}",
                    layer.len()
                )));
            }
        }
        let settled = (0..n)
            .map(|i| footprint_area[i] > 0.0 && settlement[i].is_some())
            .collect();
        let stack = GridStack {
            header,
            footprint_area,
            covariate_names,
            covariates,
            settlement,
            province,
            region,
            settled,
        };
        stack.check_settled_attributes()?;
        Ok(stack)
    }

    fn check_settled_attributes(&self) -> Result<()> {
        for i in self.settled_cells() {
            if self.province[i].is_none() || self.region[i].is_none() {
                return Err(Error::invalid(format!(
                    "settled cell {i} has no province or region"
                )));
            }
            for (k, layer) in self.covariates.iter().enumerate() {
                if !layer[i].is_finite() {
                    return Err(Error::invalid(format!(
                        "settled cell {i} has nodata in covariate `{}`",
                        self.covariate_names[k]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.header.n_cells()
    }

    pub fn settled_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.settled
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }

    pub fn n_settled(&self) -> usize {
        self.settled.iter().filter(|&&s| s).count()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Prediction attributes of a settled cell.
    pub fn unit(&self, cell: usize) -> Option<PredictionUnit> {
        if !self.settled[cell] {
            return None;
        }
        Some(PredictionUnit {
            settlement_type: self.settlement[cell]?,
            province_id: self.province[cell]?,
            region_id: self.region[cell]?,
            footprint_area: self.footprint_area[cell],
            covariates: self.covariates.iter().map(|l| l[cell]).collect(),
        })
    }

    /// Same stack with footprint areas multiplied by `factor`.
    pub fn with_scaled_area(&self, factor: f64) -> GridStack {
        let mut out = self.clone();
        for a in &mut out.footprint_area {
            *a *= factor;
        }
        out
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<GridStack> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("stack.toml");
        let names = if manifest_path.exists() {
            let text =
                fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let m: StackManifest = toml::from_str(&text).map_err(|e| Error::Format {
                file: manifest_path.display().to_string(),
                message: e.to_string(),
            })?;
            m.covariates
        } else {
            let cov_dir = dir.join("covariates");
            let mut names = Vec::new();
            if cov_dir.is_dir() {
                for entry in fs::read_dir(&cov_dir).map_err(|e| Error::io(&cov_dir, e))? {
                    let path = entry.map_err(|e| Error::io(&cov_dir, e))?.path();
                    if path.extension().is_some_and(|e| e == "asc") {
                        if let Some(stem) = path.file_stem() {
                            names.push(stem.to_string_lossy().into_owned());
                        }
                    }
                }
            }
            names.sort();
            names
        };

        let area = AsciiGrid::read(dir.join("footprint_area.asc"))?;
        let header = area.header;
        let check = |name: &str, g: &AsciiGrid| -> Result<()> {
            if g.header.is_coregistered(&header) {
                Ok(())
            } else {
                Err(Error::HeaderMismatch(format!(
                    "layer `{name}` ({}x{} @ {}) does not match footprint_area ({}x{} @ {})",
                    g.header.ncols,
                    g.header.nrows,
                    g.header.cellsize,
                    header.ncols,
                    header.nrows,
                    header.cellsize
                )))
            }
        };
        let settlement_grid = AsciiGrid::read(dir.join("settlement_type.asc"))?;
        check("settlement_type", &settlement_grid)?;
        let province_grid = AsciiGrid::read(dir.join("province.asc"))?;
        check("province", &province_grid)?;
        let region_grid = AsciiGrid::read(dir.join("region.asc"))?;
        check("region", &region_grid)?;

        let n = header.n_cells();
        let mut covariates = Vec::with_capacity(names.len());
        for name in &names {
            let g = AsciiGrid::read(dir.join("covariates").join(format!("{name}.asc")))?;
            check(name, &g)?;
            covariates.push((0..n).map(|i| g.get(i).unwrap_or(f64::NAN)).collect());
        }

        let footprint_area = (0..n).map(|i| area.get(i).unwrap_or(0.0)).collect();
        let mut settlement = Vec::with_capacity(n);
        for i in 0..n {
            match settlement_grid.get(i) {
                None => settlement.push(None),
                Some(code) => match SettlementType::from_code(code) {
                    Some(t) => settlement.push(Some(t)),
                    None => {
                        return Err(Error::Format {
                            file: dir.join("settlement_type.asc").display().to_string(),
                            message: format!("cell {i}: unknown settlement code {code}"),
                        })
                    }
                },
            }
        }
        let ids = |g: &AsciiGrid| -> Vec<Option<u32>> {
            (0..n)
                .map(|i| g.get(i).filter(|v| *v >= 1.0).map(|v| v as u32))
                .collect()
        };
        GridStack::new(
            header,
            footprint_area,
            names,
            covariates,
            settlement,
            ids(&province_grid),
            ids(&region_grid),
        )
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let cov_dir = dir.join("covariates");
        fs::create_dir_all(&cov_dir).map_err(|e| Error::io(&cov_dir, e))?;
        let manifest = toml::to_string(&StackManifest {
            covariates: self.covariate_names.clone(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        let mpath = dir.join("stack.toml");
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;

        let h = self.header;
        let area: Vec<Option<f64>> = self
            .footprint_area
            .iter()
            .zip(&self.settlement)
            .map(|(&a, s)| (a > 0.0 || s.is_some()).then_some(a))
            .collect();
        AsciiGrid::from_options(h, &area).write(dir.join("footprint_area.asc"))?;
        let codes: Vec<Option<f64>> = self
            .settlement
            .iter()
            .map(|s| s.map(|t| f64::from(t.code())))
            .collect();
        AsciiGrid::from_options(h, &codes).write(dir.join("settlement_type.asc"))?;
        let to_f = |v: &[Option<u32>]| -> Vec<Option<f64>> { v.iter().map(|x| x.map(f64::from)).collect() };
        AsciiGrid::from_options(h, &to_f(&self.province)).write(dir.join("province.asc"))?;
        AsciiGrid::from_options(h, &to_f(&self.region)).write(dir.join("region.asc"))?;
        for (name, layer) in self.covariate_names.iter().zip(&self.covariates) {
            let vals: Vec<Option<f64>> =
                layer.iter().map(|&v| v.is_finite().then_some(v)).collect();
            AsciiGrid::from_options(h, &vals).write(cov_dir.join(format!("{name}.asc")))?;
        }
        Ok(())
    }
}
