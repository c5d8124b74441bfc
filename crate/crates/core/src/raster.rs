//! ESRI ASCII grid (`.asc`) reading and writing.
//!
//! Cells are stored row-major starting from the northern row, exactly as they
//! appear in the file. Missing cells hold the header's `NODATA_value`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
}

impl GridHeader {
    pub fn new(ncols: usize, nrows: usize, cellsize: f64) -> Self {
        GridHeader {
            ncols,
            nrows,
            xllcorner: 0.0,
            yllcorner: 0.0,
            cellsize,
            nodata: DEFAULT_NODATA,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.ncols * self.nrows
    }

    /// Planar coordinates of the centre of cell `index`.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let row = index / self.ncols;
        let col = index % self.ncols;
        let x = self.xllcorner + (col as f64 + 0.5) * self.cellsize;
        let y = self.yllcorner + (self.nrows as f64 - row as f64 - 0.5) * self.cellsize;
        (x, y)
    }

    /// Same geometry; nodata values are allowed to differ.
    pub fn is_coregistered(&self, other: &GridHeader) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && (self.xllcorner - other.xllcorner).abs() <= 1e-9 * self.cellsize.max(1.0)
            && (self.yllcorner - other.yllcorner).abs() <= 1e-9 * self.cellsize.max(1.0)
            && (self.cellsize - other.cellsize).abs() <= 1e-12 * self.cellsize.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub header: GridHeader,
    pub data: Vec<f64>,
}

impl AsciiGrid {
    pub fn filled(header: GridHeader, value: f64) -> Self {
        AsciiGrid {
            header,
            data: vec![value; header.n_cells()],
        }
    }

    pub fn from_options(header: GridHeader, values: &[Option<f64>]) -> Self {
        let data = values
            .iter()
            .map(|v| v.unwrap_or(header.nodata))
            .collect();
        AsciiGrid { header, data }
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        is_nodata(self.data[index], self.header.nodata)
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        (!self.is_nodata(index)).then_some(self.data[index])
    }

    pub fn get_rc(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row * self.header.ncols + col)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let fmt_err = |message: String| Error::Format {
            file: file.to_string(),
            message,
        };
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut center = false;
        let mut cellsize = None;
        let mut nodata = DEFAULT_NODATA;

        let mut tokens = text.split_ascii_whitespace().peekable();
        while let Some(tok) = tokens.peek() {
            if tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                let key = tokens.next().unwrap().to_ascii_lowercase();
                let value = tokens
                    .next()
                    .ok_or_else(|| fmt_err(format!("header key `{key}` has no value")))?;
                let num: f64 = value
                    .parse()
                    .map_err(|_| fmt_err(format!("header `{key}` value `{value}` is not a number")))?;
                match key.as_str() {
                    "ncols" => ncols = Some(num as usize),
                    "nrows" => nrows = Some(num as usize),
                    "xllcorner" => xll = Some(num),
                    "yllcorner" => yll = Some(num),
                    "xllcenter" => {
                        xll = Some(num);
                        center = true;
                    }
                    "yllcenter" => {
                        yll = Some(num);
                        center = true;
                    }
                    "cellsize" => cellsize = Some(num),
                    "nodata_value" => nodata = num,
                    other => return Err(fmt_err(format!("unknown header key `{other}`"))),
                }
            } else {
                break;
            }
        }

        let ncols = ncols.ok_or_else(|| fmt_err("missing ncols".into()))?;
        let nrows = nrows.ok_or_else(|| fmt_err("missing nrows".into()))?;
        let cellsize = cellsize.ok_or_else(|| fmt_err("missing cellsize".into()))?;
        if !(cellsize > 0.0) {
            return Err(fmt_err("cellsize must be positive".into()));
        }
        let (mut xllcorner, mut yllcorner) = (
            xll.ok_or_else(|| fmt_err("missing xllcorner".into()))?,
            yll.ok_or_else(|| fmt_err("missing yllcorner".into()))?,
        );
        if center {
            xllcorner -= cellsize / 2.0;
            yllcorner -= cellsize / 2.0;
        }

        let header = GridHeader {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
            nodata,
        };
        let mut data = Vec::with_capacity(header.n_cells());
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| {
                fmt_err(format!(
                    "cell {} (row {}, col {}): `{tok}` is not a number",
                    data.len(),
                    data.len() / ncols.max(1),
                    data.len() % ncols.max(1)
                ))
            })?;
            data.push(v);
        }
        if data.len() != header.n_cells() {
            return Err(fmt_err(format!(
                "expected {} cells ({} x {}), found {}",
                header.n_cells(),
                nrows,
                ncols,
                data.len()
            )));
        }
        Ok(AsciiGrid { header, data })
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::with_capacity(h.n_cells() * 4 + 128);
        let _ = writeln!(out, "ncols {}", h.ncols);
        let _ = writeln!(out, "nrows {}", h.nrows);
        let _ = writeln!(out, "xllcorner {}", h.xllcorner);
        let _ = writeln!(out, "yllcorner {}", h.yllcorner);
        let _ = writeln!(out, "cellsize {}", h.cellsize);
        let _ = writeln!(out, "NODATA_value {}", h.nodata);
        for row in self.data.chunks(h.ncols.max(1)) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn is_nodata(value: f64, nodata: f64) -> bool {
    value.is_nan() || value == nodata
}
