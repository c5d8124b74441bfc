//! Building footprint attributes and their summaries over clusters and grid
//! cells: polygon metrics, nearest-neighbour proximity, focal counts,
//! settlement classes, zone summaries, covariate screening.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::data::{ClusterSet, SettlementType};
use crate::error::{Error, Result};
use crate::raster::{AsciiGrid, GridHeader};
use crate::stats::{mean, pearson, population_sd};

/// Distances below this are clamped before taking the reciprocal (metres).
pub const MIN_PROXIMITY_DISTANCE: f64 = 0.1;

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintMetrics {
    pub area_ha: f64,
    pub perimeter_m: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: String,
    pub ring: Vec<Point>,
    pub metrics: FootprintMetrics,
    pub centroid: Point,
}

impl Footprint {
    pub fn new(id: impl Into<String>, ring: Vec<Point>) -> Result<Footprint> {
        let id = id.into();
        let ring = open_ring(&ring);
        let metrics =
            footprint_metrics(&ring).map_err(|e| Error::Geometry(format!("footprint {id}: {e}")))?;
        let centroid = ring_centroid(&ring);
        Ok(Footprint {
            id,
            ring,
            metrics,
            centroid,
        })
    }
}

/// Drops the closing duplicate vertex, if any.
fn open_ring(ring: &[Point]) -> Vec<Point> {
    let mut out = ring.to_vec();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = ring[i];
            let (x1, y1) = ring[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

fn ring_centroid(ring: &[Point]) -> Point {
    let a = signed_area(ring);
    let n = ring.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    (cx / (6.0 * a), cy / (6.0 * a))
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Shoelace area (ha), perimeter (m) and vertex count of a simple ring.
/// The ring may or may not repeat its first vertex at the end.
pub fn footprint_metrics(ring: &[Point]) -> Result<FootprintMetrics> {
    let ring = open_ring(ring);
    let n = ring.len();
    let mut distinct = ring.clone();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Geometry(format!(
            "ring has {} distinct vertices, need 3",
            distinct.len()
        )));
    }
    if ring.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Geometry("non-finite vertex".into()));
    }
    let area = signed_area(&ring).abs();
    let perimeter: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = ring[i];
            let (x1, y1) = ring[(i + 1) % n];
            (x1 - x0).hypot(y1 - y0)
        })
        .sum();
    if !(area > 1e-12 * perimeter * perimeter) {
        return Err(Error::Geometry("ring has zero area (collinear vertices)".into()));
    }
    // non-adjacent edges must not touch
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return Err(Error::Geometry(format!(
                    "ring self-intersects between edges {i} and {j}"
                )));
            }
        }
    }
    Ok(FootprintMetrics {
        area_ha: area / 10_000.0,
        perimeter_m: perimeter,
        node_count: n,
    })
}

/// Parses the outer ring of a WKT `POLYGON`. Interior rings are ignored.
pub fn parse_wkt_polygon(wkt: &str) -> Result<Vec<Point>> {
    let s = wkt.trim();
    let upper = s.to_ascii_uppercase();
    if !upper.starts_with("POLYGON") {
        return Err(Error::Geometry(format!("not a WKT POLYGON: `{s}`")));
    }
    let body = s[7..].trim();
    let inner = body
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .ok_or_else(|| Error::Geometry("unbalanced parentheses".into()))?
        .trim();
    let outer = inner
        .strip_prefix('(')
        .and_then(|b| b.split(')').next())
        .ok_or_else(|| Error::Geometry("missing outer ring".into()))?;
    outer
        .split(',')
        .map(|pair| {
            let mut it = pair.split_whitespace();
            let x = it.next().and_then(|v| v.parse::<f64>().ok());
            let y = it.next().and_then(|v| v.parse::<f64>().ok());
            match (x, y) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(Error::Geometry(format!("bad coordinate pair `{}`", pair.trim()))),
            }
        })
        .collect()
}

/// Reads a `id,wkt_polygon` CSV.
pub fn load_footprints(path: impl AsRef<Path>) -> Result<Vec<Footprint>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let perr = |column: &str, message: String| Error::Parse {
            file: name.clone(),
            row: i + 1,
            column: column.into(),
            message,
        };
        let rec = rec.map_err(|e| perr("-", e.to_string()))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let ring = parse_wkt_polygon(rec.get(1).unwrap_or(""))
            .map_err(|e| perr("wkt_polygon", e.to_string()))?;
        out.push(Footprint::new(id, ring).map_err(|e| perr("wkt_polygon", e.to_string()))?);
    }
    Ok(out)
}

/// Reads a `cluster_id,x,y` household CSV into points grouped by cluster.
pub fn load_households(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<Point>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out: HashMap<String, Vec<Point>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let perr = |column: &str, message: String| Error::Parse {
            file: name.clone(),
            row: i + 1,
            column: column.into(),
            message,
        };
        let rec = rec.map_err(|e| perr("-", e.to_string()))?;
        let x = rec.get(1).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| perr("x", "not a number".into()))?;
        let y = rec.get(2).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| perr("y", "not a number".into()))?;
        out.entry(rec.get(0).unwrap_or("").to_string()).or_default().push((x, y));
    }
    Ok(out)
}

/// Uniform bucket index over points for nearest-neighbour queries.
struct PointIndex<'a> {
    points: &'a [Point],
    origin: Point,
    size: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PointIndex<'a> {
    fn new(points: &'a [Point]) -> Self {
        let (mut minx, mut miny, mut maxx, mut maxy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in points {
            minx = minx.min(x);
            miny = miny.min(y);
            maxx = maxx.max(x);
            maxy = maxy.max(y);
        }
        let extent = (maxx - minx).max(maxy - miny).max(1e-9);
        let size = (extent / (points.len() as f64).sqrt()).max(1e-9);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let origin = (minx, miny);
        for (i, &p) in points.iter().enumerate() {
            buckets.entry(Self::key_of(origin, size, p)).or_default().push(i);
        }
        PointIndex {
            points,
            origin,
            size,
            buckets,
        }
    }

    fn key_of(origin: Point, size: f64, p: Point) -> (i64, i64) {
        (
            ((p.0 - origin.0) / size).floor() as i64,
            ((p.1 - origin.1) / size).floor() as i64,
        )
    }

    /// Distance from point `i` to its nearest other point.
    fn nearest_other(&self, i: usize) -> f64 {
        let p = self.points[i];
        let (cx, cy) = Self::key_of(self.origin, self.size, p);
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(ids) = self.buckets.get(&(cx + dx, cy + dy)) {
                        for &j in ids {
                            if j != i {
                                let q = self.points[j];
                                best = best.min((q.0 - p.0).hypot(q.1 - p.1));
                            }
                        }
                    }
                }
            }
            // everything outside ring r is at least r * size away
            if best <= ring as f64 * self.size {
                return best;
            }
            ring += 1;
            if ring as usize > self.points.len() + 2 && best.is_finite() {
                return best;
            }
        }
    }
}

/// Inverse centroid distance to the nearest other footprint, m^-1.
/// `None` when fewer than two footprints exist.
pub fn nearest_proximity(centroids: &[Point]) -> Option<Vec<f64>> {
    if centroids.len() < 2 {
        warn!("proximity undefined for {} footprint(s)", centroids.len());
        return None;
    }
    let index = PointIndex::new(centroids);
    Some(
        (0..centroids.len())
            .into_par_iter()
            .map(|i| 1.0 / index.nearest_other(i).max(MIN_PROXIMITY_DISTANCE))
            .collect(),
    )
}

/// Mean building count over the (2r+1)^2 window around each cell. Edge
/// windows shrink; nodata cells are left out of both sums and stay nodata.
pub fn focal_count(counts: &AsciiGrid, radius: usize) -> Result<AsciiGrid> {
    if radius < 1 {
        return Err(Error::invalid("focal radius must be at least 1 cell"));
    }
    let h = counts.header;
    let (nr, nc) = (h.nrows, h.ncols);
    // summed-area tables of values and valid-cell counts, (nr+1) x (nc+1)
    let w = nc + 1;
    let mut sum = vec![0.0f64; (nr + 1) * w];
    let mut valid = vec![0u64; (nr + 1) * w];
    for r in 0..nr {
        for c in 0..nc {
            let (v, ok) = match counts.get_rc(r, c) {
                Some(v) => (v, 1),
                None => (0.0, 0),
            };
            let i = (r + 1) * w + c + 1;
            sum[i] = v + sum[i - 1] + sum[i - w] - sum[i - w - 1];
            valid[i] = ok + valid[i - 1] + valid[i - w] - valid[i - w - 1];
        }
    }
    let rect = |t: &dyn Fn(usize) -> f64, r0: usize, c0: usize, r1: usize, c1: usize| {
        t(r1 * w + c1) - t(r0 * w + c1) - t(r1 * w + c0) + t(r0 * w + c0)
    };
    let mut data = vec![h.nodata; h.n_cells()];
    data.par_chunks_mut(nc.max(1)).enumerate().for_each(|(r, row)| {
        let r0 = r.saturating_sub(radius);
        let r1 = (r + radius + 1).min(nr);
        for (c, out) in row.iter_mut().enumerate() {
            if counts.get_rc(r, c).is_none() {
                continue;
            }
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius + 1).min(nc);
            let s = rect(&|i| sum[i], r0, c0, r1, c1);
            let n = rect(&|i| valid[i] as f64, r0, c0, r1, c1);
            *out = s / n;
        }
    });
    Ok(AsciiGrid { header: h, data })
}

/// Source settlement classes, as coded in input rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettlementClass {
    BuiltUp = 1,
    SmallSettlement = 2,
    Hamlet = 3,
}

impl SettlementClass {
    pub fn from_code(code: f64) -> Option<SettlementClass> {
        match code {
            c if c == 1.0 => Some(SettlementClass::BuiltUp),
            c if c == 2.0 => Some(SettlementClass::SmallSettlement),
            c if c == 3.0 => Some(SettlementClass::Hamlet),
            _ => None,
        }
    }

    pub fn settlement_type(self) -> SettlementType {
        match self {
            SettlementClass::BuiltUp => SettlementType::Urban,
            SettlementClass::SmallSettlement | SettlementClass::Hamlet => SettlementType::Rural,
        }
    }
}

/// Built-up areas become urban; small settlements and hamlets merge into
/// rural. Output codes are [`SettlementType::code`].
pub fn classify_settlement(classes: &AsciiGrid) -> Result<AsciiGrid> {
    let mut out = AsciiGrid::filled(classes.header, classes.header.nodata);
    for i in 0..classes.data.len() {
        if let Some(code) = classes.get(i) {
            let class = SettlementClass::from_code(code).ok_or_else(|| {
                Error::invalid(format!("cell {i}: unknown settlement class code {code}"))
            })?;
            out.data[i] = f64::from(class.settlement_type().code());
        }
    }
    Ok(out)
}

/// Attributes of one footprint that feed zone summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildingAttributes {
    pub area_ha: f64,
    pub perimeter_m: f64,
    pub proximity: Option<f64>,
    pub focal_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary {
    pub zone_id: String,
    pub building_count: usize,
    pub total_area: f64,
    pub mean_area: Option<f64>,
    pub mean_perimeter: Option<f64>,
    pub mean_proximity: Option<f64>,
    pub mean_focal_count: Option<f64>,
    pub cv_area: Option<f64>,
    pub cv_perimeter: Option<f64>,
    pub cv_proximity: Option<f64>,
}

fn mean_cv(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let m = mean(values);
    let cv = (m != 0.0).then(|| population_sd(values) / m);
    (Some(m), cv)
}

/// Sum, mean and coefficient of variation (population sd / mean) over the
/// footprints whose centroid falls in the zone.
pub fn summarize_zone(zone_id: impl Into<String>, members: &[BuildingAttributes]) -> ZoneSummary {
    let areas: Vec<f64> = members.iter().map(|m| m.area_ha).collect();
    let perims: Vec<f64> = members.iter().map(|m| m.perimeter_m).collect();
    let prox: Vec<f64> = members.iter().filter_map(|m| m.proximity).collect();
    let focal: Vec<f64> = members.iter().filter_map(|m| m.focal_count).collect();
    let (mean_area, cv_area) = mean_cv(&areas);
    let (mean_perimeter, cv_perimeter) = mean_cv(&perims);
    let (mean_proximity, cv_proximity) = mean_cv(&prox);
    ZoneSummary {
        zone_id: zone_id.into(),
        building_count: members.len(),
        total_area: areas.iter().sum(),
        mean_area,
        mean_perimeter,
        mean_proximity,
        mean_focal_count: mean_cv(&focal).0,
        cv_area,
        cv_perimeter,
        cv_proximity,
    }
}

/// Grid cell containing each point, or `None` outside the grid.
pub fn cell_of(header: &GridHeader, p: Point) -> Option<usize> {
    let col = ((p.0 - header.xllcorner) / header.cellsize).floor();
    let row_from_south = ((p.1 - header.yllcorner) / header.cellsize).floor();
    if col < 0.0 || row_from_south < 0.0 {
        return None;
    }
    let (col, rs) = (col as usize, row_from_south as usize);
    if col >= header.ncols || rs >= header.nrows {
        return None;
    }
    Some((header.nrows - 1 - rs) * header.ncols + col)
}

/// Per-cell summaries of the footprints whose centroid lies in each cell.
/// Returns count, total-area, mean-area and mean-proximity rasters; cells
/// without buildings get count 0 and nodata means.
pub fn grid_summaries(
    footprints: &[Footprint],
    proximity: Option<&[f64]>,
    header: GridHeader,
) -> [AsciiGrid; 4] {
    let mut members: Vec<Vec<BuildingAttributes>> = vec![Vec::new(); header.n_cells()];
    for (i, f) in footprints.iter().enumerate() {
        if let Some(cell) = cell_of(&header, f.centroid) {
            members[cell].push(BuildingAttributes {
                area_ha: f.metrics.area_ha,
                perimeter_m: f.metrics.perimeter_m,
                proximity: proximity.map(|p| p[i]),
                focal_count: None,
            });
        }
    }
    let summaries: Vec<ZoneSummary> = members
        .iter()
        .enumerate()
        .map(|(i, m)| summarize_zone(i.to_string(), m))
        .collect();
    let nd = header.nodata;
    let layer = |f: &dyn Fn(&ZoneSummary) -> f64| AsciiGrid {
        header,
        data: summaries.iter().map(f).collect(),
    };
    [
        layer(&|s| s.building_count as f64),
        layer(&|s| s.total_area),
        layer(&|s| s.mean_area.unwrap_or(nd)),
        layer(&|s| s.mean_proximity.unwrap_or(nd)),
    ]
}

/// Footprints whose centroid lies within `radius_m` (inclusive) of any
/// household point. Returns indices into `footprints`.
pub fn constrain_cluster_extent(
    households: &[Point],
    footprints: &[Footprint],
    radius_m: f64,
) -> Result<Vec<usize>> {
    if households.is_empty() {
        return Err(Error::invalid("cluster has no household points"));
    }
    let r2 = radius_m * radius_m;
    Ok(footprints
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            households.iter().any(|h| {
                let (dx, dy) = (f.centroid.0 - h.0, f.centroid.1 - h.1);
                dx * dx + dy * dy <= r2
            })
        })
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    pub covariate: String,
    pub r: Option<f64>,
}

/// Pearson correlation of each covariate with log observed density, sorted
/// by decreasing |r| with undefined correlations last.
pub fn covariate_screen(clusters: &ClusterSet) -> Result<Vec<ScreenRow>> {
    if clusters.len() < 3 {
        return Err(Error::invalid("covariate screening needs at least 3 clusters"));
    }
    let mut log_density = Vec::with_capacity(clusters.len());
    for c in &clusters.clusters {
        let d = c.density();
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid(format!(
                "cluster {} has non-positive density",
                c.cluster_id
            )));
        }
        log_density.push(d.ln());
    }
    let mut rows: Vec<ScreenRow> = clusters
        .covariate_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let x: Vec<f64> = clusters.clusters.iter().map(|c| c.covariates[k]).collect();
            ScreenRow {
                covariate: name.clone(),
                r: pearson(&x, &log_density),
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.r, b.r) {
        (Some(x), Some(y)) => y.abs().total_cmp(&x.abs()),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}
