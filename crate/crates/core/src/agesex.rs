//! Province age-sex structure from survey records.
//!
//! Proportions over 36 groups (2 sexes x 18 age bands) get a symmetric
//! `Dirichlet(1/G)` prior per province, so the posterior given the observed
//! counts is `Dirichlet(1/G + N)` and is sampled exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::stats::{self, keyed_rng};

pub const N_AGE_BANDS: usize = 18;
pub const N_GROUPS: usize = 2 * N_AGE_BANDS;

const BAND_LABELS: [&str; N_AGE_BANDS] = [
    "<1", "1-4", "5-9", "10-14", "15-19", "20-24", "25-29", "30-34", "35-39", "40-44", "45-49",
    "50-54", "55-59", "60-64", "65-69", "70-74", "75-79", "80+",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn index(self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Sex> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "1" => Some(Sex::Male),
            "f" | "female" | "2" => Some(Sex::Female),
            _ => None,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

/// Age band index: `<1`, `1-4`, 5-year bands up to `75-79`, then `80+`.
pub fn age_band(age_years: f64) -> Result<usize> {
    if !(age_years >= 0.0) {
        return Err(Error::invalid(format!("age {age_years} is negative or missing")));
    }
    Ok(if age_years < 1.0 {
        0
    } else if age_years < 5.0 {
        1
    } else if age_years >= 80.0 {
        N_AGE_BANDS - 1
    } else {
        2 + ((age_years - 5.0) / 5.0).floor() as usize
    })
}

/// Group index: males `0..18`, females `18..36`.
pub fn group_index(sex: Sex, band: usize) -> usize {
    sex.index() * N_AGE_BANDS + band
}

pub fn group_sex(group: usize) -> Sex {
    if group < N_AGE_BANDS {
        Sex::Male
    } else {
        Sex::Female
    }
}

pub fn band_label(band: usize) -> &'static str {
    BAND_LABELS[band]
}

/// File-name-safe group key, e.g. `m_lt1`, `f_20_24`, `m_80plus`.
pub fn group_key(group: usize) -> String {
    let sex = match group_sex(group) {
        Sex::Male => "m",
        Sex::Female => "f",
    };
    let band = group % N_AGE_BANDS;
    let label = match band {
        0 => "lt1".to_string(),
        b if b == N_AGE_BANDS - 1 => "80plus".to_string(),
        b => BAND_LABELS[b].replace('-', "_"),
    };
    format!("{sex}_{label}")
}

/// One survey row; `count` is 1 for individual records.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeSexRecord {
    pub province_id: u32,
    pub cluster_id: Option<String>,
    pub sex: Sex,
    pub age_years: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeSexTable {
    pub provinces: Vec<u32>,
    pub counts: Vec<[u64; N_GROUPS]>,
}

impl AgeSexTable {
    pub fn province_index(&self, province_id: u32) -> Option<usize> {
        self.provinces.binary_search(&province_id).ok()
    }

    pub fn total(&self, p: usize) -> u64 {
        self.counts[p].iter().sum()
    }

    pub fn proportions(&self, p: usize) -> [f64; N_GROUPS] {
        let total = self.total(p) as f64;
        let mut out = [0.0; N_GROUPS];
        if total > 0.0 {
            for (o, &c) in out.iter_mut().zip(&self.counts[p]) {
                *o = c as f64 / total;
            }
        }
        out
    }
}

pub fn aggregate_counts(records: &[AgeSexRecord]) -> Result<AgeSexTable> {
    let mut by_province: BTreeMap<u32, [u64; N_GROUPS]> = BTreeMap::new();
    for r in records {
        let g = group_index(r.sex, age_band(r.age_years)?);
        by_province.entry(r.province_id).or_insert([0; N_GROUPS])[g] += r.count;
    }
    let (provinces, counts) = by_province.into_iter().unzip();
    Ok(AgeSexTable { provinces, counts })
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<AgeSexRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(file, &path.display().to_string())
}

/// Reads `province_id,sex,age_years[,count]` with an optional `cluster_id`
/// column.
pub fn parse_records<R: Read>(reader: R, file: &str) -> Result<Vec<AgeSexRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let fmt_err = |message: String| Error::Format {
        file: file.to_string(),
        message,
    };
    let headers = rdr.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let province = col("province_id").ok_or_else(|| fmt_err("missing column `province_id`".into()))?;
    let sex = col("sex").ok_or_else(|| fmt_err("missing column `sex`".into()))?;
    let age = col("age_years").ok_or_else(|| fmt_err("missing column `age_years`".into()))?;
    let count = col("count");
    let cluster = col("cluster_id");

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        let parse_err = |column: &str, message: String| Error::Parse {
            file: file.to_string(),
            row,
            column: column.to_string(),
            message,
        };
        let field = |j: usize| rec.get(j).unwrap_or("");
        let province_id = field(province)
            .parse::<u32>()
            .map_err(|e| parse_err("province_id", e.to_string()))?;
        let sex_v = Sex::parse(field(sex))
            .ok_or_else(|| parse_err("sex", format!("unknown sex `{}`", field(sex))))?;
        let age_years = field(age)
            .parse::<f64>()
            .map_err(|e| parse_err("age_years", e.to_string()))?;
        if !(age_years >= 0.0) {
            return Err(parse_err("age_years", format!("age {age_years} is negative")));
        }
        let count = match count {
            Some(j) => field(j)
                .parse::<u64>()
                .map_err(|e| parse_err("count", e.to_string()))?,
            None => 1,
        };
        let cluster_id = cluster
            .map(|j| field(j).to_string())
            .filter(|s| !s.is_empty());
        out.push(AgeSexRecord {
            province_id,
            cluster_id,
            sex: sex_v,
            age_years,
            count,
        });
    }
    Ok(out)
}

/// Writes records in the layout read by [`parse_records`].
pub fn records_to_csv(records: &[AgeSexRecord]) -> String {
    let mut out = String::from("cluster_id,province_id,sex,age_years,count\n");
    for r in records {
        let sex = match r.sex {
            Sex::Male => "m",
            Sex::Female => "f",
        };
        out.push_str(&format!(
            "{},{},{sex},{},{}\n",
            r.cluster_id.as_deref().unwrap_or(""),
            r.province_id,
            r.age_years,
            r.count
        ));
    }
    out
}

pub fn write_records(path: impl AsRef<Path>, records: &[AgeSexRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, records_to_csv(records)).map_err(|e| Error::io(path, e))
}

/// One draw from `Dirichlet(alpha)` via normalised Gamma variates. Shapes
/// below 1 are sampled on the log scale with the boost
/// `Gamma(a) = Gamma(a + 1) U^(1/a)` so small shapes cannot underflow to an
/// all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(alpha.len());
    for &a in alpha {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::invalid(format!("Dirichlet shape {a} is not positive")));
        }
        let l = if a < 1.0 {
            let g: f64 = Gamma::new(a + 1.0, 1.0)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(rng);
            let u: f64 = rng.random::<f64>();
            g.ln() + u.ln() / a
        } else {
            let g: f64 = Gamma::new(a, 1.0)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(rng);
            g.ln()
        };
        logs.push(l);
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Posterior proportion draws per province, `pi[p][d * N_GROUPS + g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionDraws {
    pub provinces: Vec<u32>,
    pub n_draws: usize,
    pub pi: Vec<Vec<f64>>,
}

impl ProportionDraws {
    pub fn province_index(&self, province_id: u32) -> Option<usize> {
        self.provinces.binary_search(&province_id).ok()
    }

    pub fn draw(&self, p: usize, d: usize) -> &[f64] {
        &self.pi[p][d * N_GROUPS..(d + 1) * N_GROUPS]
    }

    pub fn group_draws(&self, p: usize, g: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.pi[p][d * N_GROUPS + g]).collect()
    }
}

/// `n_draws` exact posterior draws per province; each province uses its own
/// substream keyed by `(seed, province_id)`.
pub fn sample_pi(table: &AgeSexTable, n_draws: usize, seed: u64) -> Result<ProportionDraws> {
    if n_draws == 0 {
        return Err(Error::invalid("sample_pi needs at least one draw"));
    }
    let prior = 1.0 / N_GROUPS as f64;
    let pi = table
        .provinces
        .iter()
        .zip(&table.counts)
        .map(|(&pid, counts)| {
            let alpha: Vec<f64> = counts.iter().map(|&n| prior + n as f64).collect();
            let mut rng = keyed_rng(seed, &[0xa9e5, u64::from(pid)]);
            let mut flat = Vec::with_capacity(n_draws * N_GROUPS);
            for _ in 0..n_draws {
                flat.extend(sample_dirichlet(&alpha, &mut rng)?);
            }
            Ok(flat)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProportionDraws {
        provinces: table.provinces.clone(),
        n_draws,
        pi,
    })
}

/// Analytic posterior mean `(1/G + N_g) / (1 + N)`.
pub fn posterior_mean(counts: &[u64]) -> Vec<f64> {
    let g = counts.len() as f64;
    let total: f64 = counts.iter().map(|&c| c as f64).sum::<f64>() + 1.0;
    counts.iter().map(|&c| (1.0 / g + c as f64) / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionSummary {
    pub province_id: u32,
    /// 0-based group index.
    pub group: usize,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub const MIN_SUMMARY_DRAWS: usize = 100;

pub fn proportion_summary(draws: &ProportionDraws) -> Result<Vec<ProportionSummary>> {
    if draws.n_draws < MIN_SUMMARY_DRAWS {
        return Err(Error::invalid(format!(
            "proportion summary needs at least {MIN_SUMMARY_DRAWS} draws, got {}",
            draws.n_draws
        )));
    }
    let mut out = Vec::with_capacity(draws.provinces.len() * N_GROUPS);
    for (p, &pid) in draws.provinces.iter().enumerate() {
        for g in 0..N_GROUPS {
            let s = stats::Summary::of(&draws.group_draws(p, g));
            out.push(ProportionSummary {
                province_id: pid,
                group: g,
                mean: s.mean,
                lo95: s.lo95,
                hi95: s.hi95,
            });
        }
    }
    Ok(out)
}

/// `province_id,group_id,mean,lo95,hi95` with 1-based group ids.
pub fn summary_csv(rows: &[ProportionSummary]) -> String {
    let mut out = String::from("province_id,group_id,mean,lo95,hi95\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.province_id,
            r.group + 1,
            r.mean,
            r.lo95,
            r.hi95
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: u32, sex: Sex, age: f64, count: u64) -> AgeSexRecord {
        AgeSexRecord {
            province_id: p,
            cluster_id: None,
            sex,
            age_years: age,
            count,
        }
    }

    #[test]
    fn band_edges() {
        assert_eq!(age_band(0.0).unwrap(), 0);
        assert_eq!(age_band(0.99).unwrap(), 0);
        assert_eq!(age_band(1.0).unwrap(), 1);
        assert_eq!(age_band(4.9).unwrap(), 1);
        assert_eq!(age_band(5.0).unwrap(), 2);
        assert_eq!(band_label(age_band(79.0).unwrap()), "75-79");
        assert_eq!(band_label(age_band(80.0).unwrap()), "80+");
        assert_eq!(band_label(age_band(104.0).unwrap()), "80+");
        assert!(age_band(-1.0).is_err());
        assert_eq!(N_GROUPS, 36);
        let keys: std::collections::HashSet<String> = (0..N_GROUPS).map(group_key).collect();
        assert_eq!(keys.len(), 36);
        assert_eq!(group_key(0), "m_lt1");
        assert_eq!(group_key(35), "f_80plus");
    }

    #[test]
    fn aggregation_preserves_totals() {
        let recs = vec![
            rec(2, Sex::Male, 0.0, 3),
            rec(2, Sex::Female, 33.0, 4),
            rec(1, Sex::Female, 85.0, 1),
            rec(2, Sex::Male, 0.5, 2),
        ];
        let t = aggregate_counts(&recs).unwrap();
        assert_eq!(t.provinces, vec![1, 2]);
        assert_eq!(t.total(1), 9);
        assert_eq!(t.counts[1][0], 5);
        assert_eq!(t.counts[1][group_index(Sex::Female, 7)], 4);
        assert_eq!(t.counts[0][35], 1);
        assert!(aggregate_counts(&[rec(1, Sex::Male, -2.0, 1)]).is_err());
    }

    #[test]
    fn parses_both_layouts() {
        let agg = "province_id,sex,age_years,count\n1,male,3,10\n1,F,40,2\n";
        let r = parse_records(agg.as_bytes(), "agg").unwrap();
        assert_eq!(r[0].count, 10);
        assert_eq!(r[1].sex, Sex::Female);
        let raw = "cluster_id,province_id,sex,age_years\nc1,3,female,22\nc2,3,male,0\n";
        let r = parse_records(raw.as_bytes(), "raw").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].count, 1);
        assert_eq!(r[0].cluster_id.as_deref(), Some("c1"));
        let bad = "province_id,sex,age_years\n1,x,3\n";
        assert!(matches!(parse_records(bad.as_bytes(), "bad"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn zero_counts_give_prior_mean() {
        let t = AgeSexTable {
            provinces: vec![1],
            counts: vec![[0; N_GROUPS]],
        };
        let d = sample_pi(&t, 20_000, 3).unwrap();
        for g in 0..N_GROUPS {
            let m = stats::mean(&d.group_draws(0, g));
            // Dirichlet(1/36 x 36): var = (1/36)(35/36) / 2
            let se = ((1.0 / 36.0) * (35.0 / 36.0) / 2.0 / 20_000.0f64).sqrt();
            assert!((m - 1.0 / 36.0).abs() < 4.0 * se, "group {g}: {m}");
        }
        for dd in 0..d.n_draws {
            let s: f64 = d.draw(0, dd).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(d.draw(0, dd).iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn three_group_moments() {
        let counts = [10u64, 20, 30];
        let alpha: Vec<f64> = counts.iter().map(|&c| c as f64 + 1.0 / 3.0).collect();
        let a0: f64 = alpha.iter().sum();
        let want = posterior_mean(&counts);
        for (w, c) in want.iter().zip(&counts) {
            assert!((w - (*c as f64 + 1.0 / 3.0) / 61.0).abs() < 1e-15);
        }
        let mut rng = keyed_rng(17, &[]);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_dirichlet(&alpha, &mut rng).unwrap()).collect();
        for g in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|d| d[g]).collect();
            let m = alpha[g] / a0;
            let var = m * (1.0 - m) / (a0 + 1.0);
            let se = (var / n as f64).sqrt();
            assert!((stats::mean(&xs) - m).abs() < 3.0 * se);
            // sample variance: se of variance ~ var sqrt(2/n) for near-normal draws
            assert!((stats::variance(&xs) - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn summaries() {
        let same = ProportionDraws {
            provinces: vec![4],
            n_draws: 100,
            pi: vec![(0..100).flat_map(|_| vec![1.0 / 36.0; 36]).collect()],
        };
        let s = proportion_summary(&same).unwrap();
        assert!(s.iter().all(|r| r.hi95 == r.lo95));

        let mut t = AgeSexTable {
            provinces: vec![1],
            counts: vec![[0; N_GROUPS]],
        };
        t.counts[0][0] = 500;
        t.counts[0][18] = 500;
        let s = proportion_summary(&sample_pi(&t, 4000, 9).unwrap()).unwrap();
        assert!((s[0].mean - 0.5).abs() < 0.005);
        assert!((s[18].mean - 0.5).abs() < 0.005);

        let t = AgeSexTable {
            provinces: vec![1],
            counts: vec![[1_000_000; N_GROUPS]],
        };
        let s = proportion_summary(&sample_pi(&t, 500, 9).unwrap()).unwrap();
        assert!(s.iter().all(|r| r.hi95 - r.lo95 < 0.01));

        let short = ProportionDraws {
            n_draws: 10,
            ..same
        };
        assert!(proportion_summary(&short).is_err());
        let csv = summary_csv(&s[..1]);
        assert!(csv.starts_with("province_id,group_id,mean,lo95,hi95\n1,1,"));
    }

    #[test]
    fn seeded_reproducibility() {
        let t = aggregate_counts(&[rec(1, Sex::Male, 3.0, 7), rec(2, Sex::Female, 30.0, 3)]).unwrap();
        assert_eq!(sample_pi(&t, 50, 1).unwrap(), sample_pi(&t, 50, 1).unwrap());
        assert_ne!(sample_pi(&t, 50, 1).unwrap(), sample_pi(&t, 50, 2).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn draws_on_simplex(counts in proptest::collection::vec(0u64..1000, N_GROUPS), seed in any::<u64>()) {
                let mut c = [0u64; N_GROUPS];
                c.copy_from_slice(&counts);
                let t = AgeSexTable { provinces: vec![1], counts: vec![c] };
                let d = sample_pi(&t, 5, seed).unwrap();
                for k in 0..5 {
                    let s: f64 = d.draw(0, k).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                    prop_assert!(d.draw(0, k).iter().all(|&p| (0.0..=1.0).contains(&p)));
                }
            }

            #[test]
            fn posterior_mean_monotone(counts in proptest::collection::vec(0u64..1000, 2..40), g in any::<proptest::sample::Index>()) {
                let i = g.index(counts.len());
                let before = posterior_mean(&counts)[i];
                let mut more = counts.clone();
                more[i] += 1;
                prop_assert!(posterior_mean(&more)[i] > before);
            }
        }
    }
}
