//! Small numeric helpers shared by every module: log densities, moments,
//! the single percentile routine used for all credible intervals, and
//! deterministic RNG substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n - 1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Standard deviation with the n denominator.
pub fn population_sd(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Percentile of an already sorted slice by linear interpolation between the
/// closest order statistics, rank h = 1 + (n - 1) p.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Posterior-style summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub median: f64,
    pub hi95: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            mean: mean(xs),
            sd: if xs.len() > 1 { sd(xs) } else { 0.0 },
            lo95: quantile_sorted(&sorted, 0.025),
            median: quantile_sorted(&sorted, 0.5),
            hi95: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo95 && x <= self.hi95
    }
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    if x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

pub fn poisson_ln_pmf(n: u64, lambda: f64) -> f64 {
    if lambda < 0.0 || lambda.is_nan() {
        return f64::NEG_INFINITY;
    }
    if lambda == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * lambda.ln() - lambda - ln_factorial(n)
}

pub fn normal_ln_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    if !(sd > 0.0) {
        return f64::NEG_INFINITY;
    }
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub fn lognormal_ln_pdf(x: f64, log_mu: f64, log_sd: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(x.ln(), log_mu, log_sd) - x.ln()
}

/// log of the standard normal CDF, stable far into the lower tail.
pub fn ln_ndtr(z: f64) -> f64 {
    if z > -20.0 {
        (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic series of the Mills ratio
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Normal(mu, sd) truncated to [0, inf), normalizing constant included.
pub fn half_normal_ln_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    if x < 0.0 || !(sd > 0.0) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(x, mu, sd) - ln_ndtr(mu / sd)
}

/// Uniform(0, upper) density over the open interval.
pub fn uniform_ln_pdf(x: f64, upper: f64) -> f64 {
    if x > 0.0 && x < upper {
        -upper.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of keys into one 64-bit seed.
pub fn mix_keys(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// Counter-based substream keyed by `(seed, keys...)`.
pub fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_keys(seed, keys))
}
