//! Small statistics toolkit: mergeable moments, goodness-of-fit tests and
//! tail-exponent regression.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mergeable running mean/variance (Welford / Chan et al.).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean(), self.stderr())
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    /// Binomial proportion `k / n` with its standard error.
    pub fn proportion(k: u64, n: u64) -> Self {
        if n == 0 {
            return Estimate::new(0.0, 0.0);
        }
        let p = k as f64 / n as f64;
        Estimate::new(p, (p * (1.0 - p) / n as f64).sqrt())
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let s = self.stderr.hypot(other.stderr);
        let d = (self.value - other.value).abs();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / s
        }
    }
}

/// Outcome of a chi-square goodness-of-fit test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square goodness of fit of `observed` counts against the
/// probabilities `expected`. Bins with expected count below 5 are pooled.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), expected.len());
    let n: u64 = observed.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        let e = p * n as f64;
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pool_e > 0.0 {
        if pool_e >= 5.0 || bins.is_empty() {
            bins.push((pool_o, pool_e));
        } else if let Some(last) = bins.last_mut() {
            last.0 += pool_o;
            last.1 += pool_e;
        }
    } else if pool_o > 0.0 {
        // Mass where none is expected.
        return ChiSquareTest { statistic: f64::INFINITY, dof: bins.len().max(1), p_value: 0.0 };
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic)
    };
    ChiSquareTest { statistic, dof, p_value }
}

/// Chi-square test of homogeneity for two count vectors over the same bins.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareTest {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        used += 1;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        statistic += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = used.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic)
    };
    ChiSquareTest { statistic, dof, p_value }
}

/// Asymptotic Kolmogorov survival function `P[K > x]`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    KsTest { statistic: d, p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d) }
}

/// One-sample KS distance of `samples` against a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Total variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Empirical tail `P[X > h]` for each threshold.
pub fn empirical_tail(samples: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    thresholds
        .iter()
        .map(|&h| {
            let below = s.partition_point(|&x| x <= h);
            (s.len() - below) as f64 / n
        })
        .collect()
}

/// Result of a power-law tail fit `P[X > h] ~ C h^(-exponent)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub thresholds: Vec<f64>,
    pub tail: Vec<f64>,
}

/// Log-log regression of the empirical tail over `[h_lo, h_hi]` using
/// `points` logarithmically spaced thresholds. Thresholds with an empty tail
/// are dropped.
pub fn fit_tail_exponent(samples: &[f64], h_lo: f64, h_hi: f64, points: usize) -> Option<TailFit> {
    let hs: Vec<f64> = (0..points)
        .map(|i| h_lo * (h_hi / h_lo).powf(i as f64 / (points - 1) as f64))
        .collect();
    let tail = empirical_tail(samples, &hs);
    let (lx, ly): (Vec<f64>, Vec<f64>) = hs
        .iter()
        .zip(&tail)
        .filter(|(_, &t)| t > 0.0)
        .map(|(h, t)| (h.ln(), t.ln()))
        .unzip();
    if lx.len() < 3 {
        return None;
    }
    let (slope, intercept) = linear_fit(&lx, &ly);
    Some(TailFit { exponent: -slope, coefficient: intercept.exp(), thresholds: hs, tail })
}
