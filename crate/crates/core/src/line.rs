//! Finite-state stationary processes indexed by ℤ.
//!
//! Both the jump-law environment and the tube radius are driven by a process
//! `(s_x, x ∈ ℤ)` taking values in `{0, .., k-1}`. Three drivers exist:
//!
//! * i.i.d. with fixed weights,
//! * a stationary Markov chain (two-sided: sites `x > 0` use the forward
//!   kernel, sites `x < 0` the time reversal `P̂(i,j) = π_j P(j,i) / π_i`,
//!   site 0 is drawn from `π`),
//! * periodic, `s_x = (x + phase) mod p`.
//!
//! Each site consumes exactly one stateless uniform [`hash_uniform`]`(seed, x)`,
//! so the state at any site is a deterministic function of `(driver, seed, x)`.
//! Markov states are materialized outward from 0 into a shared cache that is
//! only ever extended, under a write lock, by whole blocks.

use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::seed::hash_uniform;

const BLOCK: usize = 4096;
const ROW_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LineProcess {
    Iid { weights: Vec<f64>, cdf: Vec<f64> },
    Markov { forward: Vec<Vec<f64>>, backward_cdf: Vec<Vec<f64>>, forward_cdf: Vec<Vec<f64>>, stationary: Vec<f64>, stationary_cdf: Vec<f64> },
    Periodic { period: usize, phase: usize },
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = f64::INFINITY;
    }
    c
}

#[inline]
fn invert(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Checks that the directed graph of positive entries is strongly connected.
pub fn check_irreducible(m: &[Vec<f64>]) -> Result<()> {
    let k = m.len();
    let reach = |from: usize, transpose: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let w = if transpose { m[j][i] } else { m[i][j] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let fwd = reach(0, false);
    let bwd = reach(0, true);
    if let Some(i) = (0..k).find(|&i| !fwd[i] || !bwd[i]) {
        return Err(Error::Reducible(format!("state {i} does not communicate with state 0")));
    }
    Ok(())
}

/// Stationary distribution of an irreducible stochastic matrix, by a direct
/// solve of `π (P - I) = 0` with the last equation replaced by `Σπ = 1`.
pub fn stationary_distribution(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = m.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            // Row j of the transposed system.
            a[(j, i)] = m[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..k {
        a[(k - 1, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary equations".into()))?;
    Ok(pi.iter().map(|x| x.max(0.0)).collect())
}

fn validate_stochastic(m: &[Vec<f64>]) -> Result<()> {
    let k = m.len();
    if k == 0 {
        return Err(Error::InvalidParameter("transition matrix is empty".into()));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidParameter(format!("transition row {i} has {} entries, expected {k}", row.len())));
        }
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("transition row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidParameter(format!("transition row {i} sums to {s}")));
        }
    }
    Ok(())
}

impl LineProcess {
    pub fn iid(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("i.i.d. weights must be nonnegative and non-empty".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("i.i.d. weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let cdf = cumulative(&weights);
        Ok(LineProcess::Iid { weights, cdf })
    }

    pub fn markov(transition: Vec<Vec<f64>>) -> Result<Self> {
        validate_stochastic(&transition)?;
        check_irreducible(&transition)?;
        let pi = stationary_distribution(&transition)?;
        let k = pi.len();
        let backward: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| pi[j] * transition[j][i] / pi[i]).collect())
            .collect();
        Ok(LineProcess::Markov {
            forward_cdf: transition.iter().map(|r| cumulative(r)).collect(),
            backward_cdf: backward.iter().map(|r| cumulative(r)).collect(),
            stationary_cdf: cumulative(&pi),
            stationary: pi,
            forward: transition,
        })
    }

    pub fn periodic(period: usize, phase: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidParameter("period must be at least 1".into()));
        }
        Ok(LineProcess::Periodic { period, phase: phase % period })
    }

    pub fn n_states(&self) -> usize {
        match self {
            LineProcess::Iid { weights, .. } => weights.len(),
            LineProcess::Markov { stationary, .. } => stationary.len(),
            LineProcess::Periodic { period, .. } => *period,
        }
    }

    /// One-site marginal of the stationary process.
    pub fn stationary(&self) -> Vec<f64> {
        match self {
            LineProcess::Iid { weights, .. } => weights.clone(),
            LineProcess::Markov { stationary, .. } => stationary.clone(),
            LineProcess::Periodic { period, .. } => vec![1.0 / *period as f64; *period],
        }
    }

    /// Stationary law of the window `(s_{x-w}, .., s_{x+w})`, as a list of
    /// (state tuple, probability) with zero-mass tuples omitted.
    pub fn window_marginal(&self, half_width: usize) -> Vec<(Vec<usize>, f64)> {
        let len = 2 * half_width + 1;
        match self {
            LineProcess::Periodic { period, .. } => (0..*period)
                .map(|s| ((0..len).map(|j| (s + j) % period).collect(), 1.0 / *period as f64))
                .collect(),
            LineProcess::Iid { weights, .. } => {
                let mut out = vec![(Vec::new(), 1.0)];
                for _ in 0..len {
                    out = out
                        .into_iter()
                        .flat_map(|(t, p)| {
                            weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(move |(s, &w)| {
                                let mut t2 = t.clone();
                                t2.push(s);
                                (t2, p * w)
                            })
                        })
                        .collect();
                }
                out
            }
            LineProcess::Markov { forward, stationary, .. } => {
                let mut out: Vec<(Vec<usize>, f64)> = stationary
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (vec![s], p))
                    .collect();
                for _ in 1..len {
                    out = out
                        .into_iter()
                        .flat_map(|(t, p)| {
                            let last = *t.last().unwrap();
                            forward[last].iter().enumerate().filter(|(_, &q)| q > 0.0).map(move |(s, &q)| {
                                let mut t2 = t.clone();
                                t2.push(s);
                                (t2, p * q)
                            })
                        })
                        .collect();
                }
                out
            }
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Materialized {
    /// `right[i]` is the state at site `i`, `i >= 0`.
    right: Vec<u16>,
    /// `left[i]` is the state at site `-1 - i`.
    left: Vec<u16>,
}

/// A seeded realization of a [`LineProcess`].
#[derive(Debug)]
pub struct StateLine {
    process: LineProcess,
    seed: u64,
    cache: RwLock<Materialized>,
}

impl Clone for StateLine {
    fn clone(&self) -> Self {
        StateLine {
            process: self.process.clone(),
            seed: self.seed,
            cache: RwLock::new(self.cache.read().unwrap().clone()),
        }
    }
}

impl StateLine {
    pub fn new(process: LineProcess, seed: u64) -> Self {
        StateLine { process, seed, cache: RwLock::new(Materialized::default()) }
    }

    pub fn process(&self) -> &LineProcess {
        &self.process
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stateless(&self, site: i64) -> Option<usize> {
        match &self.process {
            LineProcess::Iid { cdf, .. } => Some(invert(cdf, hash_uniform(self.seed, site))),
            LineProcess::Periodic { period, phase } => {
                Some((site + *phase as i64).rem_euclid(*period as i64) as usize)
            }
            LineProcess::Markov { .. } => None,
        }
    }

    /// Extends the shared cache so that it covers `site`, rounding up to a
    /// whole block. Safe to call concurrently; extension is idempotent.
    fn ensure(&self, site: i64) {
        let (need_right, need_left) = if site >= 0 { (site as usize + 1, 0) } else { (0, (-site) as usize) };
        {
            let c = self.cache.read().unwrap();
            if c.right.len() >= need_right && c.left.len() >= need_left {
                return;
            }
        }
        let LineProcess::Markov { forward_cdf, backward_cdf, stationary_cdf, .. } = &self.process else {
            return;
        };
        let mut c = self.cache.write().unwrap();
        if c.right.is_empty() {
            c.right.push(invert(stationary_cdf, hash_uniform(self.seed, 0)) as u16);
        }
        let target = need_right.div_ceil(BLOCK) * BLOCK;
        while c.right.len() < target {
            let x = c.right.len() as i64;
            let prev = *c.right.last().unwrap() as usize;
            c.right.push(invert(&forward_cdf[prev], hash_uniform(self.seed, x)) as u16);
        }
        let target = need_left.div_ceil(BLOCK) * BLOCK;
        while c.left.len() < target {
            let x = -(c.left.len() as i64) - 1;
            let prev = c.left.last().copied().unwrap_or(c.right[0]) as usize;
            c.left.push(invert(&backward_cdf[prev], hash_uniform(self.seed, x)) as u16);
        }
    }

    /// State at `site`. Takes a lock for Markov drivers; hot loops should use
    /// a [`LineView`].
    pub fn state(&self, site: i64) -> usize {
        if let Some(s) = self.stateless(site) {
            return s;
        }
        self.ensure(site);
        let c = self.cache.read().unwrap();
        if site >= 0 {
            c.right[site as usize] as usize
        } else {
            c.left[(-site - 1) as usize] as usize
        }
    }

    pub fn view(&self) -> LineView<'_> {
        LineView { line: self, local: Materialized::default() }
    }
}

/// Per-thread read handle with a private copy of the materialized window.
#[derive(Debug)]
pub struct LineView<'a> {
    line: &'a StateLine,
    local: Materialized,
}

impl<'a> LineView<'a> {
    pub fn line(&self) -> &'a StateLine {
        self.line
    }

    #[inline]
    pub fn state(&mut self, site: i64) -> usize {
        if let Some(s) = self.line.stateless(site) {
            return s;
        }
        if site >= 0 {
            if let Some(&s) = self.local.right.get(site as usize) {
                return s as usize;
            }
        } else if let Some(&s) = self.local.left.get((-site - 1) as usize) {
            return s as usize;
        }
        self.refresh(site)
    }

    #[cold]
    fn refresh(&mut self, site: i64) -> usize {
        // Grow geometrically so that copies stay amortized O(1) per site.
        let reach = if site >= 0 {
            (site + 1).max(2 * self.local.right.len() as i64)
        } else {
            -((-site).max(2 * self.local.left.len() as i64))
        };
        self.line.ensure(reach);
        self.line.ensure(site);
        self.local = self.line.cache.read().unwrap().clone();
        self.state(site)
    }
}
