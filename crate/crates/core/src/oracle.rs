//! Exact linear-algebra ground truth for the walk estimators.
//!
//! Window chains restrict the quenched walk to a finite interval of sites,
//! with every exit absorbed. Periodic environments reduce to a chain on the
//! phases `ℤ/pℤ`.

use serde::{Deserialize, Serialize};

use crate::band::BandMatrix;
use crate::env::{truncate, DriverSpec, Environment, TruncationLevel};
use crate::error::{Error, Result};
use crate::line::{check_irreducible, stationary_distribution};
use crate::regen::EnvOccupation;

const ROW_TOL: f64 = 1e-12;
/// Cap on the window size used by bracket doubling.
pub const MAX_WINDOW: i64 = 1 << 12;

/// Label of a state of a [`FiniteChain`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainState {
    Site(i64),
    Phase(usize),
    /// Everything to the left of the window.
    ExitLeft,
}

/// Finite Markov chain with sparse rows. Transient states come first and
/// keep the band structure of the walk.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChain {
    pub states: Vec<ChainState>,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub absorbing: Vec<bool>,
}

impl FiniteChain {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row.iter().map(|e| e.1).sum();
            if (s - 1.0).abs() > ROW_TOL || row.iter().any(|e| e.1 < 0.0) {
                return Err(Error::InvalidParameter(format!("row {i} is not stochastic (sum {s})")));
            }
            if self.absorbing[i] && !(row.len() == 1 && row[0] == (i, 1.0)) {
                return Err(Error::InvalidParameter(format!("absorbing row {i} is not an identity row")));
            }
        }
        Ok(())
    }

    fn transient(&self) -> Vec<usize> {
        (0..self.states.len()).filter(|&i| !self.absorbing[i]).collect()
    }

    /// `I - Q` on the transient block; transient states must be `0..n_t`.
    fn generator(&self) -> (usize, BandMatrix) {
        let t = self.transient();
        let nt = t.len();
        assert!(t.iter().enumerate().all(|(k, &i)| k == i), "transient states must come first");
        let rows: Vec<Vec<(usize, f64)>> = (0..nt)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.rows[i].iter().filter(|e| e.0 < nt).map(|&(j, p)| (j, -p)).collect();
                r.push((i, 1.0));
                r
            })
            .collect();
        (nt, BandMatrix::from_rows(&rows))
    }

    /// Probability of absorption in each state (zero for transient states)
    /// starting from transient state `start`.
    pub fn absorption_from(&self, start: usize) -> Result<Vec<f64>> {
        let (nt, a) = self.generator();
        // h = e_start (I - Q)^{-1}, then absorption = h R.
        let mut e = vec![0.0; nt];
        e[start] = 1.0;
        let h = a.transpose().solve(&e)?;
        let mut out = vec![0.0; self.states.len()];
        for (i, hi) in h.iter().enumerate() {
            for &(j, p) in &self.rows[i] {
                if j >= nt {
                    out[j] += hi * p;
                }
            }
        }
        Ok(out)
    }

    /// Expected visits to every transient state from `start`: row `start` of
    /// the fundamental matrix `(I - Q)^{-1}`.
    pub fn expected_visits(&self, start: usize) -> Result<Vec<f64>> {
        let (nt, a) = self.generator();
        let mut e = vec![0.0; nt];
        e[start] = 1.0;
        a.transpose().solve(&e)
    }
}

/// The walk `S^ρ` on sites `lo..=hi`, absorbed on leaving. Exits to the
/// right are kept as separate `Site` states, exits to the left are lumped.
pub fn window_chain(env: &Environment, rho: TruncationLevel, lo: i64, hi: i64) -> Result<FiniteChain> {
    if hi < lo {
        return Err(Error::InvalidParameter(format!("empty window [{lo}, {hi}]")));
    }
    let nt = (hi - lo + 1) as usize;
    let reach = (rho.effective(env.max_jump()) - 1).min(env.reach() as i64).max(0);
    let mut states: Vec<ChainState> = (lo..=hi).map(ChainState::Site).collect();
    states.extend((hi + 1..=hi + reach).map(ChainState::Site));
    let left = states.len();
    states.push(ChainState::ExitLeft);
    let mut rows = Vec::with_capacity(states.len());
    for x in lo..=hi {
        let law = truncate(&env.law_at(x), rho);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(law.offsets().len());
        for (&y, &p) in law.offsets().iter().zip(law.probs()) {
            if p == 0.0 {
                continue;
            }
            let j = if x + y < lo { left } else { (x + y - lo) as usize };
            match row.iter_mut().find(|e| e.0 == j) {
                Some(e) => e.1 += p,
                None => row.push((j, p)),
            }
        }
        rows.push(row);
    }
    for i in nt..states.len() {
        rows.push(vec![(i, 1.0)]);
    }
    let mut absorbing = vec![false; nt];
    absorbing.resize(states.len(), true);
    let chain = FiniteChain { states, rows, absorbing };
    chain.validate()?;
    Ok(chain)
}

/// Landing law at first passage above `z` from `x0`, on the window
/// `[z - W, z - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandingLaw {
    pub window: i64,
    /// `probs[i]` is the probability of landing at `z + i` before leaving
    /// the window to the left.
    pub probs: Vec<f64>,
    /// Probability of leaving the window to the left first.
    pub left_exit: f64,
}

pub fn landing_law(env: &Environment, rho: TruncationLevel, z: i64, window: i64, x0: i64) -> Result<LandingLaw> {
    let need = (rho.effective(env.max_jump())).min(env.reach() as i64 + 1);
    if window < need {
        return Err(Error::WindowTooSmall { window, rho: need });
    }
    if !(z - window..z).contains(&x0) {
        return Err(Error::InvalidParameter(format!("x0 = {x0} outside [{}, {}]", z - window, z - 1)));
    }
    let chain = window_chain(env, rho, z - window, z - 1)?;
    let a = chain.absorption_from((x0 - (z - window)) as usize)?;
    let nt = window as usize;
    let left_exit = a[a.len() - 1];
    Ok(LandingLaw { window, probs: a[nt..a.len() - 1].to_vec(), left_exit })
}

/// Bracket `lower <= r_{x0}(z) <= upper`.
///
/// `lower` counts leaving the window to the left as failure, unless no
/// admissible jump exceeds `+1` (then overshoot is impossible and every exit
/// eventually hits `z`); `upper` counts it as success.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitBracket {
    pub lower: f64,
    pub upper: f64,
    pub window: i64,
}

impl HitBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Exact-hit probability at level 0 from `x0 ∈ [-W, -1]`.
pub fn solve_exact_hit(env: &Environment, rho: TruncationLevel, window: i64, x0: i64) -> Result<HitBracket> {
    solve_exact_hit_at(env, rho, 0, window, x0)
}

pub fn solve_exact_hit_at(env: &Environment, rho: TruncationLevel, z: i64, window: i64, x0: i64) -> Result<HitBracket> {
    let l = landing_law(env, rho, z, window, x0)?;
    let hit = l.probs.first().copied().unwrap_or(0.0);
    let upper = (hit + l.left_exit).min(1.0);
    let lower = if env.max_up_jump(rho) <= 1 { upper } else { hit };
    Ok(HitBracket { lower, upper, window })
}

/// Doubles the window from `initial` until the bracket is narrower than
/// `tol` or the window reaches [`MAX_WINDOW`].
pub fn solve_exact_hit_adaptive(
    env: &Environment,
    rho: TruncationLevel,
    z: i64,
    x0: i64,
    initial: i64,
    tol: f64,
) -> Result<HitBracket> {
    let mut w = initial.max(z - x0).max(1);
    loop {
        let b = solve_exact_hit_at(env, rho, z, w, x0)?;
        if b.width() < tol || w >= MAX_WINDOW {
            return Ok(b);
        }
        w = (2 * w).min(MAX_WINDOW);
    }
}

/// Expected visits `E^{x0} N^ρ(x)` for `x` in the window, walk killed on
/// leaving `[lo, hi]`. Entry `i` is site `lo + i`.
pub fn fundamental_visits(env: &Environment, rho: TruncationLevel, lo: i64, hi: i64, x0: i64) -> Result<Vec<f64>> {
    if !(lo..=hi).contains(&x0) {
        return Err(Error::InvalidParameter(format!("x0 = {x0} outside [{lo}, {hi}]")));
    }
    window_chain(env, rho, lo, hi)?.expected_visits((x0 - lo) as usize)
}

fn periodic_laws(env: &Environment) -> Result<usize> {
    match &env.spec().driver {
        DriverSpec::Periodic { laws, .. } => Ok(laws.len()),
        _ => Err(Error::InvalidParameter("oracle needs a periodic environment".into())),
    }
}

/// Chain of the phase `S^ρ_n mod p` seen by the walk. State `i` is the
/// driver state (the law index), independent of the phase origin.
pub fn phase_chain(env: &Environment, rho: TruncationLevel) -> Result<Vec<Vec<f64>>> {
    let p = periodic_laws(env)?;
    let mut m = vec![vec![0.0; p]; p];
    for (i, row) in m.iter_mut().enumerate() {
        let law = truncate(env.state_law(i).expect("periodic state"), rho);
        for (&y, &q) in law.offsets().iter().zip(law.probs()) {
            row[(i as i64 + y).rem_euclid(p as i64) as usize] += q;
        }
    }
    check_irreducible(&m)?;
    Ok(m)
}

/// Exact stationary law of the environment seen from the particle on a
/// periodic environment.
pub fn periodic_env_chain(env: &Environment, rho: TruncationLevel) -> Result<EnvOccupation> {
    let pi = stationary_distribution(&phase_chain(env, rho)?)?;
    EnvOccupation::new((0..pi.len()).map(|i| vec![i]).collect(), pi)
}

/// `v_ρ = Σ_i π_i E[Y^ρ | phase i]`.
pub fn periodic_speed(env: &Environment, rho: TruncationLevel) -> Result<f64> {
    let occ = periodic_env_chain(env, rho)?;
    Ok(occ.weights.iter().enumerate().map(|(i, w)| w * env.state_law(i).unwrap().mean(rho)).sum())
}
