//! Regeneration structure of the truncated walk.
//!
//! An i.i.d. Bernoulli(ε₁) sequence `ζ` is coupled with the walk so that
//! `ζ_j = 1` forces an exact hit of the ladder level `jρ`. The success
//! indices `ℓ_k` cut the trajectory into cycle-stationary pieces, which give
//! the speed `v_ρ = ρ / (ε₁ E T_{ℓ₁ρ})` and the invariant law `Q^ρ` of the
//! environment seen from the particle as cycle averages.
//!
//! The `ζ_j = 0` segments use an approximate residual-mixture sampler: draw
//! the segment unconditionally and, if it hit `jρ` exactly, resample with
//! probability `ε₁ / r̂_j`. Its bias is of order `stderr(r̂) / r̂`, reported by
//! [`SplitParams::mixture_bias_bound`].

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, TruncationLevel};
use crate::error::{Error, Result};
use crate::par::map_replicas;
use crate::seed::SeedStream;
use crate::stats::{Estimate, Moments};
use crate::walk::{estimate_condition_d, Walker, DEFAULT_STEP_CAP};

/// Smallest admissible ε₁.
pub const EPS1_FLOOR: f64 = 1e-4;
const MIN_SPEED_CYCLES: usize = 30;
const MIN_OCCUPATION_CYCLES: usize = 100;

/// A finite-dimensional marginal of a law on environments: the law of the
/// local descriptor `(s_{x-w}, .., s_{x+w})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvOccupation {
    pub support: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl EnvOccupation {
    pub fn new(support: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::InvalidParameter("occupation support and weights differ in length".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("occupation weights sum to {s}")));
        }
        Ok(EnvOccupation { support, weights })
    }

    pub fn from_pairs(pairs: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let (support, weights) = pairs.into_iter().unzip();
        Self::new(support, weights)
    }

    pub fn weight(&self, descriptor: &[usize]) -> f64 {
        self.support.iter().position(|d| d == descriptor).map_or(0.0, |i| self.weights[i])
    }

    /// Total variation distance over the union of supports.
    pub fn total_variation(&self, other: &EnvOccupation) -> f64 {
        let mut keys: Vec<&Vec<usize>> = self.support.iter().chain(&other.support).collect();
        keys.sort();
        keys.dedup();
        0.5 * keys.iter().map(|k| (self.weight(k) - other.weight(k)).abs()).sum::<f64>()
    }
}

/// Stationary law of the local descriptor under the environment law.
pub fn env_marginal(env: &Environment, half_width: usize) -> Result<EnvOccupation> {
    EnvOccupation::from_pairs(env.descriptor_marginal(half_width)?)
}

/// Estimated exact-hit probability at one ladder level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    /// Ladder index `j`; the level is `jρ`.
    pub j: u64,
    pub level: i64,
    pub r: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RProfile {
    pub rho: TruncationLevel,
    pub levels: Vec<LevelEstimate>,
    pub replicas: usize,
}

fn finite_rho(rho: TruncationLevel) -> Result<i64> {
    rho.value()
        .map(|r| r as i64)
        .ok_or_else(|| Error::InvalidParameter("the regeneration structure needs a finite rho".into()))
}

/// Monte Carlo `r̂_j`: each replica walks from 0 through the ladder
/// `ρ, 2ρ, ..`, so level `j` starts from the landing law at level `j - 1`.
pub fn estimate_r_profile(
    env: &Environment,
    rho: TruncationLevel,
    levels: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<RProfile> {
    let r = finite_rho(rho)?;
    if levels == 0 || n_replicas == 0 {
        return Err(Error::InvalidParameter("levels and n_replicas must be positive".into()));
    }
    let root = SeedStream::new(seed);
    let per: Vec<Result<Vec<bool>>> = map_replicas(n_replicas, |i| {
        let mut rng = root.child(i as u64).rng();
        let mut w = Walker::new(env, rho, 0);
        (1..=levels as i64)
            .map(|j| {
                let z = j * r;
                w.run_until_at_least(z, DEFAULT_STEP_CAP, &mut rng)
                    .map(|_| w.position() == z)
                    .ok_or(Error::NonTransient { barrier: z, cap: DEFAULT_STEP_CAP })
            })
            .collect()
    });
    let mut hits = vec![0u64; levels];
    for res in per {
        for (h, exact) in hits.iter_mut().zip(res?) {
            *h += exact as u64;
        }
    }
    Ok(RProfile {
        rho,
        levels: hits
            .iter()
            .enumerate()
            .map(|(i, &h)| LevelEstimate {
                j: i as u64 + 1,
                level: (i as i64 + 1) * r,
                r: Estimate::proportion(h, n_replicas as u64),
            })
            .collect(),
        replicas: n_replicas,
    })
}

/// Splitting parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub eps1: f64,
    pub rho: TruncationLevel,
    pub r_estimates: Vec<LevelEstimate>,
    /// Replica-weighted mean of `r̂` over the scanned levels, used beyond them.
    pub r_pooled: f64,
    /// `ε₁` is a minimum over finitely many scanned ladder levels, not an
    /// essential infimum over all starting points.
    pub ladder_levels_scanned: usize,
    /// Whether `ε₁` hit [`EPS1_FLOOR`]; regeneration will then be slow.
    pub floored: bool,
}

impl SplitParams {
    /// `r̂` for ladder index `j >= 1`.
    pub fn r_hat(&self, j: u64) -> f64 {
        self.r_estimates.get(j as usize - 1).map_or(self.r_pooled, |l| l.r.value)
    }

    /// Largest relative standard error `stderr(r̂_j)/r̂_j`.
    pub fn mixture_bias_bound(&self) -> f64 {
        self.r_estimates.iter().map(|l| l.r.stderr / l.r.value).fold(0.0, f64::max)
    }

    /// The same parameters with a different ε₁ (must not exceed the current
    /// `min r̂ / 2`).
    pub fn with_eps1(&self, eps1: f64) -> Result<Self> {
        let min_r = self.r_estimates.iter().map(|l| l.r.value).fold(f64::INFINITY, f64::min);
        if !(eps1 > 0.0 && eps1 <= 0.5 * min_r) {
            return Err(Error::InvalidParameter(format!("eps1 = {eps1} not in (0, min r/2 = {}]", 0.5 * min_r)));
        }
        Ok(SplitParams { eps1, floored: false, ..self.clone() })
    }
}

/// `ε₁ = max(½ min_j (r̂_j - 2 se_j), 10⁻⁴)`, capped at `½ min_j r̂_j`.
pub fn choose_eps1(profile: &RProfile) -> Result<SplitParams> {
    if profile.levels.is_empty() {
        return Err(Error::InvalidParameter("empty r profile".into()));
    }
    if let Some(l) = profile.levels.iter().find(|l| !(l.r.value > 0.0)) {
        return Err(Error::DegenerateHit { level: l.level, r: l.r.value });
    }
    let min_r = profile.levels.iter().map(|l| l.r.value).fold(f64::INFINITY, f64::min);
    let lower = profile.levels.iter().map(|l| l.r.value - 2.0 * l.r.stderr).fold(f64::INFINITY, f64::min);
    let raw = 0.5 * lower;
    let floored = raw < EPS1_FLOOR;
    let eps1 = raw.max(EPS1_FLOOR).min(0.5 * min_r);
    let r_pooled = profile.levels.iter().map(|l| l.r.value).sum::<f64>() / profile.levels.len() as f64;
    Ok(SplitParams {
        eps1,
        rho: profile.rho,
        r_estimates: profile.levels.clone(),
        r_pooled,
        ladder_levels_scanned: profile.levels.len(),
        floored,
    })
}

/// One regeneration cycle `T_{ℓ_{k-1}ρ} < t <= T_{ℓ_kρ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub duration: u64,
    pub displacement: i64,
    /// `ℓ_k - ℓ_{k-1}`.
    pub ladder_steps: u64,
    /// Time spent at each local descriptor (indexed by [`Descriptor::encode`]).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occupation: Vec<u64>,
}

/// Local environment descriptor `(s_{x-w}, .., s_{x+w})`, encoded in base
/// `n_states` with `s_{x-w}` as the least significant digit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub n_states: usize,
    pub half_width: usize,
}

impl Descriptor {
    pub fn for_env(env: &Environment, half_width: usize) -> Option<Self> {
        let n = env.n_states()?;
        let size = (n as u128).checked_pow(2 * half_width as u32 + 1)?;
        (size <= 1 << 20).then_some(Descriptor { n_states: n, half_width })
    }

    pub fn size(&self) -> usize {
        self.n_states.pow(2 * self.half_width as u32 + 1)
    }

    #[inline]
    pub fn encode(&self, w: &mut Walker<'_>, x: i64) -> usize {
        let hw = self.half_width as i64;
        let mut code = 0;
        for j in (-hw..=hw).rev() {
            code = code * self.n_states + w.state_at(x + j).unwrap_or(0);
        }
        code
    }

    pub fn decode(&self, mut code: usize) -> Vec<usize> {
        (0..2 * self.half_width + 1)
            .map(|_| {
                let d = code % self.n_states;
                code /= self.n_states;
                d
            })
            .collect()
    }
}

/// Output of [`run_with_splitting`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenRecord {
    pub rho: TruncationLevel,
    pub eps1: f64,
    /// `ℓ_1 < ℓ_2 < ..`.
    pub ell: Vec<u64>,
    /// `T_{ℓ_kρ}`.
    pub epoch_times: Vec<u64>,
    /// `S` at `T_{ℓ_kρ}`; equals `ℓ_kρ` by construction.
    pub epoch_positions: Vec<i64>,
    pub cycles: Vec<Cycle>,
    pub descriptor: Option<Descriptor>,
    /// `ζ` for every simulated segment.
    pub zeta: Vec<bool>,
    /// Discarded segment draws.
    pub resamples: u64,
}

impl RegenRecord {
    /// Number of epochs violating `S_{T_{ℓ_kρ}} = ℓ_kρ`.
    pub fn anchoring_violations(&self) -> usize {
        let r = self.rho.value().unwrap_or(0) as i64;
        self.ell.iter().zip(&self.epoch_positions).filter(|(&l, &x)| x != l as i64 * r).count()
    }
}

/// Options for [`run_with_splitting_opts`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Half-width `w` of the local descriptor.
    pub half_width: usize,
    pub step_cap: u64,
    /// Resample budget per segment, in units of `1/ε₁`.
    pub budget_factor: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { half_width: 0, step_cap: DEFAULT_STEP_CAP, budget_factor: 10.0 }
    }
}

pub fn run_with_splitting(env: &Environment, split: &SplitParams, n_cycles: usize, seed: u64) -> Result<RegenRecord> {
    run_with_splitting_opts(env, split, n_cycles, seed, SplitOptions::default())
}

struct Segment {
    time: u64,
    occupation: Vec<u64>,
}

fn draw_segment<R: Rng>(
    w: &mut Walker<'_>,
    z: i64,
    desc: Option<&Descriptor>,
    cap: u64,
    rng: &mut R,
    seg: &mut Segment,
) -> Result<bool> {
    seg.time = 0;
    seg.occupation.iter_mut().for_each(|c| *c = 0);
    while w.position() < z {
        if seg.time == cap {
            return Err(Error::NonTransient { barrier: z, cap });
        }
        let x = w.step(rng);
        seg.time += 1;
        if let Some(d) = desc {
            let c = d.encode(w, x);
            seg.occupation[c] += 1;
        }
    }
    Ok(w.position() == z)
}

pub fn run_with_splitting_opts(
    env: &Environment,
    split: &SplitParams,
    n_cycles: usize,
    seed: u64,
    opts: SplitOptions,
) -> Result<RegenRecord> {
    let r = finite_rho(split.rho)?;
    if !(split.eps1 > 0.0 && split.eps1 < 1.0) {
        return Err(Error::InvalidParameter(format!("eps1 = {} not in (0, 1)", split.eps1)));
    }
    let eps1 = split.eps1;
    let budget = (opts.budget_factor / eps1).ceil() as u64;
    let desc = Descriptor::for_env(env, opts.half_width);
    let dsize = desc.map_or(0, |d| d.size());
    let stream = SeedStream::new(seed);
    let mut zeta_rng = stream.named("zeta").rng();
    let mut rng = stream.named("walk").rng();
    let mut w = Walker::new(env, split.rho, 0);
    let mut seg = Segment { time: 0, occupation: vec![0; dsize] };
    let mut rec = RegenRecord {
        rho: split.rho,
        eps1,
        ell: vec![],
        epoch_times: vec![],
        epoch_positions: vec![],
        cycles: vec![],
        descriptor: desc,
        zeta: vec![],
        resamples: 0,
    };
    let (mut t, mut last_ell, mut last_t) = (0u64, 0u64, 0u64);
    let mut cycle_occ = vec![0u64; dsize];
    let mut j = 0u64;
    while rec.cycles.len() < n_cycles {
        j += 1;
        let z = j as i64 * r;
        let zeta = zeta_rng.random::<f64>() < eps1;
        rec.zeta.push(zeta);
        let start = w.position();
        let mut attempts = 0u64;
        loop {
            if attempts > budget {
                return Err(Error::RejectionBudget { level: z, budget });
            }
            w.set_position(start);
            let exact = draw_segment(&mut w, z, desc.as_ref(), opts.step_cap, &mut rng, &mut seg)?;
            attempts += 1;
            let accept = if zeta {
                exact
            } else {
                !exact || rng.random::<f64>() >= (eps1 / split.r_hat(j)).min(1.0)
            };
            if accept {
                break;
            }
        }
        rec.resamples += attempts - 1;
        t += seg.time;
        for (c, s) in cycle_occ.iter_mut().zip(&seg.occupation) {
            *c += s;
        }
        if zeta {
            rec.ell.push(j);
            rec.epoch_times.push(t);
            rec.epoch_positions.push(w.position());
            rec.cycles.push(Cycle {
                duration: t - last_t,
                displacement: (j - last_ell) as i64 * r,
                ladder_steps: j - last_ell,
                occupation: std::mem::replace(&mut cycle_occ, vec![0; dsize]),
            });
            last_ell = j;
            last_t = t;
        }
    }
    Ok(rec)
}

/// Independent regeneration runs in the same environment.
pub fn run_regen_replicas(
    env: &Environment,
    split: &SplitParams,
    n_cycles: usize,
    n_replicas: usize,
    seed: u64,
    opts: SplitOptions,
) -> Result<Vec<RegenRecord>> {
    let root = SeedStream::new(seed);
    map_replicas(n_replicas, |i| run_with_splitting_opts(env, split, n_cycles, root.child(i as u64).key(), opts))
        .into_iter()
        .collect()
}

/// Both forms of the cycle speed formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleSpeed {
    /// `ρ / (ε₁ E T_{ℓ₁ρ})`.
    pub v: Estimate,
    /// `ρ E ℓ₁ / E T_{ℓ₁ρ}` with the empirical `E ℓ₁`.
    pub v_ratio: Estimate,
    /// `E T_{ℓ₁ρ}`.
    pub mean_duration: Estimate,
    /// `E(ℓ_{k+1} - ℓ_k)`, which should be `1/ε₁`.
    pub mean_ladder_steps: Estimate,
    pub cycles: usize,
}

pub fn speed_cycle(records: &[RegenRecord], split: &SplitParams) -> Result<CycleSpeed> {
    let r = finite_rho(split.rho)? as f64;
    let cycles: Vec<&Cycle> = records.iter().flat_map(|rec| &rec.cycles).collect();
    let n = cycles.len();
    if n < MIN_SPEED_CYCLES {
        return Err(Error::TooFewCycles { have: n, need: MIN_SPEED_CYCLES });
    }
    let dur: Moments = cycles.iter().map(|c| c.duration as f64).collect();
    let ell: Moments = cycles.iter().map(|c| c.ladder_steps as f64).collect();
    let (mt, ml) = (dur.mean(), ell.mean());
    let v = r / (split.eps1 * mt);
    let ratio = ml / mt;
    // Delta method for the ratio of means.
    let resid: Moments = cycles.iter().map(|c| c.ladder_steps as f64 - ratio * c.duration as f64).collect();
    let se_ratio = (resid.variance() / n as f64).sqrt() / mt;
    Ok(CycleSpeed {
        v: Estimate::new(v, v * dur.stderr() / mt),
        v_ratio: Estimate::new(r * ratio, r * se_ratio),
        mean_duration: dur.estimate(),
        mean_ladder_steps: ell.estimate(),
        cycles: n,
    })
}

/// Cycle average of the local descriptor: the empirical `Q^ρ` marginal.
pub fn occupation_q(records: &[RegenRecord]) -> Result<EnvOccupation> {
    let n: usize = records.iter().map(|r| r.cycles.len()).sum();
    if n < MIN_OCCUPATION_CYCLES {
        return Err(Error::TooFewCycles { have: n, need: MIN_OCCUPATION_CYCLES });
    }
    let desc = records[0]
        .descriptor
        .ok_or_else(|| Error::UnsupportedDescriptor("environment has no finite local descriptor".into()))?;
    if records.iter().any(|r| r.descriptor != Some(desc)) {
        return Err(Error::InvalidParameter("records use different descriptors".into()));
    }
    let mut counts = vec![0u64; desc.size()];
    for c in records.iter().flat_map(|r| &r.cycles) {
        for (a, b) in counts.iter_mut().zip(&c.occupation) {
            *a += b;
        }
    }
    counts_to_occupation(&desc, &counts)
}

fn counts_to_occupation(desc: &Descriptor, counts: &[u64]) -> Result<EnvOccupation> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::RunTooShort("no time steps recorded".into()));
    }
    EnvOccupation::new(
        (0..counts.len()).map(|c| desc.decode(c)).collect(),
        counts.iter().map(|&c| c as f64 / total as f64).collect(),
    )
}

/// Occupation of the descriptor along one long run of `S^ρ` after a burn-in,
/// without any regeneration structure.
pub fn occupation_direct(
    env: &Environment,
    rho: TruncationLevel,
    n_steps: u64,
    burn_in: u64,
    half_width: usize,
    seed: u64,
) -> Result<EnvOccupation> {
    let desc = Descriptor::for_env(env, half_width)
        .ok_or_else(|| Error::UnsupportedDescriptor("environment has no finite local descriptor".into()))?;
    let mut rng = SeedStream::new(seed).rng();
    let mut w = Walker::new(env, rho, 0);
    for _ in 0..burn_in {
        w.step(&mut rng);
    }
    let mut counts = vec![0u64; desc.size()];
    for _ in 0..n_steps {
        let x = w.step(&mut rng);
        counts[desc.encode(&mut w, x)] += 1;
    }
    counts_to_occupation(&desc, &counts)
}

/// Per-descriptor ratio `Q̂(d) / P(d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnDensity {
    pub ratios: Vec<(Vec<usize>, f64)>,
    pub min: f64,
    pub max: f64,
}

impl RnDensity {
    pub fn ratio(&self, d: &[usize]) -> Option<f64> {
        self.ratios.iter().find(|(k, _)| k == d).map(|e| e.1)
    }
}

pub fn rn_density(occ: &EnvOccupation, env_marginal: &EnvOccupation) -> Result<RnDensity> {
    let base: HashMap<&Vec<usize>, f64> = env_marginal.support.iter().zip(env_marginal.weights.iter().copied()).collect();
    for (d, &q) in occ.support.iter().zip(&occ.weights) {
        if q > 0.0 && base.get(d).copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::InconsistentMeasures(format!("descriptor {d:?} has Q-mass {q} but no stationary mass")));
        }
    }
    let ratios: Vec<(Vec<usize>, f64)> = env_marginal
        .support
        .iter()
        .zip(&env_marginal.weights)
        .filter(|(_, &p)| p > 0.0)
        .map(|(d, &p)| (d.clone(), occ.weight(d) / p))
        .collect();
    let min = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let max = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(RnDensity { ratios, min, max })
}

/// Direct estimate of `lim S_n / n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectSpeed {
    pub v: Estimate,
    pub n_steps: u64,
    pub replicas: usize,
    pub rejected_fraction: f64,
}

fn speed_samples(env: &Environment, rho: TruncationLevel, n_steps: u64, n_replicas: usize, seed: u64) -> Vec<(f64, u64)> {
    let root = SeedStream::new(seed);
    map_replicas(n_replicas, |i| {
        let mut rng = root.child(i as u64).rng();
        let mut w = Walker::new(env, rho, 0);
        for _ in 0..n_steps {
            w.step(&mut rng);
        }
        (w.position() as f64 / n_steps as f64, w.rejected())
    })
}

pub fn speed_direct(env: &Environment, rho: TruncationLevel, n_steps: u64, n_replicas: usize, seed: u64) -> Result<DirectSpeed> {
    if n_steps == 0 || n_replicas == 0 {
        return Err(Error::InvalidParameter("n_steps and n_replicas must be positive".into()));
    }
    let s = speed_samples(env, rho, n_steps, n_replicas, seed);
    let rejected: u64 = s.iter().map(|e| e.1).sum();
    Ok(DirectSpeed {
        v: s.iter().map(|e| e.0).collect::<Moments>().estimate(),
        n_steps,
        replicas: n_replicas,
        rejected_fraction: rejected as f64 / (n_steps as f64 * n_replicas as f64),
    })
}

/// One row of [`speed_vs_rho`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub rho: TruncationLevel,
    pub v: Estimate,
    /// `v̂_ρ - v̂_last`, paired by replica (common random numbers).
    pub gap: Estimate,
}

pub fn speed_vs_rho(
    env: &Environment,
    rho_list: &[TruncationLevel],
    n_steps: u64,
    n_replicas: usize,
    seed: u64,
) -> Result<Vec<SpeedRow>> {
    if rho_list.is_empty() || rho_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("rho list must be strictly increasing".into()));
    }
    if n_steps == 0 || n_replicas < 2 {
        return Err(Error::InvalidParameter("need n_steps >= 1 and at least two replicas".into()));
    }
    let samples: Vec<Vec<f64>> = rho_list
        .iter()
        .map(|&rho| speed_samples(env, rho, n_steps, n_replicas, seed).into_iter().map(|e| e.0).collect())
        .collect();
    let last = samples.last().unwrap();
    Ok(rho_list
        .iter()
        .zip(&samples)
        .map(|(&rho, s)| SpeedRow {
            rho,
            v: s.iter().copied().collect::<Moments>().estimate(),
            gap: s.iter().zip(last).map(|(a, b)| a - b).collect::<Moments>().estimate(),
        })
        .collect())
}

/// Smallest `ρ` in `start, 2·start, ..` (up to `max_rho`) at which the
/// Condition D diagnostic passes: the walk clears the barrier, `ĝ` is
/// nonincreasing within 3σ and backtracking is rarer than 5%.
pub fn find_rho0(
    env: &Environment,
    start: u32,
    max_rho: u32,
    depth: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<u32> {
    let mut rho = start.max(2);
    let mut last_err = None;
    while rho <= max_rho {
        match estimate_condition_d(env, TruncationLevel::finite(rho)?, depth, n_replicas, seed) {
            Ok(d) if d.nonincreasing_within(3.0) && d.backtrack_frequency < 0.05 => return Ok(rho),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
        rho *= 2;
    }
    Err(last_err.unwrap_or(Error::ConditionViolated {
        condition: "D",
        detail: format!("diagnostic failed for every rho in [{start}, {max_rho}]"),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_environment, EnvSpec, JumpLaw};
    use crate::oracle::{landing_law, periodic_env_chain, periodic_speed};
    use crate::stats::ks_two_sample;

    fn iid(pairs: &[(i64, f64)]) -> Environment {
        build_environment(&EnvSpec::iid(JumpLaw::from_pairs(pairs).unwrap()), 3).unwrap()
    }

    fn mixed() -> Environment {
        iid(&[(1, 0.5), (2, 0.3), (-1, 0.2)])
    }

    fn fin(r: u32) -> TruncationLevel {
        TruncationLevel::Finite(r)
    }

    #[test]
    fn r_profile_trivial_cases() {
        let p = estimate_r_profile(&iid(&[(1, 0.7), (-1, 0.3)]), fin(4), 5, 200, 0).unwrap();
        assert!(p.levels.iter().all(|l| l.r.value == 1.0));
        let even = estimate_r_profile(&iid(&[(2, 1.0)]), fin(4), 3, 50, 0).unwrap();
        assert!(even.levels.iter().all(|l| l.r.value == 1.0));
        let odd = estimate_r_profile(&iid(&[(2, 1.0)]), fin(3), 1, 50, 0).unwrap();
        assert_eq!(odd.levels[0].r.value, 0.0);
        assert!(matches!(choose_eps1(&odd), Err(Error::DegenerateHit { .. })));
    }

    #[test]
    fn r_profile_matches_oracle_landing_laws() {
        let env = mixed();
        let rho = fin(4);
        let prof = estimate_r_profile(&env, rho, 3, 100_000, 17).unwrap();
        // Oracle: propagate the landing law level by level.
        let mut start = vec![(0i64, 1.0f64)];
        for l in &prof.levels {
            let z = l.level;
            let mut next: HashMap<i64, f64> = HashMap::new();
            for &(x, px) in &start {
                let law = landing_law(&env, rho, z, 200, x).unwrap();
                for (i, p) in law.probs.iter().enumerate() {
                    *next.entry(z + i as i64).or_default() += px * p;
                }
            }
            let exact = next[&z];
            assert!((l.r.value - exact).abs() < 3.0 * l.r.stderr, "level {z}: {} vs {exact}", l.r.value);
            start = next.into_iter().collect();
        }
    }

    #[test]
    fn eps1_formula() {
        let mk = |vals: &[(f64, f64)]| RProfile {
            rho: fin(4),
            levels: vals
                .iter()
                .enumerate()
                .map(|(i, &(v, s))| LevelEstimate { j: i as u64 + 1, level: 4 * (i as i64 + 1), r: Estimate::new(v, s) })
                .collect(),
            replicas: 1,
        };
        assert_eq!(choose_eps1(&mk(&[(1.0, 0.0), (1.0, 0.0)])).unwrap().eps1, 0.5);
        let e = choose_eps1(&mk(&[(0.7, 0.01), (0.4, 0.01)])).unwrap().eps1;
        assert!((e - 0.19).abs() < 1e-12);
        let tiny = choose_eps1(&mk(&[(0.0003, 0.0002)])).unwrap();
        assert!(tiny.floored && tiny.eps1 <= 0.00015);
    }

    fn nn_split(eps1: f64, rho: u32) -> SplitParams {
        SplitParams {
            eps1,
            rho: fin(rho),
            r_estimates: vec![LevelEstimate { j: 1, level: rho as i64, r: Estimate::new(1.0, 0.0) }],
            r_pooled: 1.0,
            ladder_levels_scanned: 1,
            floored: false,
        }
    }

    #[test]
    fn first_success_is_geometric() {
        let env = iid(&[(1, 0.7), (-1, 0.3)]);
        let split = nn_split(0.5, 4);
        let ells: Moments = (0..10_000u64)
            .map(|s| run_with_splitting(&env, &split, 1, s).unwrap().ell[0] as f64)
            .collect();
        assert!((ells.mean() - 2.0).abs() < 0.03, "{}", ells.mean());
    }

    #[test]
    fn deterministic_walk_cycle_speed() {
        let env = iid(&[(1, 1.0)]);
        let split = nn_split(0.5, 4);
        let recs = run_regen_replicas(&env, &split, 200, 4, 1, SplitOptions::default()).unwrap();
        let s = speed_cycle(&recs, &split).unwrap();
        assert_eq!(s.v_ratio.value, 1.0);
        assert!((s.v.value - 1.0).abs() < 4.0 * s.v.stderr);
        assert!((s.mean_duration.value - 8.0).abs() < 4.0 * s.mean_duration.stderr);
        let q = occupation_q(&recs).unwrap();
        assert_eq!(q.weights, vec![1.0]);
        let rn = rn_density(&q, &env_marginal(&env, 0).unwrap()).unwrap();
        assert_eq!((rn.min, rn.max), (1.0, 1.0));
        assert!(speed_cycle(&recs[..1], &split).is_ok());
        let short = run_with_splitting(&env, &split, 5, 0).unwrap();
        assert!(matches!(speed_cycle(&[short], &split), Err(Error::TooFewCycles { .. })));
    }

    #[test]
    fn epochs_are_anchored_and_speeds_agree() {
        let env = mixed();
        let rho = fin(8);
        let split = choose_eps1(&estimate_r_profile(&env, rho, 4, 20_000, 5).unwrap()).unwrap();
        let recs = run_regen_replicas(&env, &split, 400, 8, 9, SplitOptions::default()).unwrap();
        assert!(recs.iter().all(|r| r.anchoring_violations() == 0));
        assert!(recs.iter().all(|r| r.cycles.iter().all(|c| c.duration > 0)));
        let cyc = speed_cycle(&recs, &split).unwrap();
        let direct = speed_direct(&env, rho, 200_000, 16, 2).unwrap();
        assert!(cyc.v.z_distance(&direct.v) < 3.0, "{:?} vs {:?}", cyc.v, direct.v);
        assert!(cyc.v.z_distance(&cyc.v_ratio) < 3.0);
        let gaps = cyc.mean_ladder_steps;
        assert!((gaps.value - 1.0 / split.eps1).abs() < 3.0 * gaps.stderr);
    }

    #[test]
    fn cycle_one_and_ten_have_the_same_displacement_law() {
        let env = mixed();
        let split = SplitParams {
            eps1: 0.2,
            rho: fin(4),
            r_estimates: vec![],
            r_pooled: estimate_r_profile(&env, fin(4), 1, 50_000, 1).unwrap().levels[0].r.value,
            ladder_levels_scanned: 0,
            floored: false,
        };
        let recs: Vec<RegenRecord> = map_replicas(10_000, |i| run_with_splitting(&env, &split, 10, 1000 + i as u64).unwrap());
        let c1: Vec<f64> = recs.iter().map(|r| r.cycles[0].duration as f64).collect();
        let c10: Vec<f64> = recs.iter().map(|r| r.cycles[9].duration as f64).collect();
        assert!(ks_two_sample(&c1, &c10).p_value > 0.01);
    }

    #[test]
    fn periodic_occupation_matches_oracle() {
        let laws = vec![
            JumpLaw::from_pairs(&[(1, 0.6), (2, 0.2), (-1, 0.2)]).unwrap(),
            JumpLaw::from_pairs(&[(1, 0.4), (-1, 0.6)]).unwrap(),
            JumpLaw::from_pairs(&[(1, 0.3), (2, 0.4), (-1, 0.3)]).unwrap(),
        ];
        let env = build_environment(&EnvSpec::periodic(laws), 0).unwrap();
        let rho = fin(6);
        let split = choose_eps1(&estimate_r_profile(&env, rho, 4, 20_000, 3).unwrap()).unwrap();
        let recs = run_regen_replicas(&env, &split, 500, 8, 4, SplitOptions::default()).unwrap();
        let q = occupation_q(&recs).unwrap();
        let exact = periodic_env_chain(&env, rho).unwrap();
        assert!(q.total_variation(&exact) < 0.02);
        let direct = occupation_direct(&env, rho, 400_000, 1000, 0, 8).unwrap();
        assert!(direct.total_variation(&exact) < 0.02);
        let v = speed_direct(&env, rho, 200_000, 16, 1).unwrap().v;
        let v_exact = periodic_speed(&env, rho).unwrap();
        assert!((v.value - v_exact).abs() / v_exact < 0.01);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn occupation_needs_a_finite_descriptor() {
        let env = build_environment(&EnvSpec::new(crate::env::DriverSpec::IidBias { p_lo: 0.7, p_hi: 0.9 }), 0).unwrap();
        let split = nn_split(0.5, 4);
        let recs = run_regen_replicas(&env, &split, 60, 2, 1, SplitOptions::default()).unwrap();
        assert!(matches!(occupation_q(&recs), Err(Error::UnsupportedDescriptor(_))));
    }

    #[test]
    fn rn_density_checks_support() {
        let occ = EnvOccupation::new(vec![vec![0], vec![1]], vec![0.5, 0.5]).unwrap();
        let base = EnvOccupation::new(vec![vec![0], vec![1]], vec![1.0, 0.0]).unwrap();
        assert!(matches!(rn_density(&occ, &base), Err(Error::InconsistentMeasures(_))));
        let sym = EnvOccupation::new(vec![vec![0], vec![1]], vec![0.5, 0.5]).unwrap();
        let rn = rn_density(&occ, &sym).unwrap();
        assert_eq!(rn.ratios, vec![(vec![0], 1.0), (vec![1], 1.0)]);
    }

    #[test]
    fn speed_examples() {
        let v = speed_direct(&iid(&[(1, 1.0)]), TruncationLevel::Infinite, 1000, 4, 0).unwrap();
        assert_eq!(v.v.value, 1.0);
        let nn = iid(&[(1, 0.6), (-1, 0.4)]);
        let table = speed_vs_rho(&nn, &[fin(2), fin(4), TruncationLevel::Infinite], 10_000, 4, 1).unwrap();
        assert!(table.windows(2).all(|w| w[0].v == w[1].v));
        assert!(speed_vs_rho(&nn, &[fin(4), fin(2)], 10, 4, 0).is_err());
    }

    #[test]
    fn rho0_scan_finds_a_level() {
        let rho0 = find_rho0(&mixed(), 4, 64, 3, 300, 2).unwrap();
        assert_eq!(rho0, 4);
    }

    #[test]
    fn descriptor_round_trip() {
        let d = Descriptor { n_states: 3, half_width: 1 };
        for c in 0..d.size() {
            let v = d.decode(c);
            assert_eq!(v.iter().rev().fold(0, |acc, &s| acc * 3 + s), c);
        }
    }
}
