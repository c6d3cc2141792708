//! Knudsen random walk with drift (KRWD) on the boundary of a tube.
//!
//! From `x ∈ ∂ω` a direction is drawn from the cosine law around the inner
//! normal and the chord is traced to the next boundary point `y`. The move
//! is accepted when `Δ = (y - x)·e >= 0` and with probability `e^{λΔ}`
//! otherwise; a rejected move is a holding step. The chain is reversible
//! for `ν_λ(dx) = e^{λ x·e} ν(dx)`.
//!
//! [`extract_skeleton`] subsamples a recorded run at `J(κ_{L⁴m})` with `η`
//! and `ζ′` drawn independently of the path. It is a diagnostic of the
//! lumped integer walk, not an exact sample of the coupled construction.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::par::map_replicas;
use crate::seed::SeedStream;
use crate::stats::{chi_square_two_sample, fit_tail_exponent, ChiSquareTest, Estimate, Moments, TailFit};
use crate::tube::{BoundaryPoint, Tube, TubeView};

/// Normalization of the cosine kernel in three dimensions.
pub const GAMMA_D: f64 = 1.0 / PI;
const MAX_RESAMPLES: u32 = 1000;
/// Replica chunks used by estimators that parallelize over i.i.d. samples.
const CHUNKS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilliardParams {
    pub lambda: f64,
    /// `N`: `η` is uniform on `{1, .., N}`.
    #[serde(default = "default_n")]
    pub n_skeleton: u32,
    /// Success probability of `ζ′`.
    #[serde(default = "default_r1")]
    pub r1: f64,
    /// Block length `L`; skeleton points are `L⁴` successes apart.
    #[serde(default = "default_l")]
    pub l_block: u32,
}

fn default_n() -> u32 {
    2
}
fn default_r1() -> f64 {
    0.1
}
fn default_l() -> u32 {
    3
}

impl BilliardParams {
    pub fn new(lambda: f64) -> Self {
        BilliardParams { lambda, n_skeleton: default_n(), r1: default_r1(), l_block: default_l() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if !(self.r1 > 0.0 && self.r1 <= 1.0) {
            return Err(Error::InvalidParameter(format!("r1 = {} not in (0, 1]", self.r1)));
        }
        if self.n_skeleton == 0 || self.l_block == 0 {
            return Err(Error::InvalidParameter("N and L must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cosine-law direction around `normal`: `t = w·n` has density `2t` and the
/// azimuth is uniform.
pub fn sample_cosine<R: Rng + ?Sized>(normal: Vec3, rng: &mut R) -> Vec3 {
    let (u, v) = normal.orthonormal_frame();
    loop {
        let t = rng.random::<f64>().sqrt();
        if t == 0.0 {
            continue;
        }
        let s = (1.0 - t * t).sqrt();
        let phi = TAU * rng.random::<f64>();
        return normal * t + u * (s * phi.cos()) + v * (s * phi.sin());
    }
}

/// One proposal of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub proposed: BoundaryPoint,
    pub direction: Vec3,
    /// `Δ = (y - x)·e`.
    pub delta: f64,
    pub accepted: bool,
}

/// Counters for the hard invariants of the chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantCounts {
    pub steps: u64,
    pub rightward_rejections: u64,
    pub holding_moves: u64,
    pub max_boundary_residual: f64,
    pub visibility_checks: u64,
    pub visibility_failures: u64,
    /// Tangent-ray resamples.
    pub resamples: u64,
}

impl InvariantCounts {
    pub fn merge(&mut self, o: &InvariantCounts) {
        self.steps += o.steps;
        self.rightward_rejections += o.rightward_rejections;
        self.holding_moves += o.holding_moves;
        self.max_boundary_residual = self.max_boundary_residual.max(o.max_boundary_residual);
        self.visibility_checks += o.visibility_checks;
        self.visibility_failures += o.visibility_failures;
        self.resamples += o.resamples;
    }

    pub fn violations(&self) -> u64 {
        self.rightward_rejections
            + self.holding_moves
            + self.visibility_failures
            + (self.max_boundary_residual >= 1e-10) as u64
    }
}

/// KRWD state bound to a tube.
#[derive(Debug)]
pub struct Billiard<'t> {
    view: TubeView<'t>,
    params: BilliardParams,
    pos: BoundaryPoint,
    /// Check the visibility round trip every this many steps (0 disables).
    visibility_every: u64,
    pub counts: InvariantCounts,
}

impl<'t> Billiard<'t> {
    pub fn new(tube: &'t Tube, params: BilliardParams, start: BoundaryPoint) -> Self {
        Billiard { view: tube.view(), params, pos: start, visibility_every: 0, counts: InvariantCounts::default() }
    }

    pub fn with_visibility_checks(mut self, every: u64) -> Self {
        self.visibility_every = every;
        self
    }

    pub fn position(&self) -> &BoundaryPoint {
        &self.pos
    }

    pub fn set_position(&mut self, p: BoundaryPoint) {
        self.pos = p;
    }

    /// Draws a direction and traces the chord, resampling tangent rays.
    pub fn propose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(BoundaryPoint, Vec3)> {
        let n = self.view.tube().inner_normal(&self.pos)?;
        for _ in 0..MAX_RESAMPLES {
            let w = sample_cosine(n, rng);
            match self.view.ray_exit(&self.pos, w) {
                Ok(y) => return Ok((y, w)),
                Err(Error::TangentRay) => self.counts.resamples += 1,
                Err(e) => return Err(e),
            }
        }
        Err(Error::TangentRay)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ProposalRecord> {
        let x = self.pos;
        let (y, w) = self.propose(rng)?;
        let delta = y.alpha - x.alpha;
        let accepted = delta >= 0.0 || rng.random::<f64>() < (self.params.lambda * delta).exp();
        let c = &mut self.counts;
        c.steps += 1;
        if accepted {
            self.pos = y;
            c.max_boundary_residual = c.max_boundary_residual.max(self.view.tube().boundary_residual(&y));
            if self.visibility_every > 0 && c.steps % self.visibility_every == 0 {
                c.visibility_checks += 1;
                let ok = matches!(self.view.ray_exit(&y, -w), Ok(b) if (b.position() - x.position()).norm() < 1e-9);
                c.visibility_failures += !ok as u64;
            }
        } else {
            c.rightward_rejections += (delta >= 0.0) as u64;
            c.holding_moves += (self.pos != x) as u64;
        }
        Ok(ProposalRecord { proposed: y, direction: w, delta, accepted })
    }
}

/// Proposal step from `x`: next point and the proposal record.
pub fn step<R: Rng + ?Sized>(
    tube: &Tube,
    params: &BilliardParams,
    x: &BoundaryPoint,
    rng: &mut R,
) -> Result<(BoundaryPoint, ProposalRecord)> {
    let mut b = Billiard::new(tube, *params, *x);
    let rec = b.step(rng)?;
    Ok((*b.position(), rec))
}

/// A recorded trajectory `ξ_0 .. ξ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilliardRun {
    pub points: Vec<BoundaryPoint>,
    pub proposals: Vec<ProposalRecord>,
    pub counts: InvariantCounts,
}

impl BilliardRun {
    pub fn axial(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,alpha,patch,phi,delta,accepted")?;
        for (k, p) in self.points.iter().enumerate() {
            let patch = if p.is_step() { "step" } else { "lateral" };
            match k.checked_sub(1).map(|i| &self.proposals[i]) {
                Some(r) => writeln!(out, "{k},{},{patch},{},{},{}", p.alpha, p.angle, r.delta, r.accepted)?,
                None => writeln!(out, "{k},{},{patch},{},,", p.alpha, p.angle)?,
            }
        }
        Ok(())
    }

    /// Re-checks every hard invariant on the stored proposals.
    pub fn check_invariants(&self, tube: &Tube) -> InvariantCounts {
        let mut c = InvariantCounts { steps: self.proposals.len() as u64, ..Default::default() };
        let mut view = tube.view();
        for (k, r) in self.proposals.iter().enumerate() {
            let (x, next) = (&self.points[k], &self.points[k + 1]);
            if r.accepted {
                c.max_boundary_residual = c.max_boundary_residual.max(tube.boundary_residual(next));
                c.visibility_checks += 1;
                let ok = matches!(view.ray_exit(next, -r.direction), Ok(b) if (b.position() - x.position()).norm() < 1e-9);
                c.visibility_failures += !ok as u64;
            } else {
                c.rightward_rejections += (r.delta >= 0.0) as u64;
                c.holding_moves += (next != x) as u64;
            }
        }
        c
    }
}

pub fn run_billiard(
    tube: &Tube,
    params: &BilliardParams,
    start: BoundaryPoint,
    n_steps: usize,
    seed: u64,
) -> Result<BilliardRun> {
    params.validate()?;
    let mut rng = SeedStream::new(seed).rng();
    let mut b = Billiard::new(tube, *params, start);
    let mut points = Vec::with_capacity(n_steps + 1);
    let mut proposals = Vec::with_capacity(n_steps);
    points.push(start);
    for _ in 0..n_steps {
        proposals.push(b.step(&mut rng)?);
        points.push(*b.position());
    }
    Ok(BilliardRun { points, proposals, counts: b.counts })
}

/// Holding probability `Θ(x)` as the rejected fraction of proposals from `x`.
pub fn estimate_theta(tube: &Tube, params: &BilliardParams, x: &BoundaryPoint, n_samples: usize, seed: u64) -> Result<Estimate> {
    params.validate()?;
    let root = SeedStream::new(seed);
    let per: Vec<Result<(u64, u64)>> = map_replicas(CHUNKS, |c| {
        let mut rng = root.child(c as u64).rng();
        let mut b = Billiard::new(tube, *params, *x);
        let n = chunk_len(n_samples, c);
        let mut rejected = 0;
        for _ in 0..n {
            b.set_position(*x);
            rejected += !b.step(&mut rng)?.accepted as u64;
        }
        Ok((rejected, n as u64))
    });
    let (mut k, mut n) = (0, 0);
    for r in per {
        let (a, b) = r?;
        k += a;
        n += b;
    }
    Ok(Estimate::proportion(k, n))
}

fn chunk_len(total: usize, c: usize) -> usize {
    total / CHUNKS + (c < total % CHUNKS) as usize
}

/// Law-of-large-numbers estimate of `v̂ = lim ξ_n·e / n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnEstimate {
    pub v: Estimate,
    pub n_steps: u64,
    pub replicas: usize,
    pub acceptance_rate: f64,
    /// `|v̂| < 3σ`.
    pub zero_speed: bool,
    pub counts: InvariantCounts,
}

/// Each replica starts from a `ν`-uniform point of band 0.
pub fn run_lln(tube: &Tube, params: &BilliardParams, n_steps: u64, n_replicas: usize, seed: u64) -> Result<LlnEstimate> {
    params.validate()?;
    if n_steps == 0 || n_replicas == 0 {
        return Err(Error::InvalidParameter("n_steps and n_replicas must be positive".into()));
    }
    let root = SeedStream::new(seed);
    let per: Vec<Result<(f64, u64, InvariantCounts)>> = map_replicas(n_replicas, |i| {
        let mut rng = root.child(i as u64).rng();
        let start = tube.sample_boundary_uniform(0, &mut rng);
        let mut b = Billiard::new(tube, *params, start).with_visibility_checks(997);
        let mut acc = 0;
        for _ in 0..n_steps {
            acc += b.step(&mut rng)?.accepted as u64;
        }
        Ok(((b.position().alpha - start.alpha) / n_steps as f64, acc, b.counts))
    });
    let mut m = Moments::new();
    let mut acc = 0;
    let mut counts = InvariantCounts::default();
    for r in per {
        let (v, a, c) = r?;
        m.push(v);
        acc += a;
        counts.merge(&c);
    }
    let v = m.estimate();
    Ok(LlnEstimate {
        v,
        n_steps,
        replicas: n_replicas,
        acceptance_rate: acc as f64 / (n_steps as f64 * n_replicas as f64),
        zero_speed: v.value.abs() < 3.0 * v.stderr,
        counts,
    })
}

/// A point of band `j` drawn from `π^B ∝ e^{λα} ν` restricted to the band,
/// by rejection from `ν` with acceptance `e^{λ(α - (j + 1))}`.
pub fn sample_weighted_start<R: Rng + ?Sized>(tube: &Tube, j: i64, lambda: f64, rng: &mut R) -> BoundaryPoint {
    loop {
        let p = tube.sample_boundary_uniform(j, rng);
        if lambda == 0.0 || rng.random::<f64>() < (lambda * (p.alpha - (j + 1) as f64)).exp() {
            return p;
        }
    }
}

/// Two sides of the one-step detailed-balance identity
/// `π(B1) P^{B1}[ξ_1 ∈ B2] = π(B2) P^{B2}[ξ_1 ∈ B1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub b1: i64,
    pub b2: i64,
    pub pi_b1: f64,
    pub pi_b2: f64,
    pub flux_12: Estimate,
    pub flux_21: Estimate,
    /// `|flux_12 - flux_21| / mean`.
    pub relative_difference: f64,
    /// `|flux_12 - flux_21|` in combined standard errors.
    pub z: f64,
}

impl BalanceReport {
    pub fn passed(&self, sigmas: f64) -> bool {
        self.z < sigmas
    }
}

fn one_step_flux(tube: &Tube, params: &BilliardParams, from: i64, to: i64, n: usize, root: SeedStream) -> Result<Estimate> {
    let side = root.named(&format!("band{from}"));
    let per: Vec<Result<(u64, u64)>> = map_replicas(CHUNKS, |c| {
        let mut rng = side.child(c as u64).rng();
        let len = chunk_len(n, c);
        let mut hits = 0;
        for _ in 0..len {
            let x = sample_weighted_start(tube, from, params.lambda, &mut rng);
            let mut b = Billiard::new(tube, *params, x);
            b.step(&mut rng)?;
            hits += (b.position().band() == to) as u64;
        }
        Ok((hits, len as u64))
    });
    let (mut k, mut m) = (0, 0);
    for r in per {
        let (a, b) = r?;
        k += a;
        m += b;
    }
    let p = Estimate::proportion(k, m);
    let pi = tube.band_lambda_measure(from, params.lambda);
    Ok(Estimate::new(pi * p.value, pi * p.stderr))
}

pub fn detailed_balance_test(
    tube: &Tube,
    params: &BilliardParams,
    b1: i64,
    b2: i64,
    n_samples: usize,
    seed: u64,
) -> Result<BalanceReport> {
    params.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let root = SeedStream::new(seed);
    let flux_12 = one_step_flux(tube, params, b1, b2, n_samples, root)?;
    let flux_21 = if b1 == b2 { flux_12 } else { one_step_flux(tube, params, b2, b1, n_samples, root)? };
    let mean = 0.5 * (flux_12.value + flux_21.value);
    Ok(BalanceReport {
        b1,
        b2,
        pi_b1: tube.band_lambda_measure(b1, params.lambda),
        pi_b2: tube.band_lambda_measure(b2, params.lambda),
        flux_12,
        flux_21,
        relative_difference: if mean > 0.0 { (flux_12.value - flux_21.value).abs() / mean } else { 0.0 },
        z: flux_12.z_distance(&flux_21),
    })
}

/// Survival of the exit time from `F̃(a, b) = {x : a <= x·e <= b}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTail {
    /// Time unit `(b - a)³`.
    pub scale: u64,
    /// `survival[t - 1] = P̂[τ > (b - a)³ t]`, `t = 1..=5`.
    pub survival: Vec<Estimate>,
    pub replicas: usize,
}

impl ExitTail {
    /// `P̂(t + 1) / P̂(t)`, `None` when `P̂(t) = 0`.
    pub fn ratios(&self) -> Vec<Option<f64>> {
        self.survival
            .windows(2)
            .map(|w| (w[0].value > 0.0).then(|| w[1].value / w[0].value))
            .collect()
    }
}

pub const EXIT_TAIL_POINTS: u64 = 5;

pub fn exit_time_tail(
    tube: &Tube,
    params: &BilliardParams,
    a: f64,
    b: f64,
    start: BoundaryPoint,
    n_replicas: usize,
    seed: u64,
) -> Result<ExitTail> {
    params.validate()?;
    if !(b - a >= 1.0) || n_replicas == 0 {
        return Err(Error::InvalidParameter("need b - a >= 1 and n_replicas >= 1".into()));
    }
    let scale = (b - a).powi(3).ceil() as u64;
    let horizon = scale * EXIT_TAIL_POINTS;
    let root = SeedStream::new(seed);
    let inside = |p: &BoundaryPoint| (a..=b).contains(&p.alpha);
    let taus: Vec<Result<u64>> = map_replicas(n_replicas, |i| {
        if !inside(&start) {
            return Ok(0);
        }
        let mut rng = root.child(i as u64).rng();
        let mut bl = Billiard::new(tube, *params, start);
        for n in 1..=horizon {
            bl.step(&mut rng)?;
            if !inside(bl.position()) {
                return Ok(n);
            }
        }
        Ok(horizon + 1)
    });
    let taus: Vec<u64> = taus.into_iter().collect::<Result<_>>()?;
    let survival = (1..=EXIT_TAIL_POINTS)
        .map(|t| Estimate::proportion(taus.iter().filter(|&&tau| tau > scale * t).count() as u64, n_replicas as u64))
        .collect();
    Ok(ExitTail { scale, survival, replicas: n_replicas })
}

/// Lumped integer walk `S_m = ⌊ξ_{J(κ_{L⁴m})}·e⌋`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    /// Trajectory indices `J(κ_{L⁴m})`.
    pub indices: Vec<usize>,
    pub values: Vec<i64>,
}

impl Skeleton {
    pub fn increments(&self) -> Vec<i64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Mean number of billiard steps per skeleton step.
    pub fn steps_per_point(&self) -> f64 {
        let m = self.indices.len() - 1;
        (self.indices[m] - self.indices[0]) as f64 / m as f64
    }

    /// `(S_m - S_0) / m` divided by the mean steps per skeleton step.
    pub fn speed(&self) -> f64 {
        let m = self.values.len() - 1;
        (self.values[m] - self.values[0]) as f64 / m as f64 / self.steps_per_point()
    }

    /// Homogeneity test of the increment law after a negative versus a
    /// nonnegative previous increment; a lumpable skeleton in a homogeneous
    /// tube has independent increments.
    pub fn markov_test(&self) -> ChiSquareTest {
        let inc = self.increments();
        let (lo, hi) = (inc.iter().copied().min().unwrap_or(0), inc.iter().copied().max().unwrap_or(0));
        let width = (hi - lo + 1) as usize;
        let (mut after_neg, mut after_pos) = (vec![0u64; width], vec![0u64; width]);
        for w in inc.windows(2) {
            let bin = (w[1] - lo) as usize;
            if w[0] < 0 {
                after_neg[bin] += 1;
            } else {
                after_pos[bin] += 1;
            }
        }
        chi_square_two_sample(&after_neg, &after_pos)
    }
}

/// Log-log tail fit of `|S_{m+1} - S_m|` over one decade starting at the
/// upper quartile, so that the fit sees the tail and not the bulk.
pub fn increment_tail_fit(increments: &[i64]) -> Option<TailFit> {
    let mut abs: Vec<f64> = increments.iter().map(|d| d.unsigned_abs() as f64).collect();
    if abs.is_empty() {
        return None;
    }
    abs.sort_by(f64::total_cmp);
    let lo = abs[3 * (abs.len() - 1) / 4].max(1.0);
    fit_tail_exponent(&abs, lo, 10.0 * lo, 8)
}

pub fn extract_skeleton(run: &BilliardRun, params: &BilliardParams, seed: u64) -> Result<Skeleton> {
    params.validate()?;
    let stream = SeedStream::new(seed);
    let mut eta_rng = stream.named("eta").rng();
    let mut zeta_rng = stream.named("zeta").rng();
    let block = (params.l_block as u64).pow(4);
    let last = run.points.len() - 1;
    let (mut j, mut successes) = (0usize, 0u64);
    let mut indices = vec![0usize];
    loop {
        j += eta_rng.random_range(1..=params.n_skeleton) as usize;
        if j > last {
            break;
        }
        if zeta_rng.random::<f64>() < params.r1 {
            successes += 1;
            if successes % block == 0 {
                indices.push(j);
            }
        }
    }
    if indices.len() < 2 {
        return Err(Error::RunTooShort(format!("{} steps give fewer than two skeleton points", last)));
    }
    let values = indices.iter().map(|&i| run.points[i].alpha.floor() as i64).collect();
    Ok(Skeleton { indices, values })
}

/// Frequency over blocks of length `block` that the trajectory dips below
/// the block's starting axial coordinate minus `H`.
pub fn backtrack_stat(run: &BilliardRun, h_list: &[f64], block: usize) -> Result<Vec<(f64, Estimate)>> {
    let alpha = run.axial();
    if block == 0 || alpha.len() <= block {
        return Err(Error::RunTooShort(format!("need more than {block} points, have {}", alpha.len())));
    }
    let dips: Vec<f64> = alpha
        .chunks_exact(block + 1)
        .map(|c| c[0] - c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let n = dips.len() as u64;
    Ok(h_list
        .iter()
        .map(|&h| (h, Estimate::proportion(dips.iter().filter(|&&d| d > h).count() as u64, n)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_distance;
    use crate::tube::{build_tube, TubeSpec};

    fn cyl() -> Tube {
        build_tube(&TubeSpec::cylinder(1.0), 0).unwrap()
    }

    #[test]
    fn cosine_sampler_moments() {
        let n = Vec3::new(0.0, -0.6, 0.8);
        let mut rng = SeedStream::new(4).rng();
        let ws: Vec<Vec3> = (0..100_000).map(|_| sample_cosine(n, &mut rng)).collect();
        assert!(ws.iter().all(|w| w.dot(n) > 0.0 && (w.norm() - 1.0).abs() < 1e-12));
        let t: Vec<f64> = ws.iter().map(|w| w.dot(n)).collect();
        let m: Moments = t.iter().copied().collect();
        assert!((m.mean() - 2.0 / 3.0).abs() < 0.005);
        assert!(ks_distance(&t, |x| (x * x).clamp(0.0, 1.0)) < 0.01);
        let lateral = ws.iter().fold(Vec3::default(), |acc, &w| acc + (w - n * w.dot(n))) * (1.0 / ws.len() as f64);
        assert!(lateral.norm() < 0.01);
    }

    #[test]
    fn cosine_density_normalization() {
        // ∫_{hemisphere} γ_d cos θ dΩ = 1 by midpoint quadrature in (θ, φ).
        let n = 2000;
        let h = (PI / 2.0) / n as f64;
        let integral: f64 = (0..n).map(|i| {
            let th = (i as f64 + 0.5) * h;
            th.cos() * th.sin() * h * TAU
        }).sum::<f64>() * GAMMA_D;
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kernel_integrates_to_one_on_the_unit_cylinder() {
        // K(x, y) = γ_d (n_x·(y - x)) (n_y·(x - y)) / |x - y|⁴ over the wall.
        let x = Vec3::new(0.0, 1.0, 0.0);
        let nx = Vec3::new(0.0, -1.0, 0.0);
        let (na, nphi) = (40_000, 400);
        let amax = 400.0f64;
        let mut total = 0.0;
        for i in 0..na {
            // Map u ∈ (-1, 1) to α = amax·u³ to concentrate points near 0.
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / na as f64;
            let a = amax * u * u * u;
            let da = amax * 3.0 * u * u * 2.0 / na as f64;
            for k in 0..nphi {
                let phi = TAU * (k as f64 + 0.5) / nphi as f64;
                let y = Vec3::new(a, phi.cos(), phi.sin());
                let ny = Vec3::new(0.0, -phi.cos(), -phi.sin());
                let d = y - x;
                let r2 = d.dot(d);
                if r2 < 1e-18 {
                    continue;
                }
                total += GAMMA_D * nx.dot(d) * ny.dot(-d) / (r2 * r2) * da * TAU / nphi as f64;
            }
        }
        assert!((total - 1.0).abs() < 2e-3, "{total}");
    }

    #[test]
    fn zero_drift_accepts_everything() {
        let t = cyl();
        let x = BoundaryPoint::lateral(0.5, 1.0, 1.0);
        let th = estimate_theta(&t, &BilliardParams::new(0.0), &x, 10_000, 1).unwrap();
        assert_eq!(th.value, 0.0);
        let run = run_billiard(&t, &BilliardParams::new(0.0), x, 2_000, 3).unwrap();
        assert!(run.proposals.iter().all(|r| r.accepted));
    }

    #[test]
    fn huge_drift_rejects_leftward_moves() {
        let t = cyl();
        let run = run_billiard(&t, &BilliardParams::new(1e6), BoundaryPoint::lateral(0.5, 0.0, 1.0), 100_000, 2).unwrap();
        assert!(run.proposals.iter().filter(|r| r.delta < -1e-3).all(|r| !r.accepted));
        let c = run.check_invariants(&t);
        assert_eq!(c.violations(), 0);
    }

    #[test]
    fn acceptance_probability_formula() {
        // Δ = -0.5, λ = 2: accept iff U < e^{-1}.
        assert!(((2.0f64 * -0.5).exp() - 0.36788).abs() < 1e-5);
    }

    fn theta_quadrature(lambda: f64) -> f64 {
        // From a wall point, with t = w·n and ψ the azimuth about n measured
        // from e: w·e = √(1 - t²) cos ψ and Δ = 2 t (w·e) / (1 - (w·e)²).
        let (nt, npsi) = (2000, 2000);
        let mut s = 0.0;
        for i in 0..nt {
            let t = (i as f64 + 0.5) / nt as f64;
            for k in 0..npsi {
                let psi = TAU * (k as f64 + 0.5) / npsi as f64;
                let we = (1.0 - t * t).sqrt() * psi.cos();
                let delta = 2.0 * t * we / (1.0 - we * we);
                if delta < 0.0 {
                    s += 2.0 * t * (1.0 - (lambda * delta).exp());
                }
            }
        }
        s / (nt * npsi) as f64
    }

    #[test]
    fn theta_matches_quadrature_and_symmetry() {
        let t = cyl();
        let p = BilliardParams::new(1.0);
        let exact = theta_quadrature(1.0);
        let a = estimate_theta(&t, &p, &BoundaryPoint::lateral(0.2, 0.0, 1.0), 200_000, 1).unwrap();
        let b = estimate_theta(&t, &p, &BoundaryPoint::lateral(-7.6, 2.5, 1.0), 200_000, 2).unwrap();
        assert!((a.value - exact).abs() < 0.01, "{} vs {exact}", a.value);
        assert!(a.z_distance(&b) < 3.0);
    }

    #[test]
    fn driftless_speed_is_zero_and_drifted_is_positive() {
        let t = cyl();
        let zero = run_lln(&t, &BilliardParams::new(0.0), 100_000, 8, 1).unwrap();
        assert!(zero.zero_speed);
        let pos = run_lln(&t, &BilliardParams::new(1.0), 100_000, 8, 1).unwrap();
        assert!(pos.v.value - 2.576 * pos.v.stderr > 0.0);
        assert_eq!(pos.counts.violations(), 0);
        assert!(pos.counts.visibility_checks > 0);
    }

    #[test]
    fn balance_identity_cases() {
        let t = cyl();
        let p = BilliardParams::new(1.0);
        let same = detailed_balance_test(&t, &p, 2, 2, 1000, 1).unwrap();
        assert_eq!(same.flux_12, same.flux_21);
        let sym = detailed_balance_test(&t, &BilliardParams::new(0.0), -1, 0, 50_000, 2).unwrap();
        assert!(sym.passed(3.0));
        let r = detailed_balance_test(&t, &p, 0, 1, 50_000, 3).unwrap();
        assert!(r.passed(3.0), "{r:?}");
        assert!(r.pi_b1 != r.pi_b2);
    }

    #[test]
    fn exit_tail_basics() {
        let t = cyl();
        let p = BilliardParams::new(1.0);
        let outside = exit_time_tail(&t, &p, 0.0, 4.0, BoundaryPoint::lateral(9.5, 0.0, 1.0), 50, 0).unwrap();
        assert!(outside.survival.iter().all(|s| s.value == 0.0));
        let inside = exit_time_tail(&t, &p, 0.0, 4.0, BoundaryPoint::lateral(2.0, 0.0, 1.0), 2000, 0).unwrap();
        assert!(inside.survival.windows(2).all(|w| w[1].value <= w[0].value));
    }

    #[test]
    fn trivial_skeleton_is_the_lumped_chain() {
        let t = cyl();
        let p = BilliardParams { lambda: 1.0, n_skeleton: 1, r1: 1.0, l_block: 1 };
        let run = run_billiard(&t, &p, BoundaryPoint::lateral(0.5, 0.0, 1.0), 500, 9).unwrap();
        let sk = extract_skeleton(&run, &p, 1).unwrap();
        assert_eq!(sk.indices, (0..=500).collect::<Vec<_>>());
        assert!(sk.values.iter().zip(&run.points).all(|(&s, x)| s == x.alpha.floor() as i64));
        let tiny = run_billiard(&t, &BilliardParams::new(1.0), BoundaryPoint::lateral(0.5, 0.0, 1.0), 3, 9).unwrap();
        assert!(matches!(extract_skeleton(&tiny, &BilliardParams::new(1.0), 0), Err(Error::RunTooShort(_))));
    }

    #[test]
    fn chord_tail_exponent() {
        let t = cyl();
        let p = BilliardParams::new(0.0);
        let mut b = Billiard::new(&t, p, BoundaryPoint::lateral(0.0, 0.0, 1.0));
        let mut rng = SeedStream::new(5).rng();
        let chords: Vec<f64> = (0..400_000).map(|_| b.step(&mut rng).unwrap().delta.abs()).collect();
        let fit = fit_tail_exponent(&chords, 2.0, 20.0, 8).unwrap();
        assert!(fit.exponent >= 1.8, "{fit:?}");
    }

    #[test]
    fn backtracking_is_nested_in_h() {
        let t = cyl();
        let run = run_billiard(&t, &BilliardParams::new(1.0), BoundaryPoint::lateral(0.5, 0.0, 1.0), 20_000, 4).unwrap();
        let hs = [0.0, 0.5, 1.0, 2.0, 4.0];
        let f = backtrack_stat(&run, &hs, 100).unwrap();
        assert!(f.windows(2).all(|w| w[1].1.value <= w[0].1.value));
        assert!(f[0].1.value > 0.0 && f[0].1.value <= 1.0);
    }
}
