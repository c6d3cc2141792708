//! The truncated walk `S^ρ` in a fixed environment: single runs, coupled
//! pairs, first passage above a level, visit counts and the Condition D
//! diagnostic.

use std::io::{self, Write};
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvView, Environment, TruncationLevel};
use crate::error::{Error, Result};
use crate::par::map_replicas;
use crate::seed::SeedStream;
use crate::stats::{Estimate, Moments};

/// Default step cap for first-passage and transience loops.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Walk state: position, environment handle and rejection counter.
///
/// A step proposes `Y ~ ω_{S,·}` from the untruncated site law and moves only
/// when `|Y| < ρ`, which realizes `ω^ρ` without building truncated tables.
#[derive(Debug)]
pub struct Walker<'e> {
    view: EnvView<'e>,
    rho: TruncationLevel,
    pos: i64,
    rejected: u64,
}

impl<'e> Walker<'e> {
    pub fn new(env: &'e Environment, rho: TruncationLevel, x0: i64) -> Self {
        Walker { view: env.view(), rho, pos: x0, rejected: 0 }
    }

    #[inline]
    pub fn position(&self) -> i64 {
        self.pos
    }

    pub fn set_position(&mut self, x: i64) {
        self.pos = x;
    }

    pub fn rho(&self) -> TruncationLevel {
        self.rho
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Driver state at the current site.
    #[inline]
    pub fn state_here(&mut self) -> Option<usize> {
        self.view.state(self.pos)
    }

    #[inline]
    pub fn state_at(&mut self, site: i64) -> Option<usize> {
        self.view.state(site)
    }

    /// Draws a proposal at the current site without moving.
    #[inline]
    pub fn propose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> i64 {
        self.view.sample_jump(self.pos, rng)
    }

    /// Applies the truncation rule to proposal `y`.
    #[inline]
    pub fn apply(&mut self, y: i64) -> i64 {
        if self.rho.admits(y) {
            self.pos += y;
        } else {
            self.rejected += 1;
        }
        self.pos
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> i64 {
        let y = self.propose(rng);
        self.apply(y)
    }

    /// Steps until `S >= z` or `cap` steps have been taken. Returns the number
    /// of steps used, or `None` on exhaustion.
    pub fn run_until_at_least<R: Rng + ?Sized>(&mut self, z: i64, cap: u64, rng: &mut R) -> Option<u64> {
        let mut t = 0;
        while self.pos < z {
            if t == cap {
                return None;
            }
            self.step(rng);
            t += 1;
        }
        Some(t)
    }
}

/// A recorded trajectory `S^ρ_0 .. S^ρ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkRun {
    pub positions: Vec<i64>,
    pub rho: TruncationLevel,
    pub start: i64,
    pub seed: u64,
    pub rejected_steps: u64,
}

impl WalkRun {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest `|S_{k+1} - S_k|`.
    pub fn max_step(&self) -> u64 {
        self.positions.windows(2).map(|w| (w[1] - w[0]).unsigned_abs()).max().unwrap_or(0)
    }

    /// Whether every step is shorter than `ρ`.
    pub fn respects_truncation(&self) -> bool {
        self.positions.windows(2).all(|w| self.rho.admits(w[1] - w[0]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,position")?;
        for (k, x) in self.positions.iter().enumerate() {
            writeln!(out, "{k},{x}")?;
        }
        Ok(())
    }
}

pub fn run_walk(env: &Environment, rho: TruncationLevel, x0: i64, n_steps: usize, seed: u64) -> WalkRun {
    let mut rng = SeedStream::new(seed).rng();
    let mut w = Walker::new(env, rho, x0);
    let mut positions = Vec::with_capacity(n_steps + 1);
    positions.push(x0);
    for _ in 0..n_steps {
        positions.push(w.step(&mut rng));
    }
    WalkRun { positions, rho, start: x0, seed, rejected_steps: w.rejected() }
}

/// Two walks with truncation levels `rho1 <= rho2` under the natural
/// coupling: while together they share the proposal `Y_n`, each applying its
/// own cutoff; once apart each draws its own proposals.
pub fn run_coupled(
    env: &Environment,
    rho1: TruncationLevel,
    rho2: TruncationLevel,
    x0: i64,
    n_steps: usize,
    seed: u64,
) -> Result<(WalkRun, WalkRun)> {
    if rho1 > rho2 {
        return Err(Error::InvalidParameter(format!("coupling needs rho1 <= rho2, got {rho1} > {rho2}")));
    }
    let mut rng = SeedStream::new(seed).rng();
    let mut a = Walker::new(env, rho1, x0);
    let mut b = Walker::new(env, rho2, x0);
    let mut pa = vec![x0];
    let mut pb = vec![x0];
    for _ in 0..n_steps {
        if a.position() == b.position() {
            let y = a.propose(&mut rng);
            a.apply(y);
            b.apply(y);
        } else {
            a.step(&mut rng);
            b.step(&mut rng);
        }
        pa.push(a.position());
        pb.push(b.position());
    }
    let run = |positions, rho, w: &Walker| WalkRun { positions, rho, start: x0, seed, rejected_steps: w.rejected() };
    Ok((run(pa, rho1, &a), run(pb, rho2, &b)))
}

/// First passage at or above a level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub target: i64,
    /// `T_z`, or `None` when the cap was exhausted.
    pub time: Option<u64>,
    pub landed_at: Option<i64>,
    pub exact: bool,
}

impl HitRecord {
    pub fn reached(&self) -> bool {
        self.time.is_some()
    }
}

/// Runs the walker to `T_z = min{k : S_k >= z}`.
pub fn hit_with<R: Rng + ?Sized>(w: &mut Walker<'_>, z: i64, step_cap: u64, rng: &mut R) -> HitRecord {
    match w.run_until_at_least(z, step_cap, rng) {
        Some(t) => HitRecord { target: z, time: Some(t), landed_at: Some(w.position()), exact: w.position() == z },
        None => HitRecord { target: z, time: None, landed_at: None, exact: false },
    }
}

pub fn hit(env: &Environment, rho: TruncationLevel, x0: i64, z: i64, seed: u64, step_cap: u64) -> Result<HitRecord> {
    if step_cap == 0 {
        return Err(Error::InvalidParameter("step_cap must be at least 1".into()));
    }
    let mut rng = SeedStream::new(seed).rng();
    Ok(hit_with(&mut Walker::new(env, rho, x0), z, step_cap, &mut rng))
}

/// Visit counts of a run over a window of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts {
    pub lo: i64,
    pub hi: i64,
    pub counts: Vec<u64>,
}

impl VisitCounts {
    pub fn get(&self, site: i64) -> u64 {
        if (self.lo..=self.hi).contains(&site) {
            self.counts[(site - self.lo) as usize]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn visit_counts(run: &WalkRun, window: RangeInclusive<i64>) -> VisitCounts {
    let (lo, hi) = (*window.start(), *window.end());
    let mut counts = vec![0u64; if hi >= lo { (hi - lo + 1) as usize } else { 0 }];
    for &x in &run.positions {
        if (lo..=hi).contains(&x) {
            counts[(x - lo) as usize] += 1;
        }
    }
    VisitCounts { lo, hi, counts }
}

/// Empirical Green function `ĝ(k) ≈ E^0 N^ρ_∞(-k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionDEstimate {
    pub rho: TruncationLevel,
    pub barrier: i64,
    /// `g[k]` estimates expected visits to `-k`, `k = 0..=depth`.
    pub g: Vec<Estimate>,
    /// Fraction of replicas that came back to `<= 0` after first clearing the
    /// barrier, before reaching twice the barrier. Bounds the bias of
    /// stopping at the barrier.
    pub backtrack_frequency: f64,
    pub replicas: usize,
}

impl ConditionDEstimate {
    /// `ĝ` nonincreasing in `k` up to `z` combined standard errors.
    pub fn nonincreasing_within(&self, z: f64) -> bool {
        self.g.windows(2).all(|w| w[1].value <= w[0].value + z * w[0].stderr.hypot(w[1].stderr))
    }
}

/// Default barrier `B = 10ρ + 50` (with `ρ = W_J + 1` for `∞`).
pub fn default_barrier(env: &Environment, rho: TruncationLevel) -> i64 {
    10 * rho.effective(env.max_jump()) + 50
}

pub fn estimate_condition_d(
    env: &Environment,
    rho: TruncationLevel,
    depth: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<ConditionDEstimate> {
    estimate_condition_d_with(env, rho, depth, n_replicas, seed, default_barrier(env, rho), DEFAULT_STEP_CAP)
}

/// Counts visits to `{0, -1, .., -depth}` until the walk from 0 first reaches
/// `barrier`, then keeps running to `2·barrier` to measure backtracking.
pub fn estimate_condition_d_with(
    env: &Environment,
    rho: TruncationLevel,
    depth: usize,
    n_replicas: usize,
    seed: u64,
    barrier: i64,
    step_cap: u64,
) -> Result<ConditionDEstimate> {
    if depth == 0 || n_replicas == 0 || barrier < 1 {
        return Err(Error::InvalidParameter("depth, n_replicas and barrier must be positive".into()));
    }
    let root = SeedStream::new(seed);
    let per: Vec<Result<(Vec<u64>, bool)>> = map_replicas(n_replicas, |i| {
        let mut rng = root.child(i as u64).rng();
        let mut w = Walker::new(env, rho, 0);
        let mut visits = vec![0u64; depth + 1];
        let record = |x: i64, visits: &mut Vec<u64>| {
            if (-(depth as i64)..=0).contains(&x) {
                visits[(-x) as usize] += 1;
            }
        };
        record(0, &mut visits);
        let mut t = 0u64;
        while w.position() < barrier {
            if t == step_cap {
                return Err(Error::NonTransient { barrier, cap: step_cap });
            }
            record(w.step(&mut rng), &mut visits);
            t += 1;
        }
        let mut back = false;
        while w.position() < 2 * barrier {
            if t == step_cap {
                return Err(Error::NonTransient { barrier: 2 * barrier, cap: step_cap });
            }
            let x = w.step(&mut rng);
            back |= x <= 0;
            record(x, &mut visits);
            t += 1;
        }
        Ok((visits, back))
    });
    let mut g = vec![Moments::new(); depth + 1];
    let mut backs = 0usize;
    for r in per {
        let (v, back) = r?;
        for (m, c) in g.iter_mut().zip(v) {
            m.push(c as f64);
        }
        backs += back as usize;
    }
    Ok(ConditionDEstimate {
        rho,
        barrier,
        g: g.iter().map(Moments::estimate).collect(),
        backtrack_frequency: backs as f64 / n_replicas as f64,
        replicas: n_replicas,
    })
}

/// Runs the Condition D diagnostic for `ρ ∈ {ρ₀, 2ρ₀, 4ρ₀, ∞}`. A finite scan
/// cannot establish the uniform-in-ρ statement; it only reports.
pub fn scan_condition_d(
    env: &Environment,
    rho0: u32,
    depth: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<Vec<(TruncationLevel, Result<ConditionDEstimate>)>> {
    let levels = [
        TruncationLevel::finite(rho0)?,
        TruncationLevel::finite(2 * rho0)?,
        TruncationLevel::finite(4 * rho0)?,
        TruncationLevel::Infinite,
    ];
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, &rho)| (rho, estimate_condition_d(env, rho, depth, n_replicas, SeedStream::new(seed).child(i as u64).key())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_environment, EnvSpec, JumpLaw};
    use crate::stats::chi_square_gof;
    use proptest::prelude::*;

    fn iid(pairs: &[(i64, f64)]) -> Environment {
        build_environment(&EnvSpec::iid(JumpLaw::from_pairs(pairs).unwrap()), 7).unwrap()
    }

    const INF: TruncationLevel = TruncationLevel::Infinite;

    #[test]
    fn deterministic_drift() {
        let env = iid(&[(1, 1.0)]);
        let run = run_walk(&env, TruncationLevel::Finite(2), 0, 5, 3);
        assert_eq!(run.positions, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(run_walk(&env, INF, 4, 0, 3).positions, vec![4]);
    }

    #[test]
    fn homogeneous_mean_step() {
        let env = iid(&[(1, 0.6), (-1, 0.4)]);
        let n = 1_000_000;
        let run = run_walk(&env, INF, 0, n, 11);
        let v = *run.positions.last().unwrap() as f64 / n as f64;
        assert!((v - 0.2).abs() < 0.003, "v = {v}");
    }

    #[test]
    fn truncation_rejects_long_proposals() {
        let env = iid(&[(1, 0.5), (3, 0.3), (-1, 0.2)]);
        let run = run_walk(&env, TruncationLevel::Finite(3), 0, 10_000, 5);
        assert!(run.respects_truncation());
        assert!(run.max_step() <= 2);
        let holds = run.positions.windows(2).filter(|w| w[0] == w[1]).count() as u64;
        assert_eq!(holds, run.rejected_steps);
    }

    #[test]
    fn coupled_nearest_neighbor_walks_coincide() {
        let env = iid(&[(1, 0.6), (-1, 0.4)]);
        for seed in 0..20 {
            let (a, b) = run_coupled(&env, TruncationLevel::Finite(2), INF, 0, 500, seed).unwrap();
            assert_eq!(a.positions, b.positions);
        }
        assert!(run_coupled(&env, INF, TruncationLevel::Finite(2), 0, 1, 0).is_err());
    }

    #[test]
    fn coupled_walks_agree_until_first_long_proposal() {
        let env = iid(&[(1, 0.5), (3, 0.2), (-1, 0.3)]);
        for seed in 0..50 {
            let (a, b) = run_coupled(&env, TruncationLevel::Finite(2), TruncationLevel::Finite(4), 0, 200, seed).unwrap();
            let split = a.positions.iter().zip(&b.positions).position(|(x, y)| x != y);
            if let Some(k) = split {
                assert!(a.positions[..k] == b.positions[..k]);
                // At the split walk 1 held while walk 2 took the +3 jump.
                assert_eq!(a.positions[k], a.positions[k - 1]);
                assert_eq!(b.positions[k] - b.positions[k - 1], 3);
            }
        }
    }

    #[test]
    fn separation_time_is_geometric() {
        let q3 = 0.2;
        let env = iid(&[(1, 0.5), (3, q3), (-1, 0.3)]);
        let n = 5;
        let runs = 20_000;
        let sep = (0..runs)
            .filter(|&s| {
                let (a, b) = run_coupled(&env, TruncationLevel::Finite(2), TruncationLevel::Finite(4), 0, n, s).unwrap();
                a.positions != b.positions
            })
            .count() as f64
            / runs as f64;
        let p = 1.0 - (1.0f64 - q3).powi(n as i32);
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((sep - p).abs() < 4.0 * se, "{sep} vs {p}");
    }

    #[test]
    fn hit_examples() {
        let env = iid(&[(1, 0.6), (-1, 0.4)]);
        let h = hit(&env, INF, 5, 3, 1, 10).unwrap();
        assert_eq!((h.time, h.landed_at, h.exact), (Some(0), Some(5), false));
        assert!(hit(&env, INF, 3, 3, 1, 10).unwrap().exact);
        for s in 0..200 {
            assert!(hit(&env, INF, -7, 0, s, DEFAULT_STEP_CAP).unwrap().exact);
        }
        let stuck = iid(&[(-1, 1.0)]);
        assert!(!hit(&stuck, INF, 0, 1, 0, 100).unwrap().reached());
        assert!(hit(&env, INF, 0, 1, 0, 0).is_err());
    }

    #[test]
    fn hit_replays_run_walk() {
        let env = iid(&[(1, 0.4), (2, 0.2), (-1, 0.4)]);
        for seed in 0..50 {
            let h = hit(&env, TruncationLevel::Finite(3), 0, 15, seed, 100_000).unwrap();
            let t = h.time.unwrap() as usize;
            let run = run_walk(&env, TruncationLevel::Finite(3), 0, t, seed);
            let first = run.positions.iter().position(|&x| x >= 15).unwrap();
            assert_eq!(first, t);
            assert_eq!(run.positions[t], h.landed_at.unwrap());
        }
    }

    #[test]
    fn one_step_law_at_a_pinned_site() {
        let law = JumpLaw::from_pairs(&[(1, 0.45), (2, 0.15), (-1, 0.3), (-3, 0.1)]).unwrap();
        let env = build_environment(&EnvSpec::periodic(vec![law.clone(), JumpLaw::nearest_neighbor(0.7).unwrap()]), 0).unwrap();
        let mut rng = SeedStream::new(9).rng();
        let mut counts = [0u64; 4];
        for _ in 0..100_000 {
            let mut w = Walker::new(&env, INF, 0);
            let y = w.step(&mut rng);
            counts[law.offsets().iter().position(|&o| o == y).unwrap()] += 1;
        }
        assert!(chi_square_gof(&counts, law.probs()).p_value > 0.01);
    }

    #[test]
    fn visit_count_examples() {
        let env = iid(&[(1, 1.0)]);
        let run = run_walk(&env, INF, 0, 5, 0);
        assert_eq!(visit_counts(&run, 0..=5).counts, vec![1; 6]);
        assert_eq!(visit_counts(&run, 100..=110).total(), 0);
    }

    fn green(k: i64) -> f64 {
        (1.0f64 / 9.0).powi(k as i32) / 0.8
    }

    #[test]
    fn condition_d_matches_green_function() {
        let env = iid(&[(1, 0.9), (-1, 0.1)]);
        let est = estimate_condition_d(&env, INF, 5, 20_000, 3).unwrap();
        for (k, g) in est.g.iter().enumerate() {
            let target = green(k as i64);
            assert!((g.value - target).abs() < 3.5 * g.stderr.max(1e-4), "k={k}: {} vs {target}", g.value);
        }
        assert!(est.nonincreasing_within(3.0));
        let det = estimate_condition_d(&iid(&[(1, 1.0)]), INF, 3, 10, 0).unwrap();
        assert_eq!(det.g.iter().map(|e| e.value).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn condition_d_flags_non_transient_walks() {
        let env = iid(&[(1, 0.3), (-1, 0.7)]);
        let e = estimate_condition_d_with(&env, INF, 2, 4, 0, 50, 10_000).unwrap_err();
        assert!(matches!(e, Error::NonTransient { .. }));
    }

    #[test]
    fn condition_d_scan_reports_each_level() {
        let env = iid(&[(1, 0.5), (2, 0.3), (-1, 0.2)]);
        let scan = scan_condition_d(&env, 4, 3, 200, 1).unwrap();
        assert_eq!(scan.len(), 4);
        assert!(scan.iter().all(|(_, r)| r.is_ok()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn runs_respect_truncation_and_start(seed in any::<u64>(), rho in 2u32..6, x0 in -50i64..50, n in 0usize..400) {
            let env = build_environment(
                &EnvSpec::iid(JumpLaw::power_tail(0.3, 2.5, 64).unwrap()),
                seed,
            ).unwrap();
            let run = run_walk(&env, TruncationLevel::Finite(rho), x0, n, seed);
            prop_assert_eq!(run.positions[0], x0);
            prop_assert_eq!(run.positions.len(), n + 1);
            prop_assert!(run.respects_truncation());
            let vc = visit_counts(&run, -500..=500);
            prop_assert!(vc.total() <= n as u64 + 1);
        }
    }
}
