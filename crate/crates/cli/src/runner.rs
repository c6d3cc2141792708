//! Dispatch from experiment kind to the library.

use anyhow::{Context, Result};
use randmedia::billiard::{
    backtrack_stat, detailed_balance_test, exit_time_tail, extract_skeleton, increment_tail_fit, run_billiard, run_lln, sample_cosine,
    BilliardParams, BilliardRun, InvariantCounts,
};
use randmedia::env::{DriverSpec, Environment, TruncationLevel};
use randmedia::geom::Vec3;
use randmedia::oracle::{periodic_env_chain, periodic_speed, solve_exact_hit_at};
use randmedia::par::map_replicas;
use randmedia::regen::{
    choose_eps1, env_marginal, estimate_r_profile, occupation_direct, occupation_q, rn_density, run_regen_replicas,
    speed_cycle, speed_direct, speed_vs_rho, RegenRecord, SplitOptions, SplitParams,
};
use randmedia::seed::SeedStream;
use randmedia::stats::{fit_tail_exponent, ks_distance, linear_fit, Estimate, Moments};
use randmedia::tube::{BoundaryPoint, Tube};
use randmedia::walk::{default_barrier, estimate_condition_d_with, hit, run_walk};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind, Prepared};
use crate::report::Diagnostic;

/// Length of runs used for invariant checks and CSV series.
const CHECK_STEPS: u64 = 20_000;

pub struct Outcome {
    pub results: Value,
    pub diagnostics: Vec<Diagnostic>,
    /// `(file name, CSV contents)`.
    pub series: Vec<(String, String)>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    p: &'a Prepared,
    root: SeedStream,
    diags: Vec<Diagnostic>,
    series: Vec<(String, String)>,
}

impl<'a> Ctx<'a> {
    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.diags.push(Diagnostic::new(name, passed, detail));
    }

    fn seed(&self, tag: &str) -> u64 {
        self.root.named(tag).key()
    }

    fn env(&self) -> &'a Environment {
        self.p.env.as_ref().expect("validated environment")
    }

    fn steps(&self) -> u64 {
        self.cfg.steps
    }

    fn replicas(&self) -> usize {
        self.cfg.replicas as usize
    }

    fn walk_invariants(&mut self) -> Result<()> {
        let n = self.steps().min(CHECK_STEPS) as usize;
        let mut bad = Vec::new();
        for &rho in &self.p.rho {
            let run = run_walk(self.env(), rho, 0, n, self.seed("invariants"));
            if !run.respects_truncation() {
                bad.push(rho.to_string());
            }
            if self.cfg.series {
                let mut buf = Vec::new();
                run.write_csv(&mut buf)?;
                self.series.push((format!("walk_rho_{rho}.csv"), String::from_utf8(buf)?));
            }
        }
        self.check("invariant: truncation respected", bad.is_empty(), format!("{n}-step runs; violations at rho {bad:?}"));
        Ok(())
    }

    fn condition_d_guard(&mut self) {
        if !self.cfg.condition_d {
            return;
        }
        for rho in self.p.rho.clone() {
            let depth = self.cfg.condition_d_depth as usize;
            let barrier = default_barrier(self.env(), rho);
            let seed = self.seed("condition_d");
            match estimate_condition_d_with(self.env(), rho, depth, self.replicas().max(100), seed, barrier, self.cfg.step_cap) {
                Ok(g) => {
                    let ok = g.nonincreasing_within(3.0);
                    let detail = format!(
                        "g = {:?}, backtrack frequency {:.4}",
                        g.g.iter().map(|e| round(e.value, 4)).collect::<Vec<_>>(),
                        g.backtrack_frequency
                    );
                    self.check(format!("condition D guard rho={rho}"), ok, detail);
                }
                Err(e) => self.check(format!("condition D guard rho={rho}"), false, e.to_string()),
            }
        }
    }

    fn billiard_invariants(&mut self, tube: &Tube, params: &BilliardParams, counts: &mut InvariantCounts) -> Result<BilliardRun> {
        let start = start_point(tube, 0.5);
        let run = run_billiard(tube, params, start, self.steps().min(CHECK_STEPS) as usize, self.seed("invariants"))?;
        counts.merge(&run.check_invariants(tube));
        if self.cfg.series {
            let mut buf = Vec::new();
            run.write_csv(&mut buf)?;
            self.series.push((format!("billiard_tube_{}.csv", tube.seed()), String::from_utf8(buf)?));
        }
        Ok(run)
    }

    fn report_billiard_counts(&mut self, c: &InvariantCounts) {
        self.check(
            "invariant: rightward proposals accepted",
            c.rightward_rejections == 0,
            format!("{} rejections over {} steps", c.rightward_rejections, c.steps),
        );
        self.check("invariant: holding stays put", c.holding_moves == 0, format!("{} moves", c.holding_moves));
        self.check(
            "invariant: boundary residual",
            c.max_boundary_residual < 1e-10,
            format!("max residual {:.2e}", c.max_boundary_residual),
        );
        self.check(
            "invariant: visibility round trip",
            c.visibility_failures == 0,
            format!("{}/{} failed", c.visibility_failures, c.visibility_checks),
        );
    }
}

fn round(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

fn est(e: &Estimate) -> Value {
    json!({ "value": e.value, "stderr": e.stderr })
}

fn start_point(tube: &Tube, alpha: f64) -> BoundaryPoint {
    BoundaryPoint::lateral(alpha, 0.0, tube.radius(alpha))
}

fn is_periodic(env: &Environment) -> bool {
    matches!(env.spec().driver, DriverSpec::Periodic { .. })
}

pub fn run(cfg: &ExperimentConfig, p: &Prepared) -> Result<Outcome> {
    let mut ctx = Ctx { cfg, p, root: SeedStream::new(p.seed), diags: Vec::new(), series: Vec::new() };
    let results = match cfg.kind {
        Kind::RwreSpeed => rwre_speed(&mut ctx),
        Kind::RwreRegen => rwre_regen(&mut ctx),
        Kind::RwreQ => rwre_q(&mut ctx),
        Kind::BilliardLln => billiard_lln(&mut ctx),
        Kind::BilliardBalance => billiard_balance(&mut ctx),
        Kind::BilliardTails => billiard_tails(&mut ctx),
        Kind::Skeleton => skeleton(&mut ctx),
        Kind::OracleCheck => oracle_check(&mut ctx),
    }?;
    Ok(Outcome { results, diagnostics: ctx.diags, series: ctx.series })
}

fn rwre_speed(c: &mut Ctx) -> Result<Value> {
    c.condition_d_guard();
    let rho = c.p.rho.clone();
    let env = c.env();
    let seed = c.seed("speed");
    let mut rows = Vec::new();
    let mut speeds = Vec::new();
    if rho.len() == 1 {
        let d = speed_direct(env, rho[0], c.steps(), c.replicas(), seed)?;
        rows.push(json!({ "rho": rho[0], "v": est(&d.v), "rejected_fraction": d.rejected_fraction }));
        speeds.push(d.v);
    } else {
        let table = speed_vs_rho(env, &rho, c.steps(), c.replicas(), seed)?;
        for r in &table {
            rows.push(json!({ "rho": r.rho, "v": est(&r.v), "gap_to_last": est(&r.gap) }));
            speeds.push(r.v);
        }
        let gaps: Vec<Estimate> = table[..table.len() - 1].iter().map(|r| r.gap).collect();
        let last = gaps.last().unwrap();
        let tol = c.cfg.expect.gap;
        c.check(
            "truncation convergence",
            last.value.abs() < tol,
            format!("|v(rho={}) - v(rho={})| = {:.5} < {tol}", table[table.len() - 2].rho, rho[rho.len() - 1], last.value.abs()),
        );
        let monotone = gaps.windows(2).all(|w| w[1].value.abs() <= w[0].value.abs() + w[0].stderr.max(w[1].stderr));
        c.check(
            "gap nonincreasing",
            monotone,
            format!("gaps {:?}", gaps.iter().map(|g| round(g.value, 5)).collect::<Vec<_>>()),
        );
    }
    if let Some(v) = c.cfg.expect.v {
        let got = speeds.last().unwrap();
        let tol = c.cfg.expect.v_tol;
        c.check("expected speed", (got.value - v).abs() <= tol, format!("v = {:.5} ± {:.5}, expected {v} ± {tol}", got.value, got.stderr));
    }
    let env = c.env();
    if is_periodic(env) {
        let mut oracle = Vec::new();
        let mut checks = Vec::new();
        for (r, v) in rho.iter().zip(&speeds) {
            let exact = periodic_speed(env, *r)?;
            let rel = (v.value - exact).abs() / exact.abs();
            checks.push((format!("oracle speed rho={r}"), rel < c.cfg.expect.rel_tol, format!("MC {:.5}, oracle {exact:.6}, rel {rel:.4}", v.value)));
            oracle.push(json!({ "rho": r, "v": exact }));
        }
        for (n, ok, d) in checks {
            c.check(n, ok, d);
        }
        rows.push(json!({ "oracle": oracle }));
    }
    c.walk_invariants()?;
    Ok(json!({ "speeds": rows }))
}

fn splits(c: &Ctx, common: bool) -> Result<Vec<SplitParams>> {
    let mut out = Vec::new();
    for &rho in &c.p.rho {
        let prof = estimate_r_profile(c.env(), rho, c.cfg.levels as usize, c.cfg.r_replicas as usize, c.seed("r_profile"))?;
        out.push(choose_eps1(&prof).with_context(|| format!("choosing eps1 at rho = {rho}"))?);
    }
    if common {
        let eps1 = out.iter().map(|s| s.eps1).fold(f64::INFINITY, f64::min);
        out = out.iter().map(|s| s.with_eps1(eps1)).collect::<randmedia::Result<_>>()?;
    }
    Ok(out)
}

fn regen(c: &Ctx, split: &SplitParams) -> Result<Vec<RegenRecord>> {
    let opts = SplitOptions { half_width: c.cfg.half_width as usize, ..SplitOptions::default() };
    Ok(run_regen_replicas(c.env(), split, c.cfg.cycles as usize, c.replicas(), c.seed("regen"), opts)?)
}

fn anchoring(c: &mut Ctx, recs: &[Vec<RegenRecord>]) {
    let epochs: usize = recs.iter().flatten().map(|r| r.ell.len()).sum();
    let bad: usize = recs.iter().flatten().map(|r| r.anchoring_violations()).sum();
    c.check("invariant: epochs anchored at ladder levels", bad == 0, format!("{bad}/{epochs} epochs off level"));
}

fn rwre_regen(c: &mut Ctx) -> Result<Value> {
    c.condition_d_guard();
    let splits = splits(c, c.p.rho.len() > 1)?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut scaled = Vec::new();
    for split in &splits {
        let recs = regen(c, split)?;
        let cs = speed_cycle(&recs, split)?;
        let ds = speed_direct(c.env(), split.rho, c.steps(), c.replicas(), c.seed("speed"))?;
        let rel = (cs.v.value - ds.v.value).abs() / ds.v.value.abs();
        let r = split.rho.value().unwrap() as f64;
        scaled.push(cs.mean_duration.value / r);
        c.check(
            format!("cycle vs direct speed rho={}", split.rho),
            rel < c.cfg.expect.rel_tol,
            format!("cycle {:.5} ± {:.5}, direct {:.5} ± {:.5}, rel {rel:.4}", cs.v.value, cs.v.stderr, ds.v.value, ds.v.stderr),
        );
        rows.push(json!({
            "rho": split.rho,
            "eps1": split.eps1,
            "eps1_floored": split.floored,
            "r_estimates": split.r_estimates.iter().map(|l| json!({ "level": l.level, "r": est(&l.r) })).collect::<Vec<_>>(),
            "cycles": cs.cycles,
            "v_cycle": est(&cs.v),
            "v_cycle_ratio": est(&cs.v_ratio),
            "mean_duration": est(&cs.mean_duration),
            "mean_ladder_steps": est(&cs.mean_ladder_steps),
            "v_direct": est(&ds.v),
        }));
        all.push(recs);
    }
    if scaled.len() > 1 {
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scaled.iter().copied().fold(0.0, f64::max);
        c.check(
            "cycle duration scaling",
            hi / lo < c.cfg.expect.scaling_ratio,
            format!("E T / rho in [{lo:.4}, {hi:.4}], ratio {:.4}", hi / lo),
        );
    }
    anchoring(c, &all);
    c.walk_invariants()?;
    Ok(json!({ "levels": rows, "duration_per_rho": scaled }))
}

fn rwre_q(c: &mut Ctx) -> Result<Value> {
    c.condition_d_guard();
    let hw = c.cfg.half_width as usize;
    let splits = splits(c, false)?;
    let base = env_marginal(c.env(), hw)?;
    let mut rows = Vec::new();
    let mut rns = Vec::new();
    let mut all = Vec::new();
    for split in &splits {
        let recs = regen(c, split)?;
        let q = occupation_q(&recs)?;
        let direct = occupation_direct(c.env(), split.rho, c.steps() * c.cfg.replicas, 1000, hw, c.seed("direct"))?;
        let rn = rn_density(&q, &base)?;
        let finite = rn.min > 0.0 && rn.max.is_finite();
        c.check(format!("RN ratios in (0, inf) rho={}", split.rho), finite, format!("min {:.4}, max {:.4}", rn.min, rn.max));
        let tol = c.cfg.expect.tv;
        let mut row = json!({
            "rho": split.rho,
            "eps1": split.eps1,
            "q": q.support.iter().zip(&q.weights).map(|(d, w)| json!({ "descriptor": d, "weight": w })).collect::<Vec<_>>(),
            "rn": rn.ratios.iter().map(|(d, r)| json!({ "descriptor": d, "ratio": r })).collect::<Vec<_>>(),
        });
        if is_periodic(c.env()) && hw == 0 {
            let exact = periodic_env_chain(c.env(), split.rho)?;
            let (tq, td) = (q.total_variation(&exact), direct.total_variation(&exact));
            c.check(format!("Q vs oracle rho={}", split.rho), tq < tol, format!("TV {tq:.5}"));
            c.check(format!("direct occupation vs oracle rho={}", split.rho), td < tol, format!("TV {td:.5}"));
            row["tv_oracle"] = json!({ "cycles": tq, "direct": td });
        } else {
            let t = q.total_variation(&direct);
            c.check(format!("Q vs direct occupation rho={}", split.rho), t < tol, format!("TV {t:.5}"));
            row["tv_direct"] = json!(t);
        }
        rows.push(row);
        rns.push(rn);
        all.push(recs);
    }
    for (i, w) in rns.windows(2).enumerate() {
        let change = w[0]
            .ratios
            .iter()
            .map(|(d, a)| (w[1].ratio(d).unwrap_or(0.0) - a).abs() / a)
            .fold(0.0, f64::max);
        c.check(
            format!("RN stability rho={} to {}", splits[i].rho, splits[i + 1].rho),
            change < c.cfg.expect.rn_change,
            format!("max relative change {change:.4}"),
        );
    }
    anchoring(c, &all);
    c.walk_invariants()?;
    Ok(json!({ "levels": rows }))
}

fn billiard_lln(c: &mut Ctx) -> Result<Value> {
    let p = c.p;
    let params = p.billiard;
    let mut rows = Vec::new();
    let mut counts = InvariantCounts::default();
    let mut vs = Vec::new();
    for (ts, tube) in &p.tubes {
        let r = run_lln(tube, &params, c.steps(), c.replicas(), c.seed("lln"))?;
        counts.merge(&r.counts);
        c.billiard_invariants(tube, &params, &mut counts)?;
        let v = r.v;
        if params.lambda == 0.0 {
            c.check(format!("zero speed tube={ts}"), r.zero_speed, format!("v = {:.5} ± {:.5}", v.value, v.stderr));
        } else {
            let lo = v.value - 2.576 * v.stderr;
            c.check(format!("positive speed tube={ts}"), lo > 0.0, format!("99% lower bound {lo:.5}"));
        }
        if let Some(m) = c.cfg.expect.max_stderr {
            c.check(format!("stderr bound tube={ts}"), v.stderr < m, format!("stderr {:.5} < {m}", v.stderr));
        }
        rows.push(json!({
            "tube_seed": ts,
            "v": est(&v),
            "acceptance_rate": r.acceptance_rate,
            "zero_speed": r.zero_speed,
        }));
        vs.push(v);
    }
    for (i, a) in vs.iter().enumerate() {
        for b in &vs[i + 1..] {
            let z = a.z_distance(b);
            c.check("speeds agree across tubes", z < c.cfg.expect.sigmas, format!("z = {z:.3}"));
        }
    }
    c.report_billiard_counts(&counts);
    Ok(json!({ "tubes": rows, "invariants": counts }))
}

fn billiard_balance(c: &mut Ctx) -> Result<Value> {
    let p = c.p;
    let lambdas = if c.cfg.lambdas.is_empty() { vec![c.p.billiard.lambda] } else { c.cfg.lambdas.clone() };
    let mut rows = Vec::new();
    let mut counts = InvariantCounts::default();
    for (ts, tube) in &p.tubes {
        for &lambda in &lambdas {
            let params = BilliardParams { lambda, ..c.p.billiard };
            c.billiard_invariants(tube, &params, &mut counts)?;
            for &[b1, b2] in &c.cfg.bands {
                let r = detailed_balance_test(tube, &params, b1, b2, c.cfg.samples as usize, c.seed("balance"))?;
                c.check(
                    format!("detailed balance tube={ts} lambda={lambda} U{b1}/U{b2}"),
                    r.passed(c.cfg.expect.sigmas),
                    format!("z {:.3}, relative difference {:.4}", r.z, r.relative_difference),
                );
                rows.push(json!({ "tube_seed": ts, "lambda": lambda, "report": r }));
            }
        }
    }
    c.report_billiard_counts(&counts);
    Ok(json!({ "pairs": rows }))
}

fn billiard_runs(c: &mut Ctx, tube: &Tube, params: &BilliardParams, counts: &mut InvariantCounts) -> Result<Vec<BilliardRun>> {
    let root = c.root.named("runs");
    let runs: Vec<randmedia::Result<BilliardRun>> = map_replicas(c.replicas(), |i| {
        run_billiard(tube, params, start_point(tube, 0.5), c.cfg.steps as usize, root.child(i as u64).key())
    });
    let runs: Vec<BilliardRun> = runs.into_iter().collect::<randmedia::Result<_>>()?;
    for r in &runs {
        counts.merge(&r.check_invariants(tube));
    }
    Ok(runs)
}

fn chord_fit(c: &mut Ctx, name: &str, samples: &[f64], lo: f64, hi: f64) -> Value {
    let fit = fit_tail_exponent(samples, lo, hi, 8);
    let min = c.cfg.expect.tail_exponent;
    match &fit {
        Some(f) => c.check(name, f.exponent >= min, format!("exponent {:.3} over [{lo}, {hi}], need >= {min}", f.exponent)),
        None => c.check(name, false, format!("too few nonzero tail points over [{lo}, {hi}]")),
    }
    json!(fit.map(|f| json!({ "exponent": f.exponent, "coefficient": f.coefficient, "range": [lo, hi] })))
}

fn billiard_tails(c: &mut Ctx) -> Result<Value> {
    let p = c.p;
    let params = p.billiard;
    let [a, b] = c.cfg.interval.expect("validated interval");
    let start = c.cfg.start.expect("validated start");
    let mut rows = Vec::new();
    let mut counts = InvariantCounts::default();
    for (ts, tube) in &p.tubes {
        let tail = exit_time_tail(tube, &params, a, b, start_point(tube, start), c.cfg.samples as usize, c.seed("exit"))?;
        let ratios = tail.ratios();
        let vacuous = ratios.iter().all(Option::is_none);
        let bound = c.cfg.expect.survival_ratio;
        c.check(
            format!("exit survival ratios tube={ts}"),
            ratios.iter().all(|r| r.is_none_or(|x| x <= bound)),
            format!(
                "survival {:?}{}",
                tail.survival.iter().map(|s| s.value).collect::<Vec<_>>(),
                if vacuous { " (no replica survives one time unit)" } else { "" }
            ),
        );
        let runs = billiard_runs(c, tube, &params, &mut counts)?;
        let chords: Vec<f64> = runs.iter().flat_map(|r| r.proposals.iter().map(|p| p.delta.abs())).collect();
        let fit = chord_fit(c, &format!("chord tail exponent tube={ts}"), &chords, 2.0, 20.0);
        let mut freq = vec![Moments::new(); c.cfg.backtrack_h.len()];
        for r in &runs {
            for (m, (_, e)) in freq.iter_mut().zip(backtrack_stat(r, &c.cfg.backtrack_h, c.cfg.block as usize)?) {
                m.push(e.value);
            }
        }
        let f: Vec<f64> = freq.iter().map(Moments::mean).collect();
        c.check(format!("backtracking nonincreasing in H tube={ts}"), f.windows(2).all(|w| w[1] <= w[0]), format!("{f:?}"));
        let (x, y): (Vec<f64>, Vec<f64>) =
            c.cfg.backtrack_h.iter().zip(&f).filter(|(_, &v)| v > 0.0).map(|(h, v)| (h.sqrt(), v.ln())).unzip();
        let slope = (x.len() >= 2).then(|| linear_fit(&x, &y).0);
        c.check(
            format!("log backtracking vs sqrt(H) slope tube={ts}"),
            slope.is_some_and(|s| s < 0.0),
            format!("slope {slope:?}"),
        );
        rows.push(json!({
            "tube_seed": ts,
            "exit": tail,
            "chord_tail": fit,
            "backtrack": c.cfg.backtrack_h.iter().zip(&f).map(|(h, v)| json!({ "h": h, "frequency": v })).collect::<Vec<_>>(),
            "backtrack_slope": slope,
        }));
    }
    c.report_billiard_counts(&counts);
    Ok(json!({ "tubes": rows }))
}

fn skeleton(c: &mut Ctx) -> Result<Value> {
    let p = c.p;
    let params = p.billiard;
    let mut rows = Vec::new();
    let mut counts = InvariantCounts::default();
    for (ts, tube) in &p.tubes {
        let runs = billiard_runs(c, tube, &params, &mut counts)?;
        let sk_root = c.root.named("skeleton");
        let mut inc: Vec<i64> = Vec::new();
        let mut speeds = Moments::new();
        let mut markov_p = Vec::new();
        let mut spp = Moments::new();
        for (i, r) in runs.iter().enumerate() {
            let sk = extract_skeleton(r, &params, sk_root.child(i as u64).key())?;
            inc.extend(sk.increments());
            speeds.push(sk.speed());
            spp.push(sk.steps_per_point());
            markov_p.push(sk.markov_test().p_value);
        }
        let chords: Vec<f64> = runs.iter().flat_map(|r| r.proposals.iter().map(|p| p.delta.abs())).collect();
        let chord = chord_fit(c, &format!("chord tail exponent tube={ts}"), &chords, 2.0, 20.0);
        let fit = increment_tail_fit(&inc);
        let min = c.cfg.expect.tail_exponent;
        let skel = match &fit {
            Some(f) => {
                let (lo, hi) = (f.thresholds[0], f.thresholds[f.thresholds.len() - 1]);
                c.check(
                    format!("skeleton increment tail exponent tube={ts}"),
                    f.exponent >= min,
                    format!("exponent {:.3} over [{lo}, {hi}], need >= {min}", f.exponent),
                );
                json!({ "exponent": f.exponent, "coefficient": f.coefficient, "range": [lo, hi] })
            }
            None => {
                c.check(format!("skeleton increment tail exponent tube={ts}"), false, "too few nonzero tail points");
                Value::Null
            }
        };
        let lln = run_lln(tube, &params, c.steps(), c.replicas(), c.seed("lln"))?;
        counts.merge(&lln.counts);
        let sv = speeds.estimate();
        let z = sv.z_distance(&lln.v);
        c.check(
            format!("skeleton speed vs LLN speed tube={ts}"),
            z < c.cfg.expect.sigmas,
            format!("skeleton {:.5} ± {:.5}, LLN {:.5} ± {:.5}, z {z:.3}", sv.value, sv.stderr, lln.v.value, lln.v.stderr),
        );
        rows.push(json!({
            "tube_seed": ts,
            "chord_tail": chord,
            "increment_tail": skel,
            "skeleton_speed": est(&sv),
            "lln_speed": est(&lln.v),
            "steps_per_point": spp.mean(),
            "markov_test_p_values": markov_p,
        }));
    }
    c.report_billiard_counts(&counts);
    Ok(json!({ "tubes": rows }))
}

fn oracle_check(c: &mut Ctx) -> Result<Value> {
    if c.p.env.is_none() {
        return cosine_check(c);
    }
    let rho = c.p.rho.first().copied().unwrap_or(TruncationLevel::Infinite);
    let (x0, z, window) = (c.cfg.x0, c.cfg.z, c.cfg.window);
    let bracket = solve_exact_hit_at(c.env(), rho, z, window, x0)?;
    let n = c.cfg.samples;
    let root = c.root.named("hits");
    let env = c.env();
    let hits: Vec<randmedia::Result<bool>> =
        map_replicas(n as usize, |i| Ok(hit(env, rho, x0, z, root.child(i as u64).key(), randmedia::walk::DEFAULT_STEP_CAP as u64)?.exact));
    let k = hits.into_iter().collect::<randmedia::Result<Vec<bool>>>()?.into_iter().filter(|&b| b).count() as u64;
    let p = Estimate::proportion(k, n);
    let dist = (bracket.lower - p.value).max(p.value - bracket.upper).max(0.0);
    c.check(
        "exact-hit frequency within bracket",
        dist <= c.cfg.expect.sigmas * p.stderr,
        format!("MC {:.5} ± {:.5}, bracket [{:.8}, {:.8}]", p.value, p.stderr, bracket.lower, bracket.upper),
    );
    c.check(
        "bracket width",
        bracket.width() < c.cfg.expect.bracket_width,
        format!("width {:.2e} at window {window}", bracket.width()),
    );
    let mut out = json!({ "rho": rho, "bracket": bracket, "mc": est(&p) });
    if is_periodic(c.env()) {
        let exact = periodic_speed(c.env(), rho)?;
        let d = speed_direct(c.env(), rho, c.steps(), c.replicas(), c.seed("speed"))?;
        let rel = (d.v.value - exact).abs() / exact.abs();
        c.check("periodic speed vs oracle", rel < c.cfg.expect.rel_tol, format!("MC {:.5}, oracle {exact:.6}, rel {rel:.4}", d.v.value));
        out["speed"] = json!({ "mc": est(&d.v), "oracle": exact });
    }
    c.walk_invariants()?;
    Ok(out)
}

fn cosine_check(c: &mut Ctx) -> Result<Value> {
    let n = Vec3::new(0.3, -0.4, 0.8).normalized();
    let mut rng = c.root.named("cosine").rng();
    let t: Vec<f64> = (0..c.cfg.samples).map(|_| sample_cosine(n, &mut rng).dot(n)).collect();
    let ks = ks_distance(&t, |x| (x * x).clamp(0.0, 1.0));
    let mean = t.iter().copied().collect::<Moments>().mean();
    c.check("cosine law KS distance", ks < 0.01, format!("KS {ks:.5} against t^2"));
    c.check("cosine law mean", (mean - 2.0 / 3.0).abs() <= 0.005, format!("mean w.n {mean:.5}, expected 2/3"));
    Ok(json!({ "samples": c.cfg.samples, "ks": ks, "mean": mean }))
}
