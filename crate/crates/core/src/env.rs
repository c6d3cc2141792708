//! One-dimensional random environments `ω = (ω_{xy})`.
//!
//! An [`Environment`] assigns to every site `x ∈ ℤ` a [`JumpLaw`] (the law of
//! the jump `y` made from `x`). Site laws are produced by a seeded stationary
//! driver and are a pure function of `(driver, seed, site)`.

use std::borrow::Cow;
use std::fmt;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::line::{LineProcess, LineView, StateLine};
use crate::seed::hash_uniform;

/// Default simulation cutoff `W_J` for unbounded jump laws.
pub const DEFAULT_MAX_JUMP: u32 = 64;
const SUM_TOL: f64 = 1e-12;
const TAIL_TOL: f64 = 1e-12;

fn default_max_jump() -> u32 {
    DEFAULT_MAX_JUMP
}

/// Truncation level `ρ ≥ 2`, or `∞` (no truncation beyond the `W_J` cutoff).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TruncationLevel {
    Finite(u32),
    Infinite,
}

impl TruncationLevel {
    pub fn finite(rho: u32) -> Result<Self> {
        if rho < 2 {
            return Err(Error::InvalidParameter(format!("truncation level rho = {rho} must be at least 2")));
        }
        Ok(TruncationLevel::Finite(rho))
    }

    /// Whether a proposed jump `y` survives truncation (`|y| < ρ`).
    #[inline]
    pub fn admits(&self, y: i64) -> bool {
        match *self {
            TruncationLevel::Finite(r) => y.unsigned_abs() < r as u64,
            TruncationLevel::Infinite => true,
        }
    }

    pub fn value(&self) -> Option<u32> {
        match *self {
            TruncationLevel::Finite(r) => Some(r),
            TruncationLevel::Infinite => None,
        }
    }

    /// Finite stand-in: `ρ` itself, or `max_jump + 1` for `∞`.
    pub fn effective(&self, max_jump: u32) -> i64 {
        match *self {
            TruncationLevel::Finite(r) => r as i64,
            TruncationLevel::Infinite => max_jump as i64 + 1,
        }
    }
}

impl fmt::Display for TruncationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationLevel::Finite(r) => write!(f, "{r}"),
            TruncationLevel::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for TruncationLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TruncationLevel::Finite(r) => s.serialize_u32(*r),
            TruncationLevel::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for TruncationLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(r) if (2..=u32::MAX as i64).contains(&r) => Ok(TruncationLevel::Finite(r as u32)),
            Raw::Int(r) => Err(de::Error::custom(format!("rho = {r} must be at least 2"))),
            Raw::Str(s) if matches!(s.as_str(), "inf" | "infinity" | "∞") => Ok(TruncationLevel::Infinite),
            Raw::Str(s) => Err(de::Error::custom(format!("rho must be an integer >= 2 or \"inf\", got {s:?}"))),
        }
    }
}

/// Law of the jump from one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJumpLaw")]
pub struct JumpLaw {
    offsets: Vec<i64>,
    probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_coeff: Option<f64>,
    max_jump: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawJumpLaw {
    Explicit {
        offsets: Vec<i64>,
        probs: Vec<f64>,
        #[serde(default)]
        tail_exponent: Option<f64>,
        #[serde(default)]
        tail_coeff: Option<f64>,
        #[serde(default = "default_max_jump")]
        max_jump: u32,
    },
    PowerTail {
        power_tail: PowerTailSpec,
    },
}

/// Shorthand for [`JumpLaw::power_tail`].
#[derive(Deserialize)]
struct PowerTailSpec {
    back: f64,
    alpha: f64,
    max_jump: u32,
}

impl TryFrom<RawJumpLaw> for JumpLaw {
    type Error = Error;
    fn try_from(r: RawJumpLaw) -> Result<Self> {
        match r {
            RawJumpLaw::PowerTail { power_tail: p } => JumpLaw::power_tail(p.back, p.alpha, p.max_jump),
            RawJumpLaw::Explicit { offsets, probs, tail_exponent, tail_coeff, max_jump } => {
                let law = JumpLaw::new(offsets, probs)?.with_max_jump(max_jump)?;
                match (tail_exponent, tail_coeff) {
                    (None, None) => Ok(law),
                    (Some(a), Some(g)) => law.with_tail(g, a),
                    _ => Err(Error::InvalidLaw("tail_exponent and tail_coeff must be given together".into())),
                }
            }
        }
    }
}

impl JumpLaw {
    /// Builds a law from explicit offsets and probabilities.
    pub fn new(offsets: Vec<i64>, probs: Vec<f64>) -> Result<Self> {
        if offsets.len() != probs.len() {
            return Err(Error::InvalidLaw(format!("{} offsets but {} probabilities", offsets.len(), probs.len())));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidLaw("no offsets".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidLaw(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}")));
        }
        let mut sorted = offsets.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidLaw("duplicate offset".into()));
        }
        let reach = offsets.iter().map(|y| y.unsigned_abs()).max().unwrap_or(0) as u32;
        Ok(JumpLaw { offsets, probs, tail_exponent: None, tail_coeff: None, max_jump: reach.max(DEFAULT_MAX_JUMP) })
    }

    /// Builds a law from `(offset, probability)` pairs.
    pub fn from_pairs(pairs: &[(i64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    /// Nearest-neighbour law `{+1: p, -1: 1-p}`.
    pub fn nearest_neighbor(p: f64) -> Result<Self> {
        Self::from_pairs(&[(1, p), (-1, 1.0 - p)])
    }

    /// Mass `back` at `-1`; the rest on `1..=max_jump` with weights
    /// `y^-(1+alpha)`. The declared tail coefficient is the smallest `γ₁`
    /// with `tail(s) <= γ₁ s^-alpha` for all `s`.
    pub fn power_tail(back: f64, alpha: f64, max_jump: u32) -> Result<Self> {
        if !(0.0..1.0).contains(&back) || alpha <= 1.0 || max_jump == 0 {
            return Err(Error::InvalidLaw("power_tail needs back in [0,1), alpha > 1, max_jump >= 1".into()));
        }
        let w: Vec<f64> = (1..=max_jump).map(|y| (y as f64).powf(-(1.0 + alpha))).collect();
        let z: f64 = w.iter().sum();
        let mut pairs: Vec<(i64, f64)> = vec![(-1, back)];
        pairs.extend(w.iter().enumerate().map(|(i, wi)| (i as i64 + 1, (1.0 - back) * wi / z)));
        let law = Self::from_pairs(&pairs)?.with_max_jump(max_jump.max(1))?;
        let gamma1 = (1..=max_jump).map(|s| law.tail_mass(s) * (s as f64).powf(alpha)).fold(0.0, f64::max);
        law.with_tail(gamma1, alpha)
    }

    /// Sets the simulation cutoff `W_J`; every offset must lie within it.
    pub fn with_max_jump(mut self, max_jump: u32) -> Result<Self> {
        if let Some(y) = self.offsets.iter().find(|y| y.unsigned_abs() > max_jump as u64) {
            return Err(Error::InvalidLaw(format!("offset {y} exceeds max_jump {max_jump}")));
        }
        self.max_jump = max_jump;
        Ok(self)
    }

    /// Declares a power tail `Σ_{|y|>=s} ω_y <= γ₁ s^-α` and checks it.
    pub fn with_tail(mut self, gamma1: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !(gamma1 > 0.0) {
            return Err(Error::InvalidLaw(format!("tail needs alpha > 1 and gamma1 > 0, got ({alpha}, {gamma1})")));
        }
        if let Some(s) = self.tail_violations(gamma1, alpha).first() {
            return Err(Error::InvalidLaw(format!("declared tail ({gamma1}, {alpha}) violated at s = {s}")));
        }
        self.tail_exponent = Some(alpha);
        self.tail_coeff = Some(gamma1);
        Ok(self)
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_jump(&self) -> u32 {
        self.max_jump
    }

    pub fn tail(&self) -> Option<(f64, f64)> {
        self.tail_coeff.zip(self.tail_exponent)
    }

    pub fn prob(&self, y: i64) -> f64 {
        self.offsets.iter().position(|&o| o == y).map_or(0.0, |i| self.probs[i])
    }

    /// `Σ_{|y| >= s} ω_y`.
    pub fn tail_mass(&self, s: u32) -> f64 {
        self.offsets
            .iter()
            .zip(&self.probs)
            .filter(|(y, _)| y.unsigned_abs() >= s as u64)
            .map(|(_, p)| p)
            .sum()
    }

    /// Values of `s` in `1..=max_jump` where the tail bound fails.
    pub fn tail_violations(&self, gamma1: f64, alpha: f64) -> Vec<u32> {
        (1..=self.max_jump)
            .filter(|&s| {
                let bound = gamma1 * (s as f64).powf(-alpha);
                self.tail_mass(s) > bound * (1.0 + TAIL_TOL) + f64::EPSILON
            })
            .collect()
    }

    /// Mean jump after truncation at `rho`.
    pub fn mean(&self, rho: TruncationLevel) -> f64 {
        self.offsets
            .iter()
            .zip(&self.probs)
            .filter(|(y, _)| rho.admits(**y))
            .map(|(y, p)| *y as f64 * p)
            .sum()
    }

    pub fn reach(&self) -> u32 {
        self.offsets.iter().map(|y| y.unsigned_abs()).max().unwrap_or(0) as u32
    }
}

/// The truncated law `ω^ρ`: mass of jumps with `|y| >= ρ` is moved to `0`.
///
/// The relative order of surviving offsets is preserved and `0` is appended
/// when absent, and the holding mass is computed as `1 - Σ kept`, so that
/// truncations nest bit-exactly.
pub fn truncate(law: &JumpLaw, rho: TruncationLevel) -> JumpLaw {
    if law.offsets.iter().all(|&y| rho.admits(y)) {
        return law.clone();
    }
    let mut offsets = Vec::with_capacity(law.offsets.len());
    let mut probs = Vec::with_capacity(law.offsets.len());
    let mut zero_at = None;
    for (&y, &p) in law.offsets.iter().zip(&law.probs) {
        if y == 0 {
            zero_at = Some(offsets.len());
            offsets.push(0);
            probs.push(0.0);
        } else if rho.admits(y) {
            offsets.push(y);
            probs.push(p);
        }
    }
    let zero_at = zero_at.unwrap_or_else(|| {
        offsets.push(0);
        probs.push(0.0);
        offsets.len() - 1
    });
    let kept: f64 = probs.iter().sum();
    probs[zero_at] = (1.0 - kept).max(0.0);
    JumpLaw { offsets, probs, ..law.clone() }
}

/// Declared Condition C parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub gamma1: f64,
    pub alpha: f64,
}

/// Stationary driver of the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "driver", rename_all = "snake_case")]
pub enum DriverSpec {
    /// Site laws i.i.d. from a finite list (uniform weights when omitted).
    Iid {
        laws: Vec<JumpLaw>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        weights: Vec<f64>,
    },
    /// Nearest-neighbour laws `{+1: p, -1: 1-p}` with `p ~ U[p_lo, p_hi]`
    /// i.i.d. over sites (a continuous environment).
    IidBias { p_lo: f64, p_hi: f64 },
    /// Laws modulated by a stationary finite Markov chain along ℤ.
    Markov { transition: Vec<Vec<f64>>, laws: Vec<JumpLaw> },
    /// Site `x` carries `laws[(x + phase) mod p]`.
    Periodic {
        laws: Vec<JumpLaw>,
        #[serde(default)]
        phase: usize,
    },
}

/// Driver plus the conditions the environment claims to satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub driver: DriverSpec,
    /// Declared `ε̃` of Condition E.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_e: Option<f64>,
    /// Declared `(γ₁, α)` of Condition C.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_c: Option<TailBound>,
}

impl EnvSpec {
    pub fn new(driver: DriverSpec) -> Self {
        EnvSpec { driver, condition_e: None, condition_c: None }
    }

    pub fn iid(law: JumpLaw) -> Self {
        Self::new(DriverSpec::Iid { laws: vec![law], weights: vec![] })
    }

    pub fn periodic(laws: Vec<JumpLaw>) -> Self {
        Self::new(DriverSpec::Periodic { laws, phase: 0 })
    }

    pub fn markov(transition: Vec<Vec<f64>>, laws: Vec<JumpLaw>) -> Self {
        Self::new(DriverSpec::Markov { transition, laws })
    }
}

#[derive(Clone, Debug)]
enum Sites {
    Finite { line: StateLine, laws: Vec<JumpLaw>, tables: Vec<AliasTable> },
    Bias { lo: f64, hi: f64 },
}

/// A seeded environment realization.
#[derive(Clone, Debug)]
pub struct Environment {
    spec: EnvSpec,
    seed: u64,
    sites: Sites,
    max_jump: u32,
}

/// Builds the environment for `spec` and `seed`, validating the driver and
/// every declared condition.
pub fn build_environment(spec: &EnvSpec, seed: u64) -> Result<Environment> {
    Environment::new(spec.clone(), seed)
}

impl Environment {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        let (process, laws) = match &spec.driver {
            DriverSpec::Iid { laws, weights } => {
                let w = if weights.is_empty() { vec![1.0; laws.len()] } else { weights.clone() };
                if w.len() != laws.len() {
                    return Err(Error::InvalidParameter(format!("{} laws but {} weights", laws.len(), w.len())));
                }
                (Some(LineProcess::iid(w)?), laws.clone())
            }
            DriverSpec::IidBias { p_lo, p_hi } => {
                if !(0.0 <= *p_lo && p_lo <= p_hi && *p_hi <= 1.0) {
                    return Err(Error::InvalidParameter(format!("need 0 <= p_lo <= p_hi <= 1, got [{p_lo}, {p_hi}]")));
                }
                (None, vec![])
            }
            DriverSpec::Markov { transition, laws } => {
                if transition.len() != laws.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{} driver states but {} laws",
                        transition.len(),
                        laws.len()
                    )));
                }
                (Some(LineProcess::markov(transition.clone())?), laws.clone())
            }
            DriverSpec::Periodic { laws, phase } => (Some(LineProcess::periodic(laws.len(), *phase)?), laws.clone()),
        };
        if process.is_some() && laws.is_empty() {
            return Err(Error::InvalidParameter("driver has no laws".into()));
        }
        if let Some(eps) = spec.condition_e {
            let min_plus_one = match &spec.driver {
                DriverSpec::IidBias { p_lo, .. } => *p_lo,
                _ => laws.iter().map(|l| l.prob(1)).fold(f64::INFINITY, f64::min),
            };
            if min_plus_one < eps {
                return Err(Error::ConditionViolated {
                    condition: "E",
                    detail: format!("some law has P[+1] = {min_plus_one} < {eps}"),
                });
            }
        }
        if let Some(TailBound { gamma1, alpha }) = spec.condition_c {
            for (i, law) in laws.iter().enumerate() {
                if let Some(s) = law.tail_violations(gamma1, alpha).first() {
                    return Err(Error::ConditionViolated {
                        condition: "C",
                        detail: format!("law {i} has tail mass {} > {gamma1}·{s}^-{alpha}", law.tail_mass(*s)),
                    });
                }
            }
        }
        let max_jump = laws.iter().map(|l| l.max_jump()).max().unwrap_or(1);
        let sites = match process {
            Some(p) => Sites::Finite {
                line: StateLine::new(p, seed),
                tables: laws.iter().map(|l| AliasTable::new(l.probs())).collect(),
                laws,
            },
            None => match spec.driver {
                DriverSpec::IidBias { p_lo, p_hi } => Sites::Bias { lo: p_lo, hi: p_hi },
                _ => unreachable!(),
            },
        };
        Ok(Environment { spec, seed, sites, max_jump })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Largest `W_J` over the driver's laws.
    pub fn max_jump(&self) -> u32 {
        self.max_jump
    }

    /// Largest `|y|` with positive mass over all site laws.
    pub fn reach(&self) -> u32 {
        match &self.sites {
            Sites::Finite { laws, .. } => laws.iter().map(|l| l.reach()).max().unwrap_or(0),
            Sites::Bias { .. } => 1,
        }
    }

    /// Longest admissible rightward jump under truncation at `rho`, over
    /// all site laws.
    pub fn max_up_jump(&self, rho: TruncationLevel) -> i64 {
        match &self.sites {
            Sites::Finite { laws, .. } => laws
                .iter()
                .flat_map(|l| l.offsets().iter().zip(l.probs()))
                .filter(|(&y, &p)| p > 0.0 && y > 0 && rho.admits(y))
                .map(|(&y, _)| y)
                .max()
                .unwrap_or(0),
            Sites::Bias { .. } => 1,
        }
    }

    /// The law at `site`.
    pub fn law_at(&self, site: i64) -> Cow<'_, JumpLaw> {
        match &self.sites {
            Sites::Finite { line, laws, .. } => Cow::Borrowed(&laws[line.state(site)]),
            Sites::Bias { lo, hi } => {
                let p = lo + (hi - lo) * hash_uniform(self.seed, site);
                Cow::Owned(JumpLaw::nearest_neighbor(p).expect("p in [0,1]"))
            }
        }
    }

    /// Driver state at `site`, when the driver has finitely many states.
    pub fn state_at(&self, site: i64) -> Option<usize> {
        match &self.sites {
            Sites::Finite { line, .. } => Some(line.state(site)),
            Sites::Bias { .. } => None,
        }
    }

    pub fn n_states(&self) -> Option<usize> {
        match &self.sites {
            Sites::Finite { laws, .. } => Some(laws.len()),
            Sites::Bias { .. } => None,
        }
    }

    /// Law attached to driver state `s`.
    pub fn state_law(&self, s: usize) -> Option<&JumpLaw> {
        match &self.sites {
            Sites::Finite { laws, .. } => laws.get(s),
            Sites::Bias { .. } => None,
        }
    }

    pub fn process(&self) -> Option<&LineProcess> {
        match &self.sites {
            Sites::Finite { line, .. } => Some(line.process()),
            Sites::Bias { .. } => None,
        }
    }

    /// Stationary law of the local descriptor `(s_{x-w}, .., s_{x+w})`.
    pub fn descriptor_marginal(&self, half_width: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        self.process().map(|p| p.window_marginal(half_width)).ok_or_else(|| {
            Error::UnsupportedDescriptor("continuous i.i.d. environment has no finite descriptor".into())
        })
    }

    /// Read handle for hot loops.
    pub fn view(&self) -> EnvView<'_> {
        match &self.sites {
            Sites::Finite { line, tables, .. } => EnvView {
                env: self,
                line: Some(line.view()),
                single: tables.len() == 1,
            },
            Sites::Bias { .. } => EnvView { env: self, line: None, single: false },
        }
    }
}

/// Per-walker read handle over an [`Environment`].
#[derive(Debug)]
pub struct EnvView<'a> {
    env: &'a Environment,
    line: Option<LineView<'a>>,
    single: bool,
}

impl<'a> EnvView<'a> {
    pub fn env(&self) -> &'a Environment {
        self.env
    }

    #[inline]
    pub fn state(&mut self, site: i64) -> Option<usize> {
        if self.single {
            return Some(0);
        }
        self.line.as_mut().map(|l| l.state(site))
    }

    /// Draws an (untruncated) jump `Y ~ ω_{site,·}`.
    #[inline]
    pub fn sample_jump<R: Rng + ?Sized>(&mut self, site: i64, rng: &mut R) -> i64 {
        match &self.env.sites {
            Sites::Finite { laws, tables, .. } => {
                let s = if self.single { 0 } else { self.line.as_mut().unwrap().state(site) };
                laws[s].offsets[tables[s].sample(rng)]
            }
            Sites::Bias { lo, hi } => {
                let p = lo + (hi - lo) * hash_uniform(self.env.seed, site);
                if rng.random::<f64>() < p {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

/// Result of scanning a window of sites for Condition E.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEReport {
    pub epsilon: f64,
    pub scanned: usize,
    /// Sites with `ω_{x,1} < ε̃`.
    pub failures: Vec<i64>,
}

impl ConditionEReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn check_condition_e(env: &Environment, epsilon: f64, sites: RangeInclusive<i64>) -> ConditionEReport {
    let scanned = sites.clone().count();
    let failures = sites.filter(|&x| env.law_at(x).prob(1) < epsilon).collect();
    ConditionEReport { epsilon, scanned, failures }
}

/// Result of scanning a window of sites for Condition C.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCReport {
    pub gamma1: f64,
    pub alpha: f64,
    /// `(site, s)` pairs with `Σ_{|y|>=s} ω_{xy} > γ₁ s^-α`.
    pub failures: Vec<(i64, u32)>,
}

impl ConditionCReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn check_condition_c(env: &Environment, gamma1: f64, alpha: f64, sites: RangeInclusive<i64>) -> Result<ConditionCReport> {
    if !(alpha > 1.0) || !(gamma1 > 0.0) {
        return Err(Error::InvalidParameter(format!("need alpha > 1 and gamma1 > 0, got ({alpha}, {gamma1})")));
    }
    let failures = sites
        .flat_map(|x| {
            let law = env.law_at(x);
            law.tail_violations(gamma1, alpha).into_iter().map(move |s| (x, s)).collect::<Vec<_>>()
        })
        .collect();
    Ok(ConditionCReport { gamma1, alpha, failures })
}
