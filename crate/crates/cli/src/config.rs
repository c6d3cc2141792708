//! Experiment configuration (TOML) and its validation.

use std::fmt;
use std::path::PathBuf;

use randmedia::billiard::BilliardParams;
use randmedia::env::{build_environment, EnvSpec, Environment, TruncationLevel};
use randmedia::regen::Descriptor;
use randmedia::tube::{build_tube, Tube, TubeSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "rwre_speed")]
    RwreSpeed,
    #[serde(rename = "rwre_regen")]
    RwreRegen,
    #[serde(rename = "rwre_Q")]
    RwreQ,
    #[serde(rename = "billiard_lln")]
    BilliardLln,
    #[serde(rename = "billiard_balance")]
    BilliardBalance,
    #[serde(rename = "billiard_tails")]
    BilliardTails,
    #[serde(rename = "skeleton")]
    Skeleton,
    #[serde(rename = "oracle_check")]
    OracleCheck,
}

impl Kind {
    fn needs_environment(self) -> bool {
        matches!(self, Kind::RwreSpeed | Kind::RwreRegen | Kind::RwreQ)
    }

    fn needs_tube(self) -> bool {
        matches!(self, Kind::BilliardLln | Kind::BilliardBalance | Kind::BilliardTails | Kind::Skeleton)
    }
}

/// Truncation level as written in a config: an integer or `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoEntry {
    Int(i64),
    Str(String),
}

/// Thresholds for the diagnostics; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expect {
    /// Expected speed, checked to within `v_tol` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    pub v_tol: f64,
    /// Relative tolerance between two estimators of one quantity.
    pub rel_tol: f64,
    /// Total-variation tolerance between occupation measures.
    pub tv: f64,
    /// Largest relative change of a Radon-Nikodym ratio between truncation levels.
    pub rn_change: f64,
    /// Largest ratio of `E T / ρ` across truncation levels.
    pub scaling_ratio: f64,
    /// Largest `|v̂_ρ - v̂_max|` at the last level below the largest.
    pub gap: f64,
    pub sigmas: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_stderr: Option<f64>,
    pub survival_ratio: f64,
    pub tail_exponent: f64,
    pub bracket_width: f64,
}

impl Default for Expect {
    fn default() -> Self {
        Expect {
            v: None,
            v_tol: 0.005,
            rel_tol: 0.02,
            tv: 0.02,
            rn_change: 0.1,
            scaling_ratio: 4.0,
            gap: 0.01,
            sigmas: 3.0,
            max_stderr: None,
            survival_ratio: 0.9,
            tail_exponent: 1.8,
            bracket_width: 1e-6,
        }
    }
}

macro_rules! defaults {
    ($($name:ident: $t:ty = $v:expr;)*) => {
        $(fn $name() -> $t { $v })*
    };
}

defaults! {
    d_replicas: u64 = 16;
    d_steps: u64 = 100_000;
    d_cycles: u64 = 1_000;
    d_samples: u64 = 100_000;
    d_r_replicas: u64 = 20_000;
    d_levels: u64 = 6;
    d_x0: i64 = -1;
    d_window: i64 = 40;
    d_block: u64 = 10_000;
    d_depth: u64 = 5;
    d_step_cap: u64 = 10_000_000;
    d_h: Vec<f64> = vec![0.0, 1.0, 2.0, 4.0, 8.0];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Master seed; required.
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvSpec>,
    /// Seed of the environment; the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<TubeSpec>,
    /// Tube realizations; the master seed alone when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tube_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<RhoEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub billiard: Option<BilliardParams>,
    /// Drift values for `billiard_balance`; `billiard.lambda` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<f64>,
    #[serde(default = "d_replicas")]
    pub replicas: u64,
    #[serde(default = "d_steps")]
    pub steps: u64,
    /// Regeneration cycles per replica.
    #[serde(default = "d_cycles")]
    pub cycles: u64,
    /// Independent starts or hits for one-shot estimators.
    #[serde(default = "d_samples")]
    pub samples: u64,
    /// Replicas for the exact-hit profile that sets `ε₁`.
    #[serde(default = "d_r_replicas")]
    pub r_replicas: u64,
    /// Ladder levels scanned for `ε₁`.
    #[serde(default = "d_levels")]
    pub levels: u64,
    /// Half-width of the local environment descriptor.
    #[serde(default)]
    pub half_width: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    /// Axial coordinate of the start point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default = "d_x0")]
    pub x0: i64,
    #[serde(default)]
    pub z: i64,
    #[serde(default = "d_window")]
    pub window: i64,
    #[serde(default = "d_h")]
    pub backtrack_h: Vec<f64>,
    #[serde(default = "d_block")]
    pub block: u64,
    /// Run the condition D guard before the experiment.
    #[serde(default)]
    pub condition_d: bool,
    #[serde(default = "d_depth")]
    pub condition_d_depth: u64,
    /// Step cap per replica of the condition D guard.
    #[serde(default = "d_step_cap")]
    pub step_cap: u64,
    /// Also write CSV series next to the report.
    #[serde(default)]
    pub series: bool,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// One offending field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn issue(field: impl Into<String>, message: impl Into<String>) -> Issue {
    Issue { field: field.into(), message: message.into() }
}

/// Parses TOML; parse errors carry line and column.
pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

/// Everything a run needs, built from a validated config.
pub struct Prepared {
    pub seed: u64,
    pub rho: Vec<TruncationLevel>,
    pub env: Option<Environment>,
    pub tubes: Vec<(u64, Tube)>,
    pub billiard: BilliardParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Vec<Issue> {
        match self.prepare() {
            Ok(_) => Vec::new(),
            Err(issues) => issues,
        }
    }

    pub fn prepare(&self) -> Result<Prepared, Vec<Issue>> {
        let mut out = Vec::new();
        let seed = self.seed.unwrap_or_else(|| {
            out.push(issue("seed", "missing; every experiment needs an explicit master seed"));
            0
        });
        for (name, v) in [
            ("replicas", self.replicas),
            ("steps", self.steps),
            ("cycles", self.cycles),
            ("samples", self.samples),
            ("r_replicas", self.r_replicas),
            ("levels", self.levels),
            ("block", self.block),
            ("condition_d_depth", self.condition_d_depth),
            ("step_cap", self.step_cap),
        ] {
            if v == 0 {
                out.push(issue(name, "must be positive"));
            }
        }
        let rho = self.check_rho(&mut out);
        let env = self.check_environment(seed, &mut out);
        let tubes = self.check_tubes(seed, &mut out);
        let billiard = self.check_billiard(&mut out);
        self.check_kind_fields(&rho, env.as_ref(), &mut out);
        if out.is_empty() {
            Ok(Prepared { seed, rho, env, tubes, billiard })
        } else {
            Err(out)
        }
    }

    fn check_rho(&self, out: &mut Vec<Issue>) -> Vec<TruncationLevel> {
        let mut rho = Vec::new();
        for (i, r) in self.rho.iter().enumerate() {
            let field = format!("rho[{i}]");
            match r {
                RhoEntry::Int(v) if (2..=u32::MAX as i64).contains(v) => rho.push(TruncationLevel::Finite(*v as u32)),
                RhoEntry::Int(v) => out.push(issue(field, format!("truncation level {v} must be at least 2"))),
                RhoEntry::Str(s) if s == "inf" => rho.push(TruncationLevel::Infinite),
                RhoEntry::Str(s) => out.push(issue(field, format!("expected an integer >= 2 or \"inf\", got {s:?}"))),
            }
        }
        if rho.windows(2).any(|w| w[0] >= w[1]) {
            out.push(issue("rho", "levels must be strictly increasing"));
        }
        if rho.is_empty() && self.kind.needs_environment() {
            if self.kind == Kind::RwreSpeed {
                rho.push(TruncationLevel::Infinite);
            } else {
                out.push(issue("rho", "at least one finite truncation level is required"));
            }
        }
        if matches!(self.kind, Kind::RwreRegen | Kind::RwreQ) && rho.contains(&TruncationLevel::Infinite) {
            out.push(issue("rho", "regeneration needs finite truncation levels"));
        }
        rho
    }

    fn check_environment(&self, seed: u64, out: &mut Vec<Issue>) -> Option<Environment> {
        match &self.environment {
            None if self.kind.needs_environment() => {
                out.push(issue("environment", format!("required for kind {:?}", self.kind)));
                None
            }
            None => None,
            Some(spec) => match build_environment(spec, self.environment_seed.unwrap_or(seed)) {
                Ok(env) => Some(env),
                Err(e) => {
                    out.push(issue("environment", e.to_string()));
                    None
                }
            },
        }
    }

    fn check_tubes(&self, seed: u64, out: &mut Vec<Issue>) -> Vec<(u64, Tube)> {
        let Some(spec) = &self.tube else {
            if self.kind.needs_tube() {
                out.push(issue("tube", format!("required for kind {:?}", self.kind)));
            }
            if !self.tube_seeds.is_empty() {
                out.push(issue("tube_seeds", "given without a tube"));
            }
            return Vec::new();
        };
        let seeds = if self.tube_seeds.is_empty() { vec![seed] } else { self.tube_seeds.clone() };
        let mut tubes = Vec::new();
        for s in seeds {
            match build_tube(spec, s) {
                Ok(t) => tubes.push((s, t)),
                Err(e) => {
                    out.push(issue("tube", e.to_string()));
                    break;
                }
            }
        }
        tubes
    }

    fn check_billiard(&self, out: &mut Vec<Issue>) -> BilliardParams {
        let params = self.billiard.unwrap_or(BilliardParams::new(1.0));
        if self.billiard.is_none() && self.kind.needs_tube() {
            out.push(issue("billiard", format!("required for kind {:?}", self.kind)));
        }
        if let Err(e) = params.validate() {
            out.push(issue("billiard", e.to_string()));
        }
        for (i, &l) in self.lambdas.iter().enumerate() {
            if !(l >= 0.0 && l.is_finite()) {
                out.push(issue(format!("lambdas[{i}]"), format!("{l} must be finite and >= 0")));
            }
        }
        params
    }

    fn check_kind_fields(&self, rho: &[TruncationLevel], env: Option<&Environment>, out: &mut Vec<Issue>) {
        match self.kind {
            Kind::RwreQ => {
                if let Some(env) = env {
                    if Descriptor::for_env(env, self.half_width as usize).is_none() {
                        out.push(issue("half_width", "environment has no finite local descriptor of this width"));
                    }
                }
            }
            Kind::BilliardBalance => {
                if self.bands.is_empty() {
                    out.push(issue("bands", "at least one band pair is required"));
                }
            }
            Kind::BilliardTails => {
                match self.interval {
                    Some([a, b]) if b - a >= 1.0 => {
                        if let Some(s) = self.start {
                            if !(a..=b).contains(&s) {
                                out.push(issue("start", format!("{s} lies outside the interval [{a}, {b}]")));
                            }
                        }
                    }
                    Some(_) => out.push(issue("interval", "need b - a >= 1")),
                    None => out.push(issue("interval", "required for kind billiard_tails")),
                }
                if self.start.is_none() {
                    out.push(issue("start", "required for kind billiard_tails"));
                }
            }
            Kind::OracleCheck => match (&self.environment, &self.tube) {
                (None, None) => out.push(issue("environment", "oracle_check needs an environment or a tube")),
                (Some(_), Some(_)) => out.push(issue("tube", "oracle_check takes either an environment or a tube")),
                (Some(_), None) => {
                    if rho.len() > 1 {
                        out.push(issue("rho", "oracle_check takes at most one truncation level"));
                    }
                    if self.window < 1 {
                        out.push(issue("window", "must be positive"));
                    }
                }
                _ => {}
            },
            _ => {}
        }
        if self.kind != Kind::BilliardBalance && !self.bands.is_empty() {
            out.push(issue("bands", "only used by billiard_balance"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "rwre_speed"
seed = 7
rho = [4, "inf"]

[environment]
driver = "iid"
laws = [{ offsets = [1, -1], probs = [0.6, 0.4] }]
"#;

    fn fields(text: &str) -> Vec<String> {
        parse(text).unwrap().validate().into_iter().map(|i| i.field).collect()
    }

    #[test]
    fn valid_config_has_no_issues() {
        assert!(fields(BASE).is_empty());
    }

    #[test]
    fn missing_seed_is_named() {
        assert_eq!(fields(&BASE.replace("seed = 7\n", "")), vec!["seed"]);
    }

    #[test]
    fn small_rho_is_named() {
        assert_eq!(fields(&BASE.replace("[4, \"inf\"]", "[1, \"inf\"]")), vec!["rho[0]"]);
    }

    #[test]
    fn zero_counts_are_named() {
        let f = fields(&format!("replicas = 0\nsteps = 0\n{BASE}"));
        assert_eq!(f, vec!["replicas", "steps"]);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = parse("kind = \"rwre_speed\"\nseed = \"x\"\n").unwrap_err();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse(&format!("bogus = 1\n{BASE}")).unwrap_err().contains("bogus"));
    }

    #[test]
    fn kind_requirements() {
        let f = fields("kind = \"billiard_balance\"\nseed = 1\n");
        assert_eq!(f, vec!["tube", "billiard", "bands"]);
        let f = fields("kind = \"rwre_regen\"\nseed = 1\nrho = [\"inf\"]\n[environment]\ndriver = \"iid\"\nlaws = [{ offsets = [1], probs = [1.0] }]\n");
        assert_eq!(f, vec!["rho"]);
    }
}
