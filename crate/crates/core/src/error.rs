use thiserror::Error;

/// Errors raised by the simulation and oracle layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid jump law: {0}")]
    InvalidLaw(String),

    #[error("driving chain is not irreducible: {0}")]
    Reducible(String),

    #[error("declared condition {condition} violated: {detail}")]
    ConditionViolated {
        condition: &'static str,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "walk did not clear barrier {barrier} within {cap} steps; the environment is probably not \
         uniformly transient to the right (condition D)"
    )]
    NonTransient { barrier: i64, cap: u64 },

    #[error(
        "degenerate exact-hit estimate at level {level} (r = {r:.3e}); review conditions E, C and D \
         for this environment"
    )]
    DegenerateHit { level: i64, r: f64 },

    #[error("rejection budget of {budget} resamples exhausted for the segment ending at level {level}")]
    RejectionBudget { level: i64, budget: u64 },

    #[error("too few cycles: have {have}, need at least {need}")]
    TooFewCycles { have: usize, need: usize },

    #[error("unsupported local environment descriptor: {0}")]
    UnsupportedDescriptor(String),

    #[error("inconsistent measures: {0}")]
    InconsistentMeasures(String),

    #[error("window too small: W = {window} < rho = {rho}")]
    WindowTooSmall { window: i64, rho: i64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-regular boundary point: {0}")]
    NonRegular(String),

    #[error("ray is numerically tangent to the boundary")]
    TangentRay,

    #[error("ray left the simulated axial window at alpha = {alpha}")]
    WindowExhausted { alpha: f64 },

    #[error("run too short: {0}")]
    RunTooShort(String),
}

pub type Result<T> = std::result::Result<T, Error>;
