//! Versioned JSON reports.

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Diagnostic {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Diagnostic { name: name.into(), passed, detail: detail.into() }
    }
}

/// `<crate version>+<git describe>`.
pub fn version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("RANDMEDIA_GIT_DESCRIBE"))
}

/// Field order is fixed; `wall_clock_seconds` is the only field that varies
/// between runs of the same config.
#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: String,
    pub config: &'a ExperimentConfig,
    pub results: Value,
    pub diagnostics: Vec<Diagnostic>,
    pub passed: bool,
    pub wall_clock_seconds: f64,
}

impl<'a> Report<'a> {
    pub fn new(config: &'a ExperimentConfig, results: Value, diagnostics: Vec<Diagnostic>, wall_clock_seconds: f64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            tool: "randmedia",
            version: version(),
            config,
            results,
            passed: diagnostics.iter().all(|d| d.passed),
            diagnostics,
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
