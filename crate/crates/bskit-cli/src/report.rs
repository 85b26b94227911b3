use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// One thresholded quantity. `relation` is "le" (value ≤ threshold) or "ge".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: String,
    pub passed: bool,
}

impl Check {
    pub fn le(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: "le".into(), passed: value <= threshold }
    }

    pub fn ge(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: "ge".into(), passed: value >= threshold }
    }

    /// A boolean property, encoded as value 1/0 against threshold 1.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::ge(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub subcommand: String,
    pub passed: bool,
    pub seed: Option<u64>,
    pub checks: Vec<Check>,
    /// Subcommand-specific measurements.
    pub results: serde_json::Value,
    /// CSV files written next to report.json.
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(subcommand: &str, seed: Option<u64>, checks: Vec<Check>, results: serde_json::Value, artifacts: Vec<String>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { subcommand: subcommand.into(), passed, seed, checks, results, artifacts }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&path, text).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
    }
}
