//! Machine-readable run summary shared by every subcommand.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<=` or `>=`.
    pub comparison: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: "<=",
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: ">=",
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub subcommand: String,
    pub scenario: String,
    pub scenario_hash: Option<String>,
    pub config: Option<String>,
    pub figure: Option<String>,
    pub seed: Option<u64>,
    pub status: Status,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub metrics: Value,
    pub artifacts: Vec<String>,
    pub runtime_s: f64,
}

impl Summary {
    pub fn new(subcommand: &str, scenario: &str) -> Self {
        Self {
            schema: SCHEMA,
            subcommand: subcommand.into(),
            scenario: scenario.into(),
            scenario_hash: None,
            config: None,
            figure: None,
            seed: None,
            status: Status::Pass,
            error: None,
            checks: Vec::new(),
            metrics: Value::Null,
            artifacts: Vec::new(),
            runtime_s: 0.0,
        }
    }

    /// Sets the status from the checks.
    pub fn finish(&mut self, runtime_s: f64) {
        self.runtime_s = runtime_s;
        if self.status != Status::Error {
            self.status = if self.checks.iter().all(|c| c.pass) { Status::Pass } else { Status::Fail };
        }
    }

    pub fn fail_with(&mut self, err: &dyn std::fmt::Display) {
        self.status = Status::Error;
        self.error = Some(err.to_string());
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(dir.join("summary.json"), text + "\n")
    }
}
