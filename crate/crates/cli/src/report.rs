//! Run manifest, checks and CSV output.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA: &str = "v1";

/// Direction of a threshold comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtMost,
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    /// Set for probes whose value is expected to be large.
    pub expected_nonzero: bool,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        let pass = match relation {
            Relation::Below => value < threshold,
            Relation::AtMost => value <= threshold,
            Relation::Above => value > threshold,
        };
        Self {
            name: name.into(),
            value,
            threshold,
            relation,
            expected_nonzero: relation == Relation::Above,
            pass,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::Below, threshold)
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::Above, threshold)
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub parameters: Map<String, Value>,
    pub seed: Option<u64>,
    pub tolerances: Map<String, Value>,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    /// Structured results such as diagnostic series.
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub data: Map<String, Value>,
    pub passed: bool,
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

/// Collects outputs and checks for one run.
pub struct Run {
    out_dir: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                schema: SCHEMA,
                command: command.to_string(),
                argv: std::env::args().collect(),
                parameters: Map::new(),
                seed: None,
                tolerances: Map::new(),
                outputs: Vec::new(),
                checks: Vec::new(),
                data: Map::new(),
                passed: false,
                error: None,
                elapsed_seconds: 0.0,
            },
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.manifest
            .parameters
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn data(&mut self, key: &str, value: impl Serialize) {
        self.manifest
            .data
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn tolerance(&mut self, key: &str, value: f64) {
        self.manifest.tolerances.insert(key.to_string(), Value::from(value));
    }

    pub fn check(&mut self, check: Check) {
        self.manifest.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.manifest.checks.iter().all(|c| c.pass)
    }

    /// Creates a CSV writer for `name` in the output directory and records it.
    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvOut> {
        let path = self.out_dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(header)
            .with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(CsvOut { writer, path })
    }

    /// Writes `manifest.json`; returns whether every check passed and no
    /// error occurred.
    pub fn finish(mut self, error: Option<String>) -> Result<bool> {
        self.manifest.elapsed_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.passed = error.is_none() && self.all_passed();
        self.manifest.error = error;
        self.manifest.outputs.push("manifest.json".to_string());
        let path = self.out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest.passed)
    }
}

/// Full-precision number formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvOut {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvOut {
    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        self.writer
            .write_record(values.iter().map(|&v| num(v)))
            .with_context(|| format!("writing {}", self.path.display()))
    }

    /// Row with a leading integer column.
    pub fn row_indexed(&mut self, index: usize, values: &[f64]) -> Result<()> {
        let record = std::iter::once(index.to_string()).chain(values.iter().map(|&v| num(v)));
        self.writer
            .write_record(record)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer
            .flush()
            .with_context(|| format!("flushing {}", self.path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::below("a", 1.0, 2.0).pass);
        assert!(!Check::below("a", 2.0, 2.0).pass);
        assert!(Check::new("a", 2.0, Relation::AtMost, 2.0).pass);
        let probe = Check::above("a", 3.0, 2.0);
        assert!(probe.pass && probe.expected_nonzero);
        assert!(!Check::below("nan", f64::NAN, 1.0).pass);
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::f64::consts::PI] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.0), "1.0000000000000000e0");
    }
}
