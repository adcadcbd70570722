//! Reports: per-check verdicts with achieved and target values, plus free-form results.

use std::path::Path;

use anyhow::{Context, Result};
use parabolic_core::fatou::FittedConstants;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
        }
    }

    pub fn holds(self, achieved: f64, target: f64) -> bool {
        match self {
            Relation::Lt => achieved < target,
            Relation::Le => achieved <= target,
            Relation::Gt => achieved > target,
            Relation::Ge => achieved >= target,
        }
    }
}

/// One verdict. A non-finite `achieved` serializes as `null` and fails.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub achieved: f64,
    pub relation: Relation,
    pub target: f64,
    pub pass: bool,
    /// Soft checks are reported but do not change the exit code.
    pub hard: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, achieved: f64, relation: Relation, target: f64) -> Self {
        let pass = achieved.is_finite() && relation.holds(achieved, target);
        Self { name: name.into(), achieved, relation, target, pass, hard: true }
    }

    pub fn soft(mut self) -> Self {
        self.hard = false;
        self
    }

    /// A boolean condition as a `1 >= 1` check.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::Ge, 1.0)
    }

    /// Failure of the computation itself.
    pub fn failed(name: impl Into<String>) -> Self {
        Self::new(name, f64::NAN, Relation::Le, 0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub constants: FittedConstants,
    pub checks: Vec<Check>,
    pub results: serde_json::Map<String, Value>,
}

impl Report {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            constants: cfg.constants,
            checks: Vec::new(),
            results: serde_json::Map::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn result(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn hard_failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.hard && !c.pass).collect()
    }

    pub fn merge(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.results.insert(other.command, Value::Object(other.results));
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("report serializes");
        v.push(b'\n');
        v
    }
}

/// A report plus auxiliary files (CSV, PGM) named relative to the output directory.
pub struct Outcome {
    pub report: Report,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), self.report.to_json()).context("writing report.json")?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        }
        Ok(())
    }
}

/// Rows serialized as CSV with a header.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations_and_flags() {
        assert!(Check::new("a", 0.5, Relation::Lt, 1.0).pass);
        assert!(!Check::new("a", 1.0, Relation::Lt, 1.0).pass);
        assert!(Check::new("a", 1.0, Relation::Le, 1.0).pass);
        assert!(!Check::new("a", f64::NAN, Relation::Ge, 0.0).pass);
        assert!(!Check::new("a", f64::INFINITY, Relation::Ge, 0.0).pass);
        assert!(Check::flag("f", true).pass && !Check::flag("f", false).pass);
        assert!(!Check::failed("x").pass);
    }

    #[test]
    fn hard_failures_ignore_soft() {
        let mut r = Report::new("t", &RunConfig::default());
        r.check(Check::new("soft", 2.0, Relation::Lt, 1.0).soft());
        assert!(r.hard_failures().is_empty());
        r.check(Check::new("hard", 2.0, Relation::Lt, 1.0));
        assert_eq!(r.hard_failures()[0].name, "hard");
        let json: Value = serde_json::from_slice(&r.to_json()).unwrap();
        assert_eq!(json["checks"][0]["relation"], "<");
        assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn csv_has_header() {
        #[derive(Serialize)]
        struct Row {
            x: f64,
            y: u32,
        }
        let b = csv_bytes(&[Row { x: 0.5, y: 2 }]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "x,y\n0.5,2\n");
    }
}
