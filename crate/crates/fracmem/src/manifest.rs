//! Per-stage verdicts and the run manifest.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    Above,
    Holds,
    Reported,
}

/// One named number with the bound it is judged against. `pass` is `None` for values that
/// are recorded but not judged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub relation: Relation,
    pub pass: Option<bool>,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value: Some(value), bound: Some(bound), relation: Relation::AtMost, pass: Some(value <= bound) }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value: Some(value), bound: Some(bound), relation: Relation::AtLeast, pass: Some(value >= bound) }
    }

    pub fn above(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value: Some(value), bound: Some(bound), relation: Relation::Above, pass: Some(value > bound) }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: None, bound: None, relation: Relation::Holds, pass: Some(ok) }
    }

    pub fn reported(name: &str, value: f64) -> Self {
        Check { name: name.into(), value: Some(value), bound: None, relation: Relation::Reported, pass: None }
    }

    pub fn reported_flag(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: Some(if ok { 1.0 } else { 0.0 }), bound: None, relation: Relation::Reported, pass: None }
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub pass: bool,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

impl Stage {
    pub fn new(name: &str) -> Self {
        Stage { name: name.into(), pass: true, error: None, checks: Vec::new(), notes: Vec::new(), artifacts: Vec::new() }
    }

    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn fail_with(mut self, err: impl std::fmt::Display) -> Self {
        self.error = Some(err.to_string());
        self.pass = false;
        self
    }

    pub fn finish(mut self) -> Self {
        self.pass = self.error.is_none() && !self.checks.iter().any(Check::failed);
        self
    }

    /// `stage/check` names of failing checks, or the stage error.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.checks.iter().filter(|c| c.failed()).map(|c| format!("{}/{}", self.name, c.name)).collect();
        if let Some(e) = &self.error {
            out.push(format!("{}: {e}", self.name));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub pipeline: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub horizon: f64,
    pub threshold: f64,
    pub watermark: Option<String>,
    pub stages: Vec<Stage>,
    pub pass: bool,
}

impl Manifest {
    pub fn new(pipeline: &str, config: &RunConfig, horizon: f64, threshold: f64, watermark: Option<String>, stages: Vec<Stage>) -> Self {
        let pass = stages.iter().all(|s| s.pass);
        Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            pipeline: pipeline.into(),
            config_hash: config.hash(),
            config: config.clone(),
            horizon,
            threshold,
            watermark,
            stages,
            pass,
        }
    }

    pub fn failures(&self) -> Vec<String> {
        self.stages.iter().flat_map(Stage::failures).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_verdict_follows_checks() {
        let mut st = Stage::new("x");
        st.push(Check::at_most("a", 1.0, 2.0));
        st.push(Check::reported("b", 1e9));
        assert!(st.clone().finish().pass);
        st.push(Check::at_least("c", 0.1, 0.5));
        let st = st.finish();
        assert!(!st.pass);
        assert_eq!(st.failures(), vec!["x/c".to_string()]);
    }

    #[test]
    fn stage_error_fails() {
        let st = Stage::new("y").fail_with("boom").finish();
        assert!(!st.pass);
        assert_eq!(st.failures(), vec!["y: boom".to_string()]);
    }
}
