//! Parameter sweeps: one run per value, aggregated into a single CSV.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SweepParam};
use crate::export::Sink;
use crate::manifest::{Check, Manifest, Stage};
use crate::pipeline::{execute, Pipeline, Scalars};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub status: &'static str,
    pub failures: String,
    pub below_threshold: bool,
    pub horizon: Option<f64>,
    pub threshold: Option<f64>,
    pub observability: Option<f64>,
    pub control_norm: Option<f64>,
    pub relative_residual: Option<f64>,
    pub condition_raw: Option<f64>,
    pub condition_scaled: Option<f64>,
    pub terminal_xi: Option<f64>,
    pub terminal_xi_t: Option<f64>,
    pub terminal_zeta: Option<f64>,
    pub duality: Option<f64>,
}

impl SweepRow {
    fn new(param: SweepParam, value: f64) -> Self {
        SweepRow {
            param: param.to_string(),
            value,
            status: "error",
            failures: String::new(),
            below_threshold: false,
            horizon: None,
            threshold: None,
            observability: None,
            control_norm: None,
            relative_residual: None,
            condition_raw: None,
            condition_scaled: None,
            terminal_xi: None,
            terminal_xi_t: None,
            terminal_zeta: None,
            duality: None,
        }
    }

    fn fill(&mut self, s: &Scalars) {
        self.observability = s.observability;
        self.control_norm = s.control_norm;
        self.relative_residual = s.relative_residual;
        self.condition_raw = s.condition_raw;
        self.condition_scaled = s.condition_scaled;
        self.terminal_xi = s.terminal_xi;
        self.terminal_xi_t = s.terminal_xi_t;
        self.terminal_zeta = s.terminal_zeta;
        self.duality = s.duality;
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub manifest: Manifest,
}

/// Runs the simulate chain for each value in parallel. Invalid values and failing runs are
/// recorded in their row and the sweep carries on.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[f64], sink: &Sink) -> Result<SweepOutcome> {
    let results: Vec<(SweepRow, Stage)> = values
        .par_iter()
        .map(|&value| {
            let mut row = SweepRow::new(param, value);
            let mut stage = Stage::new(&format!("{param}={value}"));
            let validated = param.apply(base, value).and_then(|c| c.validate());
            match validated {
                Err(e) => {
                    row.failures = format!("{e:#}");
                    stage = stage.fail_with(&row.failures);
                }
                Ok(v) => {
                    row.horizon = Some(v.horizon);
                    row.threshold = Some(v.threshold);
                    row.below_threshold = v.watermark.is_some();
                    match execute(&v, Pipeline::Simulate, &Sink::none()) {
                        Err(e) => {
                            row.failures = format!("{e:#}");
                            stage = stage.fail_with(&row.failures);
                        }
                        Ok(out) => {
                            row.fill(&out.scalars);
                            let fails: Vec<String> = out.stages.iter().flat_map(Stage::failures).collect();
                            row.status = if fails.is_empty() { "pass" } else { "fail" };
                            row.failures = fails.join("; ");
                            let mut errors = Vec::new();
                            for s in &out.stages {
                                for c in &s.checks {
                                    stage.push(Check { name: format!("{}/{}", s.name, c.name), ..c.clone() });
                                }
                                if let Some(e) = &s.error {
                                    errors.push(format!("{}: {e}", s.name));
                                }
                            }
                            if let Some(w) = &v.watermark {
                                stage.notes.push(w.clone());
                            }
                            if !errors.is_empty() {
                                stage.error = Some(errors.join("; "));
                            }
                            stage = stage.finish();
                        }
                    }
                }
            }
            (row, stage)
        })
        .collect();
    let (rows, mut stages): (Vec<SweepRow>, Vec<Stage>) = results.into_iter().unzip();
    let mut agg = Stage::new("aggregate");
    if let Some(f) = sink.csv(&format!("sweep_{param}.csv"), &rows)? {
        agg.artifacts.push(f);
    }
    agg.notes.push(format!("{} of {} values pass", rows.iter().filter(|r| r.status == "pass").count(), rows.len()));
    stages.push(agg);
    let watermark = rows.iter().any(|r| r.below_threshold).then(|| "BELOW THRESHOLD: sweep includes horizons at or below the threshold".to_string());
    let manifest = Manifest::new(&format!("sweep:{param}"), base, f64::NAN, f64::NAN, watermark, stages);
    Ok(SweepOutcome { rows, manifest })
}
