//! Configuration, artifact export and experiment pipelines on top of `fracmem-core`.

pub mod config;
pub mod export;
pub mod manifest;
pub mod pipeline;
pub mod sweep;

use std::path::Path;

use anyhow::Result;

pub use config::RunConfig;
pub use fracmem_core;
pub use manifest::Manifest;
pub use pipeline::Pipeline;

/// Validates `cfg`, runs `pipeline`, writes every artifact and `manifest.json` into `out`.
/// Configuration errors are returned before any computation or file is written.
pub fn run_pipeline(cfg: &RunConfig, pipeline: Pipeline, out: &Path) -> Result<Manifest> {
    let v = cfg.validate()?;
    let sink = export::Sink::dir(out)?;
    let outcome = pipeline::execute(&v, pipeline, &sink)?;
    let manifest = Manifest::new(&pipeline.to_string(), cfg, v.horizon, v.threshold, v.watermark.clone(), outcome.stages);
    manifest.write(out)?;
    Ok(manifest)
}

/// Sweep counterpart of [`run_pipeline`]; writes `sweep_<param>.csv` and `manifest.json`.
pub fn run_sweep(cfg: &RunConfig, param: config::SweepParam, values: &[f64], out: &Path) -> Result<sweep::SweepOutcome> {
    let sink = export::Sink::dir(out)?;
    let outcome = sweep::sweep(cfg, param, values, &sink)?;
    outcome.manifest.write(out)?;
    Ok(outcome)
}
