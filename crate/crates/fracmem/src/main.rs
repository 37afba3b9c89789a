use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fracmem::config::SweepParam;
use fracmem::{run_pipeline, run_sweep, Manifest, Pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "fracmem", version, about = "Moving-control experiments for a fractional wave equation with memory")]
struct Cli {
    /// Configuration file (TOML key = value); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run horizons at or below the control-time threshold (outputs are watermarked).
    #[arg(long, global = true)]
    allow_short_horizon: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Eigenvalue tables, memory roots and the moving spectrum.
    Spectrum,
    /// Gap and frame diagnostics.
    Gaps,
    /// Product function and biorthogonal family.
    Biorthogonal,
    /// Gram assembly, observability and control synthesis.
    Control,
    /// Control synthesis followed by the Galerkin run to the horizon.
    Simulate,
    /// Repeats `simulate` over a list of values of one parameter.
    Sweep {
        /// One of c, T, N, M, s.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Every stage plus the symbol check.
    VerifyAll,
}

fn report(m: &Manifest) {
    if let Some(w) = &m.watermark {
        println!("{w}");
    }
    for st in &m.stages {
        println!("{:<14} {}", st.name, if st.pass { "pass" } else { "FAIL" });
    }
    for f in m.failures() {
        eprintln!("failed: {f}");
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.allow_short_horizon {
        cfg.allow_short_horizon = true;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("fracmem-out"));
    let pipeline = match cli.verb {
        Verb::Spectrum => Pipeline::Spectrum,
        Verb::Gaps => Pipeline::Gaps,
        Verb::Biorthogonal => Pipeline::Biorthogonal,
        Verb::Control => Pipeline::Control,
        Verb::Simulate => Pipeline::Simulate,
        Verb::VerifyAll => Pipeline::Full,
        Verb::Sweep { param, values } => {
            let param = SweepParam::parse(&param)?;
            let outcome = run_sweep(&cfg, param, &values, &out)?;
            for r in &outcome.rows {
                println!("{}={:<10} {}", r.param, r.value, r.status);
            }
            report(&outcome.manifest);
            return Ok(outcome.manifest.pass);
        }
    };
    let m = run_pipeline(&cfg, pipeline, &out)?;
    report(&m);
    println!("artifacts in {}", out.display());
    Ok(m.pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
