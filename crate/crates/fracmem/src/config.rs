//! Run configuration: a flat TOML key = value file with a fixed schema.
//!
//! ```toml
//! s = 0.75
//! m = 0.5
//! c = 1.0
//! t_factor = 1.05
//! n = 16
//! omega0 = [-0.3, 0.3]
//! seed = 1
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fracmem_core::control::Interval;
use fracmem_core::memory::MemoryCoefficient;
use fracmem_core::moving::{check_velocity, control_time_threshold};
use fracmem_core::spectrum::{build_eigenvalue_table, Backend, EigenvalueTable, FractionalOrder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Asymptotic,
    Discretized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub terminal: f64,
    pub duality: f64,
    pub biorthogonal: f64,
    pub symbol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { terminal: 1e-6, duality: 1e-5, biorthogonal: 1e-3, symbol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub s: f64,
    pub m: f64,
    pub c: f64,
    /// Absolute horizon. Overrides `t_factor` when set.
    pub t: Option<f64>,
    /// Horizon as a multiple of the control-time threshold.
    pub t_factor: f64,
    pub n: usize,
    pub omega0: [f64; 2],
    pub sigma_data: [f64; 2],
    pub sigma_terminal: [f64; 3],
    pub backend: BackendChoice,
    /// Collocation intervals for the discretized backend.
    pub backend_points: Option<usize>,
    /// Biorthogonal family size; `min(12, n)` when unset.
    pub family_n: Option<usize>,
    pub z_max: f64,
    pub observability_trials: usize,
    pub adjoint_trials: usize,
    pub quadrature_order: usize,
    pub trajectory_points: usize,
    pub grid_t: usize,
    pub grid_x: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub allow_short_horizon: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            s: 0.75,
            m: 0.5,
            c: 1.0,
            t: None,
            t_factor: 1.05,
            n: 16,
            omega0: [-0.3, 0.3],
            sigma_data: [3.0, 2.0],
            sigma_terminal: [3.0, 2.0, 1.0],
            backend: BackendChoice::Asymptotic,
            backend_points: None,
            family_n: None,
            z_max: 300.0,
            observability_trials: 200,
            adjoint_trials: 50,
            quadrature_order: 16,
            trajectory_points: 64,
            grid_t: 64,
            grid_x: 32,
            tolerances: Tolerances::default(),
            seed: 1,
            out: None,
            allow_short_horizon: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    C,
    T,
    N,
    M,
    S,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "c" => SweepParam::C,
            "T" | "t" => SweepParam::T,
            "N" | "n" => SweepParam::N,
            "M" | "m" => SweepParam::M,
            "s" => SweepParam::S,
            other => bail!("sweep parameter must be one of c, T, N, M, s (got {other:?})"),
        })
    }

    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::C => out.c = value,
            SweepParam::T => out.t = Some(value),
            SweepParam::M => out.m = value,
            SweepParam::S => out.s = value,
            SweepParam::N => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    bail!("truncation must be a positive integer, got {value}");
                }
                out.n = value as usize;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::C => "c",
            SweepParam::T => "T",
            SweepParam::N => "N",
            SweepParam::M => "M",
            SweepParam::S => "s",
        })
    }
}

/// A configuration that passed validation, with derived quantities.
#[derive(Debug, Clone)]
pub struct Validated {
    pub cfg: RunConfig,
    pub table: EigenvalueTable,
    pub gamma: f64,
    pub threshold: f64,
    pub horizon: f64,
    pub omega0: Interval,
    pub watermark: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serialising configuration")
    }

    /// SHA-256 of the canonical serialisation (output directory excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn family(&self) -> usize {
        self.family_n.unwrap_or(self.n.min(12))
    }

    pub fn backend(&self) -> Backend {
        match self.backend {
            BackendChoice::Asymptotic => Backend::Asymptotic,
            BackendChoice::Discretized => match self.backend_points {
                Some(points) => Backend::Discretized { points },
                None => Backend::discretized_for(self.n),
            },
        }
    }

    pub fn validate(&self) -> Result<Validated> {
        if !(self.s > 0.5 && self.s < 1.0) {
            bail!("s = {} outside (1/2, 1)", self.s);
        }
        if self.c == 0.0 || !self.c.is_finite() {
            bail!("velocity c = {} is forbidden", self.c);
        }
        MemoryCoefficient::new(self.m).map_err(|e| anyhow::anyhow!("m = {}: {e}", self.m))?;
        if self.seed > i64::MAX as u64 {
            bail!("seed {} does not fit a signed 64-bit integer", self.seed);
        }
        if self.n == 0 {
            bail!("truncation n must be positive");
        }
        let [a, b] = self.omega0;
        if !(a < b && a >= -1.0 && b <= 1.0) {
            bail!("omega0 = [{a}, {b}] must be a nonempty subinterval of [-1, 1]");
        }
        let family = self.family();
        if family == 0 || family > self.n {
            bail!("family_n = {family} must lie in 1..={}", self.n);
        }
        if self.sigma_data.iter().chain(&self.sigma_terminal).any(|x| !x.is_finite()) {
            bail!("sigma weights must be finite");
        }
        let tol = &self.tolerances;
        if [tol.terminal, tol.duality, tol.biorthogonal, tol.symbol].iter().any(|t| !(*t > 0.0)) {
            bail!("tolerances must be positive");
        }
        if self.quadrature_order < 2 || self.grid_t < 2 || self.grid_x < 2 || self.trajectory_points < 2 {
            bail!("quadrature order and grid sizes must be at least 2");
        }
        let order = FractionalOrder::new_control(self.s)?;
        let table = build_eigenvalue_table(order, self.n, self.backend())?;
        let gamma = table.gap_gamma;
        check_velocity(self.c, gamma)?;
        let threshold = control_time_threshold(self.c, gamma);
        let horizon = self.t.unwrap_or(self.t_factor * threshold);
        if !(horizon > 0.0 && horizon.is_finite()) {
            bail!("horizon must be positive");
        }
        let watermark = if horizon <= threshold {
            if !self.allow_short_horizon {
                bail!("horizon {horizon} does not exceed the threshold {threshold}; pass --allow-short-horizon to run anyway");
            }
            Some(format!("BELOW THRESHOLD: T = {horizon} <= {threshold}"))
        } else {
            None
        };
        Ok(Validated { cfg: self.clone(), table, gamma, threshold, horizon, omega0: Interval::new(a, b)?, watermark })
    }
}
