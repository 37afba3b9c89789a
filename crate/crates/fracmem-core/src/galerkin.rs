//! Exact propagation of the plane-wave truncation of the moving-frame system
//!
//! ```text
//! xi'' = -(rho - c^2 kappa^2) xi - 2 i c kappa xi' + M zeta + f,   zeta' = rho xi - i c kappa zeta
//! ```
//!
//! and of its fixed-frame counterpart, by modal exponentials and closed-form Duhamel integrals.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::control::{slot, slot_n, space_factor, time_factor, weighted_norm, ControlField, InitialData, Interval, SpaceTimeRule};
use crate::dd::Cdd;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, solve_dd};
use crate::moving::{ModeIndex, MovingSpectrum};
use crate::quad::composite;

/// Terminal pass threshold, relative to the data norm.
pub const TERMINAL_TOL: f64 = 1e-6;
/// Weights `(sigma_xi, sigma_xi_t, sigma_zeta)` of the terminal norms.
pub const TERMINAL_SIGMA: [f64; 3] = [3.0, 2.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Moving,
    Fixed,
}

/// How the control is projected onto the plane waves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `f_n = g_n / 2`: plane waves treated as orthogonal with norm^2 |I| = 2.
    Orthogonal,
    /// `f = G_pw^{-1} g` with the exact plane-wave Gram on `(-1, 1)`.
    Gram,
}

/// Coefficient arrays in slot order `n = -N..=-1, 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub xi: Vec<Complex64>,
    pub xi_dot: Vec<Complex64>,
    pub zeta: Vec<Complex64>,
    pub frame: Frame,
}

impl GalerkinState {
    /// `xi = y0`, `xi_t = y1 - c y0_x`, `zeta = 0` (moving) or `y = y0`, `y_t = y1`, `z = 0` (fixed).
    pub fn initial(data: &InitialData, ms: &MovingSpectrum, frame: Frame) -> Result<Self> {
        if data.n_trunc != ms.n_trunc {
            return Err(Error::InvalidInput("data and spectrum truncations differ".into()));
        }
        let n = ms.n_trunc;
        let xi_dot = (0..2 * n)
            .map(|k| match frame {
                Frame::Moving => data.y1[k] - Complex64::new(0.0, ms.c * ms.kappa(slot_n(n, k))) * data.y0[k],
                Frame::Fixed => data.y1[k],
            })
            .collect();
        Ok(GalerkinState { t: 0.0, xi: data.y0.clone(), xi_dot, zeta: alloc::vec![Complex64::new(0.0, 0.0); 2 * n], frame })
    }

    pub fn zero(n_trunc: usize, frame: Frame) -> Self {
        let z = alloc::vec![Complex64::new(0.0, 0.0); 2 * n_trunc];
        GalerkinState { t: 0.0, xi: z.clone(), xi_dot: z.clone(), zeta: z, frame }
    }

    pub fn n_trunc(&self) -> usize {
        self.xi.len() / 2
    }

    /// Weighted norms of `(xi, xi_t, zeta)` with `TERMINAL_SIGMA`.
    pub fn norms(&self, ms: &MovingSpectrum) -> [f64; 3] {
        [
            weighted_norm(ms, &self.xi, TERMINAL_SIGMA[0]),
            weighted_norm(ms, &self.xi_dot, TERMINAL_SIGMA[1]),
            weighted_norm(ms, &self.zeta, TERMINAL_SIGMA[2]),
        ]
    }

    pub fn max_abs_diff(&self, other: &GalerkinState) -> f64 {
        let d = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        d(&self.xi, &other.xi).max(d(&self.xi_dot, &other.xi_dot)).max(d(&self.zeta, &other.zeta))
    }

    pub fn max_abs(&self) -> f64 {
        self.xi.iter().chain(&self.xi_dot).chain(&self.zeta).map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// How the forcing enters the propagated frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forcing {
    /// Moving frame, static `omega0`.
    Moving,
    /// Fixed frame, support `omega0 - c t` (forcing phase `e^{i c kappa t}`).
    FixedMoving,
    /// Fixed frame, control frozen on `omega0` without the change of variables.
    FixedStatic,
}

/// Per-mode modal data: exponents `eps_j`, right/left eigenvectors, and the shift
/// `nu_j = eps_j - omega` entering the Duhamel integrals.
#[derive(Debug, Clone)]
pub struct ModePropagator {
    pub frame: Frame,
    pub forcing: Forcing,
    pub n_trunc: usize,
    pub m: f64,
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
    pub c: f64,
    /// `eps[k][j]`: `conj(lambda_n^{j+1})` in the moving frame, `conj(mu_|n|^{j+1})` in the fixed one.
    pub eps: Vec<[Complex64; 3]>,
    pub nu: Vec<[Complex64; 3]>,
    /// Phase rate `omega` of the forcing.
    pub omega: Vec<Complex64>,
}

impl ModePropagator {
    pub fn new(ms: &MovingSpectrum, forcing: Forcing) -> Self {
        let n = ms.n_trunc;
        let frame = if forcing == Forcing::Moving { Frame::Moving } else { Frame::Fixed };
        let mut eps = Vec::with_capacity(2 * n);
        let mut nu = Vec::with_capacity(2 * n);
        let mut omega = Vec::with_capacity(2 * n);
        let mut rho = Vec::with_capacity(2 * n);
        let mut kappa = Vec::with_capacity(2 * n);
        for k in 0..2 * n {
            let nn = slot_n(n, k);
            let kap = ms.kappa(nn);
            let ick = Complex64::new(0.0, ms.c * kap);
            let lam: [Complex64; 3] = core::array::from_fn(|j| ms.lambda(ModeIndex { n: nn, j: j as u8 + 1 }).conj());
            let mu: [Complex64; 3] = core::array::from_fn(|j| ms.mu(ModeIndex { n: nn, j: j as u8 + 1 }).conj());
            match forcing {
                Forcing::Moving => {
                    eps.push(lam);
                    nu.push(lam);
                    omega.push(Complex64::new(0.0, 0.0));
                }
                Forcing::FixedMoving => {
                    eps.push(mu);
                    nu.push(lam);
                    omega.push(ick);
                }
                Forcing::FixedStatic => {
                    eps.push(mu);
                    nu.push(mu);
                    omega.push(Complex64::new(0.0, 0.0));
                }
            }
            rho.push(ms.rho(nn.unsigned_abs() as usize));
            kappa.push(kap);
        }
        ModePropagator { frame, forcing, n_trunc: n, m: ms.m.get(), rho, kappa, c: ms.c, eps, nu, omega }
    }

    /// `i c kappa` in the moving frame, 0 in the fixed frame.
    fn delta(&self, k: usize) -> Complex64 {
        match self.frame {
            Frame::Moving => Complex64::new(0.0, self.c * self.kappa[k]),
            Frame::Fixed => Complex64::new(0.0, 0.0),
        }
    }

    /// Per-mode forward block.
    pub fn block(&self, k: usize) -> [[Complex64; 3]; 3] {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let d = self.delta(k);
        let rho = Complex64::new(self.rho[k], 0.0);
        [[z, one, z], [-(rho + d * d), -d * 2.0, Complex64::new(self.m, 0.0)], [rho, z, -d]]
    }

    pub fn right(&self, k: usize, j: usize) -> [Complex64; 3] {
        let e = self.eps[k][j];
        [Complex64::new(1.0, 0.0), e, Complex64::new(self.rho[k], 0.0) / (e + self.delta(k))]
    }

    pub fn left(&self, k: usize, j: usize) -> [Complex64; 3] {
        let e = self.eps[k][j];
        let d = self.delta(k);
        [e + d * 2.0, Complex64::new(1.0, 0.0), Complex64::new(self.m, 0.0) / (e + d)]
    }

    fn pairing(&self, k: usize, j: usize) -> Complex64 {
        let (w, v) = (self.left(k, j), self.right(k, j));
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
    }

    /// Max relative residual of `(e + d)^3 + rho (e + d) - M rho = 0` over all exponents.
    pub fn characteristic_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.eps.len() {
            for j in 0..3 {
                let mu = self.eps[k][j] + self.delta(k);
                let r = mu * mu * mu + mu * self.rho[k] - self.m * self.rho[k];
                let scale = mu.norm().powi(3) + self.rho[k] * mu.norm() + self.m.abs() * self.rho[k];
                worst = worst.max(r.norm() / scale);
            }
        }
        worst
    }

    /// Max relative mismatch between the elementary symmetric functions of the exponents and the
    /// invariants (trace, principal minors, determinant) of each block.
    pub fn block_spectrum_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.eps.len() {
            let a = self.block(k);
            let tr = a[0][0] + a[1][1] + a[2][2];
            let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2] - a[0][2] * a[2][0] + a[1][1] * a[2][2]
                - a[1][2] * a[2][1];
            let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
            let [e1, e2, e3] = self.eps[k];
            let s1 = e1 + e2 + e3;
            let s2 = e1 * e2 + e1 * e3 + e2 * e3;
            let s3 = e1 * e2 * e3;
            let r = e1.norm().max(e2.norm()).max(e3.norm());
            worst = worst.max((s1 - tr).norm() / r).max((s2 - minors).norm() / (r * r)).max((s3 - det).norm() / (r * r * r));
        }
        worst
    }
}

/// Exact Gram of `{e^{i kappa_n x}}` on `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct PlaneWaveGram {
    pub matrix: DMatrix<Complex64>,
    /// `max |G - 2 I|`.
    pub deviation: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub hermitian_defect: f64,
}

pub fn plane_wave_gram(ms: &MovingSpectrum) -> PlaneWaveGram {
    let n = ms.n_trunc;
    let full = Interval { a: -1.0, b: 1.0 };
    let kap: Vec<f64> = (0..2 * n).map(|k| ms.kappa(slot_n(n, k))).collect();
    let matrix = DMatrix::from_fn(2 * n, 2 * n, |r, c| space_factor(kap[c] - kap[r], full));
    let mut deviation: f64 = 0.0;
    for r in 0..2 * n {
        for c in 0..2 * n {
            let id = if r == c { 2.0 } else { 0.0 };
            deviation = deviation.max((matrix[(r, c)] - id).norm());
        }
    }
    let ev = hermitian_eigenvalues(&matrix);
    PlaneWaveGram {
        hermitian_defect: hermitian_defect(&matrix),
        min_eig: ev.first().copied().unwrap_or(0.0),
        max_eig: ev.last().copied().unwrap_or(0.0),
        matrix,
        deviation,
    }
}

/// Coupling `C[n][p]` with `f_n(t) = sum_p a_p C[n][p] e^{-lambda_p t}`.
fn coupling(ms: &MovingSpectrum, control: &ControlField, projection: Projection, warnings: &mut Vec<String>) -> Result<Vec<Vec<Complex64>>> {
    let n = ms.n_trunc;
    let s: Vec<Vec<Complex64>> = (0..2 * n)
        .map(|k| {
            let kn = ms.kappa(slot_n(n, k));
            control.kappa.iter().map(|kp| space_factor(kp - kn, control.omega0)).collect()
        })
        .collect();
    match projection {
        Projection::Orthogonal => Ok(s.into_iter().map(|row| row.into_iter().map(|z| z * 0.5).collect()).collect()),
        Projection::Gram => {
            let pw = plane_wave_gram(ms);
            if !(pw.min_eig > 1e-12 * pw.max_eig) {
                warnings.push(alloc::format!(
                    "plane-wave Gram eigenvalues in [{:.3e}, {:.3e}]; iteratively refined solve",
                    pw.min_eig,
                    pw.max_eig
                ));
            }
            let cols = control.kappa.len();
            let mut out = alloc::vec![alloc::vec![Complex64::new(0.0, 0.0); cols]; 2 * n];
            for p in 0..cols {
                let rhs: Vec<Complex64> = (0..2 * n).map(|k| s[k][p]).collect();
                let x = solve_dd(&pw.matrix, &rhs, 8)?.x_c64();
                for k in 0..2 * n {
                    out[k][p] = x[k];
                }
            }
            Ok(out)
        }
    }
}

/// Propagator bound to a spectrum, a forcing model and an optional control.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub prop: ModePropagator,
    pub projection: Projection,
    control: Option<ControlField>,
    coupling: Vec<Vec<Complex64>>,
    pub warnings: Vec<String>,
}

impl Simulator {
    pub fn new(ms: &MovingSpectrum, forcing: Forcing, projection: Projection, control: Option<&ControlField>) -> Result<Self> {
        let prop = ModePropagator::new(ms, forcing);
        let mut warnings = Vec::new();
        let coupling = match control {
            Some(cf) => {
                if cf.modes.iter().any(|md| md.abs_n() > ms.n_trunc) {
                    return Err(Error::InvalidInput("control uses modes outside the truncation".into()));
                }
                coupling(ms, cf, projection, &mut warnings)?
            }
            None => Vec::new(),
        };
        Ok(Simulator { prop, projection, control: control.cloned(), coupling, warnings })
    }

    fn modal(&self, state: &GalerkinState, k: usize, j: usize) -> Cdd {
        let w = self.prop.left(k, j);
        Cdd::from(w[0] * state.xi[k]) + Cdd::from(w[1] * state.xi_dot[k]) + Cdd::from(w[2] * state.zeta[k])
    }

    /// Advances `state` by `dt` (negative `dt` runs the homogeneous part backwards).
    pub fn step_exact(&self, state: &GalerkinState, dt: f64) -> Result<GalerkinState> {
        let expected = self.prop.frame;
        if state.frame != expected {
            return Err(Error::InvalidInput("state frame does not match the propagator".into()));
        }
        if state.n_trunc() != self.prop.n_trunc {
            return Err(Error::InvalidInput("state truncation does not match the propagator".into()));
        }
        let (t0, t1) = (state.t, state.t + dt);
        let window = self.control.as_ref().and_then(|cf| {
            let (s0, s1) = (t0.min(t1).max(0.0), t0.max(t1).min(cf.t_horizon));
            (s1 > s0).then_some((cf, s0, s1))
        });
        if window.is_some() && dt < 0.0 {
            return Err(Error::InvalidInput("backward steps are homogeneous only".into()));
        }
        let n2 = 2 * self.prop.n_trunc;
        let mut out = GalerkinState::zero(self.prop.n_trunc, expected);
        out.t = t1;
        for k in 0..n2 {
            let (mut x, mut xd, mut ze) = (Cdd::ZERO, Cdd::ZERO, Cdd::ZERO);
            for j in 0..3 {
                let e = self.prop.eps[k][j];
                // z_j(t1) = e^{e (t1 - s0)} [ e^{e (s0 - t0)} w.Y + sum_p a_p C phi(nu + lambda_p) e^{-(lambda_p - omega) s0} ] / w.v
                let (s0, forced) = match window {
                    Some((cf, s0, s1)) => {
                        let nu = self.prop.nu[k][j];
                        let om = self.prop.omega[k];
                        let mut acc = Cdd::ZERO;
                        for (p, (a, lam)) in cf.coefficients_dd.iter().zip(&cf.lambda).enumerate() {
                            let mut g = self.coupling[k][p] * time_factor(*lam + nu, s1 - s0);
                            if s0 != 0.0 {
                                g *= (-(*lam - om) * s0).exp();
                            }
                            acc += *a * Cdd::from(g);
                        }
                        (s0, acc)
                    }
                    None => (t0, Cdd::ZERO),
                };
                let mut inner = self.modal(state, k, j);
                if s0 != t0 {
                    inner = inner * Cdd::from((e * (s0 - t0)).exp());
                }
                inner += forced;
                let z = inner * Cdd::from((e * (t1 - s0)).exp() / self.prop.pairing(k, j));
                let v = self.prop.right(k, j);
                x += z;
                xd += z * Cdd::from(v[1]);
                ze += z * Cdd::from(v[2]);
            }
            out.xi[k] = x.to_c64();
            out.xi_dot[k] = xd.to_c64();
            out.zeta[k] = ze.to_c64();
        }
        Ok(out)
    }

    /// State at time `t` starting from `state`.
    pub fn state_at(&self, state: &GalerkinState, t: f64) -> Result<GalerkinState> {
        self.step_exact(state, t - state.t)
    }
}

#[derive(Debug, Clone)]
pub struct TerminalReport {
    pub state: GalerkinState,
    /// Weighted norms of `(xi, xi_t, zeta)` at `T`.
    pub norms: [f64; 3],
    pub data_norm: f64,
    pub relative: [f64; 3],
    pub tol: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Moving-frame run from the data to the control horizon.
pub fn run_to_t(data: &InitialData, control: &ControlField, ms: &MovingSpectrum, projection: Projection) -> Result<TerminalReport> {
    let sim = Simulator::new(ms, Forcing::Moving, projection, Some(control))?;
    let s0 = GalerkinState::initial(data, ms, Frame::Moving)?;
    let end = sim.state_at(&s0, control.t_horizon)?;
    Ok(terminal(end, data, ms, sim.warnings))
}

/// Fixed-frame run with the control frozen on `omega0` (no change of variables).
pub fn run_fixed_support(data: &InitialData, control: &ControlField, ms: &MovingSpectrum) -> Result<TerminalReport> {
    let sim = Simulator::new(ms, Forcing::FixedStatic, Projection::Orthogonal, Some(control))?;
    let s0 = GalerkinState::initial(data, ms, Frame::Fixed)?;
    let end = sim.state_at(&s0, control.t_horizon)?;
    Ok(terminal(end, data, ms, sim.warnings))
}

fn terminal(state: GalerkinState, data: &InitialData, ms: &MovingSpectrum, warnings: Vec<String>) -> TerminalReport {
    let norms = state.norms(ms);
    let data_norm = data.norm(ms);
    let relative = norms.map(|v| if data_norm > 0.0 { v / data_norm } else { v });
    let pass = relative.iter().all(|r| *r <= TERMINAL_TOL);
    TerminalReport { state, norms, data_norm, relative, tol: TERMINAL_TOL, pass, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub norms: [f64; 3],
}

pub fn trajectory(sim: &Simulator, start: &GalerkinState, ms: &MovingSpectrum, times: &[f64]) -> Result<Vec<TrajectoryPoint>> {
    times
        .iter()
        .map(|&t| {
            let s = sim.state_at(start, t)?;
            Ok(TrajectoryPoint { t, norms: s.norms(ms) })
        })
        .collect()
}

/// Smallest `b` with `E(t) <= E(0) e^{b t}` over the samples, `E` the sum of the three norms.
pub fn envelope_rate(points: &[TrajectoryPoint]) -> f64 {
    let e = |p: &TrajectoryPoint| p.norms.iter().sum::<f64>();
    let Some(first) = points.first() else { return 0.0 };
    let e0 = e(first);
    points
        .iter()
        .filter(|p| p.t > first.t && e0 > 0.0)
        .map(|p| libm::log(e(p) / e0) / (p.t - first.t))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    MovingToFixed,
    FixedToMoving,
}

/// `y_n = e^{i kappa c t} xi_n`, `y_n' = e^{i kappa c t} (xi_n' + i c kappa xi_n)`, `z_n = e^{i kappa c t} zeta_n`.
pub fn map_frames(state: &GalerkinState, ms: &MovingSpectrum, direction: FrameDirection) -> Result<GalerkinState> {
    let want = match direction {
        FrameDirection::MovingToFixed => Frame::Moving,
        FrameDirection::FixedToMoving => Frame::Fixed,
    };
    if state.frame != want {
        return Err(Error::InvalidInput("state is not in the source frame".into()));
    }
    let n = state.n_trunc();
    let mut out = state.clone();
    for k in 0..2 * n {
        let ick = Complex64::new(0.0, ms.c * ms.kappa(slot_n(n, k)));
        match direction {
            FrameDirection::MovingToFixed => {
                let ph = (ick * state.t).exp();
                out.xi[k] = ph * state.xi[k];
                out.xi_dot[k] = ph * (state.xi_dot[k] + ick * state.xi[k]);
                out.zeta[k] = ph * state.zeta[k];
            }
            FrameDirection::FixedToMoving => {
                let ph = (-ick * state.t).exp();
                out.xi[k] = ph * state.xi[k];
                out.xi_dot[k] = ph * state.xi_dot[k] - ick * out.xi[k];
                out.zeta[k] = ph * state.zeta[k];
            }
        }
    }
    out.frame = match direction {
        FrameDirection::MovingToFixed => Frame::Fixed,
        FrameDirection::FixedToMoving => Frame::Moving,
    };
    Ok(out)
}

/// Max over modes of `|zeta_n(t) - int_0^t e^{-i c kappa (t - tau)} rho xi_n(tau) d tau|` relative to
/// the largest `|zeta_n(t)|`, the integral by Gauss quadrature of the propagated displacement.
pub fn memory_consistency(sim: &Simulator, start: &GalerkinState, ms: &MovingSpectrum, t: f64, panels: usize) -> Result<f64> {
    if start.t != 0.0 || start.zeta.iter().any(|z| z.norm() != 0.0) {
        return Err(Error::InvalidInput("memory consistency starts from zeta(0) = 0".into()));
    }
    let n = start.n_trunc();
    let end = sim.state_at(start, t)?;
    let (ts, ws) = composite(0.0, t, panels, 20);
    let mut acc = alloc::vec![Cdd::ZERO; 2 * n];
    for (tau, w) in ts.iter().zip(&ws) {
        let s = sim.state_at(start, *tau)?;
        for k in 0..2 * n {
            let d = match start.frame {
                Frame::Moving => Complex64::new(0.0, ms.c * ms.kappa(slot_n(n, k))),
                Frame::Fixed => Complex64::new(0.0, 0.0),
            };
            let rho = ms.rho(slot_n(n, k).unsigned_abs() as usize);
            acc[k] += Cdd::from((-d * (t - tau)).exp() * s.xi[k] * (rho * w));
        }
    }
    let scale = end.zeta.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    Ok(acc.iter().zip(&end.zeta).map(|(a, z)| (a.to_c64() - z).norm()).fold(0.0, f64::max) / scale)
}

/// Homogeneous forward-then-backward defect relative to the initial coefficients.
pub fn reversibility_defect(ms: &MovingSpectrum, start: &GalerkinState, t: f64) -> Result<f64> {
    let forcing = if start.frame == Frame::Moving { Forcing::Moving } else { Forcing::FixedMoving };
    let sim = Simulator::new(ms, forcing, Projection::Orthogonal, None)?;
    let fwd = sim.step_exact(start, t)?;
    let back = sim.step_exact(&fwd, -t)?;
    Ok(back.max_abs_diff(start) / start.max_abs().max(f64::MIN_POSITIVE))
}

/// Adjoint data `beta_n^j` in the eigenvector basis, aligned with `ms.modes()`.
#[derive(Debug, Clone)]
pub struct AdjointData {
    pub beta: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// Space-time quadrature of `u conj(phi)`.
    pub control_side: Complex64,
    /// `<y0, phi_t(0)> - int (y1 + c y0_x) conj(phi(0))` by coefficient pairings.
    pub data_side: Complex64,
    pub residual: f64,
}

/// Cached quadrature of the control for repeated duality checks.
#[derive(Debug, Clone)]
pub struct DualityCheck<'a> {
    data: &'a InitialData,
    control: &'a ControlField,
    ms: &'a MovingSpectrum,
    rule: SpaceTimeRule,
    u: Vec<Vec<Complex64>>,
    space: Vec<Vec<Complex64>>,
}

impl<'a> DualityCheck<'a> {
    pub fn new(data: &'a InitialData, control: &'a ControlField, ms: &'a MovingSpectrum, order: usize) -> Result<Self> {
        if control.modes != ms.modes() || data.n_trunc != ms.n_trunc {
            return Err(Error::InvalidInput("data and control must follow the spectrum's modes".into()));
        }
        let ft = control.lambda.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
        let fx = control.kappa.iter().map(|k| k.abs()).fold(0.0, f64::max);
        let rule = SpaceTimeRule::new(control.t_horizon, control.omega0, 2.0 * ft, 2.0 * fx, order);
        let u = control.eval_grid(&rule.t_nodes, &rule.x_nodes);
        let n = ms.n_trunc;
        let space = rule
            .x_nodes
            .iter()
            .map(|&x| (0..2 * n).map(|k| Complex64::new(0.0, ms.kappa(slot_n(n, k)) * x).exp()).collect())
            .collect();
        Ok(DualityCheck { data, control, ms, rule, u, space })
    }

    /// Both sides of the control identity for the adjoint solution
    /// `phi(t, x) = sum beta e^{lambda (T - t)} e^{i kappa_n x}`.
    pub fn evaluate(&self, adjoint: &AdjointData) -> Result<DualityReport> {
        let ms = self.ms;
        if adjoint.beta.len() != ms.len() {
            return Err(Error::InvalidInput("adjoint data must follow the spectrum's modes".into()));
        }
        let t_h = self.control.t_horizon;
        let slots: Vec<usize> = ms.modes().iter().map(|md| slot(ms.n_trunc, md.n).unwrap_or(0)).collect();
        let phi: Vec<Vec<Complex64>> = self
            .rule
            .t_nodes
            .iter()
            .map(|&t| {
                let mut per_n = alloc::vec![Complex64::new(0.0, 0.0); 2 * ms.n_trunc];
                for (p, k) in slots.iter().enumerate() {
                    per_n[*k] += adjoint.beta[p] * (ms.lambdas()[p] * (t_h - t)).exp();
                }
                self.space.iter().map(|sp| per_n.iter().zip(sp).map(|(a, e)| a * e).sum()).collect()
            })
            .collect();
        let control_side = self.rule.inner(&self.u, &phi);
        let mut acc = Cdd::ZERO;
        for (p, md) in ms.modes().iter().enumerate() {
            let lam = ms.lambdas()[p];
            let amp = (adjoint.beta[p] * (lam * t_h).exp()).conj();
            let y0 = self.data.y0_at(md.n);
            let y1 = self.data.y1_at(md.n);
            let ick = Complex64::new(0.0, ms.c * ms.kappa(md.n));
            // |I| = 2 pairings of the plane waves
            acc += Cdd::from(amp * (y0 * lam.conj() * -2.0 - (y1 + ick * y0) * 2.0));
        }
        let data_side = acc.to_c64();
        let scale = control_side.norm().max(data_side.norm());
        let residual = if scale > 0.0 { (control_side - data_side).norm() / scale } else { 0.0 };
        Ok(DualityReport { control_side, data_side, residual })
    }
}

pub fn verify_duality(data: &InitialData, control: &ControlField, ms: &MovingSpectrum, adjoint: &AdjointData, order: usize) -> Result<DualityReport> {
    DualityCheck::new(data, control, ms, order)?.evaluate(adjoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{assemble_gram, assemble_moments, synthesize_control, SynthesisMethod};
    use crate::memory::MemoryCoefficient;
    use crate::moving::build_moving_spectrum;
    use crate::spectrum::{build_eigenvalue_table, Backend, FractionalOrder};
    use rand::{Rng, SeedableRng};

    fn spectrum(n: usize) -> MovingSpectrum {
        let t = build_eigenvalue_table(FractionalOrder::new(0.75).unwrap(), n, Backend::Asymptotic).unwrap();
        build_moving_spectrum(&t, MemoryCoefficient::new(0.5).unwrap(), 1.0, n).unwrap()
    }

    fn controlled(n: usize, seed: u64) -> (MovingSpectrum, InitialData, ControlField) {
        let ms = spectrum(n);
        let g = assemble_gram(&ms, Interval::new(-0.3, 0.3).unwrap(), 1.05 * ms.threshold()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = InitialData::random_smooth(&ms, &mut rng);
        let cf = synthesize_control(&assemble_moments(&d, &ms).unwrap(), &g, SynthesisMethod::Direct).unwrap();
        (ms, d, cf)
    }

    #[test]
    fn propagator_exponents_solve_the_block() {
        let ms = spectrum(10);
        for f in [Forcing::Moving, Forcing::FixedMoving] {
            let p = ModePropagator::new(&ms, f);
            assert!(p.characteristic_residual() < 1e-10);
            assert!(p.block_spectrum_defect() < 1e-9, "{}", p.block_spectrum_defect());
        }
    }

    #[test]
    fn zero_data_zero_control_stays_zero() {
        let ms = spectrum(4);
        let sim = Simulator::new(&ms, Forcing::Moving, Projection::Orthogonal, None).unwrap();
        let s = sim.state_at(&GalerkinState::zero(4, Frame::Moving), 5.0).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn controlled_run_reaches_rest() {
        let (ms, d, cf) = controlled(8, 11);
        let rep = run_to_t(&d, &cf, &ms, Projection::Orthogonal).unwrap();
        assert!(rep.pass, "{:?}", rep.relative);
        // without control the state does not vanish
        let sim = Simulator::new(&ms, Forcing::Moving, Projection::Orthogonal, None).unwrap();
        let free = sim.state_at(&GalerkinState::initial(&d, &ms, Frame::Moving).unwrap(), cf.t_horizon).unwrap();
        assert!(free.norms(&ms)[0] > 1e-3 * d.norm(&ms));
    }

    #[test]
    fn stepping_agrees_with_one_shot() {
        let (ms, d, cf) = controlled(4, 2);
        let sim = Simulator::new(&ms, Forcing::Moving, Projection::Orthogonal, Some(&cf)).unwrap();
        let s0 = GalerkinState::initial(&d, &ms, Frame::Moving).unwrap();
        let one = sim.state_at(&s0, 7.5).unwrap();
        let mut s = s0.clone();
        for _ in 0..10 {
            s = sim.step_exact(&s, 0.75).unwrap();
        }
        assert!(s.max_abs_diff(&one) < 1e-11 * one.max_abs(), "{}", s.max_abs_diff(&one) / one.max_abs());
    }

    #[test]
    fn frames_round_trip_and_coincide_at_zero() {
        let (ms, d, _) = controlled(4, 4);
        let s0 = GalerkinState::initial(&d, &ms, Frame::Moving).unwrap();
        let f0 = map_frames(&s0, &ms, FrameDirection::MovingToFixed).unwrap();
        assert_eq!(f0.xi, s0.xi);
        let fixed0 = GalerkinState::initial(&d, &ms, Frame::Fixed).unwrap();
        assert!(f0.max_abs_diff(&fixed0) < 1e-15);
        let mut s = s0.clone();
        s.t = 3.7;
        let back = map_frames(&map_frames(&s, &ms, FrameDirection::MovingToFixed).unwrap(), &ms, FrameDirection::FixedToMoving).unwrap();
        assert!(back.max_abs_diff(&s) < 1e-14 * s.max_abs());
    }

    #[test]
    fn frame_covariance() {
        let (ms, d, cf) = controlled(6, 8);
        let mov = Simulator::new(&ms, Forcing::Moving, Projection::Orthogonal, Some(&cf)).unwrap();
        let fix = Simulator::new(&ms, Forcing::FixedMoving, Projection::Orthogonal, Some(&cf)).unwrap();
        for t in [2.0, 9.0, cf.t_horizon] {
            let a = mov.state_at(&GalerkinState::initial(&d, &ms, Frame::Moving).unwrap(), t).unwrap();
            let b = fix.state_at(&GalerkinState::initial(&d, &ms, Frame::Fixed).unwrap(), t).unwrap();
            let a_fixed = map_frames(&a, &ms, FrameDirection::MovingToFixed).unwrap();
            let scale = d.y0.iter().chain(&d.y1).map(|z| z.norm()).fold(0.0, f64::max);
            assert!(a_fixed.max_abs_diff(&b) < 1e-7 * scale, "{t}: {}", a_fixed.max_abs_diff(&b));
        }
    }

    #[test]
    fn memory_follows_displacement() {
        let (ms, d, cf) = controlled(4, 6);
        for (f, fr) in [(Forcing::Moving, Frame::Moving), (Forcing::FixedMoving, Frame::Fixed)] {
            let sim = Simulator::new(&ms, f, Projection::Orthogonal, Some(&cf)).unwrap();
            let s0 = GalerkinState::initial(&d, &ms, fr).unwrap();
            let e = memory_consistency(&sim, &s0, &ms, 6.0, 60).unwrap();
            assert!(e < 1e-8, "{e}");
        }
    }

    #[test]
    fn homogeneous_reversibility() {
        let (ms, d, _) = controlled(8, 7);
        let s0 = GalerkinState::initial(&d, &ms, Frame::Moving).unwrap();
        assert!(reversibility_defect(&ms, &s0, 10.0).unwrap() < 1e-9);
    }

    #[test]
    fn duality_with_single_and_random_adjoint_data() {
        let (ms, d, cf) = controlled(4, 12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..3 {
            let beta = (0..ms.len()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let rep = verify_duality(&d, &cf, &ms, &AdjointData { beta }, 16).unwrap();
            assert!(rep.residual < 1e-5, "{rep:?}");
        }
        // single eigenvector: data side equals conj(e^{lambda T}) b
        let sys = assemble_moments(&d, &ms).unwrap();
        let mut beta = alloc::vec![Complex64::new(0.0, 0.0); ms.len()];
        beta[5] = Complex64::new(1.0, 0.0);
        let rep = verify_duality(&d, &cf, &ms, &AdjointData { beta }, 16).unwrap();
        let want = (ms.lambdas()[5] * cf.t_horizon).exp().conj() * sys.rhs[5];
        assert!((rep.data_side - want).norm() < 1e-12 * want.norm());
        assert!(rep.residual < 1e-5);
    }

    #[test]
    fn plane_wave_gram_report() {
        let ms = spectrum(16);
        let pw = plane_wave_gram(&ms);
        for k in 0..32 {
            assert_eq!(pw.matrix[(k, k)], Complex64::new(2.0, 0.0));
        }
        assert!(pw.hermitian_defect < 1e-14);
        assert!(pw.deviation > 0.1);
    }
}
