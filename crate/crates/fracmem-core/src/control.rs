//! Truncated moment problem in the moving frame and its minimum-norm solution.
//!
//! Constraint functionals are `E_n^j(t, x) = e^{-i kappa_n x} e^{-conj(lambda_n^j) t}` on
//! `(0, T) x omega0`; the control is `u = sum a conj(E)` with `G a = b`.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::dd::{Cdd, Dd};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, hermitian_part, matvec_dd, solve_dd_ext, solve_dd_scaled, solve_tikhonov_dd};
use crate::moving::{ModeIndex, MovingSpectrum};
use crate::quad::composite;

/// Scaled condition numbers above this are not trusted to the double-double solve.
pub const CONDITION_BUDGET: f64 = 1e24;
/// Relative moment residual required of the direct solve.
pub const SOLVER_TOL: f64 = 1e-12;
/// Relative moment residual the regularised solve must reach.
pub const REGULARIZED_TOL: f64 = 1e-8;
/// Hermitian defect of an assembled Gram treated as an assembly bug.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Control region `omega0 = (a, b)` inside the reference interval `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b || a < -1.0 || b > 1.0 {
            return Err(Error::InvalidInput(alloc::format!("({a}, {b}) is not a sub-interval of (-1, 1)")));
        }
        Ok(Interval { a, b })
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.a && x < self.b
    }
}

/// `e^w - 1` without cancellation.
pub fn expm1c(w: Complex64) -> Complex64 {
    let s = libm::sin(0.5 * w.im);
    Complex64::new(libm::expm1(w.re) * libm::cos(w.im) - 2.0 * s * s, libm::exp(w.re) * libm::sin(w.im))
}

/// `(e^w - 1)/w`, equal to 1 at `w = 0`.
fn expm1_ratio(w: Complex64) -> Complex64 {
    if w.norm() < 1e-4 {
        let one = Complex64::new(1.0, 0.0);
        one + w * (one / 2.0 + w * (one / 6.0 + w / 24.0))
    } else {
        expm1c(w) / w
    }
}

/// `int_0^t e^{-z tau} d tau`.
pub fn time_factor(z: Complex64, t: f64) -> Complex64 {
    expm1_ratio(-z * t) * t
}

/// `int_omega e^{i q x} dx`.
pub fn space_factor(q: f64, w: Interval) -> Complex64 {
    let l = w.len();
    Complex64::new(0.0, q * w.a).exp() * expm1_ratio(Complex64::new(0.0, q * l)) * l
}

/// Plane-wave coefficients of the initial displacement and velocity, slot order
/// `n = -N..=-1, 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub n_trunc: usize,
    pub y0: Vec<Complex64>,
    pub y1: Vec<Complex64>,
    /// Regularity exponents of the weighted norms of `(y0, y1)`.
    pub sigma: [f64; 2],
}

pub fn slot(n_trunc: usize, n: i64) -> Option<usize> {
    if n == 0 || n.unsigned_abs() as usize > n_trunc {
        None
    } else if n < 0 {
        Some((n + n_trunc as i64) as usize)
    } else {
        Some(n_trunc + n as usize - 1)
    }
}

pub fn slot_n(n_trunc: usize, k: usize) -> i64 {
    if k < n_trunc {
        k as i64 - n_trunc as i64
    } else {
        (k - n_trunc) as i64 + 1
    }
}

impl InitialData {
    pub fn new(n_trunc: usize, y0: Vec<Complex64>, y1: Vec<Complex64>) -> Result<Self> {
        if y0.len() != 2 * n_trunc || y1.len() != 2 * n_trunc {
            return Err(Error::InvalidInput(alloc::format!(
                "data of lengths {}/{} for truncation {n_trunc}",
                y0.len(),
                y1.len()
            )));
        }
        if y0.iter().chain(&y1).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidInput("non-finite data coefficient".into()));
        }
        Ok(InitialData { n_trunc, y0, y1, sigma: [3.0, 2.0] })
    }

    pub fn zero(n_trunc: usize) -> Self {
        let z = alloc::vec![Complex64::new(0.0, 0.0); 2 * n_trunc];
        InitialData { n_trunc, y0: z.clone(), y1: z, sigma: [3.0, 2.0] }
    }

    /// `y0_n = c0 delta_{n, n0}`, `y1_n = c1 delta_{n, n0}`.
    pub fn single(n_trunc: usize, n0: i64, c0: Complex64, c1: Complex64) -> Result<Self> {
        let k = slot(n_trunc, n0).ok_or_else(|| Error::InvalidInput(alloc::format!("mode {n0} outside truncation")))?;
        let mut d = InitialData::zero(n_trunc);
        d.y0[k] = c0;
        d.y1[k] = c1;
        Ok(d)
    }

    /// `y0_n = rho^{-3} r`, `y1_n = rho^{-2} r'` with `r, r'` uniform in the unit square centred at 0.
    pub fn random_smooth<R: Rng + ?Sized>(ms: &MovingSpectrum, rng: &mut R) -> Self {
        let n = ms.n_trunc;
        let mut d = InitialData::zero(n);
        for k in 0..2 * n {
            let rho = ms.rho(slot_n(n, k).unsigned_abs() as usize);
            d.y0[k] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) / (rho * rho * rho);
            d.y1[k] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) / (rho * rho);
        }
        d
    }

    pub fn y0_at(&self, n: i64) -> Complex64 {
        slot(self.n_trunc, n).map_or(Complex64::new(0.0, 0.0), |k| self.y0[k])
    }

    pub fn y1_at(&self, n: i64) -> Complex64 {
        slot(self.n_trunc, n).map_or(Complex64::new(0.0, 0.0), |k| self.y1[k])
    }

    pub fn scaled(&self, k: f64) -> Self {
        InitialData {
            n_trunc: self.n_trunc,
            y0: self.y0.iter().map(|z| z * k).collect(),
            y1: self.y1.iter().map(|z| z * k).collect(),
            sigma: self.sigma,
        }
    }

    /// `sqrt(|y0|_{sigma0}^2 + |y1|_{sigma1}^2)`.
    pub fn norm(&self, ms: &MovingSpectrum) -> f64 {
        let a = weighted_norm(ms, &self.y0, self.sigma[0]);
        let b = weighted_norm(ms, &self.y1, self.sigma[1]);
        libm::sqrt(a * a + b * b)
    }
}

/// `sqrt(sum rho_|n|^{2 sigma} |v_n|^2)` over slots `n = -N..=-1, 1..=N`.
pub fn weighted_norm(ms: &MovingSpectrum, v: &[Complex64], sigma: f64) -> f64 {
    let n = v.len() / 2;
    let mut acc = Dd::ZERO;
    for (k, z) in v.iter().enumerate() {
        let rho = ms.rho(slot_n(n, k).unsigned_abs() as usize);
        acc += Dd::from(libm::pow(rho, 2.0 * sigma)) * Dd::from(z.norm_sqr());
    }
    acc.sqrt().to_f64()
}

#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub modes: Vec<ModeIndex>,
    pub rhs: Vec<Complex64>,
}

/// `b_n^j = -2 (conj(mu_|n|^j) y0_n + y1_n)`.
pub fn assemble_moments(id: &InitialData, ms: &MovingSpectrum) -> Result<MomentSystem> {
    if id.n_trunc != ms.n_trunc {
        return Err(Error::InvalidInput(alloc::format!(
            "data truncation {} against spectrum truncation {}",
            id.n_trunc,
            ms.n_trunc
        )));
    }
    let rhs = ms.modes().iter().map(|md| (ms.mu(*md).conj() * id.y0_at(md.n) + id.y1_at(md.n)) * -2.0).collect();
    Ok(MomentSystem { modes: ms.modes().to_vec(), rhs })
}

/// Moment Gram `G[(n,j),(m,k)] = int int conj(E_{m,k}) E_{n,j}` with the data needed to
/// evaluate and rescale the control.
#[derive(Debug, Clone)]
pub struct MomentGram {
    pub matrix: DMatrix<Complex64>,
    pub modes: Vec<ModeIndex>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<Complex64>,
    /// `rho_|n|` per row, the diagonal preconditioner.
    pub rho: Vec<f64>,
    pub omega0: Interval,
    pub t_horizon: f64,
    pub hermitian_defect: f64,
}

pub fn gram_entry(kappa_n: f64, lambda_n: Complex64, kappa_m: f64, lambda_m: Complex64, omega0: Interval, t: f64) -> Complex64 {
    space_factor(kappa_m - kappa_n, omega0) * time_factor(lambda_m + lambda_n.conj(), t)
}

pub fn assemble_gram(ms: &MovingSpectrum, omega0: Interval, t_horizon: f64) -> Result<MomentGram> {
    if !(t_horizon > 0.0 && t_horizon.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!("horizon {t_horizon} must be positive")));
    }
    let modes = ms.modes().to_vec();
    let kappa: Vec<f64> = modes.iter().map(|md| ms.kappa(md.n)).collect();
    let lambda: Vec<Complex64> = ms.lambdas().to_vec();
    let rho: Vec<f64> = modes.iter().map(|md| ms.rho(md.abs_n())).collect();
    let k = modes.len();
    let matrix = DMatrix::from_fn(k, k, |r, c| gram_entry(kappa[r], lambda[r], kappa[c], lambda[c], omega0, t_horizon));
    let hd = hermitian_defect(&matrix);
    if hd > HERMITIAN_TOL {
        return Err(Error::Check(alloc::format!("moment Gram Hermitian defect {hd:.3e}")));
    }
    Ok(MomentGram { matrix, modes, kappa, lambda, rho, omega0, t_horizon, hermitian_defect: hd })
}

impl MomentGram {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `D G D` with `D = diag(rho)`.
    pub fn scaled(&self) -> DMatrix<Complex64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |r, c| self.matrix[(r, c)] * (self.rho[r] * self.rho[c]))
    }

    pub fn condition(&self) -> GramCondition {
        let raw = hermitian_eigenvalues(&self.matrix);
        let sc = hermitian_eigenvalues(&self.scaled());
        let cond = |ev: &[f64]| {
            let lo = ev.first().copied().unwrap_or(1.0);
            let hi = ev.last().copied().unwrap_or(1.0);
            if lo <= 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            }
        };
        let top = raw.last().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        GramCondition {
            raw: cond(&raw),
            scaled: cond(&sc),
            min_eig: raw.first().copied().unwrap_or(0.0),
            max_eig: raw.last().copied().unwrap_or(0.0),
            scaled_min_eig: sc.first().copied().unwrap_or(0.0),
            scaled_max_eig: sc.last().copied().unwrap_or(0.0),
            psd_defect: (-raw.first().copied().unwrap_or(0.0)).max(0.0) / top,
            hermitian_defect: self.hermitian_defect,
        }
    }

    /// `conj(a)^T G a`, accumulated in double-double.
    pub fn quadratic_form(&self, a: &[Cdd]) -> f64 {
        let ga = matvec_dd(&self.matrix, a);
        let mut acc = Cdd::ZERO;
        for (x, y) in a.iter().zip(&ga) {
            acc += x.conj() * *y;
        }
        acc.re.to_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramCondition {
    pub raw: f64,
    pub scaled: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub scaled_min_eig: f64,
    pub scaled_max_eig: f64,
    /// `max(0, -lambda_min)/lambda_max`.
    pub psd_defect: f64,
    pub hermitian_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMethod {
    Direct,
    Regularized,
}

impl SynthesisMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SynthesisMethod::Direct => "direct",
            SynthesisMethod::Regularized => "regularized",
        }
    }
}

/// `u(t, x) = sum a_{m,k} e^{i kappa_m x} e^{-lambda_m^k t}` on `(0, T) x omega0`, zero elsewhere.
#[derive(Debug, Clone)]
pub struct ControlField {
    pub modes: Vec<ModeIndex>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<Complex64>,
    pub coefficients: Vec<Complex64>,
    pub coefficients_dd: Vec<Cdd>,
    pub omega0: Interval,
    pub t_horizon: f64,
    pub method: SynthesisMethod,
    pub alpha: Option<f64>,
    pub gram_condition: GramCondition,
    /// `max |G a - b|`.
    pub residual: f64,
    pub relative_residual: f64,
    /// `sqrt(conj(a)^T G a)`.
    pub norm: f64,
    pub warnings: Vec<String>,
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn residual_of(g: &DMatrix<Complex64>, a: &[Cdd], b: &[Complex64]) -> f64 {
    matvec_dd(g, a).iter().zip(b).map(|(x, y)| (*x - Cdd::from(*y)).abs()).fold(0.0, f64::max)
}

pub fn synthesize_control(msys: &MomentSystem, gram: &MomentGram, method: SynthesisMethod) -> Result<ControlField> {
    if msys.modes != gram.modes {
        return Err(Error::InvalidInput("moment system and Gram use different index sets".into()));
    }
    let cond = gram.condition();
    let bmax = max_abs(&msys.rhs);
    let mut warnings = Vec::new();
    let mut method_used = method;
    if method == SynthesisMethod::Direct && !(cond.scaled <= CONDITION_BUDGET) {
        warnings.push(alloc::format!(
            "scaled Gram condition {:.3e} above budget {:.1e}; regularised solve used",
            cond.scaled,
            CONDITION_BUDGET
        ));
        method_used = SynthesisMethod::Regularized;
    }
    let scaled = gram.scaled();
    let db: Vec<Complex64> = msys.rhs.iter().zip(&gram.rho).map(|(b, r)| b * *r).collect();
    let undo = |c: &[Cdd]| -> Vec<Cdd> { c.iter().zip(&gram.rho).map(|(x, r)| x.scale(Dd::from(*r))).collect() };

    let mut alpha = None;
    let mut a: Option<Vec<Cdd>> = None;
    if method_used == SynthesisMethod::Direct {
        let bd: Vec<Cdd> = msys.rhs.iter().map(|z| Cdd::from(*z)).collect();
        match solve_dd_scaled(&gram.matrix, &bd, &gram.rho, 8) {
            Ok(sol) => a = Some(sol.x),
            Err(e) => {
                warnings.push(alloc::format!("direct solve failed ({e}); regularised solve used"));
                method_used = SynthesisMethod::Regularized;
            }
        }
    }
    if method_used == SynthesisMethod::Regularized {
        if bmax == 0.0 {
            a = Some(alloc::vec![Cdd::ZERO; gram.len()]);
            alpha = Some(0.0);
        } else {
            let top = cond.scaled_max_eig.abs().max(f64::MIN_POSITIVE);
            let mut exp = 2;
            while exp <= 32 && a.is_none() {
                let al = top * libm::pow(10.0, -(exp as f64));
                if let Ok(sol) = solve_tikhonov_dd(&scaled, &db, al) {
                    let cand = undo(&sol.x);
                    if residual_of(&gram.matrix, &cand, &msys.rhs) <= REGULARIZED_TOL * bmax {
                        a = Some(cand);
                        alpha = Some(al);
                    }
                }
                exp += 1;
            }
            if a.is_none() {
                return Err(Error::Check(alloc::format!(
                    "no Tikhonov parameter reaches relative residual {REGULARIZED_TOL:.0e}"
                )));
            }
        }
    }
    let a = a.unwrap_or_default();
    let residual = residual_of(&gram.matrix, &a, &msys.rhs);
    let relative_residual = if bmax > 0.0 { residual / bmax } else { residual };
    let tol = if method_used == SynthesisMethod::Direct { SOLVER_TOL } else { REGULARIZED_TOL };
    if relative_residual > tol {
        warnings.push(alloc::format!("relative moment residual {relative_residual:.3e} above {tol:.0e}"));
    }
    let norm = libm::sqrt(gram.quadratic_form(&a).max(0.0));
    Ok(ControlField {
        modes: gram.modes.clone(),
        kappa: gram.kappa.clone(),
        lambda: gram.lambda.clone(),
        coefficients: a.iter().map(|z| z.to_c64()).collect(),
        coefficients_dd: a,
        omega0: gram.omega0,
        t_horizon: gram.t_horizon,
        method: method_used,
        alpha,
        gram_condition: cond,
        residual,
        relative_residual,
        norm,
        warnings,
    })
}

impl ControlField {
    pub fn eval(&self, t: f64, x: f64) -> Complex64 {
        if !(t > 0.0 && t < self.t_horizon) || !self.omega0.contains(x) {
            return Complex64::new(0.0, 0.0);
        }
        self.coefficients
            .iter()
            .zip(self.kappa.iter().zip(&self.lambda))
            .map(|(a, (k, l))| a * Complex64::new(-l.re * t, k * x - l.im * t).exp())
            .sum()
    }

    /// Samples `u(t_i, x_k)` on a tensor grid, `out[i][k]`.
    pub fn eval_grid(&self, ts: &[f64], xs: &[f64]) -> Vec<Vec<Complex64>> {
        let blocks = group_by_n(&self.modes);
        let space: Vec<Vec<Complex64>> = blocks
            .iter()
            .map(|(i0, _)| xs.iter().map(|&x| Complex64::new(0.0, self.kappa[*i0] * x).exp()).collect())
            .collect();
        ts.iter()
            .map(|&t| {
                let inside_t = t > 0.0 && t < self.t_horizon;
                let time: Vec<Complex64> = blocks
                    .iter()
                    .map(|(i0, i1)| (*i0..*i1).map(|p| self.coefficients[p] * (-self.lambda[p] * t).exp()).sum())
                    .collect();
                xs.iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        if !inside_t || !self.omega0.contains(x) {
                            return Complex64::new(0.0, 0.0);
                        }
                        time.iter().zip(&space).map(|(a, sp)| a * sp[k]).sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Forcing `g_n(t) = int_omega0 u(t, x) e^{-i kappa_n x} dx` in closed form.
    pub fn projected(&self, kappa_n: f64, t: f64) -> Complex64 {
        if !(t > 0.0 && t < self.t_horizon) {
            return Complex64::new(0.0, 0.0);
        }
        self.coefficients
            .iter()
            .zip(self.kappa.iter().zip(&self.lambda))
            .map(|(a, (k, l))| a * space_factor(k - kappa_n, self.omega0) * (-l * t).exp())
            .sum()
    }
}

/// Contiguous `[start, end)` ranges of modes sharing `n`.
pub(crate) fn group_by_n(modes: &[ModeIndex]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < modes.len() {
        let mut j = i + 1;
        while j < modes.len() && modes[j].n == modes[i].n {
            j += 1;
        }
        out.push((i, j));
        i = j;
    }
    out
}

/// Tensor Gauss rule on `(0, T) x omega0` resolving frequencies up to `freq_t` and `freq_x`.
#[derive(Debug, Clone)]
pub struct SpaceTimeRule {
    pub t_nodes: Vec<f64>,
    pub t_weights: Vec<f64>,
    pub x_nodes: Vec<f64>,
    pub x_weights: Vec<f64>,
}

impl SpaceTimeRule {
    pub fn new(t_horizon: f64, omega0: Interval, freq_t: f64, freq_x: f64, order: usize) -> Self {
        // about one period per panel
        let pt = ((t_horizon * freq_t / (2.0 * core::f64::consts::PI)).ceil() as usize + 4).max(8);
        let px = ((omega0.len() * freq_x / (2.0 * core::f64::consts::PI)).ceil() as usize + 2).max(2);
        let (t_nodes, t_weights) = composite(0.0, t_horizon, pt, order);
        let (x_nodes, x_weights) = composite(omega0.a, omega0.b, px, order);
        SpaceTimeRule { t_nodes, t_weights, x_nodes, x_weights }
    }

    pub fn for_gram(g: &MomentGram, order: usize) -> Self {
        let ft = g.lambda.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
        let fx = g.kappa.iter().map(|k| k.abs()).fold(0.0, f64::max);
        SpaceTimeRule::new(g.t_horizon, g.omega0, 2.0 * ft, 2.0 * fx, order)
    }

    /// `int int f conj(g)` of two grid samples.
    pub fn inner(&self, f: &[Vec<Complex64>], g: &[Vec<Complex64>]) -> Complex64 {
        let mut acc = Cdd::ZERO;
        for (i, wt) in self.t_weights.iter().enumerate() {
            let mut row = Cdd::ZERO;
            for (k, wx) in self.x_weights.iter().enumerate() {
                row += Cdd::from(f[i][k] * g[i][k].conj() * *wx);
            }
            acc += row.scale(Dd::from(*wt));
        }
        acc.to_c64()
    }

    /// Samples of `sum_p c_p e^{i q_p x} e^{-z_p t}` grouped by equal `q`.
    pub fn sample_sum(&self, coeffs: &[Complex64], q: &[f64], z: &[Complex64]) -> Vec<Vec<Complex64>> {
        self.t_nodes
            .iter()
            .map(|&t| {
                self.x_nodes
                    .iter()
                    .map(|&x| {
                        coeffs
                            .iter()
                            .zip(q.iter().zip(z))
                            .map(|(c, (qq, zz))| c * Complex64::new(-zz.re * t, qq * x - zz.im * t).exp())
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// `int int u E_p` for every constraint functional of `gram`.
    pub fn moments(&self, u: &[Vec<Complex64>], gram: &MomentGram) -> Vec<Complex64> {
        let blocks = group_by_n(&gram.modes);
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); gram.len()];
        for (i0, i1) in blocks {
            // spatial projections per time node
            let proj: Vec<Complex64> = u
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(self.x_nodes.iter().zip(&self.x_weights))
                        .map(|(v, (x, w))| v * Complex64::new(0.0, -gram.kappa[i0] * x).exp() * *w)
                        .sum()
                })
                .collect();
            for p in i0..i1 {
                let lc = gram.lambda[p].conj();
                let mut acc = Cdd::ZERO;
                for ((t, w), g) in self.t_nodes.iter().zip(&self.t_weights).zip(&proj) {
                    acc += Cdd::from(g * (-lc * *t).exp() * *w);
                }
                out[p] = acc.to_c64();
            }
        }
        out
    }
}

/// Moments of the synthesised control by independent quadrature against `b`:
/// `max |l(u) - b| / max |b|`.
pub fn moment_quadrature_residual(cf: &ControlField, gram: &MomentGram, msys: &MomentSystem, order: usize) -> f64 {
    let rule = SpaceTimeRule::for_gram(gram, order);
    let u = cf.eval_grid(&rule.t_nodes, &rule.x_nodes);
    let l = rule.moments(&u, gram);
    let bmax = max_abs(&msys.rhs);
    let d = l.iter().zip(&msys.rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if bmax > 0.0 {
        d / bmax
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityReport {
    /// max over trials of `|Re <u, v_perp>| / (|u| |v_perp|)`.
    pub first_order: f64,
    /// min over trials of `(|u + h v_perp|^2 - |u|^2) / (h^2 |v_perp|^2)`, ideally 1.
    pub second_order: f64,
    pub trials: usize,
}

/// Perturbs the control along random directions projected onto the null space of the moment
/// functionals; all integrals by quadrature.
pub fn optimality_check<R: Rng + ?Sized>(cf: &ControlField, gram: &MomentGram, trials: usize, rng: &mut R) -> Result<OptimalityReport> {
    let rule = SpaceTimeRule::for_gram(gram, 16);
    let u = cf.eval_grid(&rule.t_nodes, &rule.x_nodes);
    let uu = rule.inner(&u, &u).re;
    let fmax_t = gram.lambda.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    let fmax_x = gram.kappa.iter().map(|k| k.abs()).fold(0.0, f64::max);
    let mut first: f64 = 0.0;
    let mut second = f64::INFINITY;
    for _ in 0..trials {
        let terms = 4;
        let c: Vec<Complex64> = (0..terms).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let q: Vec<f64> = (0..terms).map(|_| (2.0 * rng.random::<f64>() - 1.0) * fmax_x).collect();
        let z: Vec<Complex64> =
            (0..terms).map(|_| Complex64::new(0.3 * (2.0 * rng.random::<f64>() - 1.0), (2.0 * rng.random::<f64>() - 1.0) * fmax_t)).collect();
        let v = rule.sample_sum(&c, &q, &z);
        let l = rule.moments(&v, gram);
        let ld: Vec<Cdd> = l.iter().map(|z| Cdd::from(*z)).collect();
        let d = solve_dd_ext(&gram.matrix, &ld, 8)?;
        let dv = ControlField { coefficients: d.x_c64(), ..cf.clone() };
        let proj = dv.eval_grid(&rule.t_nodes, &rule.x_nodes);
        let vp: Vec<Vec<Complex64>> = v.iter().zip(&proj).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let vv = rule.inner(&vp, &vp).re;
        let uv = rule.inner(&u, &vp);
        if vv > 0.0 && uu > 0.0 {
            first = first.max(uv.re.abs() / libm::sqrt(uu * vv));
        }
        let h = 1e-3 * libm::sqrt(uu.max(1e-300) / vv.max(1e-300));
        let pert: Vec<Vec<Complex64>> = u.iter().zip(&vp).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y * h).collect()).collect();
        let grown = rule.inner(&pert, &pert).re - uu;
        if vv > 0.0 {
            second = second.min(grown / (h * h * vv));
        }
    }
    Ok(OptimalityReport { first_order: first, second_order: second, trials })
}

#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    /// Worst ratio `conj(a)^T G a / sum |a|^2/rho^2` over all probes.
    pub c_hat: f64,
    pub worst_random: f64,
    /// Smallest eigenvalue of `D G D`, the exact constant at this truncation.
    pub exact_min: f64,
    /// Ratio at the lowest eigenvector of `D G D`.
    pub eigenvector_ratio: f64,
    pub adversarial_pair: (ModeIndex, ModeIndex),
    pub adversarial_distance: f64,
    pub adversarial_ratio: f64,
    pub trials: usize,
    pub pass: bool,
}

pub fn observability_ratio(gram: &MomentGram, a: &[Complex64]) -> f64 {
    let ad: Vec<Cdd> = a.iter().map(|z| Cdd::from(*z)).collect();
    let num = gram.quadratic_form(&ad);
    let den: f64 = a.iter().zip(&gram.rho).map(|(z, r)| z.norm_sqr() / (r * r)).sum();
    num / den
}

/// Probes the weighted observability inequality with random vectors `a = rho g`, the minimiser on
/// the span of the two closest exponents, and the lowest eigenvector of `D G D`.
pub fn certify_observability<R: Rng + ?Sized>(gram: &MomentGram, trials: usize, rng: &mut R) -> Result<ObservabilityReport> {
    let k = gram.len();
    if k < 2 {
        return Err(Error::InvalidInput("observability needs at least two modes".into()));
    }
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let a: Vec<Complex64> =
            gram.rho.iter().map(|r| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * *r).collect();
        worst = worst.min(observability_ratio(gram, &a));
    }
    let (mut p, mut q, mut dist) = (0, 1, f64::INFINITY);
    for i in 0..k {
        for j in i + 1..k {
            let d = (gram.lambda[i] - gram.lambda[j]).norm();
            if d < dist {
                (p, q, dist) = (i, j, d);
            }
        }
    }
    // minimiser of the 2x2 Rayleigh quotient of D G D restricted to {p, q}
    let s = gram.scaled();
    let (h11, h22, h12) = (s[(p, p)].re, s[(q, q)].re, s[(p, q)]);
    let mean = 0.5 * (h11 + h22);
    let rad = libm::sqrt(0.25 * (h11 - h22) * (h11 - h22) + h12.norm_sqr());
    let lo = mean - rad;
    let (c1, c2) = if h12.norm() > 0.0 {
        (h12, Complex64::new(lo - h11, 0.0))
    } else if h11 <= h22 {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else {
        (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    };
    let mut a = alloc::vec![Complex64::new(0.0, 0.0); k];
    a[p] = c1 * gram.rho[p];
    a[q] = c2 * gram.rho[q];
    let adv = observability_ratio(gram, &a);

    let eig = nalgebra::SymmetricEigen::new(hermitian_part(&s));
    let imin = (0..k).min_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap_or(core::cmp::Ordering::Equal)).unwrap_or(0);
    let exact_min = eig.eigenvalues[imin];
    let v: Vec<Complex64> = (0..k).map(|i| eig.eigenvectors[(i, imin)] * gram.rho[i]).collect();
    let eigenvector_ratio = observability_ratio(gram, &v);

    let c_hat = worst.min(adv).min(eigenvector_ratio);
    let pass = c_hat > 0.0 && c_hat.is_finite() && exact_min > 0.0 && c_hat >= exact_min * (1.0 - 1e-6);
    Ok(ObservabilityReport {
        c_hat,
        worst_random: worst,
        exact_min,
        eigenvector_ratio,
        adversarial_pair: (gram.modes[p], gram.modes[q]),
        adversarial_distance: dist,
        adversarial_ratio: adv,
        trials,
        pass,
    })
}

/// `min(a, b) / max(a, b)` of two observability constants, e.g. at `N` and `2N`.
pub fn stability_ratio(a: &ObservabilityReport, b: &ObservabilityReport) -> f64 {
    a.c_hat.min(b.c_hat) / a.c_hat.max(b.c_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryCoefficient;
    use crate::moving::build_moving_spectrum;
    use crate::quad::GaussLegendre;
    use crate::spectrum::{build_eigenvalue_table, Backend, FractionalOrder};
    use rand::SeedableRng;

    fn spectrum(n: usize) -> MovingSpectrum {
        let t = build_eigenvalue_table(FractionalOrder::new(0.75).unwrap(), n, Backend::Asymptotic).unwrap();
        build_moving_spectrum(&t, MemoryCoefficient::new(0.5).unwrap(), 1.0, n).unwrap()
    }

    fn omega() -> Interval {
        Interval::new(-0.3, 0.3).unwrap()
    }

    #[test]
    fn factors_match_quadrature() {
        let gl = GaussLegendre::new(30);
        for &q in &[0.0, 1e-7, 0.8, -13.0] {
            let direct: Complex64 = gl.on(-0.3, 0.3).map(|(x, w)| Complex64::new(0.0, q * x).exp() * w).sum();
            assert!((direct - space_factor(q, omega())).norm() < 1e-14, "{q}");
        }
        let (ts, ws) = composite(0.0, 7.0, 20, 20);
        for z in [Complex64::new(0.0, 0.0), Complex64::new(1e-9, -2e-9), Complex64::new(-0.4, 3.0), Complex64::new(0.7, -11.0)] {
            let direct: Complex64 = ts.iter().zip(&ws).map(|(t, w)| (-z * *t).exp() * *w).sum();
            let f = time_factor(z, 7.0);
            assert!((direct - f).norm() < 1e-12 * f.norm().max(1.0), "{z}");
        }
    }

    #[test]
    fn single_mode_moments() {
        let ms = spectrum(4);
        let d = InitialData::single(4, 1, Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
        let sys = assemble_moments(&d, &ms).unwrap();
        for (md, b) in sys.modes.iter().zip(&sys.rhs) {
            if md.n == 1 {
                assert_eq!(*b, ms.mu(*md).conj() * -2.0);
            } else {
                assert_eq!(*b, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn gram_diagonal_and_psd() {
        let ms = spectrum(6);
        let t = 1.05 * ms.threshold();
        let g = assemble_gram(&ms, omega(), t).unwrap();
        for (p, l) in g.lambda.iter().enumerate() {
            let r = 2.0 * l.re;
            let want = 0.6 * (1.0 - libm::exp(-r * t)) / r;
            assert!((g.matrix[(p, p)].re - want).abs() < 1e-12 * want.abs());
        }
        let c = g.condition();
        assert!(c.psd_defect <= 1e-10);
        assert!(c.hermitian_defect <= 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_control() {
        let ms = spectrum(4);
        let g = assemble_gram(&ms, omega(), 1.05 * ms.threshold()).unwrap();
        let sys = assemble_moments(&InitialData::zero(4), &ms).unwrap();
        for m in [SynthesisMethod::Direct, SynthesisMethod::Regularized] {
            let cf = synthesize_control(&sys, &g, m).unwrap();
            assert!(cf.coefficients.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
            assert_eq!(cf.norm, 0.0);
            assert_eq!(cf.eval(1.0, 0.1), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn synthesis_meets_moments_and_is_linear() {
        let ms = spectrum(8);
        let g = assemble_gram(&ms, omega(), 1.05 * ms.threshold()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = InitialData::random_smooth(&ms, &mut rng);
        let sys = assemble_moments(&d, &ms).unwrap();
        let cf = synthesize_control(&sys, &g, SynthesisMethod::Direct).unwrap();
        assert!(cf.relative_residual < 1e-20, "{}", cf.relative_residual);
        assert!(cf.warnings.is_empty());
        let q = moment_quadrature_residual(&cf, &g, &sys, 16);
        assert!(q < 1e-6, "{q}");

        let sys2 = assemble_moments(&d.scaled(2.0), &ms).unwrap();
        let cf2 = synthesize_control(&sys2, &g, SynthesisMethod::Direct).unwrap();
        for (b1, b2) in sys.rhs.iter().zip(&sys2.rhs) {
            assert_eq!(*b1 * 2.0, *b2);
        }
        for (a1, a2) in cf.coefficients.iter().zip(&cf2.coefficients) {
            assert_eq!(*a1 * 2.0, *a2);
        }
        assert_eq!(cf.eval(3.0, 0.1) * 2.0, cf2.eval(3.0, 0.1));

        let reg = synthesize_control(&sys, &g, SynthesisMethod::Regularized).unwrap();
        assert!(reg.relative_residual <= REGULARIZED_TOL);
        assert!(reg.norm <= cf.norm * (1.0 + 1e-6));
    }

    #[test]
    fn control_vanishes_outside_support() {
        let ms = spectrum(4);
        let g = assemble_gram(&ms, omega(), 1.05 * ms.threshold()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sys = assemble_moments(&InitialData::random_smooth(&ms, &mut rng), &ms).unwrap();
        let cf = synthesize_control(&sys, &g, SynthesisMethod::Direct).unwrap();
        for &(t, x) in &[(-0.1, 0.0), (1.0, 0.5), (1.0, -0.31), (cf.t_horizon + 0.1, 0.0), (2.0, 0.3)] {
            assert_eq!(cf.eval(t, x), Complex64::new(0.0, 0.0));
        }
        assert!(cf.eval(2.0, 0.0).norm() > 0.0);
        let grid = cf.eval_grid(&[-1.0, 2.0], &[0.0, 0.9]);
        assert_eq!(grid[0][0], Complex64::new(0.0, 0.0));
        assert_eq!(grid[1][1], Complex64::new(0.0, 0.0));
        assert!((grid[1][0] - cf.eval(2.0, 0.0)).norm() < 1e-12 * cf.eval(2.0, 0.0).norm());
    }

    #[test]
    fn minimum_norm_is_first_order_optimal() {
        let ms = spectrum(4);
        let g = assemble_gram(&ms, omega(), 1.05 * ms.threshold()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let sys = assemble_moments(&InitialData::random_smooth(&ms, &mut rng), &ms).unwrap();
        let cf = synthesize_control(&sys, &g, SynthesisMethod::Direct).unwrap();
        let rep = optimality_check(&cf, &g, 5, &mut rng).unwrap();
        assert!(rep.first_order < 1e-8, "{rep:?}");
        assert!((rep.second_order - 1.0).abs() < 1e-3, "{rep:?}");
    }

    #[test]
    fn observability_single_mode_and_adversarial() {
        let ms = spectrum(6);
        let g = assemble_gram(&ms, omega(), 1.05 * ms.threshold()).unwrap();
        let mut a = alloc::vec![Complex64::new(0.0, 0.0); g.len()];
        a[4] = Complex64::new(0.3, -0.2);
        let r = observability_ratio(&g, &a);
        let want = g.rho[4] * g.rho[4] * g.matrix[(4, 4)].re;
        assert!((r - want).abs() < 1e-12 * want);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rep = certify_observability(&g, 50, &mut rng).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.c_hat - rep.exact_min).abs() < 1e-8 * rep.exact_min);
        assert!(rep.worst_random >= rep.exact_min && rep.adversarial_ratio >= rep.exact_min);
    }
}
