//! Eigenvalue tables for the fractional Dirichlet Laplacian on (-1, 1) and direct
//! evaluation of the singular-integral operator on sampled functions.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{gamma, hurwitz_zeta};

/// Gap tolerance used for the threshold scan of a table.
pub const GAP_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s < 1.0 {
            Ok(FractionalOrder(s))
        } else {
            Err(Error::FractionalOrder(s, "(0, 1)"))
        }
    }

    /// Orders admissible for the spectral and control stages.
    pub fn new_control(s: f64) -> Result<Self> {
        if s > 0.5 && s < 1.0 {
            Ok(FractionalOrder(s))
        } else {
            Err(Error::FractionalOrder(s, "(1/2, 1)"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn require_control(self) -> Result<Self> {
        Self::new_control(self.0)
    }
}

/// Normalisation constant of the singular integral.
pub fn c_s(s: f64) -> f64 {
    s * 4f64.powf(s) * gamma(0.5 + s) / (PI.sqrt() * gamma(1.0 - s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// `rho_n = (n pi/2 - (1-s) pi/4)^{2s}`.
    Asymptotic,
    /// Dense collocation on `points` uniform intervals of (-1, 1).
    Discretized { points: usize },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Asymptotic => "asymptotic",
            Backend::Discretized { .. } => "discretized",
        }
    }

    /// Discretized backend with a default resolution for `n_max` eigenvalues.
    pub fn discretized_for(n_max: usize) -> Self {
        Backend::Discretized { points: (16 * n_max).max(256) }
    }
}

#[derive(Debug, Clone)]
pub struct EigenvalueTable {
    pub s: FractionalOrder,
    pub n_max: usize,
    /// `rho[n-1]` approximates the n-th eigenvalue.
    pub rho: Vec<f64>,
    pub backend: Backend,
    /// Minimum of `rho_{n+1}^{1/(2s)} - rho_n^{1/(2s)}` over `n >= gap_threshold`.
    pub gap_gamma: f64,
    /// First index from which every gap in the table is at least `pi/2 - GAP_TOL`.
    pub gap_threshold: Option<usize>,
    /// Max eigen-residual of the discretized solve (zero for the asymptotic backend).
    pub residual: f64,
}

impl EigenvalueTable {
    pub fn rho(&self, n: usize) -> f64 {
        self.rho[n - 1]
    }

    /// `rho_n^{1/(2s)}`.
    pub fn root(&self, n: usize) -> f64 {
        self.rho[n - 1].powf(0.5 / self.s.get())
    }

    /// Gaps `rho_{n+1}^{1/(2s)} - rho_n^{1/(2s)}` for `n = 1..n_max-1`.
    pub fn gaps(&self) -> Vec<f64> {
        (1..self.n_max).map(|n| self.root(n + 1) - self.root(n)).collect()
    }

    pub fn is_increasing(&self) -> bool {
        self.rho.windows(2).all(|w| w[0] < w[1])
    }

    /// True when the table satisfies its documented invariants.
    pub fn is_valid(&self) -> bool {
        self.is_increasing()
            && self.rho.iter().all(|r| *r > 0.0)
            && self.gap_gamma >= PI / 2.0 - GAP_TOL
    }

    /// Table restricted to the first `n` entries.
    pub fn truncated(&self, n: usize) -> Result<EigenvalueTable> {
        if n == 0 || n > self.n_max {
            return Err(Error::InvalidInput(alloc::format!("cannot truncate {} rows to {}", self.n_max, n)));
        }
        let rho = self.rho[..n].to_vec();
        let (gap_gamma, gap_threshold) = gap_scan(self.s.get(), &rho);
        Ok(EigenvalueTable { rho, n_max: n, gap_gamma, gap_threshold, ..self.clone() })
    }
}

fn gap_scan(s: f64, rho: &[f64]) -> (f64, Option<usize>) {
    if rho.len() < 2 {
        return (PI / 2.0, None);
    }
    let r: Vec<f64> = rho.iter().map(|x| x.powf(0.5 / s)).collect();
    let g: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    let mut threshold = None;
    for n in (1..=g.len()).rev() {
        if g[n - 1] >= PI / 2.0 - GAP_TOL {
            threshold = Some(n);
        } else {
            break;
        }
    }
    let gamma = match threshold {
        Some(n0) => g[n0 - 1..].iter().copied().fold(f64::INFINITY, f64::min),
        None => g[g.len() / 2..].iter().copied().fold(f64::INFINITY, f64::min),
    };
    (gamma, threshold)
}

pub fn asymptotic_eigenvalue(s: f64, n: usize) -> f64 {
    (n as f64 * PI / 2.0 - (1.0 - s) * PI / 4.0).powf(2.0 * s)
}

pub fn build_eigenvalue_table(s: FractionalOrder, n_max: usize, backend: Backend) -> Result<EigenvalueTable> {
    if n_max == 0 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    let sv = s.get();
    let (rho, residual) = match backend {
        Backend::Asymptotic => ((1..=n_max).map(|n| asymptotic_eigenvalue(sv, n)).collect(), 0.0),
        Backend::Discretized { points } => discretized_eigenvalues(sv, n_max, points)?,
    };
    let (gap_gamma, gap_threshold) = gap_scan(sv, &rho);
    Ok(EigenvalueTable { s, n_max, rho, backend, gap_gamma, gap_threshold, residual })
}

/// Collocation matrix of the operator on the interior nodes of a uniform grid with
/// `points` intervals; exterior values are zero.
pub fn collocation_matrix(s: f64, points: usize) -> DMatrix<f64> {
    let n = points - 1;
    let h = 2.0 / points as f64;
    let cs = c_s(s);
    let scale = cs * h.powf(-2.0 * s);
    // full-line lattice sum (interior and exterior nodes) plus the local singular correction
    let local = -hurwitz_zeta(2.0 * s - 1.0, 1.0);
    let diag = scale * (2.0 * hurwitz_zeta(1.0 + 2.0 * s, 1.0) + 2.0 * local);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag
        } else {
            let k = (i as f64 - j as f64).abs();
            let mut v = -scale * k.powf(-1.0 - 2.0 * s);
            if k == 1.0 {
                v -= scale * local;
            }
            v
        }
    })
}

/// Even and odd blocks of a symmetric persymmetric matrix; their spectra together form
/// the spectrum of `a`.
pub fn persymmetric_blocks(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = n / 2;
    let odd = DMatrix::from_fn(m, m, |i, j| a[(i, j)] - a[(i, n - 1 - j)]);
    let even = if n.is_multiple_of(2) {
        DMatrix::from_fn(m, m, |i, j| a[(i, j)] + a[(i, n - 1 - j)])
    } else {
        let r2 = 2f64.sqrt();
        DMatrix::from_fn(m + 1, m + 1, |i, j| match (i == m, j == m) {
            (false, false) => a[(i, j)] + a[(i, n - 1 - j)],
            (false, true) => r2 * a[(i, m)],
            (true, false) => r2 * a[(m, j)],
            (true, true) => a[(m, m)],
        })
    };
    (even, odd)
}

fn block_spectrum(a: DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    if a.nrows() == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let eig = SymmetricEigen::try_new(a.clone(), 1e-14, 10_000).ok_or(Error::EigenSolve(f64::NAN))?;
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut residual: f64 = 0.0;
    for i in 0..eig.eigenvalues.len() {
        let v = eig.eigenvectors.column(i);
        let r = (&a * v - v * eig.eigenvalues[i]).norm() / v.norm();
        residual = residual.max(r / scale);
    }
    Ok((eig.eigenvalues.iter().copied().collect(), residual))
}

fn discretized_eigenvalues(s: f64, n_max: usize, points: usize) -> Result<(Vec<f64>, f64)> {
    if points < 2 * n_max + 2 {
        return Err(Error::InvalidInput(alloc::format!(
            "{} grid intervals cannot resolve {} eigenvalues",
            points,
            n_max
        )));
    }
    let (even, odd) = persymmetric_blocks(&collocation_matrix(s, points));
    let (mut ev, r1) = block_spectrum(even)?;
    let (od, r2) = block_spectrum(odd)?;
    ev.extend(od);
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    ev.truncate(n_max);
    let residual = r1.max(r2);
    if residual > 1e-8 || ev.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::EigenSolve(residual));
    }
    Ok((ev, residual))
}

/// Comparison of two tables in root units `rho^{1/(2s)}`.
#[derive(Debug, Clone)]
pub struct BackendAgreement {
    /// `|r_a(n) - r_b(n)|` for each row.
    pub diffs: Vec<f64>,
    /// Median of `n * diffs[n]`.
    pub fitted_c: f64,
    /// Rows with `diffs[n] > 5 fitted_c / n`.
    pub flagged_rows: Vec<usize>,
    /// Max relative disagreement of `rho` over rows `n <= 32`.
    pub max_rel_rho_low: f64,
}

pub fn compare_backends(a: &EigenvalueTable, b: &EigenvalueTable) -> BackendAgreement {
    let n = a.n_max.min(b.n_max);
    let diffs: Vec<f64> = (1..=n).map(|k| (a.root(k) - b.root(k)).abs()).collect();
    let mut scaled: Vec<f64> = diffs.iter().enumerate().map(|(i, d)| d * (i + 1) as f64).collect();
    scaled.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    let fitted_c = scaled[scaled.len() / 2];
    let flagged_rows = diffs
        .iter()
        .enumerate()
        .filter(|(i, d)| **d > 5.0 * fitted_c / (*i + 1) as f64)
        .map(|(i, _)| i + 1)
        .collect();
    let max_rel_rho_low = (1..=n.min(32))
        .map(|k| (a.rho(k) - b.rho(k)).abs() / b.rho(k))
        .fold(0.0, f64::max);
    BackendAgreement { diffs, fitted_c, flagged_rows, max_rel_rho_low }
}

/// Samples of a function on the uniform grid `a + i h`, `i = 0..values.len()`.
#[derive(Debug, Clone)]
pub struct OperatorSample {
    pub a: f64,
    pub h: f64,
    pub values: Vec<Complex64>,
    /// Principal-value truncation radius; rounded to a whole number of grid steps.
    pub epsilon: f64,
    pub s: FractionalOrder,
    pub c_s: f64,
}

impl OperatorSample {
    pub fn new(a: f64, h: f64, values: Vec<Complex64>, epsilon: f64, s: FractionalOrder) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput("grid spacing must be positive".into()));
        }
        if !(epsilon > 0.0) || epsilon < h * (1.0 - 1e-9) {
            return Err(Error::InvalidInput(alloc::format!(
                "epsilon {epsilon} below grid resolution {h}"
            )));
        }
        if values.len() < 5 {
            return Err(Error::InvalidInput("need at least five samples".into()));
        }
        Ok(OperatorSample { a, h, values, epsilon, s, c_s: c_s(s.get()) })
    }

    pub fn from_fn(a: f64, b: f64, h: f64, epsilon: f64, s: FractionalOrder, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let n = ((b - a) / h).round() as usize + 1;
        let values = (0..n).map(|i| f(a + h * i as f64)).collect();
        Self::new(a, h, values, epsilon, s)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.a + self.h * i as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn steps_in_epsilon(&self) -> usize {
        ((self.epsilon / self.h) + 1e-9).floor().max(1.0) as usize
    }
}

/// Operator applied at every grid point; each point uses the symmetric reach available
/// inside the window.
pub fn apply_fractional_laplacian(f: &OperatorSample) -> Vec<Complex64> {
    let idx: Vec<usize> = (0..f.len()).collect();
    apply_at(f, &idx)
}

/// Operator applied at selected grid indices.
pub fn apply_at(f: &OperatorSample, indices: &[usize]) -> Vec<Complex64> {
    let s = f.s.get();
    let h = f.h;
    let m = f.steps_in_epsilon();
    let local = -h.powf(2.0 - 2.0 * s) * hurwitz_zeta(2.0 * s - 1.0, m as f64);
    let n = f.len();
    indices
        .iter()
        .map(|&i| {
            let reach = i.min(n - 1 - i);
            let u = |k: isize| f.values[(i as isize + k) as usize];
            let ui = u(0);
            if reach < 2 {
                return Complex64::new(0.0, 0.0);
            }
            let g = |k: usize| ui * 2.0 - u(k as isize) - u(-(k as isize));
            let q0 = (g(1) * 4.0 - g(2) * 0.25) / (3.0 * h * h);
            let near = q0 * local;
            let kmax = reach;
            let kmin_avg = (kmax / 2).max(m);
            let mut partial = Complex64::new(0.0, 0.0);
            let mut side_sum = Complex64::new(0.0, 0.0);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut wsum = 0.0;
            let span = (kmax - kmin_avg + 2) as f64;
            for k in 1..=kmax {
                let up = u(k as isize);
                let um = u(-(k as isize));
                side_sum += up + um;
                if k >= m {
                    let z = h * k as f64;
                    partial += (ui * 2.0 - up - um) * (h * z.powf(-1.0 - 2.0 * s));
                }
                if k >= kmin_avg && k >= m {
                    let zt = h * (k as f64 + 0.5);
                    let mean = side_sum / k as f64;
                    let tail = (ui * 2.0 - mean) * (zt.powf(-2.0 * s) / (2.0 * s));
                    // raised-cosine weight over the reach window damps the oscillatory remainder
                    let w = (PI * (k - kmin_avg + 1) as f64 / span).sin().powi(2);
                    acc += (partial + tail) * w;
                    wsum += w;
                }
            }
            let far = if wsum > 0.0 { acc / wsum } else { partial };
            (far + near) * f.c_s
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SymbolCheck {
    pub pass: bool,
    pub max_rel_error: f64,
}

/// Default grid for symbol checks: spacing 1/32 on a window of half-width 160.
pub const SYMBOL_H: f64 = 1.0 / 32.0;
pub const SYMBOL_HALF_WIDTH: f64 = 160.0;
/// Spacings of the refinement ladder.
pub const REFINEMENT_LADDER: [f64; 5] = [0.5, 0.25, 0.125, 0.0625, 0.03125];

/// Relative error of the operator on `e^{i kappa x}` against `|kappa|^{2s} e^{i kappa x}`,
/// measured on the points of [-1, 1].
pub fn symbol_error(kappa: f64, s: FractionalOrder, h: f64, half_width: f64) -> Result<f64> {
    if kappa == 0.0 {
        return Err(Error::InvalidInput("zero frequency excluded".into()));
    }
    let f = OperatorSample::from_fn(-half_width, half_width, h, h, s, |x| Complex64::new(0.0, kappa * x).exp())?;
    let idx: Vec<usize> = (0..f.len()).filter(|&i| f.x(i).abs() <= 1.0 + 1e-12).collect();
    let vals = apply_at(&f, &idx);
    let sym = kappa.abs().powf(2.0 * s.get());
    let mut err: f64 = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let target = f.values[i] * sym;
        err = err.max((vals[k] - target).norm() / target.norm());
    }
    Ok(err)
}

pub fn verify_symbol_identity(kappa: f64, s: FractionalOrder, tol: f64) -> Result<SymbolCheck> {
    let e = symbol_error(kappa, s, SYMBOL_H, SYMBOL_HALF_WIDTH)?;
    Ok(SymbolCheck { pass: e <= tol, max_rel_error: e })
}

/// Errors along a refinement ladder and the least-squares slope of `log e` against `log h`.
#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub order: f64,
}

pub fn symbol_refinement(kappa: f64, s: FractionalOrder, ladder: &[f64]) -> Result<RefinementReport> {
    if ladder.len() < 2 {
        return Err(Error::InvalidInput("refinement ladder needs two spacings".into()));
    }
    let errors = ladder
        .iter()
        .map(|&h| symbol_error(kappa, s, h, SYMBOL_HALF_WIDTH))
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = ladder.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(RefinementReport { h: ladder.to_vec(), errors, order: sxy / sxx })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(s: f64) -> FractionalOrder {
        FractionalOrder::new(s).unwrap()
    }

    #[test]
    fn c_s_half_is_one_over_pi() {
        // s = 1/2: C = (1/2) 2 Gamma(1) / (sqrt(pi) Gamma(1/2)) = 1/pi
        assert!((c_s(0.5) - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn order_range_enforced() {
        assert!(FractionalOrder::new(0.0).is_err());
        assert!(FractionalOrder::new(1.0).is_err());
        assert!(FractionalOrder::new_control(0.5).is_err());
        assert!(FractionalOrder::new_control(0.75).is_ok());
    }

    #[test]
    fn first_asymptotic_eigenvalue() {
        let t = build_eigenvalue_table(order(0.75), 1, Backend::Asymptotic).unwrap();
        let expect = (PI / 2.0 - PI / 16.0).powf(1.5);
        assert!((t.rho(1) - expect).abs() < 1e-14);
    }

    #[test]
    fn asymptotic_gap_is_half_pi() {
        let t = build_eigenvalue_table(order(0.6), 200, Backend::Asymptotic).unwrap();
        assert!(t.is_valid());
        assert_eq!(t.gap_threshold, Some(1));
        assert!((t.gap_gamma - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn near_local_limit_spacing() {
        let t = build_eigenvalue_table(order(0.999), 4, Backend::Asymptotic).unwrap();
        for g in t.gaps() {
            assert!((g - PI / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_maps_to_zero() {
        let f = OperatorSample::from_fn(-4.0, 4.0, 0.05, 0.05, order(0.7), |_| Complex64::new(2.5, -1.0)).unwrap();
        for v in apply_fractional_laplacian(&f) {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn epsilon_below_resolution_rejected() {
        let r = OperatorSample::from_fn(-1.0, 1.0, 0.1, 0.05, order(0.7), |_| Complex64::new(1.0, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn zero_frequency_rejected() {
        assert!(verify_symbol_identity(0.0, order(0.75), 1e-3).is_err());
    }

    #[test]
    fn persymmetric_split_preserves_spectrum() {
        for points in [11usize, 12] {
            let a = collocation_matrix(0.7, points);
            let full = crate::linalg::symmetric_eigenvalues(&a);
            let (e, o) = persymmetric_blocks(&a);
            let mut split = crate::linalg::symmetric_eigenvalues(&e);
            split.extend(crate::linalg::symmetric_eigenvalues(&o));
            split.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in full.iter().zip(split.iter()) {
                assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn discretized_matrix_is_symmetric() {
        let a = collocation_matrix(0.75, 40);
        assert!((&a - a.transpose()).amax() < 1e-12);
    }
}
