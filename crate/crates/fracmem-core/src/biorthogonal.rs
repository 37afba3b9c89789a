//! Biorthogonal family to `e^{-conj(lambda) t}` on `(-T/2, T/2)` by Fourier inversion of
//! `P(z) M(z) / ((z - zeta_m) P'(zeta_m) M(zeta_m))`, followed by a Gram correction.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, solve_dd};
use crate::moving::{ModeIndex, MovingSpectrum};
use crate::product::{ProductFunction, TailModel};
use crate::quad::GaussLegendre;

/// `M(z) = prod_{k <= K} sin(eps_k z)/(eps_k z)`, `eps_k = eps k^{-3/2}`; exponential type `sum eps_k`.
#[derive(Debug, Clone)]
pub struct Multiplier {
    eps: Vec<f64>,
    pub exp_type: f64,
}

impl Multiplier {
    pub fn new(exp_type: f64, terms: usize) -> Result<Self> {
        if !(exp_type > 0.0) || terms == 0 {
            return Err(Error::InvalidInput("multiplier type must be positive".into()));
        }
        let w: Vec<f64> = (1..=terms).map(|k| (k as f64).powf(-1.5)).collect();
        let total: f64 = w.iter().sum();
        let eps = w.iter().map(|v| v * exp_type / total).collect();
        Ok(Multiplier { eps, exp_type })
    }

    pub fn ln_eval(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut prod = Complex64::new(1.0, 0.0);
        for (i, e) in self.eps.iter().enumerate() {
            let w = z * e;
            if w.im.abs() > 20.0 {
                // sin w = (i/2) e^{-iw} (1 - e^{2iw}) for Im w > 0, mirrored below
                let i = Complex64::new(0.0, 1.0);
                let sg = w.im.signum();
                let lsin = Complex64::new(-core::f64::consts::LN_2, sg * core::f64::consts::FRAC_PI_2) - i * sg * w;
                acc += lsin - w.ln();
                continue;
            }
            let f = if w.norm() < 1e-4 {
                let w2 = w * w;
                Complex64::new(1.0, 0.0) - w2 / 6.0 + w2 * w2 / 120.0
            } else {
                w.sin() / w
            };
            prod *= f;
            if i % 16 == 15 {
                acc += prod.ln();
                prod = Complex64::new(1.0, 0.0);
            }
        }
        acc + prod.ln()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiorthogonalOptions {
    /// Modes with `|n| <= family_n` form the family.
    pub family_n: usize,
    /// Uniform frequency step as a fraction of the aliasing limit `2 pi / (T/2 + support)`.
    pub x_oversample: f64,
    pub t_order: usize,
    pub verify_order: usize,
    /// Minimum samples per period of the fastest exponential.
    pub points_per_period: f64,
    /// Window ends where `ln|P M|` has dropped this far below its peak.
    pub window_drop: f64,
    /// Time grid resolves frequencies up to where `ln|P M|` has dropped this far.
    pub resolve_drop: f64,
    /// Fraction of `T/2 - type(P)` given to the multiplier when `multiplier_type` is unset.
    pub margin: f64,
    pub multiplier_type: Option<f64>,
    pub multiplier_terms: usize,
    /// Fixed number of time panels; derived from the resolved bandwidth when unset.
    pub t_panels: Option<usize>,
}

impl Default for BiorthogonalOptions {
    fn default() -> Self {
        BiorthogonalOptions {
            family_n: 12,
            x_oversample: 0.8,
            t_order: 12,
            verify_order: 20,
            points_per_period: 8.0,
            window_drop: 34.0,
            resolve_drop: 14.0,
            margin: 0.9,
            multiplier_type: None,
            multiplier_terms: 4096,
            t_panels: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiorthogonalFamily {
    pub t_horizon: f64,
    pub modes: Vec<ModeIndex>,
    pub lambdas: Vec<Complex64>,
    pub rho: Vec<f64>,
    /// Base quadrature nodes on `[-T/2, T/2]` and the corrected samples there.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub theta: Vec<Vec<Complex64>>,
    /// Finer verification nodes and samples.
    pub fine_nodes: Vec<f64>,
    pub fine_weights: Vec<f64>,
    pub fine_theta: Vec<Vec<Complex64>>,
    pub norms: Vec<f64>,
    /// `max |D - I|` of the uncorrected inversion.
    pub product_residual: f64,
    /// `max |Gram - I|` of the corrected family on the finer nodes.
    pub residual: f64,
    /// Largest entry of the correction matrix.
    pub correction_size: f64,
    pub norm_constant: f64,
    /// Norms of the minimal-norm biorthogonal family, `sqrt((E^{-1})_{mm})` with `E` the exponential Gram.
    pub min_norms: Vec<f64>,
    /// Largest `||theta||/rho` over `|m| > N/2` divided by that over `|m| <= N/2`.
    pub norm_trend: f64,
    pub product_type: f64,
    pub multiplier_type: f64,
    pub window: f64,
    /// `max |theta_mirror(t) - conj theta(t)| / max |theta|`, `None` with a double eigenvalue.
    pub conjugation_defect: Option<f64>,
}

/// `int_{-h}^{h} e^{-z t} dt`.
pub fn sym_exp_integral(z: Complex64, h: f64) -> Complex64 {
    let w = z * h;
    if w.norm() < 1e-3 {
        let w2 = w * w;
        Complex64::new(2.0 * h, 0.0) * (Complex64::new(1.0, 0.0) + w2 / 6.0 + w2 * w2 / 120.0 + w2 * w2 * w2 / 5040.0)
    } else {
        2.0 * w.sinh() / z
    }
}

fn composite_sym(half: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let gl = GaussLegendre::new(order);
    let h = 2.0 * half / panels as f64;
    let mut xs = Vec::with_capacity(panels * order);
    let mut ws = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = -half + h * p as f64;
        for (x, w) in gl.on(a, a + h) {
            xs.push(x);
            ws.push(w);
        }
    }
    (xs, ws)
}

fn fitted_type(pf: &ProductFunction) -> f64 {
    let y_max = 0.95 * pf.z_max();
    let y_min = 0.3 * pf.z_max();
    let fit = |sign: f64| {
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for k in 0..=40 {
            let y = y_min + (y_max - y_min) * k as f64 / 40.0;
            let v = pf.ln_p_unchecked(Complex64::new(0.0, sign * y)).re;
            let a = nalgebra::Vector3::new(y, y.ln(), 1.0);
            ata += a * a.transpose();
            atb += a * v;
        }
        ata.lu().solve(&atb).map_or(f64::NAN, |x| x[0])
    };
    fit(1.0).max(fit(-1.0))
}

struct Candidate {
    x: Vec<f64>,
    /// `w_k P(x_k) M(x_k) / ((x_k - zeta_m) P'(zeta_m) M(zeta_m)) / (2 pi)` per mode.
    h: Vec<Vec<Complex64>>,
}

impl Candidate {
    fn eval(&self, t: &[f64]) -> Vec<Vec<Complex64>> {
        let mut out = alloc::vec![alloc::vec![Complex64::new(0.0, 0.0); t.len()]; self.h.len()];
        let mut phase = alloc::vec![Complex64::new(0.0, 0.0); self.x.len()];
        for (it, &tt) in t.iter().enumerate() {
            for (p, &x) in phase.iter_mut().zip(&self.x) {
                let (s, c) = (x * tt).sin_cos();
                *p = Complex64::new(c, s);
            }
            for (m, hm) in self.h.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, b) in hm.iter().zip(&phase) {
                    acc += a * b;
                }
                out[m][it] = acc;
            }
        }
        out
    }
}

fn moments(theta: &[Vec<Complex64>], nodes: &[f64], weights: &[f64], lambdas: &[Complex64]) -> DMatrix<Complex64> {
    let k = theta.len();
    let mut d = DMatrix::zeros(k, lambdas.len());
    for (n, l) in lambdas.iter().enumerate() {
        let e: Vec<Complex64> = nodes.iter().zip(weights).map(|(t, w)| (-l.conj() * t).exp() * w).collect();
        for m in 0..k {
            d[(m, n)] = theta[m].iter().zip(&e).map(|(a, b)| a * b).sum();
        }
    }
    d
}

fn identity_defect(d: &DMatrix<Complex64>) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            let id = if i == j { 1.0 } else { 0.0 };
            r = r.max((d[(i, j)] - id).norm());
        }
    }
    r
}

fn mirror(md: ModeIndex) -> ModeIndex {
    match md.j {
        1 => ModeIndex { n: -md.n, j: 1 },
        2 => ModeIndex { n: -md.n, j: 3 },
        _ => ModeIndex { n: -md.n, j: 2 },
    }
}

pub fn build_biorthogonal(pf: &ProductFunction, ms: &MovingSpectrum, t_horizon: f64, opts: &BiorthogonalOptions) -> Result<BiorthogonalFamily> {
    let threshold = ms.threshold();
    if !(t_horizon > threshold) {
        return Err(Error::ShortHorizon { t: t_horizon, threshold });
    }
    if !matches!(pf.tail, TailModel::Asymptotic { .. }) {
        return Err(Error::InvalidInput("the inversion needs the asymptotic tail".into()));
    }
    if opts.family_n == 0 || opts.family_n > pf.radius {
        return Err(Error::InvalidInput("family outside the product radius".into()));
    }
    let half = t_horizon / 2.0;
    let idx: Vec<usize> = (0..pf.modes.len()).filter(|&i| pf.modes[i].abs_n() <= opts.family_n).collect();
    let modes: Vec<ModeIndex> = idx.iter().map(|&i| pf.modes[i]).collect();
    let lambdas: Vec<Complex64> = modes.iter().map(|md| ms.lambda_convention(*md)).collect();
    let rho: Vec<f64> = modes.iter().map(|md| ms.rho(md.abs_n())).collect();

    let product_type = fitted_type(pf);
    let multiplier_type = match opts.multiplier_type {
        Some(v) => v,
        None => opts.margin * (half - product_type),
    };
    if !(multiplier_type > 0.0) || product_type + multiplier_type > half {
        return Err(Error::Check(alloc::format!(
            "product type {product_type:.4} plus multiplier {multiplier_type:.4} does not fit in T/2 = {half:.4}"
        )));
    }
    let mult = Multiplier::new(multiplier_type, opts.multiplier_terms)?;

    // window from the decay of ln|P M| along the real axis
    let z_max = pf.z_max();
    let probe: Vec<f64> = (0..=((z_max / 0.5) as usize)).map(|k| 0.5 * k as f64).filter(|x| *x <= z_max).collect();
    let ln_pm: Vec<f64> = probe
        .iter()
        .map(|&x| {
            let z = Complex64::new(x.max(1e-3), 0.0);
            let a = pf.ln_p_unchecked(z) + mult.ln_eval(z);
            let b = pf.ln_p_unchecked(-z) + mult.ln_eval(-z);
            a.re.max(b.re)
        })
        .collect();
    let peak = ln_pm.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let last = ln_pm.iter().rposition(|v| *v > peak - opts.window_drop).unwrap_or(0);
    if last + 1 >= probe.len() {
        return Err(Error::Check(alloc::format!("inversion window does not close within |x| <= {z_max}")));
    }
    let window = probe[last + 1];

    // band limit inside (-T/2, T/2): uniform trapezoid sums are alias-free
    let dx = opts.x_oversample * 2.0 * PI / (half + product_type + multiplier_type);
    let nx = (window / dx).ceil() as i64;
    let xs: Vec<f64> = (-nx..=nx).map(|k| k as f64 * dx).collect();
    let xw = alloc::vec![dx; xs.len()];
    let resolve = probe[ln_pm.iter().rposition(|v| *v > peak - opts.resolve_drop).unwrap_or(0)];
    let g: Vec<Complex64> = xs
        .iter()
        .zip(&xw)
        .map(|(&x, &w)| {
            let z = Complex64::new(x, 0.0);
            (pf.ln_p_unchecked(z) + mult.ln_eval(z) - peak).exp() * w
        })
        .collect();
    let h: Vec<Vec<Complex64>> = idx
        .iter()
        .map(|&i| {
            let zeta = pf.zeros[i];
            let scale = (Complex64::new(peak, 0.0) - pf.ln_derivative_at(i) - mult.ln_eval(zeta)).exp() / (2.0 * PI);
            xs.iter().zip(&g).map(|(&x, gk)| gk * scale / (Complex64::new(x, 0.0) - zeta)).collect()
        })
        .collect();
    let cand = Candidate { x: xs, h };

    let max_freq = lambdas.iter().map(|l| l.im.abs()).fold(0.0, f64::max).max(resolve);
    let period = 2.0 * PI / max_freq;
    let t_panels = opts
        .t_panels
        .unwrap_or_else(|| ((2.0 * half) * opts.points_per_period / (period * opts.t_order as f64)).ceil().max(8.0) as usize);
    let (nodes, weights) = composite_sym(half, t_panels, opts.t_order);
    let (fine_nodes, fine_weights) = composite_sym(half, (3 * t_panels) / 2 + 1, opts.verify_order);

    let theta_c = cand.eval(&nodes);
    let d = moments(&theta_c, &nodes, &weights, &lambdas);
    let product_residual = identity_defect(&d);
    let k = lambdas.len();
    let e_t = DMatrix::from_fn(k, k, |n, kk| sym_exp_integral(lambdas[kk] + lambdas[n].conj(), half));
    let mut x = DMatrix::<Complex64>::zeros(k, k);
    for m in 0..k {
        let rhs: Vec<Complex64> = (0..k).map(|n| if m == n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) } - d[(m, n)]).collect();
        let sol = solve_dd(&e_t, &rhs, 3)?;
        for (kk, v) in sol.x_c64().iter().enumerate() {
            x[(m, kk)] = *v;
        }
    }
    let mut min_norms = Vec::with_capacity(k);
    for m in 0..k {
        let unit: Vec<Complex64> = (0..k).map(|n| if m == n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }).collect();
        let sol = solve_dd(&e_t, &unit, 3)?;
        min_norms.push(sol.x_c64()[m].re.max(0.0).sqrt());
    }
    let correction_size = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let correct = |cand_vals: Vec<Vec<Complex64>>, ts: &[f64]| -> Vec<Vec<Complex64>> {
        let basis: Vec<Vec<Complex64>> = lambdas.iter().map(|l| ts.iter().map(|t| (-l * t).exp()).collect()).collect();
        cand_vals
            .into_iter()
            .enumerate()
            .map(|(m, mut row)| {
                for (kk, b) in basis.iter().enumerate() {
                    let c = x[(m, kk)];
                    for (r, bv) in row.iter_mut().zip(b) {
                        *r += c * bv;
                    }
                }
                row
            })
            .collect()
    };
    let theta = correct(theta_c, &nodes);
    let fine_theta = correct(cand.eval(&fine_nodes), &fine_nodes);
    let residual = identity_defect(&moments(&fine_theta, &fine_nodes, &fine_weights, &lambdas));
    let norms: Vec<f64> = fine_theta
        .iter()
        .map(|row| row.iter().zip(&fine_weights).map(|(v, w)| v.norm_sqr() * w).sum::<f64>().sqrt())
        .collect();
    let ratios: Vec<f64> = norms.iter().zip(&rho).map(|(a, r)| a / r).collect();
    let norm_constant = ratios.iter().copied().fold(0.0, f64::max);
    let lower = modes.iter().zip(&ratios).filter(|(md, _)| 2 * md.abs_n() <= opts.family_n).map(|(_, r)| *r).fold(0.0, f64::max);
    let upper = modes.iter().zip(&ratios).filter(|(md, _)| 2 * md.abs_n() > opts.family_n).map(|(_, r)| *r).fold(0.0, f64::max);
    let norm_trend = if lower > 0.0 { upper / lower } else { f64::INFINITY };

    let conjugation_defect = if ms.critical.is_some() {
        None
    } else {
        let mut worst: f64 = 0.0;
        for (m, md) in modes.iter().enumerate() {
            let Some(mi) = modes.iter().position(|x| *x == mirror(*md)) else { continue };
            let scale = theta[m].iter().map(|v| v.norm()).fold(0.0, f64::max);
            let defect = theta[m].iter().zip(&theta[mi]).map(|(a, b)| (b - a.conj()).norm()).fold(0.0, f64::max);
            worst = worst.max(defect / scale);
        }
        Some(worst)
    };

    Ok(BiorthogonalFamily {
        t_horizon,
        modes,
        lambdas,
        rho,
        nodes,
        weights,
        theta,
        fine_nodes,
        fine_weights,
        fine_theta,
        norms,
        product_residual,
        residual,
        correction_size,
        norm_constant,
        min_norms,
        norm_trend,
        product_type,
        multiplier_type,
        window,
        conjugation_defect,
    })
}

impl BiorthogonalFamily {
    /// Constant `C` of `||sum beta theta||^2 <= C sum rho^2 |beta|^2`: top eigenvalue of the
    /// `rho`-scaled Gram of the family.
    pub fn summation_constant(&self) -> f64 {
        let k = self.modes.len();
        let g = DMatrix::from_fn(k, k, |m, j| {
            self.fine_theta[m]
                .iter()
                .zip(&self.fine_theta[j])
                .zip(&self.fine_weights)
                .map(|((a, b), w)| a * b.conj() * w)
                .sum::<Complex64>()
                / (self.rho[m] * self.rho[j])
        });
        hermitian_eigenvalues(&g).last().copied().unwrap_or(0.0)
    }

    /// `||sum a e^{-lambda t}||^2` on the finer nodes.
    pub fn exp_sum_norm_sqr(&self, a: &[Complex64]) -> f64 {
        self.fine_nodes
            .iter()
            .zip(&self.fine_weights)
            .map(|(t, w)| {
                let v: Complex64 = a.iter().zip(&self.lambdas).map(|(c, l)| c * (-l * t).exp()).sum();
                v.norm_sqr() * w
            })
            .sum()
    }

    /// Sup-norm distance of samples for `|m| <= n_max` to another family on the same nodes.
    pub fn sample_distance(&self, other: &BiorthogonalFamily, n_max: usize) -> Result<f64> {
        let scale = self.t_horizon.abs().max(1.0);
        if self.nodes.len() != other.nodes.len()
            || self.nodes.iter().zip(&other.nodes).any(|(a, b)| (a - b).abs() > 1e-12 * scale)
        {
            return Err(Error::InvalidInput("families sampled on different nodes".into()));
        }
        let mut worst: f64 = 0.0;
        for (m, md) in self.modes.iter().enumerate() {
            if md.abs_n() > n_max {
                continue;
            }
            let j = other.modes.iter().position(|x| x == md).ok_or_else(|| Error::InvalidInput("mode missing".into()))?;
            let d = self.theta[m].iter().zip(&other.theta[j]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub struct LowerSummationReport {
    pub c_hat: f64,
    pub trials: usize,
    pub failures: usize,
    /// Smallest `C ||f||^2 / sum |a|^2/rho^2` over the random trials.
    pub min_margin: f64,
    pub single_mode_margin: f64,
    pub adversarial_pair: (ModeIndex, ModeIndex),
    pub adversarial_margin: f64,
    pub pass: bool,
}

/// `sum |a|^2 / rho^2 <= C ||sum a e^{-lambda t}||^2` on random vectors, a single mode and a
/// vector cancelling across the closest pair of exponents.
pub fn verify_lower_summation<R: Rng + ?Sized>(bf: &BiorthogonalFamily, trials: usize, rng: &mut R) -> LowerSummationReport {
    let c_hat = bf.summation_constant();
    let k = bf.modes.len();
    let lhs = |a: &[Complex64]| a.iter().zip(&bf.rho).map(|(v, r)| v.norm_sqr() / (r * r)).sum::<f64>();
    let basis: Vec<Vec<Complex64>> =
        bf.lambdas.iter().map(|l| bf.fine_nodes.iter().map(|t| (-l * t).exp()).collect()).collect();
    let norm_sqr = |a: &[Complex64]| -> f64 {
        let mut acc = alloc::vec![Complex64::new(0.0, 0.0); bf.fine_nodes.len()];
        for (c, b) in a.iter().zip(&basis) {
            if c.norm() > 0.0 {
                for (v, e) in acc.iter_mut().zip(b) {
                    *v += c * e;
                }
            }
        }
        acc.iter().zip(&bf.fine_weights).map(|(v, w)| v.norm_sqr() * w).sum()
    };
    let margin = |a: &[Complex64]| c_hat * norm_sqr(a) / lhs(a);
    let mut min_margin = f64::INFINITY;
    let mut failures = 0;
    let support = k.min(50);
    for _ in 0..trials {
        let mut a = alloc::vec![Complex64::new(0.0, 0.0); k];
        let mut picked = 0;
        while picked < support {
            let i = rng.random_range(0..k);
            if a[i].norm() == 0.0 {
                a[i] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                picked += 1;
            }
        }
        let mg = margin(&a);
        if !(mg >= 1.0) {
            failures += 1;
        }
        min_margin = min_margin.min(mg);
    }
    let mut one = alloc::vec![Complex64::new(0.0, 0.0); k];
    one[0] = Complex64::new(1.0, 0.0);
    let single_mode_margin = margin(&one);

    let mut best = (f64::INFINITY, 0, 1);
    for i in 0..k {
        for j in i + 1..k {
            let d = (bf.lambdas[i] - bf.lambdas[j]).norm();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    let (_, i, j) = best;
    let ip = |p: usize, q: usize| -> Complex64 {
        basis[p].iter().zip(&basis[q]).zip(&bf.fine_weights).map(|((a, b), w)| a * b.conj() * w).sum()
    };
    let alpha = ip(i, j) / ip(j, j).re;
    let mut adv = alloc::vec![Complex64::new(0.0, 0.0); k];
    adv[i] = Complex64::new(1.0, 0.0);
    adv[j] = -alpha;
    let adversarial_margin = margin(&adv);
    let pass = failures == 0 && single_mode_margin >= 1.0 && adversarial_margin >= 1.0;
    LowerSummationReport {
        c_hat,
        trials,
        failures,
        min_margin,
        single_mode_margin,
        adversarial_pair: (bf.modes[i], bf.modes[j]),
        adversarial_margin,
        pass,
    }
}
