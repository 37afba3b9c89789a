//! The canonical product `P(z) = z^3 prod (1 + z/(i conj(lambda_n^j)))` whose zeros sit at
//! `-i conj(lambda_n^j)`, with an asymptotic tail beyond the included modes.

use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::memory::{solve_cubic, MemoryCoefficient};
use crate::moving::{ModeIndex, MovingSpectrum};
use crate::quad::GaussLegendre;

const RENORM_EVERY: usize = 24;
const SERIES_TERMS: usize = 60;
const SERIES_SPAN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailModel {
    /// Plain truncated product over the included modes.
    None,
    /// Modes beyond the truncation generated from the asymptotic eigenvalue formula,
    /// accurate for `|z| <= z_max`.
    Asymptotic { z_max: f64 },
}

#[derive(Debug, Clone)]
pub struct ProductFunction {
    pub s: f64,
    pub c: f64,
    pub m: MemoryCoefficient,
    pub gamma: f64,
    pub modes: Vec<ModeIndex>,
    /// Zeros `-i conj(lambda)` of the included modes (convention applied), ordered as `modes`.
    pub zeros: Vec<Complex64>,
    inv_zeros: Vec<Complex64>,
    /// Reciprocal zeros of generated tail modes multiplied in directly.
    inv_tail: Vec<Complex64>,
    /// `S_p a0^p / p` for the remaining tail, `S_p = sum zeta^{-p}`.
    series: Vec<Complex64>,
    series_scale: f64,
    pub tail: TailModel,
    /// Last mode index multiplied in directly.
    pub direct_to: usize,
    pub radius: usize,
}

pub fn zero_of(lambda: Complex64) -> Complex64 {
    Complex64::new(0.0, -1.0) * lambda.conj()
}

fn asymptotic_zeros(s: f64, c: f64, m: MemoryCoefficient, n: usize) -> Result<[Complex64; 6]> {
    zeros_at(s, c, m, n as f64)
}

const REMAINDER_TERMS: usize = 10;

fn zeros_at(s: f64, c: f64, m: MemoryCoefficient, x: f64) -> Result<[Complex64; 6]> {
    let rho = (x * PI / 2.0 - (1.0 - s) * PI / 4.0).powf(2.0 * s);
    let kappa = rho.powf(0.5 / s);
    let t = solve_cubic(x as usize, rho, m)?;
    let mut out = [Complex64::new(0.0, 0.0); 6];
    let mut i = 0;
    for sg in [-1.0, 1.0] {
        for j in 1..=3 {
            out[i] = zero_of(t.branch(j) + Complex64::new(0.0, sg * c * kappa));
            i += 1;
        }
    }
    Ok(out)
}

fn powers_at(s: f64, c: f64, m: MemoryCoefficient, x: f64, a0: f64) -> Result<[Complex64; REMAINDER_TERMS]> {
    let mut out = [Complex64::new(0.0, 0.0); REMAINDER_TERMS];
    for z in zeros_at(s, c, m, x)? {
        let w = Complex64::new(a0, 0.0) / z;
        let mut wp = w;
        for o in out.iter_mut() {
            *o += wp;
            wp *= w;
        }
    }
    Ok(out)
}

/// `sum_{n > end} f_p(n)` for `p = 1..=REMAINDER_TERMS` by Euler-Maclaurin with the integral
/// mapped to `w in (0, 1]` through `x = end / w^2`.
fn tail_remainder(s: f64, c: f64, m: MemoryCoefficient, end: usize, a0: f64) -> Result<[Complex64; REMAINDER_TERMS]> {
    let n = end as f64;
    let gl = GaussLegendre::new(24);
    let mut out = [Complex64::new(0.0, 0.0); REMAINDER_TERMS];
    let breaks = [0.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 0.5, 1.0];
    for win in breaks.windows(2) {
        for (w, wt) in gl.on(win[0], win[1]) {
            let f = powers_at(s, c, m, n / (w * w), a0)?;
            let jac = 2.0 * n / (w * w * w) * wt;
            for (o, v) in out.iter_mut().zip(f.iter()) {
                *o += v * jac;
            }
        }
    }
    let h = 0.5;
    let f0 = powers_at(s, c, m, n, a0)?;
    let fp = powers_at(s, c, m, n + h, a0)?;
    let fm = powers_at(s, c, m, n - h, a0)?;
    for p in 0..REMAINDER_TERMS {
        let d1 = (fp[p] - fm[p]) / (2.0 * h);
        out[p] -= f0[p] * 0.5 + d1 / 12.0;
    }
    Ok(out)
}

pub fn build_product(ms: &MovingSpectrum, tail: TailModel) -> Result<ProductFunction> {
    let modes = ms.modes().to_vec();
    let zeros: Vec<Complex64> = modes.iter().map(|md| zero_of(ms.lambda_convention(*md))).collect();
    if zeros.iter().any(|z| z.norm() == 0.0) {
        return Err(Error::InvalidInput("zero eigenvalue in product".into()));
    }
    let inv_zeros = zeros.iter().map(|z| z.inv()).collect();
    let s = ms.s.get();
    let c = ms.c;
    let radius = ms.n_trunc;
    let mut inv_tail = Vec::new();
    let mut series = Vec::new();
    let mut series_scale = 1.0;
    let mut direct_to = radius;
    if let TailModel::Asymptotic { z_max } = tail {
        if !(z_max > 0.0 && z_max.is_finite()) {
            return Err(Error::InvalidInput("tail radius must be positive".into()));
        }
        let a0 = 2.0 * z_max;
        let min_abs = |zs: &[Complex64; 6]| zs.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        let mut n = radius + 1;
        loop {
            let zs = asymptotic_zeros(s, c, ms.m, n)?;
            if n > 8 * radius && min_abs(&zs) >= a0 {
                break;
            }
            inv_tail.extend(zs.iter().map(|z| z.inv()));
            n += 1;
            if n > 1_000_000 {
                return Err(Error::InvalidInput("tail radius too large for the direct product".into()));
            }
        }
        direct_to = n - 1;
        series_scale = a0;
        let mut sums = alloc::vec![Complex64::new(0.0, 0.0); SERIES_TERMS + 1];
        let end = SERIES_SPAN * direct_to.max(1);
        for k in (direct_to + 1)..=end {
            let zs = asymptotic_zeros(s, c, ms.m, k)?;
            for z in zs {
                let w = Complex64::new(a0, 0.0) / z;
                let mut wp = w;
                for slot in sums.iter_mut().skip(1) {
                    *slot += wp;
                    wp *= w;
                }
            }
        }
        // Euler-Maclaurin remainder beyond the summed span, continuous mode index
        let rem = tail_remainder(s, c, ms.m, end, a0)?;
        for (slot, r) in sums.iter_mut().skip(1).zip(rem.iter()) {
            *slot += r;
        }
        series = sums.iter().enumerate().map(|(p, v)| if p == 0 { *v } else { *v / p as f64 }).collect();
    }
    Ok(ProductFunction {
        s,
        c,
        m: ms.m,
        gamma: ms.gamma,
        modes,
        zeros,
        inv_zeros,
        inv_tail,
        series,
        series_scale,
        tail,
        direct_to,
        radius,
    })
}

/// Running product kept as mantissa times `2^exp`.
struct Acc {
    v: Complex64,
    exp: i64,
    count: usize,
}

impl Acc {
    fn new() -> Self {
        Acc { v: Complex64::new(1.0, 0.0), exp: 0, count: 0 }
    }

    #[inline]
    fn mul(&mut self, f: Complex64) {
        self.v *= f;
        self.count += 1;
        if self.count.is_multiple_of(RENORM_EVERY) {
            self.renorm();
        }
    }

    fn renorm(&mut self) {
        let a = self.v.re.abs().max(self.v.im.abs());
        if a == 0.0 || !a.is_finite() {
            return;
        }
        let (_, e) = libm::frexp(a);
        self.v = Complex64::new(libm::ldexp(self.v.re, -e), libm::ldexp(self.v.im, -e));
        self.exp += e as i64;
    }

    fn ln(mut self) -> Complex64 {
        self.renorm();
        self.v.ln() + Complex64::new(self.exp as f64 * LN_2, 0.0)
    }
}

impl ProductFunction {
    /// Theoretical exponential type `pi (1/|c| + 1/|c+gamma| + 1/|c-gamma|)`.
    pub fn type_bound(&self) -> f64 {
        PI * (1.0 / self.c.abs() + 1.0 / (self.c + self.gamma).abs() + 1.0 / (self.c - self.gamma).abs())
    }

    pub fn z_max(&self) -> f64 {
        match self.tail {
            TailModel::None => f64::INFINITY,
            TailModel::Asymptotic { z_max } => z_max,
        }
    }

    fn check(&self, z: Complex64) -> Result<()> {
        if z.norm() > self.z_max() * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(alloc::format!("|z| = {} beyond tail radius {}", z.norm(), self.z_max())));
        }
        Ok(())
    }

    fn ln_tail_series(&self, z: Complex64) -> Complex64 {
        if self.series.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        let w = z / self.series_scale;
        let mut wp = w;
        let mut acc = Complex64::new(0.0, 0.0);
        for coef in self.series.iter().skip(1) {
            acc += coef * wp;
            wp *= w;
        }
        -acc
    }

    /// `ln P(z)` with `skip` removed from the included factors.
    fn ln_eval(&self, z: Complex64, skip: Option<usize>) -> Complex64 {
        let mut acc = Acc::new();
        for (i, iz) in self.inv_zeros.iter().enumerate() {
            if Some(i) != skip {
                acc.mul(Complex64::new(1.0, 0.0) - z * iz);
            }
        }
        for iz in &self.inv_tail {
            acc.mul(Complex64::new(1.0, 0.0) - z * iz);
        }
        acc.ln() + self.ln_tail_series(z)
    }

    /// `ln P(z)`; `-inf` real part at a zero.
    pub fn ln_p(&self, z: Complex64) -> Result<Complex64> {
        self.check(z)?;
        Ok(self.ln_p_unchecked(z))
    }

    pub(crate) fn ln_p_unchecked(&self, z: Complex64) -> Complex64 {
        if z.norm() == 0.0 {
            return Complex64::new(f64::NEG_INFINITY, 0.0);
        }
        self.ln_eval(z, None) + 3.0 * z.ln()
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        Ok(self.ln_p(z)?.exp())
    }

    /// `ln P'(zeta_m)` at the `m`-th included zero, with the vanishing factor removed.
    pub fn ln_derivative_at(&self, m: usize) -> Complex64 {
        let z = self.zeros[m];
        // P = z^3 (1 - z/zeta_m) Q(z)  =>  P'(zeta_m) = -zeta_m^2 Q(zeta_m)
        self.ln_eval(z, Some(m)) + 2.0 * z.ln() + Complex64::new(0.0, PI)
    }

    pub fn derivative_at(&self, m: usize) -> Complex64 {
        self.ln_derivative_at(m).exp()
    }

    /// `P'(z)` from the logarithmic derivative, or the factored form at an included zero.
    pub fn derivative(&self, z: Complex64) -> Result<Complex64> {
        self.check(z)?;
        if let Some(i) = self.inv_zeros.iter().position(|iz| (Complex64::new(1.0, 0.0) - z * iz).norm() < 1e-14) {
            return Ok(self.derivative_at(i));
        }
        if z.norm() == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let mut ld = 3.0 / z;
        for iz in self.inv_zeros.iter().chain(&self.inv_tail) {
            ld -= iz / (Complex64::new(1.0, 0.0) - z * iz);
        }
        if !self.series.is_empty() {
            let w = z / self.series_scale;
            let mut wp = Complex64::new(1.0, 0.0);
            for (p, coef) in self.series.iter().enumerate().skip(1) {
                ld -= coef * wp * (p as f64) / self.series_scale;
                wp *= w;
            }
        }
        Ok(self.ln_p_unchecked(z).exp() * ld)
    }

    pub fn index_of(&self, md: ModeIndex) -> Option<usize> {
        self.modes.iter().position(|x| *x == md)
    }
}

/// Least-squares fit of `ln|P(iy)| = tau |y| + b ln|y| + a` over `y` samples of one sign.
fn fit_type(pf: &ProductFunction, ys: &[f64]) -> f64 {
    let rows: Vec<[f64; 4]> = ys
        .iter()
        .map(|&y| {
            let v = pf.ln_p_unchecked(Complex64::new(0.0, y)).re;
            [y.abs(), y.abs().ln(), 1.0, v]
        })
        .collect();
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for r in &rows {
        let a = nalgebra::Vector3::new(r[0], r[1], r[2]);
        ata += a * a.transpose();
        atb += a * r[3];
    }
    ata.lu().solve(&atb).map_or(f64::NAN, |x| x[0])
}

#[derive(Debug, Clone)]
pub struct ProductReport {
    pub type_bound: f64,
    /// Fitted type along the positive and negative imaginary axis.
    pub type_upper: f64,
    pub type_lower: f64,
    /// `ln|P(iy)|/|y|` at the largest tested `|y|`.
    pub type_ratio_at_max: f64,
    pub type_pass: bool,
    /// Zero-counting estimate `pi * (zeros with |Re| <= r) / (2 r)`, reported only.
    pub counting_type: f64,
    /// Per mode: `max_x |theta_hat(x)| (1 + |x + Im lambda|)` over half and full scan range.
    pub decay: Vec<(ModeIndex, f64, f64)>,
    pub c1_hat: f64,
    pub decay_pass: bool,
    /// `sup |P|` over `|Im z| <= delta` on half and full scan range.
    pub strip_sup: (f64, f64),
    pub strip_pass: bool,
    /// `max |P(x)|` on `[-X/4, X/4]`, `[-X/2, X/2]`, `[-X, X]`.
    pub real_axis_sup: [f64; 3],
    /// Per mode `rho_|m| |P'(zeta_m)|`.
    pub derivative_envelope: Vec<(ModeIndex, f64)>,
    pub c2_hat: f64,
    /// Min of the envelope over the upper half of `|m|` divided by the min over the lower half.
    pub c2_trend: f64,
    pub pass: bool,
}

/// Checks exponential type, the decay envelope, strip boundedness and the derivative
/// envelope over modes with `|n| <= family_n`.
pub fn verify_product_properties(pf: &ProductFunction, ms: &MovingSpectrum, strip_delta: f64, family_n: usize) -> Result<ProductReport> {
    let x_max = match pf.tail {
        TailModel::Asymptotic { z_max } => z_max,
        TailModel::None => return Err(Error::InvalidInput("property checks need the asymptotic tail".into())),
    };
    if family_n == 0 || family_n > ms.n_trunc {
        return Err(Error::InvalidInput("family outside the spectrum".into()));
    }
    let type_bound = pf.type_bound();
    let y_hi = 0.95 * x_max;
    let y_lo = 0.3 * x_max;
    let ys: Vec<f64> = (0..=40).map(|k| y_lo + (y_hi - y_lo) * k as f64 / 40.0).collect();
    let type_upper = fit_type(pf, &ys);
    let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
    let type_lower = fit_type(pf, &neg);
    let type_ratio_at_max = pf
        .ln_p_unchecked(Complex64::new(0.0, y_hi))
        .re
        .max(pf.ln_p_unchecked(Complex64::new(0.0, -y_hi)).re)
        / y_hi;
    let type_pass = type_ratio_at_max <= 1.1 * type_bound;
    let r = 0.9 * x_max;
    let count_direct = pf.zeros.iter().filter(|z| z.re.abs() <= r).count()
        + pf.inv_tail.iter().filter(|iz| iz.inv().re.abs() <= r).count();
    let counting_type = PI * count_direct as f64 / (2.0 * r);

    let fam: Vec<usize> = (0..pf.modes.len()).filter(|&i| pf.modes[i].abs_n() <= family_n).collect();
    let xs_full: Vec<f64> = {
        let pts = (x_max * 16.0).ceil() as usize;
        (0..=2 * pts).map(|k| -x_max + x_max * k as f64 / pts as f64).collect()
    };
    let ln_real: Vec<Complex64> = xs_full.iter().map(|&x| pf.ln_p_unchecked(Complex64::new(x, 0.0))).collect();
    let mut decay = Vec::new();
    let mut decay_pass = true;
    let mut c1_hat: f64 = 0.0;
    let step = (fam.len() / 8).max(1);
    for &i in fam.iter().step_by(step) {
        let zeta = pf.zeros[i];
        let lnd = pf.ln_derivative_at(i);
        let mut half: f64 = 0.0;
        let mut full: f64 = 0.0;
        for (x, lp) in xs_full.iter().zip(&ln_real) {
            let th = ((lp - lnd).exp() / (Complex64::new(*x, 0.0) - zeta)).norm();
            let v = th * (1.0 + (x - zeta.re).abs());
            if x.abs() <= 0.5 * x_max {
                half = half.max(v);
            }
            full = full.max(v);
        }
        decay_pass &= full.is_finite() && full <= 2.0 * half;
        c1_hat = c1_hat.max(full);
        decay.push((pf.modes[i], half, full));
    }

    let mut strip = (0.0f64, 0.0f64);
    for d in [-strip_delta, 0.0, strip_delta] {
        for &x in xs_full.iter().step_by(2) {
            let v = pf.ln_p_unchecked(Complex64::new(x, d)).re.exp();
            if x.abs() <= 0.5 * x_max {
                strip.0 = strip.0.max(v);
            }
            strip.1 = strip.1.max(v);
        }
    }
    let strip_pass = strip.1.is_finite() && strip.1 <= 2.0 * strip.0;
    let mut real_axis_sup = [0.0f64; 3];
    for (x, lp) in xs_full.iter().zip(&ln_real) {
        let v = lp.re.exp();
        for (k, lim) in [0.25, 0.5, 1.0].iter().enumerate() {
            if x.abs() <= lim * x_max {
                real_axis_sup[k] = real_axis_sup[k].max(v);
            }
        }
    }

    let derivative_envelope: Vec<(ModeIndex, f64)> =
        fam.iter().map(|&i| (pf.modes[i], ms.rho(pf.modes[i].abs_n()) * pf.derivative_at(i).norm())).collect();
    let c2_hat = derivative_envelope.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let lower = derivative_envelope.iter().filter(|e| 2 * e.0.abs_n() <= family_n).map(|e| e.1).fold(f64::INFINITY, f64::min);
    let upper = derivative_envelope.iter().filter(|e| 2 * e.0.abs_n() > family_n).map(|e| e.1).fold(f64::INFINITY, f64::min);
    let c2_trend = upper / lower;
    let pass = type_pass && decay_pass && strip_pass && c2_hat > 0.0 && c2_hat.is_finite();
    Ok(ProductReport {
        type_bound,
        type_upper,
        type_lower,
        type_ratio_at_max,
        type_pass,
        counting_type,
        decay,
        c1_hat,
        decay_pass,
        strip_sup: strip,
        strip_pass,
        real_axis_sup,
        derivative_envelope,
        c2_hat,
        c2_trend,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moving::build_moving_spectrum;
    use crate::spectrum::{build_eigenvalue_table, Backend, FractionalOrder};

    fn spectrum(n: usize, c: f64) -> MovingSpectrum {
        let t = build_eigenvalue_table(FractionalOrder::new(0.75).unwrap(), n, Backend::Asymptotic).unwrap();
        build_moving_spectrum(&t, MemoryCoefficient::new(0.5).unwrap(), c, n).unwrap()
    }

    #[test]
    fn triple_zero_at_origin() {
        let pf = build_product(&spectrum(6, 1.0), TailModel::None).unwrap();
        assert_eq!(pf.eval(Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
        let sum_inv: Complex64 = pf.zeros.iter().map(|z| z.inv()).sum();
        let z = Complex64::new(1e-7, 2e-7);
        let r = pf.eval(z).unwrap() / z.powu(3);
        let first = (r - 1.0) / z;
        assert!((first + sum_inv).norm() < 1e-5 * sum_inv.norm(), "{first} vs {sum_inv}");
    }

    #[test]
    fn vanishes_at_included_zeros() {
        let pf = build_product(&spectrum(6, 1.0), TailModel::None).unwrap();
        for (i, z) in pf.zeros.iter().enumerate() {
            let p = pf.eval(*z).unwrap().norm();
            assert!(p <= 1e-13 * pf.derivative_at(i).norm() * (1.0 + z.norm()), "{i}: {p}");
        }
    }

    #[test]
    fn factored_derivative_matches_difference_quotient() {
        let pf = build_product(&spectrum(6, 1.0), TailModel::Asymptotic { z_max: 60.0 }).unwrap();
        for i in [0usize, 7, 20, 35] {
            let z = pf.zeros[i];
            let h = 1e-5;
            let fd = (pf.eval(z + h).unwrap() - pf.eval(z - h).unwrap()) / (2.0 * h);
            let d = pf.derivative_at(i);
            assert!((fd - d).norm() <= 1e-6 * d.norm(), "{i}: {fd} vs {d}");
            assert_eq!(pf.derivative(z).unwrap(), d);
        }
    }

    #[test]
    fn logarithmic_derivative_matches_difference_quotient() {
        let pf = build_product(&spectrum(6, 1.0), TailModel::Asymptotic { z_max: 60.0 }).unwrap();
        for z in [Complex64::new(3.3, 0.7), Complex64::new(-17.0, 2.0), Complex64::new(0.0, 40.0)] {
            let h = 1e-6 * (1.0 + z.norm());
            let fd = (pf.eval(z + h).unwrap() - pf.eval(z - h).unwrap()) / (2.0 * h);
            let d = pf.derivative(z).unwrap();
            assert!((fd - d).norm() <= 1e-6 * d.norm(), "{z}: {fd} vs {d}");
        }
    }

    #[test]
    fn tail_series_matches_longer_direct_product() {
        let ms = spectrum(8, 1.0);
        let short = build_product(&ms, TailModel::Asymptotic { z_max: 40.0 }).unwrap();
        let long = build_product(&ms, TailModel::Asymptotic { z_max: 400.0 }).unwrap();
        assert!(long.direct_to > 4 * short.direct_to);
        for z in [Complex64::new(5.0, 0.0), Complex64::new(-31.0, 0.4), Complex64::new(0.0, 38.0), Complex64::new(20.0, -20.0)] {
            let a = short.ln_p(z).unwrap();
            let b = long.ln_p(z).unwrap();
            let d = (a - b).exp() - 1.0;
            assert!(d.norm() < 1e-7, "{z}: {}", d.norm());
        }
    }

    #[test]
    fn real_axis_conjugate_reflection() {
        let pf = build_product(&spectrum(8, 1.0), TailModel::Asymptotic { z_max: 50.0 }).unwrap();
        for x in [0.3, 4.1, 17.9, 44.0] {
            let a = pf.eval(Complex64::new(-x, 0.0)).unwrap();
            let b = -pf.eval(Complex64::new(x, 0.0)).unwrap().conj();
            assert!((a - b).norm() <= 1e-10 * a.norm().max(1e-300), "{x}");
        }
    }

    #[test]
    fn out_of_radius_rejected() {
        let pf = build_product(&spectrum(4, 1.0), TailModel::Asymptotic { z_max: 30.0 }).unwrap();
        assert!(pf.ln_p(Complex64::new(31.0, 0.0)).is_err());
    }
}
