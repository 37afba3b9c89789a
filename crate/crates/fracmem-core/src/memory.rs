//! Roots of the memory cubic `K(mu) = mu^3 + rho mu - M rho` and their bounds.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectrum::EigenvalueTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryCoefficient(f64);

impl MemoryCoefficient {
    pub fn new(m: f64) -> Result<Self> {
        if m == 0.0 {
            return Err(Error::ZeroMemory);
        }
        if !m.is_finite() {
            return Err(Error::InvalidInput(alloc::format!("memory coefficient {m} is not finite")));
        }
        Ok(MemoryCoefficient(m))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTriple {
    pub n: usize,
    pub rho: f64,
    pub mu1: f64,
    pub mu2: Complex64,
    pub mu3: Complex64,
}

pub fn cubic(mu: Complex64, rho: f64, m: f64) -> Complex64 {
    mu * mu * mu + mu * rho - m * rho
}

impl SpectralTriple {
    pub fn branch(&self, j: usize) -> Complex64 {
        match j {
            1 => Complex64::new(self.mu1, 0.0),
            2 => self.mu2,
            3 => self.mu3,
            _ => panic!("branch index {j} outside 1..=3"),
        }
    }

    /// `|K(mu_j)|` for the three branches.
    pub fn residuals(&self, m: f64) -> [f64; 3] {
        [1, 2, 3].map(|j| cubic(self.branch(j), self.rho, m).norm())
    }

    /// Residual budget `1e-10 (|M| rho + |M|^3)`.
    pub fn residual_budget(&self, m: f64) -> f64 {
        1e-10 * (m.abs() * self.rho + m.abs().powi(3))
    }

    /// Derivative of branch `j` with respect to `rho`.
    pub fn dmu_drho(&self, j: usize, m: f64) -> Complex64 {
        let mu = self.branch(j);
        (Complex64::new(m, 0.0) - mu) / (mu * mu * 3.0 + self.rho)
    }
}

/// Solves the cubic for one mode: bisection on the sign bracket, Newton polish, then the
/// complex pair from the quadratic factor.
pub fn solve_cubic(n: usize, rho: f64, m: MemoryCoefficient) -> Result<SpectralTriple> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidInput(alloc::format!("rho must be positive, got {rho}")));
    }
    let mv = m.get();
    let k = |x: f64| x * x * x + rho * x - mv * rho;
    let (mut lo, mut hi) = if mv > 0.0 { (0.0, mv) } else { (mv, 0.0) };
    // K is increasing with K(0) = -M rho and K(M) = M^3; rounding may flatten either end to zero
    debug_assert!(k(lo) <= 0.0 && k(hi) >= 0.0);
    let width = 1e-8 * mv.abs();
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if k(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = k(x);
        let d = 3.0 * x * x + rho;
        let step = f / d;
        let nx = (x - step).clamp(lo.min(hi) - width, hi.max(lo) + width);
        if nx == x {
            break;
        }
        x = nx;
        if step.abs() <= 1e-17 * x.abs() {
            break;
        }
    }
    let im = (3.0 * (x / 2.0) * (x / 2.0) + rho).sqrt();
    let mu2 = Complex64::new(-x / 2.0, im);
    Ok(SpectralTriple { n, rho, mu1: x, mu2, mu3: mu2.conj() })
}

pub fn solve_table(table: &EigenvalueTable, m: MemoryCoefficient) -> Result<Vec<SpectralTriple>> {
    (1..=table.n_max).map(|n| solve_cubic(n, table.rho(n), m)).collect()
}

/// `mu1 - M + M^3/rho`, evaluated as `mu1^3 (M^2 + M mu1 + mu1^2) / rho^2` to avoid cancellation.
pub fn mu1_remainder(t: &SpectralTriple, m: f64) -> f64 {
    let u = t.mu1;
    u * u * u * (m * m + m * u + u * u) / (t.rho * t.rho)
}

#[derive(Debug, Clone)]
pub struct AsymptoticsReport {
    pub remainders: Vec<f64>,
    /// `max |r_n| n^4` and `min |r_n| n^4` over the top half.
    pub c_n4: (f64, f64),
    /// `max |r_n| rho_n^2` and `min |r_n| rho_n^2` over the top half.
    pub c_rho2: (f64, f64),
    /// `|mu_n - M|` strictly decreasing over the table.
    pub approaches_m: bool,
    /// The `1/n^4` constant varies by less than 2x over the top half.
    pub stable_n4: bool,
    /// The `1/rho^2` constant varies by less than 2x over the top half.
    pub stable_rho2: bool,
    pub pass: bool,
}

pub fn verify_mu1_asymptotics(table: &EigenvalueTable, m: MemoryCoefficient) -> Result<AsymptoticsReport> {
    if table.n_max < 16 {
        return Err(Error::InvalidInput("asymptotic fit needs at least 16 rows".into()));
    }
    let mv = m.get();
    let triples = solve_table(table, m)?;
    let remainders: Vec<f64> = triples.iter().map(|t| mu1_remainder(t, mv)).collect();
    let top = table.n_max / 2..table.n_max;
    let range = |f: &dyn Fn(usize) -> f64| {
        top.clone().map(f).fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), v| (a.max(v), b.min(v)))
    };
    let c_n4 = range(&|i| remainders[i].abs() * ((i + 1) as f64).powi(4));
    let c_rho2 = range(&|i| remainders[i].abs() * triples[i].rho * triples[i].rho);
    let approaches_m = triples.windows(2).all(|w| (w[1].mu1 - mv).abs() < (w[0].mu1 - mv).abs());
    let stable_n4 = c_n4.0 < 2.0 * c_n4.1;
    let stable_rho2 = c_rho2.0 < 2.0 * c_rho2.1;
    Ok(AsymptoticsReport { remainders, c_n4, c_rho2, approaches_m, stable_n4, stable_rho2, pass: approaches_m && stable_rho2 })
}

#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub pass: bool,
    /// First `n` with `|mu_{n+1}| <= |mu_n|`.
    pub offending: Option<usize>,
    pub lower_bound: f64,
    pub lower_bound_ok: bool,
    pub upper_bound_ok: bool,
}

pub fn verify_mu1_monotone(table: &EigenvalueTable, m: MemoryCoefficient) -> Result<MonotoneReport> {
    table.s.require_control()?;
    let mv = m.get();
    let triples = solve_table(table, m)?;
    let offending = triples.windows(2).position(|w| w[1].mu1.abs() <= w[0].mu1.abs()).map(|i| i + 1);
    let lower_bound = mv.abs() / (mv * mv / table.rho(1) + 1.0);
    let lower_bound_ok = triples.iter().all(|t| t.mu1.abs() >= lower_bound);
    let upper_bound_ok = triples.iter().all(|t| t.mu1.abs() < mv.abs());
    Ok(MonotoneReport { pass: offending.is_none() && lower_bound_ok && upper_bound_ok, offending, lower_bound, lower_bound_ok, upper_bound_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{build_eigenvalue_table, Backend, FractionalOrder};
    use proptest::prelude::*;

    fn bisect_oracle(rho: f64, m: f64) -> f64 {
        let f = |x: f64| x * x * x + rho * x - m * rho;
        let (mut a, mut b) = if m > 0.0 { (0.0, m) } else { (m, 0.0) };
        while b - a > 1e-13 {
            let c = 0.5 * (a + b);
            if f(c) < 0.0 {
                a = c
            } else {
                b = c
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn unit_cubic_root() {
        let t = solve_cubic(1, 1.0, MemoryCoefficient::new(1.0).unwrap()).unwrap();
        assert!((t.mu1 - bisect_oracle(1.0, 1.0)).abs() < 1e-12);
        assert!((t.mu1 - 0.6823278).abs() < 1e-7);
    }

    #[test]
    fn negative_memory_bracket() {
        let t = solve_cubic(1, 4.0, MemoryCoefficient::new(-2.0).unwrap()).unwrap();
        assert!(t.mu1 < 0.0 && t.mu1 > -2.0);
    }

    #[test]
    fn zero_memory_rejected() {
        assert_eq!(MemoryCoefficient::new(0.0), Err(Error::ZeroMemory));
    }

    #[test]
    fn small_memory_tends_to_undamped_pair() {
        let rho = 2.5;
        let t = solve_cubic(1, rho, MemoryCoefficient::new(1e-9).unwrap()).unwrap();
        assert!((t.mu2 - Complex64::new(0.0, rho.sqrt())).norm() < 1e-8);
        assert!((t.mu3 - Complex64::new(0.0, -rho.sqrt())).norm() < 1e-8);
    }

    #[test]
    fn remainder_identity_matches_direct_form() {
        let m = 0.7;
        let t = solve_cubic(3, 5.0, MemoryCoefficient::new(m).unwrap()).unwrap();
        let direct = t.mu1 - m + m * m * m / t.rho;
        assert!((mu1_remainder(&t, m) - direct).abs() < 1e-14);
    }

    #[test]
    fn remainder_scales_like_inverse_rho_squared() {
        let table = build_eigenvalue_table(FractionalOrder::new(0.75).unwrap(), 64, Backend::Asymptotic).unwrap();
        let r = verify_mu1_asymptotics(&table, MemoryCoefficient::new(1.0).unwrap()).unwrap();
        assert!(r.pass && r.approaches_m);
        // leading term 3 M^5 / rho^2
        assert!((r.c_rho2.0 - 3.0).abs() < 0.2 && (r.c_rho2.1 - 3.0).abs() < 0.2);
    }

    #[test]
    fn monotone_and_bounded_for_s_06() {
        let table = build_eigenvalue_table(FractionalOrder::new(0.6).unwrap(), 128, Backend::Asymptotic).unwrap();
        let r = verify_mu1_monotone(&table, MemoryCoefficient::new(1.0).unwrap()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    proptest! {
        #[test]
        fn roots_satisfy_cubic_and_vieta(rho in 1e-3f64..1e5, m in prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0]) {
            let t = solve_cubic(1, rho, MemoryCoefficient::new(m).unwrap()).unwrap();
            for r in t.residuals(m) {
                prop_assert!(r <= t.residual_budget(m));
            }
            prop_assert!(t.mu1 * m > 0.0 && t.mu1.abs() < m.abs());
            prop_assert_eq!(t.mu3, t.mu2.conj());
            prop_assert!(t.mu2.im > 0.0);
            let sum = t.mu2 + t.mu3 + t.mu1;
            prop_assert!(sum.norm() <= 1e-9 * m.abs());
            let prod = t.mu2 * t.mu3 * t.mu1;
            prop_assert!((prod - m * rho).norm() <= 1e-9 * (m * rho).abs());
        }

        #[test]
        fn sensitivity_matches_implicit_derivative(rho in 0.5f64..200.0, m in 0.1f64..5.0) {
            let mc = MemoryCoefficient::new(m).unwrap();
            let h = 1e-5 * rho;
            let a = solve_cubic(1, rho + h, mc).unwrap();
            let b = solve_cubic(1, rho - h, mc).unwrap();
            let t = solve_cubic(1, rho, mc).unwrap();
            for j in 1..=3 {
                let fd = (a.branch(j) - b.branch(j)) / (2.0 * h);
                let an = t.dmu_drho(j, m);
                prop_assert!((fd - an).norm() <= 1e-6 * an.norm().max(1e-3));
            }
        }
    }
}
