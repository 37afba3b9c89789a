//! Dense complex linear algebra helpers: double-double LU with iterative refinement,
//! Tikhonov regularisation and Hermitian spectra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::dd::{Cdd, Dd};
use crate::error::{Error, Result};

/// Result of an extended-precision solve.
#[derive(Debug, Clone)]
pub struct DdSolution {
    pub x: Vec<Cdd>,
    /// max |A x - b| evaluated in double-double against the f64 entries of `A`.
    pub residual: f64,
    pub refinements: usize,
}

impl DdSolution {
    pub fn x_c64(&self) -> Vec<Complex64> {
        self.x.iter().map(|z| z.to_c64()).collect()
    }
}

pub fn matvec_dd(a: &DMatrix<Complex64>, x: &[Cdd]) -> Vec<Cdd> {
    let n = a.nrows();
    let mut y = alloc::vec![Cdd::ZERO; n];
    for i in 0..n {
        let mut acc = Cdd::ZERO;
        for (j, xj) in x.iter().enumerate() {
            acc += Cdd::from(a[(i, j)]) * *xj;
        }
        y[i] = acc;
    }
    y
}

struct LuDd {
    lu: Vec<Cdd>,
    perm: Vec<usize>,
    n: usize,
}

impl LuDd {
    fn factor(a: &[Cdd], n: usize) -> Result<Self> {
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / piv;
                lu[i * n + k] = f;
                if f == Cdd::ZERO {
                    continue;
                }
                for j in k + 1..n {
                    let t = f * lu[k * n + j];
                    lu[i * n + j] -= t;
                }
            }
        }
        Ok(LuDd { lu, perm, n })
    }

    fn solve(&self, b: &[Cdd]) -> Vec<Cdd> {
        let n = self.n;
        let mut y: Vec<Cdd> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * y[j];
            }
            y[i] = acc / self.lu[i * n + i];
        }
        y
    }
}

fn to_dd(a: &DMatrix<Complex64>) -> Vec<Cdd> {
    let n = a.nrows();
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..a.ncols() {
            v.push(Cdd::from(a[(i, j)]));
        }
    }
    v
}

fn max_residual(a: &DMatrix<Complex64>, x: &[Cdd], b: &[Cdd]) -> (Vec<Cdd>, f64) {
    let ax = matvec_dd(a, x);
    let r: Vec<Cdd> = b.iter().zip(ax.iter()).map(|(bi, axi)| *bi - *axi).collect();
    let m = r.iter().map(|z| z.abs()).fold(0.0, f64::max);
    (r, m)
}

/// Solves `A x = b` by double-double LU with partial pivoting followed by iterative refinement.
pub fn solve_dd(a: &DMatrix<Complex64>, b: &[Complex64], refinements: usize) -> Result<DdSolution> {
    let bd: Vec<Cdd> = b.iter().map(|z| Cdd::from(*z)).collect();
    solve_dd_ext(a, &bd, refinements)
}

pub fn solve_dd_ext(a: &DMatrix<Complex64>, b: &[Cdd], refinements: usize) -> Result<DdSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::InvalidInput(alloc::format!(
            "system shape {}x{} with rhs {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(DdSolution { x: Vec::new(), residual: 0.0, refinements: 0 });
    }
    let lu = LuDd::factor(&to_dd(a), n)?;
    let mut x = lu.solve(b);
    let (mut r, mut res) = max_residual(a, &x, b);
    let mut done = 0;
    for _ in 0..refinements {
        let dx = lu.solve(&r);
        let cand: Vec<Cdd> = x.iter().zip(dx.iter()).map(|(a, b)| *a + *b).collect();
        let (r2, res2) = max_residual(a, &cand, b);
        done += 1;
        if res2 <= res {
            x = cand;
            r = r2;
            res = res2;
        } else {
            break;
        }
    }
    Ok(DdSolution { x, residual: res, refinements: done })
}

/// Solves `A x = b` through the diagonally scaled system `(D A D) y = D b`, `x = D y`, with the
/// scaling applied in double-double and refinement residuals taken against `A` itself.
pub fn solve_dd_scaled(a: &DMatrix<Complex64>, b: &[Cdd], d: &[f64], refinements: usize) -> Result<DdSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || d.len() != n {
        return Err(Error::InvalidInput(alloc::format!("system shape {}x{} with rhs {} and scale {}", n, a.ncols(), b.len(), d.len())));
    }
    if n == 0 {
        return Ok(DdSolution { x: Vec::new(), residual: 0.0, refinements: 0 });
    }
    let dd: Vec<Dd> = d.iter().map(|v| Dd::from(*v)).collect();
    let mut ad = to_dd(a);
    for i in 0..n {
        for j in 0..n {
            ad[i * n + j] = ad[i * n + j].scale(dd[i] * dd[j]);
        }
    }
    let lu = LuDd::factor(&ad, n)?;
    let step = |r: &[Cdd]| -> Vec<Cdd> {
        let rs: Vec<Cdd> = r.iter().zip(&dd).map(|(z, s)| z.scale(*s)).collect();
        lu.solve(&rs).iter().zip(&dd).map(|(z, s)| z.scale(*s)).collect()
    };
    let mut x = step(b);
    let (mut r, mut res) = max_residual(a, &x, b);
    let mut done = 0;
    for _ in 0..refinements {
        let dx = step(&r);
        let cand: Vec<Cdd> = x.iter().zip(dx.iter()).map(|(a, b)| *a + *b).collect();
        let (r2, res2) = max_residual(a, &cand, b);
        done += 1;
        if res2 <= res {
            x = cand;
            r = r2;
            res = res2;
        } else {
            break;
        }
    }
    Ok(DdSolution { x, residual: res, refinements: done })
}

/// Solves `(A + alpha I) x = b` in double-double.
pub fn solve_tikhonov_dd(a: &DMatrix<Complex64>, b: &[Complex64], alpha: f64) -> Result<DdSolution> {
    let n = a.nrows();
    let mut ad = to_dd(a);
    for i in 0..n {
        ad[i * n + i] += Cdd::from(alpha);
    }
    let bd: Vec<Cdd> = b.iter().map(|z| Cdd::from(*z)).collect();
    let lu = LuDd::factor(&ad, n)?;
    let x = lu.solve(&bd);
    let (_, res) = max_residual(a, &x, &bd);
    Ok(DdSolution { x, residual: res, refinements: 0 })
}

/// Ascending eigenvalues of a Hermitian matrix (only the lower triangle is trusted).
pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>) -> Vec<f64> {
    let h = hermitian_part(a);
    let eig = SymmetricEigen::new(h);
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    v
}

pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    v
}

pub fn hermitian_part(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// max |A - A^H| relative to max |A|.
pub fn hermitian_defect(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut d: f64 = 0.0;
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((a[(i, j)] - a[(j, i)].conj()).norm());
            m = m.max(a[(i, j)].norm());
        }
    }
    if m == 0.0 {
        0.0
    } else {
        d / m
    }
}

/// Condition number of a Hermitian positive semidefinite matrix (`inf` when singular).
pub fn hermitian_condition(a: &DMatrix<Complex64>) -> f64 {
    let ev = hermitian_eigenvalues(a);
    if ev.is_empty() {
        return 1.0;
    }
    let lo = ev[0];
    let hi = ev[ev.len() - 1].abs().max(lo.abs());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn dd_dot(a: &[Cdd], b: &[Cdd]) -> Cdd {
    let mut acc = Cdd::ZERO;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x.conj() * *y;
    }
    acc
}

pub fn dd_norm(a: &[Cdd]) -> f64 {
    let mut acc = Dd::ZERO;
    for x in a {
        acc += x.norm_sqr();
    }
    acc.sqrt().to_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hilbert(n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |i, j| Complex64::new(1.0 / (i + j + 1) as f64, 0.0))
    }

    #[test]
    fn hilbert_system_solved_beyond_double_precision() {
        let n = 10;
        let h = hilbert(n);
        let xs: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, i as f64)).collect();
        let b: Vec<Cdd> = (0..n)
            .map(|i| {
                let mut acc = Cdd::ZERO;
                for j in 0..n {
                    acc += Cdd::from(h[(i, j)]) * Cdd::from(xs[j]);
                }
                acc
            })
            .collect();
        let sol = solve_dd_ext(&h, &b, 2).unwrap();
        let err = sol
            .x_c64()
            .iter()
            .zip(xs.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        // cond(H10) ~ 1.6e13 would leave ~1e-3 error in plain f64
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = DMatrix::from_element(3, 3, Complex64::new(1.0, 0.0));
        assert!(matches!(solve_dd(&a, &[Complex64::new(1.0, 0.0); 3], 0), Err(Error::Singular(_))));
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(1.0, 0.0)
        ]));
        let ev = hermitian_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        assert!((hermitian_condition(&a) - 3.0).abs() < 1e-12);
    }
}
