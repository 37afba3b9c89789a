//! Moving-frame spectrum `lambda_n^j = mu_|n|^j + i sgn(n) c rho_|n|^{1/(2s)}`, critical
//! velocities, gap diagnostics and frame bounds of the eigenvector family.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigenvalues;
use crate::memory::{solve_table, MemoryCoefficient, SpectralTriple};
use crate::spectrum::{EigenvalueTable, FractionalOrder};

/// Velocities within this distance of `0` or `+-gamma` are rejected.
pub const FORBIDDEN_TOL: f64 = 1e-9;
/// `|Im(lambda_{-n}^2 - lambda_n^3)|` below this marks a double eigenvalue.
pub const CRITICAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    pub n: i64,
    pub j: u8,
}

impl ModeIndex {
    pub fn new(n: i64, j: u8) -> Result<Self> {
        if n == 0 || !(1..=3).contains(&j) {
            return Err(Error::InvalidInput(alloc::format!("({n}, {j}) is not a mode index")));
        }
        Ok(ModeIndex { n, j })
    }

    pub fn abs_n(&self) -> usize {
        self.n.unsigned_abs() as usize
    }

    pub fn sgn(&self) -> f64 {
        if self.n > 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Record of a double eigenvalue `lambda_{-n_c}^2 = lambda_{n_c}^3` (mirrored for `c < 0`).
#[derive(Debug, Clone, Copy)]
pub struct CriticalRecord {
    pub n_c: usize,
    /// Member of the colliding pair that the convention moves.
    pub moved: ModeIndex,
    /// Its partner.
    pub partner: ModeIndex,
    /// Distance between the pair before the convention.
    pub collision_distance: f64,
    /// Convention value replacing `lambda[moved]` in the product construction.
    pub redefined: Complex64,
}

/// Lowest admissible control time `2 pi (1/|c| + 1/|c+gamma| + 1/|c-gamma|)`.
pub fn control_time_threshold(c: f64, gamma: f64) -> f64 {
    2.0 * PI * (1.0 / c.abs() + 1.0 / (c + gamma).abs() + 1.0 / (c - gamma).abs())
}

pub fn check_velocity(c: f64, gamma: f64) -> Result<()> {
    for f in [0.0, gamma, -gamma] {
        if (c - f).abs() < FORBIDDEN_TOL || !c.is_finite() {
            return Err(Error::ForbiddenVelocity { value: c, forbidden: f, tol: FORBIDDEN_TOL });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MovingSpectrum {
    pub s: FractionalOrder,
    pub m: MemoryCoefficient,
    pub c: f64,
    pub gamma: f64,
    pub n_trunc: usize,
    pub triples: Vec<SpectralTriple>,
    /// `kappa[k-1] = rho_k^{1/(2s)}`.
    pub kappa_pos: Vec<f64>,
    modes: Vec<ModeIndex>,
    lambda: Vec<Complex64>,
    pub critical: Option<CriticalRecord>,
}

pub fn build_moving_spectrum(table: &EigenvalueTable, m: MemoryCoefficient, c: f64, n_trunc: usize) -> Result<MovingSpectrum> {
    let s = table.s.require_control()?;
    if n_trunc == 0 || n_trunc > table.n_max {
        return Err(Error::InvalidInput(alloc::format!("truncation {} outside table of {} rows", n_trunc, table.n_max)));
    }
    let gamma = table.gap_gamma;
    check_velocity(c, gamma)?;
    let table = table.truncated(n_trunc)?;
    let triples = solve_table(&table, m)?;
    let kappa_pos: Vec<f64> = (1..=n_trunc).map(|k| table.root(k)).collect();
    let mut modes = Vec::with_capacity(6 * n_trunc);
    for n in (-(n_trunc as i64)..=-1).chain(1..=n_trunc as i64) {
        for j in 1..=3u8 {
            modes.push(ModeIndex { n, j });
        }
    }
    let lambda = modes
        .iter()
        .map(|md| {
            let t = &triples[md.abs_n() - 1];
            t.branch(md.j as usize) + Complex64::new(0.0, md.sgn() * c * kappa_pos[md.abs_n() - 1])
        })
        .collect();
    let mut ms = MovingSpectrum { s, m, c, gamma, n_trunc, triples, kappa_pos, modes, lambda, critical: None };
    ms.critical = ms.detect_critical();
    Ok(ms)
}

impl MovingSpectrum {
    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn position(&self, md: ModeIndex) -> Option<usize> {
        if md.n == 0 || md.abs_n() > self.n_trunc || !(1..=3).contains(&md.j) {
            return None;
        }
        let block = if md.n < 0 { (md.n + self.n_trunc as i64) as usize } else { self.n_trunc + md.n as usize - 1 };
        Some(3 * block + md.j as usize - 1)
    }

    /// True eigenvalue (no convention applied).
    pub fn lambda(&self, md: ModeIndex) -> Complex64 {
        self.lambda[self.position(md).expect("mode outside truncation")]
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambda
    }

    /// Eigenvalue with the double-eigenvalue convention applied.
    pub fn lambda_convention(&self, md: ModeIndex) -> Complex64 {
        match self.critical {
            Some(cr) if cr.moved == md => cr.redefined,
            _ => self.lambda(md),
        }
    }

    pub fn lambdas_convention(&self) -> Vec<Complex64> {
        self.modes.iter().map(|md| self.lambda_convention(*md)).collect()
    }

    pub fn mu(&self, md: ModeIndex) -> Complex64 {
        self.triples[md.abs_n() - 1].branch(md.j as usize)
    }

    pub fn rho(&self, n: usize) -> f64 {
        self.triples[n - 1].rho
    }

    /// Signed frequency `kappa_n = sgn(n) rho_|n|^{1/(2s)}`.
    pub fn kappa(&self, n: i64) -> f64 {
        let k = self.kappa_pos[n.unsigned_abs() as usize - 1];
        if n > 0 {
            k
        } else {
            -k
        }
    }

    /// Eigenvector `(1, -lambda, 1/(lambda - i sgn(n) c kappa))` without the spatial factor.
    pub fn eigenvector(&self, md: ModeIndex) -> [Complex64; 3] {
        let l = self.lambda(md);
        let shift = Complex64::new(0.0, md.sgn() * self.c * self.kappa_pos[md.abs_n() - 1]);
        [Complex64::new(1.0, 0.0), -l, Complex64::new(1.0, 0.0) / (l - shift)]
    }

    pub fn threshold(&self) -> f64 {
        control_time_threshold(self.c, self.gamma)
    }

    /// `sqrt(3 (mu_n/(2 kappa_n))^2 + rho_n^{1-1/s})` for `n = 1..=N`.
    pub fn critical_set(&self) -> Vec<f64> {
        critical_values(&self.triples, &self.kappa_pos, self.s.get())
    }

    fn detect_critical(&self) -> Option<CriticalRecord> {
        let sg = if self.c > 0.0 { 1i64 } else { -1 };
        let mut found: Option<CriticalRecord> = None;
        for n in 1..=self.n_trunc as i64 {
            let moved = ModeIndex { n: -sg * n, j: 2 };
            let partner = ModeIndex { n: sg * n, j: 3 };
            let d = (self.lambda(moved) - self.lambda(partner)).norm();
            if d <= CRITICAL_TOL && found.is_none_or(|f| d < f.collision_distance) {
                let mu1 = self.triples[n as usize - 1].mu1;
                let redefined = self.lambda(moved) + Complex64::new(mu1, -0.5);
                found = Some(CriticalRecord { n_c: n as usize, moved, partner, collision_distance: d, redefined });
            }
        }
        found
    }
}

fn critical_values(triples: &[SpectralTriple], kappa: &[f64], s: f64) -> Vec<f64> {
    triples
        .iter()
        .zip(kappa)
        .map(|(t, k)| (3.0 * (t.mu1 / (2.0 * k)).powi(2) + t.rho.powf(1.0 - 1.0 / s)).sqrt())
        .collect()
}

/// Critical velocities `v_n` for `n` in `range`.
pub fn critical_velocities(table: &EigenvalueTable, m: MemoryCoefficient, range: core::ops::RangeInclusive<usize>) -> Result<Vec<(usize, f64)>> {
    let s = table.s.get();
    let mut out = Vec::new();
    for n in range {
        if n == 0 || n > table.n_max {
            return Err(Error::InvalidInput(alloc::format!("index {n} outside table")));
        }
        let t = crate::memory::solve_cubic(n, table.rho(n), m)?;
        let v = critical_values(&[t], &[table.root(n)], s)[0];
        out.push((n, v));
    }
    Ok(out)
}

/// A checked inequality with its measured and required values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clause {
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Clause {
    fn at_least(measured: f64, bound: f64) -> Self {
        Clause { measured, bound, pass: measured >= bound }
    }
}

/// Nearest branch-2/3 neighbour of a high mode.
#[derive(Debug, Clone, Copy)]
pub struct NearResonance {
    pub m: usize,
    pub partner: ModeIndex,
    pub distance: f64,
    /// `rho_m |lambda_m^2 - partner|`.
    pub scaled: f64,
    /// `rho_m |Re(lambda_m^2 - partner)|`.
    pub scaled_real: f64,
    /// Distance to the second-nearest branch-2/3 eigenvalue.
    pub second: f64,
    /// Partner index selected by the nearest-frequency rule on `rho^{1/2}`.
    pub literal_partner: usize,
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub epsilon: f64,
    pub n_eps: usize,
    /// `|lambda_n^1 - lambda_m^k| >= 3|M| / (2 M^2/rho_1 + 2)` for `k` in {2, 3}.
    pub branch1_vs_others: Clause,
    /// Same bound with `mu_1^1` in place of `rho_1`, as literally printed.
    pub branch1_vs_others_literal_bound: f64,
    /// `min (|lambda_n^1 - lambda_m^1| - |c| |kappa_n - kappa_m|)`, required `>= 0`.
    pub branch1_internal: Clause,
    /// Minimum distance between distinct branch-2/3 eigenvalues, critical pair excluded.
    pub branch23_min: Clause,
    /// Critical pair distance before the convention, when present.
    pub critical_distance: Option<f64>,
    /// `Im(lambda_n^2)` increasing for `n >= 1` with lower bound `(1+|c|) rho_1^{1/2}`.
    pub im2_increasing: bool,
    pub im2_lower: Clause,
    /// `min Im(lambda_{n+1}^2) - Im(lambda_n^2)` over `n >= max(N_eps, gap threshold)` against `|c| gamma - eps`.
    pub im2_gap: Clause,
    /// `Im(lambda_{-n}^2)` monotone for `n >= n_turn`; `None` when no monotone tail exists.
    pub im_neg2_monotone_from: Option<usize>,
    /// Increments of `Im(lambda_{-n}^2)` against `| |c| dkappa - d rho^{1/2} | - eps`.
    pub im_neg2_gap: Clause,
    /// `Im(lambda_n^3) = -Im(lambda_{-n}^2)` to round-off.
    pub mirror_defect: f64,
    /// Printed direction claims for `Im(lambda_{-n}^2)`: increasing when `|c| < gamma`, decreasing otherwise.
    pub literal_direction_holds: bool,
    /// Printed interval `Im(lambda_{-n}^2) >= (1 - |c|/gamma) rho_1^{1/2}` (case `|c| < gamma`).
    pub literal_interval_holds: bool,
    pub near: Vec<NearResonance>,
    /// `min rho_m |lambda_m^2 - partner|` over the scanned modes.
    pub delta_prime: f64,
    /// Minimum over the upper half of the scan divided by the minimum over the lower half, reported only.
    pub delta_prime_stability: f64,
    /// Median block minimum over the upper three of six scan blocks divided by that over the lower three.
    pub delta_prime_trend: f64,
    /// Minimum second-nearest distance.
    pub delta: f64,
    /// Printed upper bound `|1-|c||/2 + 3 eps` on the near-resonant distance.
    pub literal_upper_holds: bool,
    /// Pairs classified by clause: (branch 1 vs 2/3, branch 1 internal, branch 2/3).
    pub pair_counts: (usize, usize, usize),
    pub total_pairs: usize,
    pub pass: bool,
}

/// Default diagnostic radius `min(|c| gamma, |1 - |c|/gamma| gamma) / 10`.
pub fn default_epsilon(c: f64, gamma: f64) -> f64 {
    let c = c.abs();
    (c * gamma).min((1.0 - c / gamma).abs() * gamma) / 10.0
}

pub fn gap_diagnostics(ms: &MovingSpectrum, epsilon: f64) -> Result<GapReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let n = ms.n_trunc;
    let mv = ms.m.get();
    let c = ms.c;
    let ca = c.abs();
    let sg = if c > 0.0 { 1i64 } else { -1 };
    // reflect indices so that c < 0 reads as c > 0
    let lam = |k: i64, j: u8| ms.lambda(ModeIndex { n: sg * k, j });
    let big_r = |k: usize| {
        let t = &ms.triples[k - 1];
        (0.75 * t.mu1 * t.mu1 + t.rho).sqrt()
    };
    let n_eps = (1..=n)
        .find(|&k0| {
            (k0..=n).all(|k| {
                let t = &ms.triples[k - 1];
                big_r(k) - t.rho.sqrt() <= epsilon && (mv - t.mu1).abs() <= epsilon
            })
        })
        .ok_or_else(|| Error::Check(alloc::format!("epsilon threshold beyond truncation {n}")))?;

    let modes = ms.modes();
    let is_crit = |a: ModeIndex, b: ModeIndex| {
        ms.critical.is_some_and(|cr| (cr.moved == a && cr.partner == b) || (cr.moved == b && cr.partner == a))
    };
    let mut b1_others = f64::INFINITY;
    let mut b1_internal = f64::INFINITY;
    let mut b23 = f64::INFINITY;
    let mut counts = (0usize, 0usize, 0usize);
    for (ia, a) in modes.iter().enumerate() {
        for b in modes[ia + 1..].iter() {
            let d = (ms.lambda(*a) - ms.lambda(*b)).norm();
            match (a.j == 1, b.j == 1) {
                (true, true) => {
                    counts.1 += 1;
                    b1_internal = b1_internal.min(d - ca * (ms.kappa(a.n) - ms.kappa(b.n)).abs());
                }
                (true, false) | (false, true) => {
                    counts.0 += 1;
                    b1_others = b1_others.min(d);
                }
                (false, false) => {
                    counts.2 += 1;
                    if !is_crit(*a, *b) {
                        b23 = b23.min(d);
                    }
                }
            }
        }
    }
    let total_pairs = modes.len() * (modes.len() - 1) / 2;
    let rho1 = ms.rho(1);
    let mu11 = ms.triples[0].mu1;
    let branch1_vs_others = Clause::at_least(b1_others, 3.0 * mv.abs() / (2.0 * mv * mv / rho1 + 2.0) - 1e-9);
    let branch1_vs_others_literal_bound = 3.0 * mv.abs() / (2.0 * mv * mv / mu11.abs() + 2.0);
    let branch1_internal = Clause::at_least(b1_internal, -1e-12 * ca * ms.kappa_pos[n - 1]);
    let branch23_min = Clause { measured: b23, bound: 0.0, pass: b23 > 0.0 };

    let im2: Vec<f64> = (1..=n as i64).map(|k| lam(k, 2).im).collect();
    let imn2: Vec<f64> = (1..=n as i64).map(|k| lam(-k, 2).im).collect();
    let im3: Vec<f64> = (1..=n as i64).map(|k| lam(k, 3).im).collect();
    let mirror_defect = im3.iter().zip(&imn2).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let im2_increasing = im2.windows(2).all(|w| w[1] > w[0]);
    let im2_lower = Clause::at_least(im2.iter().copied().fold(f64::INFINITY, f64::min), (1.0 + ca) * rho1.sqrt());
    let k0 = n_eps.max(1);
    let gap_gamma = ms.gamma;
    let im2_gap_min = (k0..n).map(|k| im2[k] - im2[k - 1]).fold(f64::INFINITY, f64::min);
    let im2_gap = if k0 < n {
        Clause::at_least(im2_gap_min, ca * gap_gamma - epsilon)
    } else {
        Clause { measured: f64::INFINITY, bound: ca * gap_gamma - epsilon, pass: true }
    };
    let incs: Vec<f64> = (1..n).map(|k| imn2[k] - imn2[k - 1]).collect();
    let im_neg2_monotone_from = if incs.is_empty() {
        Some(1)
    } else {
        let last = incs[incs.len() - 1].signum();
        let mut from = incs.len();
        while from > 0 && incs[from - 1].signum() == last {
            from -= 1;
        }
        Some(from + 1)
    };
    let start = im_neg2_monotone_from.unwrap_or(1).max(k0);
    let mut worst = f64::INFINITY;
    let mut worst_bound = 0.0;
    for k in start..n {
        let dk = ms.kappa_pos[k] - ms.kappa_pos[k - 1];
        let dr = ms.rho(k + 1).sqrt() - ms.rho(k).sqrt();
        let bound = (ca * dk - dr).abs() - 2.0 * epsilon;
        let margin = incs[k - 1].abs() - bound;
        if margin < worst {
            worst = margin;
            worst_bound = bound;
        }
    }
    let im_neg2_gap = if worst.is_finite() {
        Clause { measured: worst + worst_bound, bound: worst_bound, pass: worst >= 0.0 }
    } else {
        Clause { measured: f64::INFINITY, bound: 0.0, pass: true }
    };
    let tail = &incs[(k0.max(1) - 1).min(incs.len())..];
    let literal_direction_holds = if ca < gap_gamma { tail.iter().all(|d| *d > 0.0) } else { tail.iter().all(|d| *d < 0.0) };
    let literal_interval_holds = ca > gap_gamma || imn2[k0 - 1..].iter().all(|v| *v >= (1.0 - ca / gap_gamma) * rho1.sqrt());

    // near-resonant partners of lambda_m^2 among branch-2/3 eigenvalues
    let b23_modes: Vec<ModeIndex> = modes.iter().copied().filter(|md| md.j > 1).collect();
    let mut near = Vec::new();
    for m_ in k0..=n {
        let a = ModeIndex { n: sg * m_ as i64, j: 2 };
        let la = ms.lambda(a);
        let mut best = (f64::INFINITY, a);
        let mut second = f64::INFINITY;
        for b in &b23_modes {
            if *b == a || is_crit(a, *b) {
                continue;
            }
            let d = (la - ms.lambda(*b)).norm();
            if d < best.0 {
                second = best.0;
                best = (d, *b);
            } else if d < second {
                second = d;
            }
        }
        let rho_m = ms.rho(m_);
        let target = (1.0 + ca) * rho_m.sqrt();
        let lit = (1..=n)
            .min_by(|&x, &y| {
                let fx = ((1.0 - ca / gap_gamma).abs() * ms.rho(x).sqrt() - target).abs();
                let fy = ((1.0 - ca / gap_gamma).abs() * ms.rho(y).sqrt() - target).abs();
                fx.partial_cmp(&fy).unwrap_or(core::cmp::Ordering::Equal)
            })
            .unwrap_or(1);
        near.push(NearResonance {
            m: m_,
            partner: best.1,
            distance: best.0,
            scaled: rho_m * best.0,
            scaled_real: rho_m * (la - ms.lambda(best.1)).re.abs(),
            second,
            literal_partner: lit,
        });
    }
    let delta_prime = near.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let half = near.len() / 2;
    let lower_min = near[..half.max(1)].iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let upper_min = near[half..].iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let delta_prime_stability = if lower_min > 0.0 { upper_min / lower_min } else { 0.0 };
    let delta_prime_trend = block_trend(&near.iter().map(|r| r.scaled).collect::<Vec<_>>());
    let delta = near.iter().map(|r| r.second).fold(f64::INFINITY, f64::min);
    let literal_upper_holds = near.iter().all(|r| r.distance <= (1.0 - ca).abs() / 2.0 + 3.0 * epsilon);

    let pass = branch1_vs_others.pass
        && branch1_internal.pass
        && branch23_min.pass
        && im2_increasing
        && im2_lower.pass
        && im2_gap.pass
        && im_neg2_monotone_from.is_some()
        && im_neg2_gap.pass
        && mirror_defect <= 1e-12 * (1.0 + im2[n - 1].abs())
        && delta_prime > 0.0
        && delta_prime_trend >= 0.5
        && delta > 0.0
        && counts.0 + counts.1 + counts.2 == total_pairs;
    Ok(GapReport {
        epsilon,
        n_eps,
        branch1_vs_others,
        branch1_vs_others_literal_bound,
        branch1_internal,
        branch23_min,
        critical_distance: ms.critical.map(|c| c.collision_distance),
        im2_increasing,
        im2_lower,
        im2_gap,
        im_neg2_monotone_from,
        im_neg2_gap,
        mirror_defect,
        literal_direction_holds,
        literal_interval_holds,
        near,
        delta_prime,
        delta_prime_stability,
        delta_prime_trend,
        delta,
        literal_upper_holds,
        pair_counts: counts,
        total_pairs,
        pass,
    })
}

/// Splits `v` into six contiguous blocks and compares the median block minimum of the upper
/// three with that of the lower three. A single dip moves one block only.
fn block_trend(v: &[f64]) -> f64 {
    if v.len() < 6 {
        return 1.0;
    }
    let mins: Vec<f64> = (0..6)
        .map(|b| v[b * v.len() / 6..(b + 1) * v.len() / 6].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let median3 = |x: &[f64]| x[0].max(x[1]).min(x[0].min(x[1]).max(x[2]));
    let lower = median3(&mins[..3]);
    if lower > 0.0 {
        median3(&mins[3..]) / lower
    } else {
        0.0
    }
}

/// The 3x3 matrix `B_n` with rows `(1, 1, 1)`, `lambda^j / rho`, `1/(lambda^j - i sgn(n) c kappa)`.
pub fn b_matrix(ms: &MovingSpectrum, n: i64) -> Matrix3<Complex64> {
    let rho = ms.rho(n.unsigned_abs() as usize);
    Matrix3::from_fn(|r, col| {
        let md = ModeIndex { n, j: col as u8 + 1 };
        let v = ms.eigenvector(md);
        match r {
            0 => v[0],
            1 => -v[1] / rho,
            _ => v[2],
        }
    })
}

/// Limit matrix as printed, for comparison only.
pub fn printed_limit_matrix(c: f64, m: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 + c * c + 1.0 / (m * m),
        1.0 + c * (c + 1.0),
        1.0 + c * (c - 1.0),
        1.0 + c * (c + 1.0),
        1.0 + (c + 1.0) * (c + 1.0),
        1.0 + (c + 1.0) * (c - 1.0),
        1.0 + c * (c - 1.0),
        1.0 + (c + 1.0) * (c - 1.0),
        1.0 + (c - 1.0) * (c - 1.0),
    )
}

#[derive(Debug, Clone)]
pub struct FrameReport {
    /// Extreme eigenvalues of `B_n^* B_n` over `|n| <= N`.
    pub a1_hat: f64,
    pub a2_hat: f64,
    pub worst_n_low: i64,
    pub min_abs_det: f64,
    /// Smallest and largest observed `||sum a rho^sigma Psi||^2 / (2 sum |a|^2)` over trials.
    pub observed: (f64, f64),
    pub trials: usize,
    pub sandwich_failures: usize,
    /// Frobenius distance of `B_N^* B_N` to the printed limit matrix.
    pub dist_printed_limit: f64,
    /// Frobenius distance between `B_N^* B_N` and `B_{N/2}^* B_{N/2}`, relative to the former.
    pub tail_drift: f64,
    pub degenerate: bool,
}

fn gram3(b: &Matrix3<Complex64>) -> DMatrix<Complex64> {
    let g = b.adjoint() * b;
    DMatrix::from_fn(3, 3, |i, j| g[(i, j)])
}

pub fn frame_bounds<R: Rng + ?Sized>(ms: &MovingSpectrum, sigma: f64, trials: usize, rng: &mut R) -> Result<FrameReport> {
    if trials < 100 {
        return Err(Error::InvalidInput("frame bounds need at least 100 trials".into()));
    }
    let mut a1: f64 = f64::INFINITY;
    let mut a2: f64 = 0.0;
    let mut worst = 1;
    let mut min_det = f64::INFINITY;
    let ns: Vec<i64> = ms.modes().iter().filter(|md| md.j == 1).map(|md| md.n).collect();
    for &n in &ns {
        let b = b_matrix(ms, n);
        let ev = hermitian_eigenvalues(&gram3(&b));
        if ev[0] < a1 {
            a1 = ev[0];
            worst = n;
        }
        a2 = a2.max(ev[2]);
        min_det = min_det.min(b.determinant().norm());
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..trials {
        let mut num = 0.0;
        let mut den = 0.0;
        for &n in &ns {
            let rho = ms.rho(n.unsigned_abs() as usize);
            let w = rho.powf(sigma);
            let a: [Complex64; 3] = core::array::from_fn(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            // plane-wave coefficients of the three components, then X_{-sigma} weights
            let mut comp = [Complex64::new(0.0, 0.0); 3];
            for (j, aj) in a.iter().enumerate() {
                let v = ms.eigenvector(ModeIndex { n, j: j as u8 + 1 });
                for k in 0..3 {
                    comp[k] += v[k] * *aj * w;
                }
            }
            let wts = [rho.powf(-2.0 * sigma), rho.powf(-2.0 * sigma - 2.0), rho.powf(-2.0 * sigma)];
            num += 2.0 * comp.iter().zip(wts).map(|(z, q)| z.norm_sqr() * q).sum::<f64>();
            den += a.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let ratio = num / (2.0 * den);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        let slack = 1e-12 * a2;
        if ratio < a1 - slack || ratio > a2 + slack {
            failures += 1;
        }
    }
    let n_top = ms.n_trunc as i64;
    let g_top = gram3(&b_matrix(ms, n_top));
    let g_mid = gram3(&b_matrix(ms, (n_top / 2).max(1)));
    let lim = printed_limit_matrix(ms.c, ms.m.get());
    let dist_printed_limit = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (g_top[(i, j)] - lim[(i, j)]).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let tail_drift = (&g_top - &g_mid).norm() / g_top.norm();
    Ok(FrameReport {
        a1_hat: a1,
        a2_hat: a2,
        worst_n_low: worst,
        min_abs_det: min_det,
        observed: (lo, hi),
        trials,
        sandwich_failures: failures,
        dist_printed_limit,
        tail_drift,
        degenerate: a1 < 1e-8,
    })
}

/// `Psi` in coefficient form for a given mode: the eigenvector times `e^{i kappa_n x}`.
pub fn eigenvector_frame_identity_defect(ms: &MovingSpectrum) -> f64 {
    ms.modes()
        .iter()
        .map(|md| {
            let v = ms.eigenvector(*md);
            let inv_mu = Complex64::new(1.0, 0.0) / ms.mu(*md);
            (v[2] - inv_mu).norm() / inv_mu.norm()
        })
        .fold(0.0, f64::max)
}

/// Real 3-vector helper used by the frame tests.
pub fn unit(i: usize) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[i] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{build_eigenvalue_table, Backend};
    use rand::SeedableRng;

    fn table(s: f64, n: usize) -> EigenvalueTable {
        build_eigenvalue_table(FractionalOrder::new(s).unwrap(), n, Backend::Asymptotic).unwrap()
    }

    fn mem(m: f64) -> MemoryCoefficient {
        MemoryCoefficient::new(m).unwrap()
    }

    #[test]
    fn conjugate_symmetry_of_branches() {
        let ms = build_moving_spectrum(&table(0.75, 32), mem(1.0), 1.0, 32).unwrap();
        for n in 1..=32i64 {
            let a = ms.lambda(ModeIndex { n: -n, j: 3 });
            let b = ms.lambda(ModeIndex { n, j: 2 }).conj();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn real_parts_follow_memory_roots() {
        let ms = build_moving_spectrum(&table(0.75, 32), mem(1.0), 1.0, 32).unwrap();
        for md in ms.modes() {
            let t = &ms.triples[md.abs_n() - 1];
            let expect = if md.j == 1 { t.mu1 } else { -t.mu1 / 2.0 };
            assert_eq!(ms.lambda(*md).re, expect);
            assert!(ms.lambda(*md).re.abs() < 1.0);
        }
    }

    #[test]
    fn forbidden_velocities_rejected() {
        let t = table(0.75, 8);
        assert!(matches!(build_moving_spectrum(&t, mem(1.0), 0.0, 8), Err(Error::ForbiddenVelocity { .. })));
        let g = t.gap_gamma;
        assert!(build_moving_spectrum(&t, mem(1.0), g, 8).is_err());
        assert!(build_moving_spectrum(&t, mem(1.0), -g + 1e-10, 8).is_err());
        assert!(build_moving_spectrum(&t, mem(1.0), g + 1e-6, 8).is_ok());
    }

    #[test]
    fn critical_velocity_produces_double_eigenvalue() {
        let t = table(0.75, 16);
        let v = critical_velocities(&t, mem(0.5), 1..=16).unwrap();
        let (n_c, c) = v[2];
        let ms = build_moving_spectrum(&t, mem(0.5), c, 16).unwrap();
        let cr = ms.critical.expect("critical record");
        assert_eq!(cr.n_c, n_c);
        let d = (ms.lambda(ModeIndex { n: -(n_c as i64), j: 2 }) - ms.lambda(ModeIndex { n: n_c as i64, j: 3 })).norm();
        assert!(d <= 1e-9);
        let mu = ms.triples[n_c - 1].mu1;
        let k = ms.kappa_pos[n_c - 1];
        let r = (3.0 * (mu / 2.0).powi(2) + ms.rho(n_c)).sqrt();
        let expect = Complex64::new(mu / 2.0, -c * k + r - 0.5);
        assert!((ms.lambda_convention(cr.moved) - expect).norm() < 1e-12);
    }

    #[test]
    fn eigenvector_third_component_is_inverse_mu() {
        let ms = build_moving_spectrum(&table(0.6, 16), mem(-0.8), 2.3, 16).unwrap();
        assert!(eigenvector_frame_identity_defect(&ms) < 1e-9);
    }

    #[test]
    fn gap_report_passes_and_counts_all_pairs() {
        let ms = build_moving_spectrum(&table(0.75, 32), mem(0.5), 1.0, 32).unwrap();
        let r = gap_diagnostics(&ms, default_epsilon(1.0, ms.gamma)).unwrap();
        assert!(r.pass, "{r:#?}");
        assert_eq!(r.pair_counts.0 + r.pair_counts.1 + r.pair_counts.2, r.total_pairs);
    }

    #[test]
    fn block_trend_rejects_decay_and_tolerates_a_dip() {
        let decay: Vec<f64> = (3..=32).map(|m| 1.0 / m as f64).collect();
        assert!(block_trend(&decay) < 0.5);
        let mut dip = alloc::vec![2.0; 30];
        dip[21] = 0.3;
        assert!(block_trend(&dip) >= 0.5);
        assert!((block_trend(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) - 5.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn frame_sandwich_holds() {
        let ms = build_moving_spectrum(&table(0.75, 8), mem(1.0), 1.0, 8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let r = frame_bounds(&ms, 0.0, 200, &mut rng).unwrap();
        assert_eq!(r.sandwich_failures, 0);
        assert!(r.a1_hat > 0.0 && r.min_abs_det > 0.0);
        assert!(r.observed.0 >= r.a1_hat * (1.0 - 1e-12) && r.observed.1 <= r.a2_hat * (1.0 + 1e-12));
    }
}
