//! Special functions not provided by libm.


const B2K: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Hurwitz zeta function `sum_{k>=0} (k + a)^{-s}` (analytically continued), `a > 0`, `s != 1`.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(a > 0.0 && s != 1.0);
    let n = 24usize;
    let mut sum = 0.0;
    for k in 0..n {
        sum += (a + k as f64).powf(-s);
    }
    let x = a + n as f64;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // Euler-Maclaurin tail: B_{2j}/(2j)! * s(s+1)...(s+2j-2) x^{-s-2j+1}
    let mut poch = s;
    let mut fact = 2.0;
    let mut xp = x.powf(-s - 1.0);
    for (j, b) in B2K.iter().enumerate() {
        sum += b / fact * poch * xp;
        let k = 2 * j + 2;
        poch *= (s + k as f64 - 1.0) * (s + k as f64);
        fact *= ((k + 1) * (k + 2)) as f64;
        xp /= x * x;
    }
    sum
}

/// Riemann zeta function for real `s != 1`.
pub fn zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}
