//! Independent reference implementations used only by tests.

use num_complex::Complex;

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Wigner's explicit sum for `d^l_{m,n}(beta)`, valid in f64 to l ≈ 20.
/// Returns the value and a bound on its own rounding error, which is set by
/// cancellation between the alternating terms.
pub fn wigner_d_factorial(l: i64, m: i64, n: i64, beta: f64) -> (f64, f64) {
    let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let pref = (factorial(l + m) * factorial(l - m) * factorial(l + n) * factorial(l - n)).sqrt();
    let k_min = 0.max(n - m);
    let k_max = (l + n).min(l - m);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for k in k_min..=k_max {
        let den = factorial(l + n - k) * factorial(k) * factorial(m - n + k) * factorial(l - m - k);
        let sign = if (m - n + k).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let term = c.powi((2 * l + n - m - 2 * k) as i32) * s.powi((m - n + 2 * k) as i32) / den;
        sum += sign * term;
        abs_sum += term;
    }
    let bound = 4.0 * (l as f64 + 2.0) * f64::EPSILON * pref * abs_sum;
    (pref * sum, bound)
}

/// Error of `got` relative to `want`, after discounting the reference's own
/// rounding bound and a 1e-15 absolute floor.
pub fn rel_err(got: f64, (want, bound): (f64, f64)) -> f64 {
    ((got - want).abs() - bound - 1e-15).max(0.0) / want.abs().max(f64::MIN_POSITIVE)
}

/// Condon–Shortley scalar harmonic from the associated Legendre recursion.
pub fn scalar_ylm(l: i64, m: i64, theta: f64, phi: f64) -> Complex<f64> {
    if m < 0 {
        let y = scalar_ylm(l, -m, theta, phi).conj();
        return if m % 2 == 0 { y } else { -y };
    }
    let x = theta.cos();
    let sx = theta.sin();
    // P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    let mut pmm = 1.0;
    for i in 1..=m {
        pmm *= -((2 * i - 1) as f64) * sx;
    }
    let plm = if l == m {
        pmm
    } else {
        let mut p0 = pmm;
        let mut p1 = x * (2 * m + 1) as f64 * pmm;
        for ll in (m + 2)..=l {
            let p2 = ((2 * ll - 1) as f64 * x * p1 - (ll + m - 1) as f64 * p0) / (ll - m) as f64;
            p0 = p1;
            p1 = p2;
        }
        p1
    };
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - m) / factorial(l + m)).sqrt();
    Complex::from_polar(norm * plm, m as f64 * phi)
}
