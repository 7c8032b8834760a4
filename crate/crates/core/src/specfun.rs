//! Wigner d-matrices, spin-weighted spherical harmonics and the kernel K^{ls}.
//!
//! Conventions: `d^l_{m,n}(β)` follows Wigner's explicit formula, and
//!
//! ```text
//! Y_{lms}(θ, φ) = (-1)^m sqrt((2l+1)/4π) exp(i m φ) d^l_{-m,s}(θ)
//! ```
//!
//! which reduces to the Condon–Shortley `Y_lm` for `s = 0`. Every other module
//! obtains harmonic values through this module (directly or through
//! [`DRecurrence`]) so the phase convention lives in one place.
//!
//! Matrix elements are produced by the three-term recursion in `l` at fixed
//! `(m, n)`, seeded at `l0 = max(|m|, |n|)` from the closed form. Seeds are
//! formed in log space and the recursion carries an explicit scale exponent,
//! so tiny seeds near the poles neither underflow nor lose relative accuracy.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{int, lit, Real};

/// A point on the unit sphere in colatitude/longitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphPoint<T> {
    pub theta: T,
    pub phi: T,
}

impl<T: Real> SphPoint<T> {
    /// Builds a point, clamping `theta` into `[0, π]` and wrapping `phi` into `[0, 2π)`.
    pub fn new(theta: T, phi: T) -> Self {
        let two_pi = T::PI() + T::PI();
        let theta = theta.max(T::zero()).min(T::PI());
        let mut phi = phi % two_pi;
        if phi < T::zero() {
            phi = phi + two_pi;
        }
        if phi >= two_pi {
            phi = T::zero();
        }
        Self { theta, phi }
    }

    pub fn unit_vector(&self) -> [T; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// Column `n` of the degree-`l` Wigner d-matrix at angle `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerDSlice<T> {
    pub l: usize,
    pub n: i64,
    pub beta: T,
    /// `values[m + l]` holds `d^l_{m,n}(beta)` for `m` in `-l..=l`.
    pub values: Vec<T>,
}

impl<T: Real> WignerDSlice<T> {
    /// `d^l_{m,n}(beta)`; zero outside `|m| ≤ l`.
    pub fn get(&self, m: i64) -> T {
        let l = self.l as i64;
        if m.abs() > l {
            T::zero()
        } else {
            self.values[(m + l) as usize]
        }
    }

    pub fn norm_sqr(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }
}

fn check_indices(l: i64, m: i64, n: i64) -> Result<()> {
    if l < 0 || m.abs() > l || n.abs() > l {
        return Err(Error::IndexOutOfRange { l, m, n });
    }
    Ok(())
}

fn ln_binomial(n: i64, k: i64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub(crate) fn parity<T: Real>(k: i64) -> T {
    if k.rem_euclid(2) == 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// Closed-form seed `d^{l0}_{m,n}` with `l0 = max(|m|, |n|)`, factored as
/// `sign · exp(ln_pref) · cos(β/2)^cos_pow · sin(β/2)^sin_pow`.
#[derive(Clone, Copy, Debug)]
struct Seed {
    sign_negative: bool,
    ln_pref: f64,
    cos_pow: i64,
    sin_pow: i64,
}

impl Seed {
    fn new(m: i64, n: i64) -> Self {
        let l0 = m.abs().max(n.abs());
        let (neg, k, cp, sp) = if m == l0 {
            ((l0 - n).rem_euclid(2) == 1, l0 + n, l0 + n, l0 - n)
        } else if m == -l0 {
            (false, l0 - n, l0 - n, l0 + n)
        } else if n == l0 {
            (false, l0 + m, l0 + m, l0 - m)
        } else {
            ((m + l0).rem_euclid(2) == 1, l0 - m, l0 - m, l0 + m)
        };
        Seed {
            sign_negative: neg,
            ln_pref: 0.5 * ln_binomial(2 * l0, k),
            cos_pow: cp,
            sin_pow: sp,
        }
    }
}

/// Precomputed three-term recursion in `l` for a fixed pair `(m, n)`:
///
/// ```text
/// d^{l+1} = A_l (l(l+1) cosβ - m n) d^l - C_l d^{l-1}
/// ```
///
/// The coefficients are angle independent, so one instance serves every
/// colatitude of a grid.
#[derive(Clone, Debug)]
pub struct DRecurrence<T> {
    m: i64,
    n: i64,
    l0: usize,
    l_max: usize,
    seed: Seed,
    // seed of (m, -n), used for beta > π/2
    seed_reflected: Seed,
    a: Vec<T>,
    c: Vec<T>,
}

impl<T: Real> DRecurrence<T> {
    /// Recursion for `d^l_{m,n}` over `l0 ..= l_max`. Empty when `l_max < l0`.
    pub fn new(m: i64, n: i64, l_max: usize) -> Self {
        let l0 = m.abs().max(n.abs()) as usize;
        let mut a = Vec::new();
        let mut c = Vec::new();
        if l_max > l0 {
            a.reserve(l_max - l0);
            c.reserve(l_max - l0);
            for l in l0..l_max {
                if l == 0 {
                    // m = n = 0 first step is handled explicitly.
                    a.push(T::zero());
                    c.push(T::zero());
                    continue;
                }
                let lf = l as f64;
                let (mf, nf) = (m as f64, n as f64);
                let den = lf * (((lf + 1.0).powi(2) - mf * mf) * ((lf + 1.0).powi(2) - nf * nf)).sqrt();
                let prev = ((lf * lf - mf * mf) * (lf * lf - nf * nf)).max(0.0).sqrt();
                a.push(lit((2.0 * lf + 1.0) / den));
                c.push(lit((lf + 1.0) * prev / den));
            }
        }
        Self {
            m,
            n,
            l0,
            l_max,
            seed: Seed::new(m, n),
            seed_reflected: Seed::new(m, -n),
            a,
            c,
        }
    }

    pub fn l0(&self) -> usize {
        self.l0
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Number of degrees produced by [`Self::eval_into`].
    pub fn len(&self) -> usize {
        if self.l_max < self.l0 {
            0
        } else {
            self.l_max - self.l0 + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills `out[i]` with `d^{l0+i}_{m,n}(beta)` for `i < self.len()`.
    pub fn eval_into(&self, beta: T, out: &mut [T]) {
        let len = self.len();
        assert!(out.len() >= len, "output buffer too short");
        if len == 0 {
            return;
        }
        let eps = lit::<T>(1e-300).max(T::min_positive_value());
        if beta <= eps {
            let v = if self.m == self.n { T::one() } else { T::zero() };
            out[..len].fill(v);
            return;
        }
        if beta >= T::PI() - eps {
            for (i, o) in out[..len].iter_mut().enumerate() {
                let l = (self.l0 + i) as i64;
                *o = if self.m == -self.n { parity::<T>(l - self.n) } else { T::zero() };
            }
            return;
        }

        // d^l_{m,n}(β) = (-1)^{l+m} d^l_{m,-n}(π-β) keeps the recursion on [0, π/2]
        let reflect = beta > T::FRAC_PI_2();
        let (beta, n, seed) = if reflect {
            (T::PI() - beta, -self.n, self.seed_reflected)
        } else {
            (beta, self.n, self.seed)
        };
        let half = beta * lit(0.5);
        let (sh, ch) = half.sin_cos();
        let mut ln_seed = lit::<T>(seed.ln_pref);
        if seed.cos_pow > 0 {
            ln_seed = ln_seed + int::<T>(seed.cos_pow) * ch.ln();
        }
        if seed.sin_pow > 0 {
            ln_seed = ln_seed + int::<T>(seed.sin_pow) * sh.ln();
        }
        let low = T::min_positive_value().ln() * lit(0.5);
        let big = T::max_value().sqrt().sqrt();
        let ln_big = big.ln();
        let (mut cur, mut scale) = if ln_seed > low {
            (ln_seed.exp(), T::zero())
        } else {
            (T::one(), ln_seed)
        };
        if seed.sign_negative {
            cur = -cur;
        }
        let mut prev = T::zero();
        let emit = |v: T, sc: T| if sc == T::zero() { v } else { v * sc.exp() };
        out[0] = emit(cur, scale);

        // 1 - cos β from the half angle; cos β itself loses digits near β = 0
        let omc = lit::<T>(2.0) * sh * sh;
        let mn = int::<T>(self.m * n);
        for i in 1..len {
            let l = self.l0 + i - 1;
            let next = if l == 0 {
                (T::one() - omc) * cur
            } else {
                let ll = int::<T>((l * (l + 1)) as i64);
                self.a[i - 1] * ((ll - mn) - ll * omc) * cur - self.c[i - 1] * prev
            };
            prev = cur;
            cur = next;
            if scale != T::zero() && cur.abs() > big {
                cur = cur / big;
                prev = prev / big;
                scale = scale + ln_big;
            }
            out[i] = emit(cur, scale);
        }
        if reflect {
            for (i, o) in out[..len].iter_mut().enumerate() {
                if ((self.l0 + i) as i64 + self.m) & 1 == 1 {
                    *o = -*o;
                }
            }
        }
    }
}

/// `d^l_{m,n}(beta)`.
pub fn wigner_d<T: Real>(l: usize, m: i64, n: i64, beta: T) -> Result<T> {
    check_indices(l as i64, m, n)?;
    let rec = DRecurrence::new(m, n, l);
    let mut buf = vec![T::zero(); rec.len()];
    rec.eval_into(beta, &mut buf);
    Ok(buf[l - rec.l0()])
}

/// Sweeps column `n` of the d-matrix over increasing degree, holding
/// `d^l_{m,n}(beta)` for every `|m| ≤ l` at the current `l`. All rows advance
/// together, so a full sweep up to `L` costs `O(L^2)`.
#[derive(Clone, Debug)]
pub struct ColumnSweep<T> {
    n: i64,
    beta: T,
    // runs on column -n at π - beta when beta > π/2
    reflect: bool,
    n_eff: i64,
    one_minus_cos: T,
    ln_cos_half: T,
    ln_sin_half: T,
    l_max: usize,
    l: Option<usize>,
    cur: Vec<T>,
    prev: Vec<T>,
    scale: Vec<T>,
    out: Vec<T>,
    pole: Option<bool>,
}

impl<T: Real> ColumnSweep<T> {
    pub fn new(n: i64, beta: T, l_max: usize) -> Self {
        let size = 2 * l_max + 1;
        let eps = lit::<T>(1e-300).max(T::min_positive_value());
        let pole = if beta <= eps {
            Some(false)
        } else if beta >= T::PI() - eps {
            Some(true)
        } else {
            None
        };
        let reflect = pole.is_none() && beta > T::FRAC_PI_2();
        let (beta_eff, n_eff) = if reflect { (T::PI() - beta, -n) } else { (beta, n) };
        let half = beta_eff * lit(0.5);
        let (sh, ch) = half.sin_cos();
        Self {
            n,
            beta,
            reflect,
            n_eff,
            one_minus_cos: lit::<T>(2.0) * sh * sh,
            ln_cos_half: ch.ln(),
            ln_sin_half: sh.ln(),
            l_max,
            l: None,
            cur: vec![T::zero(); size],
            prev: vec![T::zero(); size],
            scale: vec![T::zero(); size],
            out: vec![T::zero(); size],
            pole,
        }
    }

    /// Current degree, `None` before the first [`Self::advance`].
    pub fn degree(&self) -> Option<usize> {
        self.l
    }

    fn idx(&self, m: i64) -> usize {
        (m + self.l_max as i64) as usize
    }

    fn seed(&mut self, m: i64) {
        let s = Seed::new(m, self.n_eff);
        let mut ln_seed = lit::<T>(s.ln_pref);
        if s.cos_pow > 0 {
            ln_seed = ln_seed + int::<T>(s.cos_pow) * self.ln_cos_half;
        }
        if s.sin_pow > 0 {
            ln_seed = ln_seed + int::<T>(s.sin_pow) * self.ln_sin_half;
        }
        let low = T::min_positive_value().ln() * lit(0.5);
        let (mut v, sc) = if ln_seed > low {
            (ln_seed.exp(), T::zero())
        } else {
            (T::one(), ln_seed)
        };
        if s.sign_negative {
            v = -v;
        }
        let i = self.idx(m);
        self.cur[i] = v;
        self.prev[i] = T::zero();
        self.scale[i] = sc;
    }

    /// Moves to the next degree (starting at `|n|`). Returns the new degree,
    /// or `None` once `l_max` has been passed.
    pub fn advance(&mut self) -> Option<usize> {
        let n_abs = self.n.unsigned_abs() as usize;
        let next_l = match self.l {
            None => n_abs,
            Some(l) => l + 1,
        };
        if next_l > self.l_max {
            return None;
        }
        self.l = Some(next_l);
        let l = next_l as i64;

        if let Some(south) = self.pole {
            for m in -l..=l {
                let i = self.idx(m);
                self.out[i] = if !south {
                    if m == self.n { T::one() } else { T::zero() }
                } else if m == -self.n {
                    parity::<T>(l - self.n)
                } else {
                    T::zero()
                };
            }
            return Some(next_l);
        }

        if next_l == n_abs {
            for m in -l..=l {
                self.seed(m);
            }
        } else {
            let lp = l - 1;
            let big = T::max_value().sqrt().sqrt();
            let ln_big = big.ln();
            let ll = int::<T>(lp * (lp + 1));
            let lp2 = (lp * lp) as f64;
            let nf = self.n_eff as f64;
            for m in -lp..=lp {
                let i = self.idx(m);
                let mf = m as f64;
                let next = if lp == 0 {
                    (T::one() - self.one_minus_cos) * self.cur[i]
                } else {
                    let den = (lp as f64)
                        * (((lp as f64 + 1.0).powi(2) - mf * mf) * ((lp as f64 + 1.0).powi(2) - nf * nf)).sqrt();
                    let a = lit::<T>((2.0 * lp as f64 + 1.0) / den);
                    let c = lit::<T>((lp as f64 + 1.0) * ((lp2 - mf * mf) * (lp2 - nf * nf)).max(0.0).sqrt() / den);
                    a * ((ll - int::<T>(m * self.n_eff)) - ll * self.one_minus_cos) * self.cur[i]
                        - c * self.prev[i]
                };
                self.prev[i] = self.cur[i];
                self.cur[i] = next;
                if self.scale[i] != T::zero() && next.abs() > big {
                    self.cur[i] = self.cur[i] / big;
                    self.prev[i] = self.prev[i] / big;
                    self.scale[i] = self.scale[i] + ln_big;
                }
            }
            for m in [-l, l] {
                self.seed(m);
            }
        }
        for m in -l..=l {
            let i = self.idx(m);
            let sc = self.scale[i];
            let v = if sc == T::zero() { self.cur[i] } else { self.cur[i] * sc.exp() };
            self.out[i] = if self.reflect && (l + m) & 1 == 1 { -v } else { v };
        }
        Some(next_l)
    }

    /// `d^l_{m,n}(beta)` at the current degree.
    pub fn get(&self, m: i64) -> T {
        match self.l {
            Some(l) if m.unsigned_abs() as usize <= l => self.out[self.idx(m)],
            _ => T::zero(),
        }
    }

    /// Snapshot of the current degree as a [`WignerDSlice`].
    pub fn slice(&self) -> Option<WignerDSlice<T>> {
        let l = self.l?;
        let li = l as i64;
        Some(WignerDSlice {
            l,
            n: self.n,
            beta: self.beta,
            values: (-li..=li).map(|m| self.get(m)).collect(),
        })
    }
}

/// Column `n` of `d^l(beta)` for every row `m`, in one sweep over degree.
pub fn wigner_d_slice<T: Real>(l: usize, n: i64, beta: T) -> Result<WignerDSlice<T>> {
    check_indices(l as i64, 0, n)?;
    let mut sweep = ColumnSweep::new(n, beta, l);
    while let Some(d) = sweep.advance() {
        if d == l {
            break;
        }
    }
    Ok(sweep.slice().expect("sweep reached the requested degree"))
}

pub(crate) fn harmonic_norm<T: Real>(l: usize) -> T {
    (int::<T>(2 * l as i64 + 1) / (lit::<T>(4.0) * T::PI())).sqrt()
}

/// Spin-weighted spherical harmonic `Y_{lms}(p)`.
pub fn spin_sph_harm<T: Real>(l: usize, m: i64, s: i64, p: SphPoint<T>) -> Result<Complex<T>> {
    if (l as i64) < s.abs() {
        return Err(Error::InvalidDegree { l: l as i64, min: s.abs() });
    }
    check_indices(l as i64, m, s)?;
    let d = wigner_d(l, -m, s, p.theta)?;
    let phase = Complex::from_polar(T::one(), int::<T>(m) * p.phi);
    Ok(phase * (parity::<T>(m) * harmonic_norm::<T>(l) * d))
}

/// All `Y_{lms}(p)` for `m` in `-l..=l` from a sweep positioned at degree `l`.
pub(crate) fn harmonics_from_sweep<T: Real>(sweep: &ColumnSweep<T>, p: SphPoint<T>, out: &mut Vec<Complex<T>>) {
    let l = sweep.degree().expect("sweep started") as i64;
    let norm = harmonic_norm::<T>(l as usize);
    out.clear();
    for m in -l..=l {
        let phase = Complex::from_polar(T::one(), int::<T>(m) * p.phi);
        out.push(phase * (parity::<T>(m) * norm * sweep.get(-m)));
    }
}

/// Reproducing kernel `K^{ls}(p, q) = Σ_m Y_{lms}(p) conj(Y_{lms}(q))`.
pub fn kernel_k<T: Real>(l: usize, s: i64, p: SphPoint<T>, q: SphPoint<T>) -> Result<Complex<T>> {
    if (l as i64) < s.abs() {
        return Err(Error::InvalidDegree { l: l as i64, min: s.abs() });
    }
    let dp = wigner_d_slice(l, s, p.theta)?;
    let dq = wigner_d_slice(l, s, q.theta)?;
    let li = l as i64;
    let dphi = p.phi - q.phi;
    let mut acc = Complex::new(T::zero(), T::zero());
    for m in -li..=li {
        let w = dp.get(-m) * dq.get(-m);
        acc = acc + Complex::from_polar(w, int::<T>(m) * dphi);
    }
    let norm = int::<T>(2 * li + 1) / (lit::<T>(4.0) * T::PI());
    Ok(acc * norm)
}

/// `Σ_l w_l K^{ls}(p, q)` over the given `(l, w_l)` pairs, sharing one sweep
/// per point across all degrees. Pairs must be sorted by degree.
pub fn kernel_sum<T: Real>(s: i64, p: SphPoint<T>, q: SphPoint<T>, weights: &[(usize, T)]) -> Result<Complex<T>> {
    let Some(&(l_top, _)) = weights.last() else {
        return Ok(Complex::new(T::zero(), T::zero()));
    };
    if let Some(&(l, _)) = weights.iter().find(|(l, _)| (*l as i64) < s.abs()) {
        return Err(Error::InvalidDegree { l: l as i64, min: s.abs() });
    }
    let mut sp = ColumnSweep::new(s, p.theta, l_top);
    let mut sq = ColumnSweep::new(s, q.theta, l_top);
    let dphi = p.phi - q.phi;
    // exp(i m Δφ) for m = 0..=l_top, reused across degrees
    let phases: Vec<Complex<T>> = (0..=l_top as i64)
        .map(|m| Complex::from_polar(T::one(), int::<T>(m) * dphi))
        .collect();
    let four_pi = lit::<T>(4.0) * T::PI();
    let mut acc = Complex::new(T::zero(), T::zero());
    let mut wi = 0;
    while let (Some(l), Some(_)) = (sp.advance(), sq.advance()) {
        while wi < weights.len() && weights[wi].0 < l {
            wi += 1;
        }
        if wi == weights.len() {
            break;
        }
        if weights[wi].0 != l {
            continue;
        }
        let li = l as i64;
        let mut k = Complex::new(sp.get(0) * sq.get(0), T::zero());
        for m in 1..=li {
            let plus = sp.get(-m) * sq.get(-m);
            let minus = sp.get(m) * sq.get(m);
            let e = phases[m as usize];
            k = k + e * plus + e.conj() * minus;
        }
        acc = acc + k * (weights[wi].1 * int::<T>(2 * li + 1) / four_pi);
    }
    Ok(acc)
}
