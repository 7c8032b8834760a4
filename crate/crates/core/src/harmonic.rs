//! Spin harmonic synthesis and its adjoint on ring grids.
//!
//! A ring grid has rings at colatitudes `θ_r`, each holding `n_phi` pixels at
//! `φ_i = 2π i / n_phi`. Synthesis separates into per-order ring sums
//!
//! ```text
//! F_m(r) = Σ_l a_{l;m} (-1)^m sqrt((2l+1)/4π) d^l_{-m,s}(θ_r)
//! ```
//!
//! followed by one inverse FFT per ring. The adjoint runs the same steps in
//! reverse. Orders are processed in parallel, but every sum runs in a fixed
//! order, so results do not depend on the thread count.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::specfun::{harmonic_norm, parity, DRecurrence};

/// General spin harmonic coefficients `a_{l;m}` for `l ≤ band_limit`, `|m| ≤ l`.
/// Degrees below `|spin|` are present but always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCoeffs<T> {
    pub spin: i64,
    pub band_limit: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> HarmonicCoeffs<T> {
    pub fn zeros(spin: i64, band_limit: usize) -> Self {
        Self {
            spin,
            band_limit,
            data: vec![Complex::new(T::zero(), T::zero()); (band_limit + 1) * (band_limit + 1)],
        }
    }

    #[inline]
    fn index(l: usize, m: i64) -> usize {
        (l * l + l).wrapping_add_signed(m as isize)
    }

    pub fn get(&self, l: usize, m: i64) -> Complex<T> {
        debug_assert!(l <= self.band_limit && m.unsigned_abs() as usize <= l);
        self.data[Self::index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: Complex<T>) {
        debug_assert!(l <= self.band_limit && m.unsigned_abs() as usize <= l);
        self.data[Self::index(l, m)] = v;
    }

    pub fn l_min(&self) -> usize {
        self.spin.unsigned_abs() as usize
    }

    /// Multiplies every degree-`l` coefficient by `f(l)`.
    pub fn scale_degrees(&mut self, f: impl Fn(usize) -> T) {
        for l in 0..=self.band_limit {
            let w = f(l);
            let base = l * l;
            for v in &mut self.data[base..base + 2 * l + 1] {
                *v = *v * w;
            }
        }
    }

    /// `Σ_{l,m} |a_{l;m}|²`.
    pub fn power(&self) -> T {
        crate::sum::compensated_sum(self.data.iter().map(|v| v.norm_sqr()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let l = self.band_limit.max(other.band_limit);
        let mut worst = T::zero();
        for l in 0..=l {
            for m in -(l as i64)..=l as i64 {
                let a = if l <= self.band_limit { self.get(l, m) } else { Complex::default() };
                let b = if l <= other.band_limit { other.get(l, m) } else { Complex::default() };
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }
}

/// Ring layout of a grid: colatitudes and pixels per ring.
#[derive(Clone, Copy, Debug)]
pub struct Rings<'a, T> {
    pub theta: &'a [T],
    pub n_phi: usize,
}

impl<T: Real> Rings<'_, T> {
    fn npix(&self) -> usize {
        self.theta.len() * self.n_phi
    }

    fn bin(&self, m: i64) -> usize {
        m.rem_euclid(self.n_phi as i64) as usize
    }
}

/// Field values `Σ_{l,m} a_{l;m} Y_{lms}` at every ring pixel, ring-major.
pub fn synthesize<T: Real>(coeffs: &HarmonicCoeffs<T>, rings: Rings<'_, T>) -> Vec<Complex<T>> {
    let s = coeffs.spin;
    let lmax = coeffs.band_limit;
    let n_rings = rings.theta.len();
    let zero = Complex::new(T::zero(), T::zero());
    let orders: Vec<i64> = (-(lmax as i64)..=lmax as i64).collect();
    let per_order: Vec<Vec<Complex<T>>> = orders
        .par_iter()
        .map(|&m| {
            let rec = DRecurrence::<T>::new(-m, s, lmax);
            let mut out = vec![zero; n_rings];
            if rec.is_empty() {
                return out;
            }
            let l0 = rec.l0();
            let sign = parity::<T>(m);
            let c: Vec<Complex<T>> = (l0..=lmax)
                .map(|l| coeffs.get(l, m) * (sign * harmonic_norm::<T>(l)))
                .collect();
            if c.iter().all(|v| *v == zero) {
                return out;
            }
            let mut d = vec![T::zero(); rec.len()];
            for (r, &theta) in rings.theta.iter().enumerate() {
                rec.eval_into(theta, &mut d);
                let mut acc = zero;
                for (ci, &di) in c.iter().zip(&d) {
                    acc = acc + *ci * di;
                }
                out[r] = acc;
            }
            out
        })
        .collect();

    let mut map = vec![zero; rings.npix()];
    let fft = FftPlanner::<T>::new().plan_fft_inverse(rings.n_phi);
    map.par_chunks_mut(rings.n_phi).enumerate().for_each(|(r, ring)| {
        for (o, &m) in orders.iter().enumerate() {
            let v = per_order[o][r];
            if v != zero {
                let k = rings.bin(m);
                ring[k] = ring[k] + v;
            }
        }
        fft.process(ring);
    });
    map
}

/// Adjoint of [`synthesize`]: `a_{l;m} = Σ_k v_k conj(Y_{lms}(ξ_k))` for `l ≤ lmax`.
///
/// With `v_k = λ_k f(ξ_k)` this is the quadrature analysis of `f`.
pub fn adjoint<T: Real>(values: &[Complex<T>], rings: Rings<'_, T>, spin: i64, lmax: usize) -> Result<HarmonicCoeffs<T>> {
    if values.len() != rings.npix() {
        return Err(Error::ShapeMismatch(format!(
            "map has {} values, ring layout has {}",
            values.len(),
            rings.npix()
        )));
    }
    let zero = Complex::new(T::zero(), T::zero());
    let mut spectra = values.to_vec();
    let fft = FftPlanner::<T>::new().plan_fft_forward(rings.n_phi);
    spectra.par_chunks_mut(rings.n_phi).for_each(|ring| fft.process(ring));

    let orders: Vec<i64> = (-(lmax as i64)..=lmax as i64).collect();
    let per_order: Vec<(i64, usize, Vec<Complex<T>>)> = orders
        .par_iter()
        .map(|&m| {
            let rec = DRecurrence::<T>::new(-m, spin, lmax);
            let mut acc = vec![zero; rec.len()];
            if rec.is_empty() {
                return (m, 0, acc);
            }
            let k = rings.bin(m);
            let mut d = vec![T::zero(); rec.len()];
            for (r, &theta) in rings.theta.iter().enumerate() {
                let g = spectra[r * rings.n_phi + k];
                if g == zero {
                    continue;
                }
                rec.eval_into(theta, &mut d);
                for (a, &di) in acc.iter_mut().zip(&d) {
                    *a = *a + g * di;
                }
            }
            (m, rec.l0(), acc)
        })
        .collect();

    let mut out = HarmonicCoeffs::zeros(spin, lmax);
    for (m, l0, acc) in per_order {
        let sign = parity::<T>(m);
        for (i, v) in acc.into_iter().enumerate() {
            let l = l0 + i;
            out.set(l, m, v * (sign * harmonic_norm::<T>(l)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{spin_sph_harm, SphPoint};
    use std::f64::consts::PI;

    fn test_coeffs(spin: i64, lmax: usize) -> HarmonicCoeffs<f64> {
        let mut c = HarmonicCoeffs::zeros(spin, lmax);
        for l in spin.unsigned_abs() as usize..=lmax {
            for m in -(l as i64)..=l as i64 {
                let x = (l * 7 + (m + 20) as usize * 3) as f64;
                c.set(l, m, Complex::new((x * 0.37).sin(), (x * 0.11).cos()));
            }
        }
        c
    }

    #[test]
    fn synthesis_matches_direct_sum() {
        let theta = [0.3, 1.1, PI / 2.0, 2.0, 3.0];
        let n_phi = 7;
        for spin in [0i64, 2, -1] {
            let c = test_coeffs(spin, 5);
            let map = synthesize(&c, Rings { theta: &theta, n_phi });
            for (r, &t) in theta.iter().enumerate() {
                for i in 0..n_phi {
                    let p = SphPoint::new(t, 2.0 * PI * i as f64 / n_phi as f64);
                    let mut want = Complex::new(0.0, 0.0);
                    for l in spin.unsigned_abs() as usize..=5 {
                        for m in -(l as i64)..=l as i64 {
                            want += c.get(l, m) * spin_sph_harm(l, m, spin, p).unwrap();
                        }
                    }
                    let got = map[r * n_phi + i];
                    assert!((got - want).norm() < 1e-12, "spin={spin} r={r} i={i}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn adjoint_matches_direct_sum() {
        let theta = [0.2, 0.9, 1.7, 2.8];
        let n_phi = 6;
        let values: Vec<Complex<f64>> = (0..theta.len() * n_phi)
            .map(|k| Complex::new((k as f64 * 0.3).cos(), (k as f64 * 0.7).sin()))
            .collect();
        let spin = 2;
        let a = adjoint(&values, Rings { theta: &theta, n_phi }, spin, 6).unwrap();
        for l in 2..=6usize {
            for m in -(l as i64)..=l as i64 {
                let mut want = Complex::new(0.0, 0.0);
                for (r, &t) in theta.iter().enumerate() {
                    for i in 0..n_phi {
                        let p = SphPoint::new(t, 2.0 * PI * i as f64 / n_phi as f64);
                        want += values[r * n_phi + i] * spin_sph_harm(l, m, spin, p).unwrap().conj();
                    }
                }
                assert!((a.get(l, m) - want).norm() < 1e-12);
            }
        }
        assert_eq!(a.get(1, 0), Complex::new(0.0, 0.0));
    }
}
