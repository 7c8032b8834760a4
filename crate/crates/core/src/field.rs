//! Power spectrum models, Gaussian spin-field draws, synthesis and channels.
//!
//! A spin field is stored as E/B coefficients for `m ≥ 0`; the coefficients
//! of the field itself are `a_{l;m} = E_{lm} + i B_{lm}` with negative orders
//! implied by `E_{l,-m} = conj(E_{lm})` and likewise for B.

use std::io::{Read, Write};

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CubatureGrid;
use crate::harmonic::{self, HarmonicCoeffs, Rings};
use crate::rng::stream_rng;
use crate::scalar::{lit, to_f64, Real};
use crate::specfun::{harmonics_from_sweep, ColumnSweep, SphPoint};

/// Slowly varying factor `g(l)` of a spectrum `C_l = l^{-α} g(l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumShape {
    /// `g(l) = c`.
    Constant(f64),
    /// `C_l = F1(l) / (l^beta F2(l))` with polynomial coefficients in
    /// ascending powers.
    Rational {
        beta: f64,
        numerator: Vec<f64>,
        denominator: Vec<f64>,
    },
    /// Identically zero spectrum.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Signal,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrumModel {
    pub alpha: f64,
    pub shape: SpectrumShape,
    /// First degree with nonzero power.
    pub l_min: usize,
    pub kind: ComponentKind,
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn degree(coeffs: &[f64]) -> usize {
    coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
}

const SHAPE_SCAN: usize = 4096;

impl PowerSpectrumModel {
    /// `C_l = g0 · l^{-alpha}` for `l ≥ l_min`.
    pub fn power_law(alpha: f64, g0: f64, l_min: usize, kind: ComponentKind) -> Result<Self> {
        if !(alpha > 2.0) {
            return Err(Error::InvalidModel(format!("decay exponent {alpha} must exceed 2")));
        }
        if !(g0 > 0.0) || !g0.is_finite() {
            return Err(Error::InvalidModel(format!("amplitude {g0} must be positive")));
        }
        Ok(Self {
            alpha,
            shape: SpectrumShape::Constant(g0),
            l_min: l_min.max(1),
            kind,
        })
    }

    /// `C_l = F1(l) / (l^beta F2(l))`; the decay exponent is
    /// `beta + deg F2 - deg F1`.
    pub fn rational(beta: f64, numerator: Vec<f64>, denominator: Vec<f64>, l_min: usize, kind: ComponentKind) -> Result<Self> {
        let alpha = beta + degree(&denominator) as f64 - degree(&numerator) as f64;
        if !(alpha > 2.0) {
            return Err(Error::InvalidModel(format!("decay exponent {alpha} must exceed 2")));
        }
        let l_min = l_min.max(1);
        let lead = numerator[degree(&numerator)] / denominator[degree(&denominator)];
        let positive = (l_min..=SHAPE_SCAN).all(|l| {
            let x = l as f64;
            poly(&numerator, x) / poly(&denominator, x) > 0.0
        });
        if !positive || !(lead > 0.0) {
            return Err(Error::InvalidModel("rational spectrum is not positive".into()));
        }
        Ok(Self {
            alpha,
            shape: SpectrumShape::Rational {
                beta,
                numerator,
                denominator,
            },
            l_min,
            kind,
        })
    }

    pub fn zero(l_min: usize, kind: ComponentKind) -> Self {
        Self {
            alpha: f64::INFINITY,
            shape: SpectrumShape::Zero,
            l_min,
            kind,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, SpectrumShape::Zero)
    }

    /// The same model with every `C_l` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let shape = match &self.shape {
            SpectrumShape::Constant(c) => SpectrumShape::Constant(c * factor),
            SpectrumShape::Rational {
                beta,
                numerator,
                denominator,
            } => SpectrumShape::Rational {
                beta: *beta,
                numerator: numerator.iter().map(|c| c * factor).collect(),
                denominator: denominator.clone(),
            },
            SpectrumShape::Zero => SpectrumShape::Zero,
        };
        Self { shape, ..self.clone() }
    }

    /// Total spectrum `C_l` (E plus B).
    pub fn eval_cl(&self, l: usize) -> Result<f64> {
        if l < self.l_min {
            return Err(Error::InvalidDegree {
                l: l as i64,
                min: self.l_min as i64,
            });
        }
        Ok(self.cl_unchecked(l))
    }

    /// `C_l`, or zero below `l_min`.
    pub fn cl_or_zero(&self, l: usize) -> f64 {
        if l < self.l_min {
            0.0
        } else {
            self.cl_unchecked(l)
        }
    }

    fn cl_unchecked(&self, l: usize) -> f64 {
        let x = l as f64;
        match &self.shape {
            SpectrumShape::Constant(c) => c * x.powf(-self.alpha),
            SpectrumShape::Rational {
                beta,
                numerator,
                denominator,
            } => poly(numerator, x) / (x.powf(*beta) * poly(denominator, x)),
            SpectrumShape::Zero => 0.0,
        }
    }

    /// `g(l) = l^alpha C_l`.
    pub fn g(&self, l: usize) -> Result<f64> {
        Ok(self.eval_cl(l)? * (l as f64).powf(self.alpha))
    }

    /// Constant `c0` with `1/c0 ≤ g(l) ≤ c0`: exact for constant shapes,
    /// scanned over `l_min..=4096` plus the limit for rational ones.
    pub fn g_bound(&self) -> f64 {
        match &self.shape {
            SpectrumShape::Constant(c) => c.max(1.0 / c),
            SpectrumShape::Zero => f64::INFINITY,
            SpectrumShape::Rational {
                numerator, denominator, ..
            } => {
                let lead = numerator[degree(numerator)] / denominator[degree(denominator)];
                (self.l_min..=SHAPE_SCAN)
                    .filter_map(|l| self.g(l).ok())
                    .chain(std::iter::once(lead))
                    .fold(1.0f64, |acc, g| acc.max(g).max(1.0 / g))
            }
        }
    }
}

/// Harmonic coefficients of a spin field, stored as E and B for `m ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinAlm<T> {
    pub spin: i64,
    pub band_limit: usize,
    e: Vec<Complex<T>>,
    b: Vec<Complex<T>>,
}

fn triangle(l: usize) -> usize {
    l * (l + 1) / 2
}

impl<T: Real> SpinAlm<T> {
    pub fn zeros(spin: i64, band_limit: usize) -> Self {
        let n = Self::storage_len(spin, band_limit);
        let z = Complex::new(T::zero(), T::zero());
        Self {
            spin,
            band_limit,
            e: vec![z; n],
            b: vec![z; n],
        }
    }

    fn storage_len(spin: i64, band_limit: usize) -> usize {
        let l0 = spin.unsigned_abs() as usize;
        if band_limit < l0 {
            0
        } else {
            triangle(band_limit + 1) - triangle(l0)
        }
    }

    pub fn l_min(&self) -> usize {
        self.spin.unsigned_abs() as usize
    }

    #[inline]
    fn index(&self, l: usize, m: usize) -> usize {
        debug_assert!(l >= self.l_min() && l <= self.band_limit && m <= l);
        triangle(l) - triangle(self.l_min()) + m
    }

    pub fn e(&self, l: usize, m: usize) -> Complex<T> {
        self.e[self.index(l, m)]
    }

    pub fn b(&self, l: usize, m: usize) -> Complex<T> {
        self.b[self.index(l, m)]
    }

    pub fn set_e(&mut self, l: usize, m: usize, v: Complex<T>) {
        let i = self.index(l, m);
        self.e[i] = v;
    }

    pub fn set_b(&mut self, l: usize, m: usize, v: Complex<T>) {
        let i = self.index(l, m);
        self.b[i] = v;
    }

    /// `a_{l;m} = E + iB` for any `|m| ≤ l`, negative orders through the
    /// reality constraint.
    pub fn coefficient(&self, l: usize, m: i64) -> Complex<T> {
        let i = Complex::new(T::zero(), T::one());
        let mu = m.unsigned_abs() as usize;
        let (e, b) = (self.e(l, mu), self.b(l, mu));
        if m >= 0 {
            e + i * b
        } else {
            e.conj() + i * b.conj()
        }
    }

    pub fn to_general(&self) -> HarmonicCoeffs<T> {
        let mut out = HarmonicCoeffs::zeros(self.spin, self.band_limit);
        for l in self.l_min()..=self.band_limit {
            for m in -(l as i64)..=l as i64 {
                out.set(l, m, self.coefficient(l, m));
            }
        }
        out
    }

    /// Projects general coefficients onto the E/B form:
    /// `E = (a_m + conj a_{-m})/2`, `B = (a_m - conj a_{-m})/(2i)`.
    pub fn from_general(coeffs: &HarmonicCoeffs<T>) -> Self {
        let mut out = Self::zeros(coeffs.spin, coeffs.band_limit);
        let half = lit::<T>(0.5);
        let minus_half_i = Complex::new(T::zero(), -half);
        for l in out.l_min()..=out.band_limit {
            for m in 0..=l {
                let a = coeffs.get(l, m as i64);
                let c = coeffs.get(l, -(m as i64)).conj();
                out.set_e(l, m, (a + c) * half);
                out.set_b(l, m, (a - c) * minus_half_i);
            }
        }
        out
    }

    /// Copy with a different band limit, zero-padded or truncated.
    pub fn with_band_limit(&self, band_limit: usize) -> Self {
        let mut out = Self::zeros(self.spin, band_limit);
        let n = out.e.len().min(self.e.len());
        out.e[..n].copy_from_slice(&self.e[..n]);
        out.b[..n].copy_from_slice(&self.b[..n]);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.spin != other.spin || self.band_limit != other.band_limit {
            return Err(Error::ShapeMismatch(format!(
                "cannot add alm (s={}, L={}) and (s={}, L={})",
                self.spin, self.band_limit, other.spin, other.band_limit
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.e.iter_mut().zip(&other.e) {
            *a = *a + *b;
        }
        for (a, b) in out.b.iter_mut().zip(&other.b) {
            *a = *a + *b;
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.e.iter_mut().chain(out.b.iter_mut()).for_each(|v| *v = *v * factor);
        out
    }

    /// Largest `|ΔE|` or `|ΔB|` against another set with the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.e
            .iter()
            .zip(&other.e)
            .chain(self.b.iter().zip(&other.b))
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    /// Writes the `SALM` binary format (little-endian, f64 payload).
    pub fn write_salm<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"SALM")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.spin as i32).to_le_bytes())?;
        out.write_all(&(self.band_limit as u32).to_le_bytes())?;
        for v in self.e.iter().chain(&self.b) {
            out.write_all(&to_f64(v.re).to_le_bytes())?;
            out.write_all(&to_f64(v.im).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_salm<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"SALM" {
            return Err(Error::Format("not a SALM file (bad magic)".into()));
        }
        let version = read_u32(&mut input)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported SALM version {version}")));
        }
        let spin = read_u32(&mut input)? as i32 as i64;
        let band_limit = read_u32(&mut input)? as usize;
        let mut out = Self::zeros(spin, band_limit);
        for v in out.e.iter_mut().chain(out.b.iter_mut()) {
            let re = read_f64(&mut input)?;
            let im = read_f64(&mut input)?;
            *v = Complex::new(lit(re), lit(im));
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after SALM payload".into()));
        }
        Ok(out)
    }
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn draw_component<T: Real, R: Rng>(rng: &mut R, c: f64, m: usize) -> Complex<T> {
    // always two normals per coefficient, so truncating a draw equals drawing
    // at the lower band limit
    let z1 = T::standard_normal(rng);
    let z2 = T::standard_normal(rng);
    if m == 0 {
        Complex::new(lit::<T>(c.sqrt()) * z1, T::zero())
    } else {
        let sd = lit::<T>((c / 2.0).sqrt());
        Complex::new(sd * z1, sd * z2)
    }
}

fn draw_stream<T: Real>(model_e: &PowerSpectrumModel, model_b: &PowerSpectrumModel, s: i64, band_limit: usize, seed: u64, stream: u64) -> SpinAlm<T> {
    let mut rng = stream_rng(seed, stream);
    let mut out = SpinAlm::zeros(s, band_limit);
    for l in out.l_min()..=band_limit {
        let (ce, cb) = (model_e.cl_or_zero(l), model_b.cl_or_zero(l));
        for m in 0..=l {
            let e = draw_component(&mut rng, ce, m);
            let b = draw_component(&mut rng, cb, m);
            out.set_e(l, m, e);
            out.set_b(l, m, b);
        }
    }
    out
}

/// Independent Gaussian E and B coefficients up to `band_limit`.
///
/// For `m > 0` real and imaginary parts are i.i.d. `N(0, C_l/2)`; for `m = 0`
/// the coefficient is real `N(0, C_l)`. Draws run in `(l, m)` order, so a
/// draw at a lower band limit is a prefix of one at a higher limit.
pub fn draw_alm<T: Real>(model_e: &PowerSpectrumModel, model_b: &PowerSpectrumModel, s: i64, band_limit: usize, seed: u64) -> SpinAlm<T> {
    draw_stream(model_e, model_b, s, band_limit, seed, 0)
}

/// Draw whose total spectrum is `model`, split evenly between E and B.
pub fn draw_total<T: Real>(model: &PowerSpectrumModel, s: i64, band_limit: usize, seed: u64) -> SpinAlm<T> {
    let half = model.scaled(0.5);
    draw_alm(&half, &half, s, band_limit, seed)
}

/// Field values at arbitrary points by direct summation.
pub fn synthesize<T: Real>(alm: &SpinAlm<T>, points: &[SphPoint<T>]) -> Vec<Complex<T>> {
    let general = alm.to_general();
    let l0 = alm.l_min();
    points
        .par_iter()
        .map(|&p| {
            let mut acc = Complex::new(T::zero(), T::zero());
            if alm.band_limit < l0 {
                return acc;
            }
            let mut sweep = ColumnSweep::new(alm.spin, p.theta, alm.band_limit);
            let mut ylm = Vec::new();
            while let Some(l) = sweep.advance() {
                harmonics_from_sweep(&sweep, p, &mut ylm);
                for (i, y) in ylm.iter().enumerate() {
                    acc = acc + general.get(l, i as i64 - l as i64) * *y;
                }
            }
            acc
        })
        .collect()
}

/// Field values at every pixel of `grid`.
pub fn synthesize_grid<T: Real>(alm: &SpinAlm<T>, grid: &CubatureGrid<T>) -> Vec<Complex<T>> {
    harmonic::synthesize(&alm.to_general(), rings(grid))
}

/// Quadrature analysis `a_{l;m} = Σ_k λ_k f(ξ_k) conj(Y_{lms}(ξ_k))` up to
/// `band_limit`; exact for fields band-limited at `grid.band_limit / 2`.
pub fn analyze_grid<T: Real>(values: &[Complex<T>], grid: &CubatureGrid<T>, spin: i64, band_limit: usize) -> Result<SpinAlm<T>> {
    let weighted: Vec<Complex<T>> = values.iter().zip(&grid.weights).map(|(v, w)| *v * *w).collect();
    let general = harmonic::adjoint(&weighted, rings(grid), spin, band_limit)?;
    Ok(SpinAlm::from_general(&general))
}

pub(crate) fn rings<T: Real>(grid: &CubatureGrid<T>) -> Rings<'_, T> {
    Rings {
        theta: &grid.ring_theta,
        n_phi: grid.n_phi,
    }
}

/// Spin-2 frame rotation: `Q' + iU' = exp(2iγ)(Q + iU)`.
pub fn rotate_stokes<T: Real>(value: Complex<T>, gamma: T) -> Complex<T> {
    rotate_spin(value, gamma, 2)
}

/// Spin-`s` frame rotation: multiplies by `exp(i s γ)`.
pub fn rotate_spin<T: Real>(value: Complex<T>, gamma: T, s: i64) -> Complex<T> {
    value * Complex::from_polar(T::one(), lit::<T>(s as f64) * gamma)
}

/// A shared signal observed through `D` channels with independent noise.
#[derive(Clone, Debug)]
pub struct ChannelSet<T> {
    pub signal: SpinAlm<T>,
    pub noise: Vec<SpinAlm<T>>,
    pub noise_models: Vec<PowerSpectrumModel>,
}

impl<T: Real> ChannelSet<T> {
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Coefficients of channel `r`: signal plus that channel's noise.
    pub fn channel(&self, r: usize) -> SpinAlm<T> {
        self.signal.add(&self.noise[r]).expect("channel shapes agree by construction")
    }

    /// Channels truncated to a lower band limit.
    pub fn with_band_limit(&self, band_limit: usize) -> Self {
        Self {
            signal: self.signal.with_band_limit(band_limit),
            noise: self.noise.iter().map(|n| n.with_band_limit(band_limit)).collect(),
            noise_models: self.noise_models.clone(),
        }
    }
}

/// Draws one noise realization per model and pairs each with `signal`.
/// Channel `r` uses stream `r + 1` of `seed`.
pub fn observe_channels<T: Real>(signal: &SpinAlm<T>, noise_models: &[PowerSpectrumModel], seed: u64) -> Result<ChannelSet<T>> {
    if noise_models.len() < 2 {
        return Err(Error::InvalidChannelCount(noise_models.len()));
    }
    let noise = noise_models
        .iter()
        .enumerate()
        .map(|(r, model)| {
            let half = model.scaled(0.5);
            draw_stream(&half, &half, signal.spin, signal.band_limit, seed, r as u64 + 1)
        })
        .collect();
    Ok(ChannelSet {
        signal: signal.clone(),
        noise,
        noise_models: noise_models.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::spin_sph_harm;
    use std::f64::consts::PI;

    fn signal() -> PowerSpectrumModel {
        PowerSpectrumModel::power_law(3.0, 1.0, 2, ComponentKind::Signal).unwrap()
    }

    #[test]
    fn spectrum_values_and_bounds() {
        let m = signal();
        assert_eq!(m.eval_cl(2).unwrap(), 0.125);
        assert!(matches!(m.eval_cl(1), Err(Error::InvalidDegree { .. })));
        let r = PowerSpectrumModel::rational(1.5, vec![1.0, 2.0], vec![3.0, 0.0, 1.0], 1, ComponentKind::Signal).unwrap();
        assert_eq!(r.alpha, 2.5);
        let c0 = r.g_bound();
        for l in 1..2000 {
            let cl = r.eval_cl(l).unwrap();
            let base = (l as f64).powf(-2.5);
            assert!(cl >= base / c0 * (1.0 - 1e-12) && cl <= base * c0 * (1.0 + 1e-12));
        }
        assert!(PowerSpectrumModel::power_law(2.0, 1.0, 1, ComponentKind::Signal).is_err());
    }

    #[test]
    fn draws_are_deterministic_and_prefix_consistent() {
        let a: SpinAlm<f64> = draw_total(&signal(), 2, 20, 7);
        let b: SpinAlm<f64> = draw_total(&signal(), 2, 20, 7);
        assert_eq!(a, b);
        let short: SpinAlm<f64> = draw_total(&signal(), 2, 12, 7);
        assert_eq!(a.with_band_limit(12), short);
        assert_ne!(a, draw_total(&signal(), 2, 20, 8));
        for l in 2..=20 {
            assert_eq!(a.e(l, 0).im, 0.0);
        }
    }

    #[test]
    fn general_round_trip() {
        let a: SpinAlm<f64> = draw_total(&signal(), 2, 10, 3);
        let g = a.to_general();
        assert_eq!(g.get(5, -3), a.e(5, 3).conj() + Complex::<f64>::i() * a.b(5, 3).conj());
        let back = SpinAlm::from_general(&g);
        assert!(back.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn single_mode_profile() {
        let mut a = SpinAlm::<f64>::zeros(2, 4);
        a.set_e(2, 0, Complex::new(1.0, 0.0));
        let pts: Vec<SphPoint<f64>> = (0..20).map(|i| SphPoint::new(0.05 + 0.15 * i as f64, 0.3 * i as f64)).collect();
        let vals = synthesize(&a, &pts);
        for (p, v) in pts.iter().zip(vals) {
            let want = (5.0 / (4.0 * PI)).sqrt() * crate::specfun::wigner_d(2, 0, 2, p.theta).unwrap();
            assert!((v - Complex::new(want, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn grid_synthesis_matches_direct() {
        let a: SpinAlm<f64> = draw_total(&signal(), 2, 12, 5);
        let g = CubatureGrid::build(2, 2.0).unwrap();
        let fast = synthesize_grid(&a, &g);
        let slow = synthesize(&a, &g.points);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).norm() < 1e-12);
        }
        let direct: Complex<f64> = (2..=12usize)
            .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
            .map(|(l, m)| a.coefficient(l, m) * spin_sph_harm(l, m, 2, g.points[17]).unwrap())
            .sum();
        assert!((direct - slow[17]).norm() < 1e-12);
    }

    #[test]
    fn quadrature_round_trip() {
        let g = CubatureGrid::<f64>::build(3, 2.0).unwrap();
        let a: SpinAlm<f64> = draw_total(&signal(), 2, g.band_limit / 2, 11);
        let map = synthesize_grid(&a, &g);
        let back = analyze_grid(&map, &g, 2, a.band_limit).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn salm_round_trip() {
        let a: SpinAlm<f64> = draw_total(&signal(), 2, 9, 1);
        let mut buf = Vec::new();
        a.write_salm(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SALM");
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 9);
        assert_eq!(buf.len(), 16 + 2 * 16 * (55 - 3));
        let back = SpinAlm::<f64>::read_salm(&buf[..]).unwrap();
        assert_eq!(back, a);
        buf[0] = b'X';
        assert!(SpinAlm::<f64>::read_salm(&buf[..]).is_err());
    }

    #[test]
    fn stokes_rotation() {
        let z = Complex::new(0.3, -1.2);
        let r = rotate_stokes(z, PI);
        assert!((r - z).norm() < 1e-15);
        let r = rotate_stokes(Complex::new(1.0, 0.0), PI / 2.0);
        assert!((r - Complex::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((rotate_stokes(z, 0.7).norm() - z.norm()).abs() < 1e-15);
    }

    #[test]
    fn channels_need_two_and_share_signal() {
        let sig: SpinAlm<f64> = draw_total(&signal(), 2, 8, 1);
        let zero = PowerSpectrumModel::zero(2, ComponentKind::Noise);
        assert!(matches!(observe_channels(&sig, &[zero.clone()], 1), Err(Error::InvalidChannelCount(1))));
        let set = observe_channels(&sig, &[zero.clone(), zero], 1).unwrap();
        assert_eq!(set.channel(0), sig);
        assert_eq!(set.channel(1), sig);
    }
}
