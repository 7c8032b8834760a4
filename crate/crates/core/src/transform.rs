//! Needlet analysis and synthesis, needlet kernels and coefficient covariances.
//!
//! Coefficients at level `j` are
//!
//! ```text
//! β_{jk;s} = sqrt(λ_jk) Σ_l b(sqrt(e_ls)/B^j) Σ_m a_{l;m} Y_{lms}(ξ_jk)
//! ```
//!
//! computed spectrally: filter the coefficients, synthesize on the grid,
//! weight by `sqrt(λ)`. Masked coefficients integrate the map over the
//! unmasked pixels with the grid's own quadrature, which is the same
//! pipeline run on the harmonic coefficients of the masked map.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::field::{read_f64, read_u32, rings, PowerSpectrumModel, SpinAlm};
use crate::grid::{CubatureGrid, SkyMask};
use crate::harmonic::{self, HarmonicCoeffs};
use crate::scalar::{int, lit, to_f64, Real};
use crate::specfun::kernel_sum;
use crate::window::{DegreeRange, NeedletWindow};

/// Coverage below this counts as a gap in [`needlet_synthesize`].
pub const COVERAGE_TOLERANCE: f64 = 1e-6;

/// Needlet coefficients of one level, one value per grid pixel.
#[derive(Clone, Debug)]
pub struct NeedletCoefficients<T> {
    pub j: u32,
    pub spin: i64,
    pub values: Vec<Complex<T>>,
    /// `true` when the values integrate only over the unmasked sky.
    pub masked: bool,
    pub grid: Arc<CubatureGrid<T>>,
    pub window: Arc<NeedletWindow<T>>,
}

impl<T: Real> NeedletCoefficients<T> {
    /// `Σ_k |β_k|²`.
    pub fn power(&self) -> T {
        crate::sum::compensated_sum(self.values.iter().map(|v| v.norm_sqr()))
    }

    /// Writes the `SNBC` binary format (little-endian, f64 payload).
    pub fn write_snbc<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"SNBC")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&self.j.to_le_bytes())?;
        out.write_all(&(self.spin as i32).to_le_bytes())?;
        out.write_all(&(self.values.len() as u32).to_le_bytes())?;
        out.write_all(&[self.masked as u8])?;
        for v in &self.values {
            out.write_all(&to_f64(v.re).to_le_bytes())?;
            out.write_all(&to_f64(v.im).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the `SNBC` format, attaching the grid and window it was made on.
    pub fn read_snbc<R: Read>(mut input: R, grid: Arc<CubatureGrid<T>>, window: Arc<NeedletWindow<T>>) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"SNBC" {
            return Err(Error::Format("not a SNBC file (bad magic)".into()));
        }
        let version = read_u32(&mut input)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported SNBC version {version}")));
        }
        let j = read_u32(&mut input)?;
        let spin = read_u32(&mut input)? as i32 as i64;
        let npix = read_u32(&mut input)? as usize;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        if j != grid.j || npix != grid.len() {
            return Err(Error::Format(format!(
                "SNBC header (j={j}, npix={npix}) does not match grid (j={}, npix={})",
                grid.j,
                grid.len()
            )));
        }
        let mut values = Vec::with_capacity(npix);
        for _ in 0..npix {
            let re = read_f64(&mut input)?;
            let im = read_f64(&mut input)?;
            values.push(Complex::new(lit(re), lit(im)));
        }
        Ok(Self {
            j,
            spin,
            values,
            masked: flag[0] != 0,
            grid,
            window,
        })
    }
}

fn check_grid<T: Real>(grid: &CubatureGrid<T>, j: u32, support: DegreeRange) -> Result<()> {
    if !support.is_empty() && grid.band_limit < 2 * support.l_max {
        return Err(Error::BandLimitExceeded {
            j,
            l_max: support.l_max,
            available: grid.band_limit / 2,
        });
    }
    Ok(())
}

// Σ_l b_l Σ_m a_{l;m} Y_{lms}(ξ_k) weighted by sqrt(λ_k)
fn filtered_synthesis<T: Real>(mut coeffs: HarmonicCoeffs<T>, window: &NeedletWindow<T>, grid: &CubatureGrid<T>, j: u32) -> Vec<Complex<T>> {
    let s = coeffs.spin;
    coeffs.scale_degrees(|l| window.level_weight(l, s, j));
    let mut values = harmonic::synthesize(&coeffs, rings(grid));
    for (v, w) in values.iter_mut().zip(&grid.weights) {
        *v = *v * w.sqrt();
    }
    values
}

fn zero_coefficients<T: Real>(window: &Arc<NeedletWindow<T>>, grid: &Arc<CubatureGrid<T>>, j: u32, spin: i64, masked: bool) -> NeedletCoefficients<T> {
    NeedletCoefficients {
        j,
        spin,
        values: vec![Complex::new(T::zero(), T::zero()); grid.len()],
        masked,
        grid: grid.clone(),
        window: window.clone(),
    }
}

/// Full-sky needlet coefficients of `alm` at level `j`.
pub fn needlet_analyze<T: Real>(alm: &SpinAlm<T>, window: &Arc<NeedletWindow<T>>, grid: &Arc<CubatureGrid<T>>, j: u32) -> Result<NeedletCoefficients<T>> {
    let s = alm.spin;
    let support = window.support(j, s);
    if support.is_empty() {
        return Ok(zero_coefficients(window, grid, j, s, false));
    }
    if alm.band_limit < support.l_max {
        return Err(Error::BandLimitExceeded {
            j,
            l_max: support.l_max,
            available: alm.band_limit,
        });
    }
    check_grid(grid, j, support)?;
    let coeffs = alm.with_band_limit(support.l_max).to_general();
    Ok(NeedletCoefficients {
        j,
        spin: s,
        values: filtered_synthesis(coeffs, window, grid, j),
        masked: false,
        grid: grid.clone(),
        window: window.clone(),
    })
}

/// Masked coefficients `β*_{jk} = Σ_{k' ∉ G} λ_{k'} P(ξ_{k'}) conj(ψ_{jk}(ξ_{k'}))`
/// for every pixel `k`. `map` holds the field on the mask's grid.
pub fn masked_analyze<T: Real>(map: &[Complex<T>], mask: &SkyMask<T>, window: &Arc<NeedletWindow<T>>, spin: i64, j: u32) -> Result<NeedletCoefficients<T>> {
    let grid = &mask.grid;
    if map.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "map has {} values, grid has {}",
            map.len(),
            grid.len()
        )));
    }
    let support = window.support(j, spin);
    if support.is_empty() {
        return Ok(zero_coefficients(window, grid, j, spin, true));
    }
    check_grid(grid, j, support)?;
    let zero = Complex::new(T::zero(), T::zero());
    let weighted: Vec<Complex<T>> = map
        .iter()
        .zip(&grid.weights)
        .zip(&mask.excluded)
        .map(|((v, w), &ex)| if ex { zero } else { *v * *w })
        .collect();
    let coeffs = harmonic::adjoint(&weighted, rings(grid), spin, support.l_max)?;
    Ok(NeedletCoefficients {
        j,
        spin,
        values: filtered_synthesis(coeffs, window, grid, j),
        masked: true,
        grid: grid.clone(),
        window: window.clone(),
    })
}

/// Needlet `ψ_{jk;s}(p) = sqrt(λ_k) Σ_l b(sqrt(e_ls)/B^j) K^{ls}(p, ξ_k)`.
pub fn needlet_kernel<T: Real>(window: &NeedletWindow<T>, grid: &CubatureGrid<T>, j: u32, k: usize, p: crate::specfun::SphPoint<T>, s: i64) -> Result<Complex<T>> {
    let support = window.support(j, s);
    if support.is_empty() {
        return Ok(Complex::new(T::zero(), T::zero()));
    }
    let weights: Vec<(usize, T)> = support.iter().map(|l| (l, window.level_weight(l, s, j))).collect();
    Ok(kernel_sum(s, p, grid.points[k], &weights)? * grid.weights[k].sqrt())
}

/// Reconstructs coefficients up to `band_limit` from needlet levels:
/// `a_{l;m} = Σ_j b(sqrt(e_ls)/B^j) Σ_k sqrt(λ_jk) β_{jk} conj(Y_{lms}(ξ_jk))`.
///
/// Every degree with `e_ls > 0` up to `band_limit` must satisfy
/// `Σ_j b² ≥ 1 - 1e-6` over the given levels. The degree `l = s` (where
/// `e_ls = 0`) lies outside every level and is returned as zero.
pub fn needlet_synthesize<T: Real>(levels: &[NeedletCoefficients<T>], band_limit: usize) -> Result<SpinAlm<T>> {
    let first = levels
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no needlet levels to synthesize".into()))?;
    let s = first.spin;
    let window = &first.window;
    for lv in levels {
        if lv.spin != s || to_f64(lv.window.bandwidth()) != to_f64(window.bandwidth()) {
            return Err(Error::ShapeMismatch(
                "needlet levels differ in spin or bandwidth".into(),
            ));
        }
    }
    let js: Vec<u32> = levels.iter().map(|lv| lv.j).collect();
    for l in s.unsigned_abs() as usize..=band_limit {
        let e = ((l as i64 - s) * (l as i64 + s + 1)) as f64;
        if e <= 0.0 {
            continue;
        }
        let coverage = to_f64(window.coverage(l, s, &js));
        if coverage < 1.0 - COVERAGE_TOLERANCE {
            return Err(Error::CoverageGap { l, coverage });
        }
    }
    let mut total = HarmonicCoeffs::<T>::zeros(s, band_limit);
    for lv in levels {
        let support = window.support(lv.j, s);
        if support.is_empty() || support.l_min > band_limit {
            continue;
        }
        check_grid(&lv.grid, lv.j, support)?;
        let top = support.l_max.min(band_limit);
        let weighted: Vec<Complex<T>> = lv.values.iter().zip(&lv.grid.weights).map(|(v, w)| *v * w.sqrt()).collect();
        let mut part = harmonic::adjoint(&weighted, rings(&lv.grid), s, top)?;
        part.scale_degrees(|l| window.level_weight(l, s, lv.j));
        for l in support.l_min..=top {
            for m in -(l as i64)..=l as i64 {
                total.set(l, m, total.get(l, m) + part.get(l, m));
            }
        }
    }
    Ok(SpinAlm::from_general(&total))
}

/// `E|β_{jk;s}|²`: `λ_k Σ_l b² C_l (2l+1)/(4π)`.
pub fn theoretical_variance<T: Real>(window: &NeedletWindow<T>, grid: &CubatureGrid<T>, model: &PowerSpectrumModel, j: u32, k: usize, s: i64) -> T {
    let sum: T = window
        .support(j, s)
        .iter()
        .map(|l| window.level_weight2(l, s, j) * lit::<T>(model.cl_or_zero(l)) * int::<T>(2 * l as i64 + 1))
        .sum();
    grid.weights[k] * sum / (lit::<T>(4.0) * T::PI())
}

/// `E β_{jk} conj(β_{jk'}) = sqrt(λ_k λ_k') Σ_l b² C_l K^{ls}(ξ_k, ξ_k')`.
pub fn theoretical_cov<T: Real>(window: &NeedletWindow<T>, grid: &CubatureGrid<T>, model: &PowerSpectrumModel, j: u32, k: usize, k2: usize, s: i64) -> Result<Complex<T>> {
    let weights: Vec<(usize, T)> = window
        .support(j, s)
        .iter()
        .map(|l| (l, window.level_weight2(l, s, j) * lit::<T>(model.cl_or_zero(l))))
        .collect();
    let k_sum = kernel_sum(s, grid.points[k], grid.points[k2], &weights)?;
    Ok(k_sum * (grid.weights[k] * grid.weights[k2]).sqrt())
}

/// Covariance normalized by the two standard deviations.
pub fn theoretical_correlation<T: Real>(window: &NeedletWindow<T>, grid: &CubatureGrid<T>, model: &PowerSpectrumModel, j: u32, k: usize, k2: usize, s: i64) -> Result<Complex<T>> {
    let cov = theoretical_cov(window, grid, model, j, k, k2, s)?;
    let v1 = theoretical_variance(window, grid, model, j, k, s);
    let v2 = theoretical_variance(window, grid, model, j, k2, s);
    Ok(cov / (v1 * v2).sqrt())
}

/// Levels `j ≤ j_cap` whose window support is nonempty and fits under `band_limit`.
pub fn admissible_levels<T: Real>(window: &NeedletWindow<T>, s: i64, band_limit: usize, j_cap: u32) -> Vec<u32> {
    (0..=j_cap)
        .filter(|&j| {
            let r = window.support(j, s);
            !r.is_empty() && r.l_max <= band_limit
        })
        .collect()
}
