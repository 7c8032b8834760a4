//! Needlet window `b(·)` and spin eigenvalues `e_ls`.
//!
//! Built in three steps from the bump `f(t) = exp(-1/(1-t²))` on `(-1, 1)`:
//! its normalized antiderivative `ψ`, the plateau
//!
//! ```text
//! φ(t) = 1                                  t ≤ 1/B
//!        ψ(1 - 2B/(B-1) · (t - 1/B))        1/B ≤ t ≤ 1
//!        0                                  t ≥ 1
//! ```
//!
//! and `b²(x) = φ(x/B) - φ(x)`, which telescopes so that `Σ_j b²(x/B^j) = 1`
//! for every `x ≥ 1`.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::grid::gauss_legendre;
use crate::scalar::{int, lit, to_f64, Real};

const TABLE_NODES: usize = 4096;
const QUAD_TOL: f64 = 1e-15;

#[derive(Clone, Debug)]
pub struct NeedletWindow<T> {
    bandwidth: T,
    smoothness_order: u32,
    // ψ and ψ' at TABLE_NODES equispaced nodes on [-1, 1]
    psi: Vec<T>,
    dpsi: Vec<T>,
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

struct Panel<'a> {
    x: &'a [f64],
    w: &'a [f64],
}

impl Panel<'_> {
    fn integrate(&self, a: f64, b: f64) -> f64 {
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        half * self.x.iter().zip(self.w).map(|(x, w)| w * bump(mid + half * x)).sum::<f64>()
    }

    fn adaptive(&self, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let left = self.integrate(a, m);
        let right = self.integrate(m, b);
        if depth == 0 || (left + right - whole).abs() <= QUAD_TOL * (b - a) {
            left + right
        } else {
            self.adaptive(a, m, left, depth - 1) + self.adaptive(m, b, right, depth - 1)
        }
    }
}

/// `(l - s)(l + s + 1)`, the spin eigenvalue at degree `l`.
pub fn eval_e_ls(l: usize, s: i64) -> Result<f64> {
    let li = l as i64;
    if li < s.abs() {
        return Err(Error::InvalidDegree { l: li, min: s.abs() });
    }
    Ok(((li - s) * (li + s + 1)) as f64)
}

/// Contiguous range of degrees where a window level can be nonzero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegreeRange {
    pub l_min: usize,
    pub l_max: usize,
}

impl DegreeRange {
    pub fn empty() -> Self {
        Self { l_min: 1, l_max: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.l_min > self.l_max
    }

    pub fn contains(&self, l: usize) -> bool {
        self.l_min <= l && l <= self.l_max
    }

    pub fn iter(&self) -> RangeInclusive<usize> {
        self.l_min..=self.l_max
    }
}

impl<T: Real> NeedletWindow<T> {
    pub fn build(bandwidth: T, smoothness_order: u32) -> Result<Self> {
        let b = to_f64(bandwidth);
        if !(b > 1.0) || !b.is_finite() {
            return Err(Error::InvalidBandwidth(b));
        }
        if smoothness_order < 1 {
            return Err(Error::InvalidSmoothness(smoothness_order));
        }
        let (x, w) = gauss_legendre(10);
        let panel = Panel { x: &x, w: &w };
        let h = 2.0 / (TABLE_NODES - 1) as f64;
        let node = |i: usize| -1.0 + h * i as f64;
        let mut cumulative = vec![0.0f64; TABLE_NODES];
        let mut acc = crate::sum::NeumaierSum::new();
        for i in 1..TABLE_NODES {
            let (a, c) = (node(i - 1), node(i));
            acc.add(panel.adaptive(a, c, panel.integrate(a, c), 20));
            cumulative[i] = acc.value();
        }
        let total = cumulative[TABLE_NODES - 1];
        let mut psi = Vec::with_capacity(TABLE_NODES);
        let mut dpsi = Vec::with_capacity(TABLE_NODES);
        for i in 0..TABLE_NODES {
            // symmetric about t = 0: take whichever tail is smaller for accuracy
            let v = if i < TABLE_NODES / 2 {
                cumulative[i] / total
            } else {
                1.0 - (total - cumulative[i]) / total
            };
            psi.push(lit(v.clamp(0.0, 1.0)));
            dpsi.push(lit(bump(node(i)) / total));
        }
        Ok(Self {
            bandwidth,
            smoothness_order,
            psi,
            dpsi,
        })
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn smoothness_order(&self) -> u32 {
        self.smoothness_order
    }

    /// Normalized antiderivative of the bump, by Hermite interpolation of the table.
    pub fn psi(&self, t: T) -> T {
        if t <= -T::one() {
            return T::zero();
        }
        if t >= T::one() {
            return T::one();
        }
        let h = lit::<T>(2.0 / (TABLE_NODES - 1) as f64);
        let pos = (t + T::one()) / h;
        let i = pos.floor().to_usize().unwrap_or(0).min(TABLE_NODES - 2);
        let u = pos - int::<T>(i as i64);
        let (p0, p1) = (self.psi[i], self.psi[i + 1]);
        let (m0, m1) = (self.dpsi[i] * h, self.dpsi[i + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        let two = lit::<T>(2.0);
        let three = lit::<T>(3.0);
        let h00 = two * u3 - three * u2 + T::one();
        let h10 = u3 - two * u2 + u;
        let h01 = three * u2 - two * u3;
        let h11 = u3 - u2;
        (h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1).max(T::zero()).min(T::one())
    }

    // 1 - φ(t) for t in [1/B, 1], computed directly so b² telescopes exactly
    fn plateau_complement(&self, t: T) -> T {
        let b = self.bandwidth;
        let u = T::one() - lit::<T>(2.0) * b / (b - T::one()) * (t - T::one() / b);
        T::one() - self.psi(u)
    }

    fn plateau(&self, t: T) -> T {
        let b = self.bandwidth;
        if t <= T::one() / b {
            T::one()
        } else if t >= T::one() {
            T::zero()
        } else {
            let u = T::one() - lit::<T>(2.0) * b / (b - T::one()) * (t - T::one() / b);
            self.psi(u)
        }
    }

    /// `b²(x)`; exactly zero outside `(1/B, B)`.
    pub fn eval_b2(&self, x: T) -> T {
        let b = self.bandwidth;
        if !(x > T::one() / b) || x >= b {
            return T::zero();
        }
        if x <= T::one() {
            self.plateau_complement(x)
        } else {
            self.plateau(x / b)
        }
    }

    pub fn eval_b(&self, x: T) -> T {
        self.eval_b2(x).max(T::zero()).sqrt()
    }

    /// Window argument `sqrt(e_ls) / B^j`.
    pub fn argument(&self, l: usize, s: i64, j: u32) -> T {
        let e = ((l as i64 - s) * (l as i64 + s + 1)) as f64;
        lit::<T>(e.max(0.0).sqrt()) / self.bandwidth.powi(j as i32)
    }

    /// `b(sqrt(e_ls)/B^j)`, zero below the spin's minimum degree.
    pub fn level_weight(&self, l: usize, s: i64, j: u32) -> T {
        if (l as i64) < s.abs() {
            return T::zero();
        }
        self.eval_b(self.argument(l, s, j))
    }

    /// `b²(sqrt(e_ls)/B^j)`, zero below the spin's minimum degree.
    pub fn level_weight2(&self, l: usize, s: i64, j: u32) -> T {
        if (l as i64) < s.abs() {
            return T::zero();
        }
        self.eval_b2(self.argument(l, s, j))
    }

    /// Smallest contiguous degree range holding every `l ≥ |s|` with
    /// `1/B < sqrt(e_ls)/B^j < B`.
    pub fn support(&self, j: u32, s: i64) -> DegreeRange {
        let b = self.bandwidth;
        let lo = T::one() / b;
        let l0 = s.unsigned_abs() as usize;
        let mut range = DegreeRange::empty();
        // e_ls grows with l for l ≥ |s|, so the admissible set is an interval
        let mut l = l0;
        loop {
            let x = self.argument(l, s, j);
            if x >= b {
                break;
            }
            if x > lo {
                if range.is_empty() {
                    range.l_min = l;
                }
                range.l_max = l;
            }
            l += 1;
        }
        range
    }

    /// `Σ_j b²(sqrt(e_ls)/B^j)` over `levels`.
    pub fn coverage(&self, l: usize, s: i64, levels: &[u32]) -> T {
        levels.iter().map(|&j| self.level_weight2(l, s, j)).sum()
    }
}

/// Support of level `j` for spin `s`; see [`NeedletWindow::support`].
pub fn window_support<T: Real>(w: &NeedletWindow<T>, j: u32, s: i64) -> DegreeRange {
    w.support(j, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> NeedletWindow<f64> {
        NeedletWindow::build(2.0, 3).unwrap()
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(NeedletWindow::<f64>::build(1.0, 1), Err(Error::InvalidBandwidth(_))));
        assert!(matches!(NeedletWindow::<f64>::build(2.0, 0), Err(Error::InvalidSmoothness(0))));
    }

    #[test]
    fn psi_endpoints_and_symmetry() {
        let w = window();
        assert_eq!(w.psi(-1.0), 0.0);
        assert_eq!(w.psi(1.0), 1.0);
        assert!((w.psi(0.0) - 0.5).abs() < 1e-14);
        for &t in &[0.1, 0.37, 0.8, 0.99] {
            assert!((w.psi(t) + w.psi(-t) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn support_endpoints_and_positivity() {
        let w = window();
        assert_eq!(w.eval_b(0.5), 0.0);
        assert_eq!(w.eval_b(2.0), 0.0);
        assert_eq!(w.eval_b(0.0), 0.0);
        assert_eq!(w.eval_b(4.0), 0.0);
        assert!(w.eval_b(1.0) > 0.0);
        for i in 1..100 {
            let x = 0.5 + 1.5 * i as f64 / 100.0;
            assert!(w.eval_b(x) > 0.0, "x={x}");
        }
    }

    #[test]
    fn partition_of_unity_at_example_point() {
        let w = window();
        let x = 7.3;
        let total: f64 = (0..10).map(|j| w.eval_b2(x / 2f64.powi(j))).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues() {
        assert_eq!(eval_e_ls(2, 2).unwrap(), 0.0);
        assert_eq!(eval_e_ls(4, 0).unwrap(), 20.0);
        assert_eq!(eval_e_ls(3, 2).unwrap(), 6.0);
        assert!(matches!(eval_e_ls(1, 2), Err(Error::InvalidDegree { .. })));
    }

    #[test]
    fn support_of_scalar_level_three() {
        let w = window();
        let r = w.support(3, 0);
        assert_eq!((r.l_min, r.l_max), (4, 15));
        assert!(w.support(0, 40).is_empty());
    }
}
