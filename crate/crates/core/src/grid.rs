//! Cubature grids per needlet level, sky masks and region partitions.
//!
//! A level-`j` grid is a Gauss–Legendre product rule: `N + 1` rings at the
//! Gauss–Legendre nodes in `cos θ`, each with `2N + 1` equispaced longitudes
//! starting at `φ = 0`, where `N = ⌈B^{j+1}⌉`. The rule integrates every
//! band-limited function of degree `≤ 2N` exactly. Pixels are numbered ring by
//! ring from the north pole: `k = ring * n_phi + i`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::specfun::SphPoint;

/// Default cap on the number of pixels a single grid may hold.
pub const DEFAULT_PIXEL_CAP: usize = 4_000_000;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes in ascending order.
///
/// The rule is symmetric by construction: the upper half is mirrored from the
/// lower half, and for odd `n` the middle node is exactly zero.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // i-th largest root, refined from the usual asymptotic guess
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, z);
        dp = if d.is_finite() { d } else { dp };
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[n - 1 - i] = z;
        x[i] = -z;
        w[n - 1 - i] = weight;
        w[i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Cubature points and weights of one needlet level.
#[derive(Clone, Debug)]
pub struct CubatureGrid<T> {
    pub j: u32,
    pub bandwidth: T,
    /// Colatitude of each ring, north to south.
    pub ring_theta: Vec<T>,
    /// `cos θ` of each ring (the Gauss–Legendre node).
    pub ring_cos: Vec<T>,
    /// Gauss–Legendre weight of each ring.
    pub ring_gl_weight: Vec<T>,
    pub n_phi: usize,
    pub points: Vec<SphPoint<T>>,
    /// Pixel weights in steradians; they sum to `4π`.
    pub weights: Vec<T>,
    /// Exactness degree `2N` of the rule.
    pub band_limit: usize,
}

/// `⌈B^{j+1}⌉`, the per-level degree scale of the grid family.
pub fn level_degree(j: u32, bandwidth: f64) -> usize {
    let v = bandwidth.powi(j as i32 + 1);
    // guard against B^{j+1} landing a hair above an integer
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

impl<T: Real> CubatureGrid<T> {
    pub fn build(j: u32, bandwidth: T) -> Result<Self> {
        Self::build_with_cap(j, bandwidth, DEFAULT_PIXEL_CAP)
    }

    pub fn build_with_cap(j: u32, bandwidth: T, pixel_cap: usize) -> Result<Self> {
        let b = to_f64(bandwidth);
        if !(b > 1.0) || !b.is_finite() {
            return Err(Error::InvalidBandwidth(b));
        }
        let n = level_degree(j, b);
        let n_theta = n + 1;
        let n_phi = 2 * n + 1;
        let npix = n_theta.checked_mul(n_phi).unwrap_or(usize::MAX);
        if npix > pixel_cap {
            return Err(Error::ResourceLimit {
                what: "grid pixels",
                requested: npix,
                cap: pixel_cap,
            });
        }
        let (x, w) = gauss_legendre(n_theta);
        // north to south: descending cos θ
        let ring_cos: Vec<f64> = x.iter().rev().copied().collect();
        let ring_w: Vec<f64> = w.iter().rev().copied().collect();
        let ring_theta: Vec<f64> = ring_cos.iter().map(|c| c.acos()).collect();
        let dphi = 2.0 * PI / n_phi as f64;
        let mut points = Vec::with_capacity(npix);
        let mut weights = Vec::with_capacity(npix);
        for (r, &theta) in ring_theta.iter().enumerate() {
            let lambda = ring_w[r] * dphi;
            for i in 0..n_phi {
                points.push(SphPoint {
                    theta: lit(theta),
                    phi: lit(i as f64 * dphi),
                });
                weights.push(lit(lambda));
            }
        }
        Ok(Self {
            j,
            bandwidth,
            ring_theta: ring_theta.into_iter().map(lit).collect(),
            ring_cos: ring_cos.into_iter().map(lit).collect(),
            ring_gl_weight: ring_w.into_iter().map(lit).collect(),
            n_phi,
            points,
            weights,
            band_limit: 2 * n,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_theta(&self) -> usize {
        self.ring_theta.len()
    }

    /// Ring index and longitude index of pixel `k`.
    pub fn ring_of(&self, k: usize) -> (usize, usize) {
        (k / self.n_phi, k % self.n_phi)
    }

    /// Index of the pixel nearest to `p` by geodesic distance.
    pub fn nearest_pixel(&self, p: SphPoint<T>) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (k, q) in self.points.iter().enumerate() {
            let d = geodesic_distance(p, *q);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn total_weight(&self) -> T {
        crate::sum::compensated_sum(self.weights.iter().copied())
    }
}

/// Great-circle distance between two points, in radians.
pub fn geodesic_distance<T: Real>(p: SphPoint<T>, q: SphPoint<T>) -> T {
    let a = p.unit_vector();
    let b = q.unit_vector();
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    dot.max(-T::one()).min(T::one()).acos()
}

/// A masked region `G` on a grid, with its closed ε-dilation `G^ε`.
#[derive(Clone, Debug)]
pub struct SkyMask<T> {
    pub grid: Arc<CubatureGrid<T>>,
    /// `true` for pixels in `G`.
    pub excluded: Vec<bool>,
    pub epsilon: T,
    guard: Vec<bool>,
}

impl<T: Real> SkyMask<T> {
    /// Builds the mask and its ε-dilation. Fails if the dilation leaves no
    /// observed pixel.
    pub fn new(grid: Arc<CubatureGrid<T>>, excluded: Vec<bool>, epsilon: T) -> Result<Self> {
        if excluded.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} pixels, grid has {}",
                excluded.len(),
                grid.len()
            )));
        }
        let guard = dilate(&grid, &excluded, epsilon);
        if guard.iter().all(|&g| g) {
            return Err(Error::EmptyObservedRegion);
        }
        Ok(Self {
            grid,
            excluded,
            epsilon,
            guard,
        })
    }

    /// Mask with nothing excluded.
    pub fn empty(grid: Arc<CubatureGrid<T>>) -> Self {
        let n = grid.len();
        Self {
            grid,
            excluded: vec![false; n],
            epsilon: T::zero(),
            guard: vec![false; n],
        }
    }

    /// Excludes every pixel within `radius` of the north pole.
    pub fn polar_cap(grid: Arc<CubatureGrid<T>>, radius: T, epsilon: T) -> Result<Self> {
        let excluded = grid.points.iter().map(|p| p.theta <= radius).collect();
        Self::new(grid, excluded, epsilon)
    }

    /// Membership in `G^ε`.
    pub fn guard(&self) -> &[bool] {
        &self.guard
    }

    /// Pixels outside `G^ε`, in ascending order.
    pub fn observed(&self) -> Vec<usize> {
        (0..self.guard.len()).filter(|&k| !self.guard[k]).collect()
    }

    pub fn observed_weight(&self) -> T {
        crate::sum::compensated_sum(
            self.guard
                .iter()
                .zip(&self.grid.weights)
                .filter(|(g, _)| !**g)
                .map(|(_, w)| *w),
        )
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Writes the text format: a `mask v1` header, then one excluded index per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "mask v1 j={} B={} npix={}",
            self.grid.j,
            to_f64(self.grid.bandwidth),
            self.grid.len()
        )?;
        for (k, &e) in self.excluded.iter().enumerate() {
            if e {
                writeln!(out, "{k}")?;
            }
        }
        Ok(())
    }

    /// Reads the text format against `grid`, checking the header matches it.
    pub fn read_text<R: BufRead>(input: R, grid: Arc<CubatureGrid<T>>, epsilon: T) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty mask file".into()))??;
        let header = MaskHeader::parse(&header)?;
        if header.j != grid.j || header.npix != grid.len() || (header.bandwidth - to_f64(grid.bandwidth)).abs() > 1e-12
        {
            return Err(Error::Format(format!(
                "mask header (j={}, B={}, npix={}) does not match grid (j={}, B={}, npix={})",
                header.j,
                header.bandwidth,
                header.npix,
                grid.j,
                to_f64(grid.bandwidth),
                grid.len()
            )));
        }
        let mut excluded = vec![false; grid.len()];
        for (no, line) in lines.enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let k: usize = t
                .parse()
                .map_err(|_| Error::Format(format!("mask line {}: bad pixel index `{t}`", no + 2)))?;
            if k >= grid.len() {
                return Err(Error::Format(format!(
                    "mask line {}: pixel {k} out of range (npix={})",
                    no + 2,
                    grid.len()
                )));
            }
            excluded[k] = true;
        }
        Self::new(grid, excluded, epsilon)
    }
}

/// Parsed `mask v1` header line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskHeader {
    pub j: u32,
    pub bandwidth: f64,
    pub npix: usize,
}

impl MaskHeader {
    pub fn parse(line: &str) -> Result<Self> {
        let mut it = line.split_whitespace();
        if it.next() != Some("mask") || it.next() != Some("v1") {
            return Err(Error::Format(format!("bad mask header `{line}`")));
        }
        let (mut j, mut b, mut npix) = (None, None, None);
        for kv in it {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad mask header field `{kv}`")))?;
            let bad = || Error::Format(format!("bad mask header value `{kv}`"));
            match k {
                "j" => j = Some(v.parse().map_err(|_| bad())?),
                "B" => b = Some(v.parse().map_err(|_| bad())?),
                "npix" => npix = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(Error::Format(format!("unknown mask header field `{k}`"))),
            }
        }
        match (j, b, npix) {
            (Some(j), Some(bandwidth), Some(npix)) => Ok(Self { j, bandwidth, npix }),
            _ => Err(Error::Format(format!("incomplete mask header `{line}`"))),
        }
    }
}

/// Returns the mask whose guard is `G^epsilon` of `mask`'s own `G`.
///
/// The base set `G` is kept, so dilating twice by the same radius gives the
/// same mask.
pub fn dilate_mask<T: Real>(mask: &SkyMask<T>, epsilon: T) -> Result<SkyMask<T>> {
    SkyMask::new(mask.grid.clone(), mask.excluded.clone(), epsilon)
}

/// Closed ε-dilation of `excluded` on `grid`.
///
/// For each pixel only rings within `ε` in colatitude are visited, and within
/// each of those only the longitude window that can reach distance `ε`; every
/// candidate is then confirmed with the exact geodesic distance.
fn dilate<T: Real>(grid: &CubatureGrid<T>, excluded: &[bool], epsilon: T) -> Vec<bool> {
    let eps = to_f64(epsilon).max(0.0);
    if eps == 0.0 || !excluded.iter().any(|&e| e) {
        return excluded.to_vec();
    }
    let n_phi = grid.n_phi;
    let theta: Vec<f64> = grid.ring_theta.iter().map(|&t| to_f64(t)).collect();
    let dphi = 2.0 * PI / n_phi as f64;
    let ring_has: Vec<bool> = (0..theta.len())
        .map(|r| excluded[r * n_phi..(r + 1) * n_phi].iter().any(|&e| e))
        .collect();
    let cos_eps = eps.cos();
    let slack = 1e-12;
    let mut out = excluded.to_vec();
    for (r, &t) in theta.iter().enumerate() {
        let (st, ct) = t.sin_cos();
        // longitude half-widths (in pixels) toward every ring in the band
        let mut windows = Vec::new();
        for (r2, &t2) in theta.iter().enumerate() {
            if (t2 - t).abs() > eps + slack || !ring_has[r2] {
                continue;
            }
            let (st2, ct2) = t2.sin_cos();
            let den = st * st2;
            let half = if den <= 1e-300 {
                n_phi
            } else {
                let c = (cos_eps - ct * ct2) / den;
                if c <= -1.0 {
                    n_phi
                } else {
                    let dp = c.min(1.0).acos();
                    ((dp / dphi).ceil() as usize + 1).min(n_phi)
                }
            };
            windows.push((r2, half));
        }
        for i in 0..n_phi {
            let k = r * n_phi + i;
            if out[k] {
                continue;
            }
            let p = grid.points[k];
            'rings: for &(r2, half) in &windows {
                let span = (2 * half + 1).min(n_phi);
                for o in 0..span {
                    let i2 = (i + 2 * n_phi + o - half) % n_phi;
                    let k2 = r2 * n_phi + i2;
                    if excluded[k2] && to_f64(geodesic_distance(p, grid.points[k2])) <= eps {
                        out[k] = true;
                        break 'rings;
                    }
                }
            }
        }
    }
    out
}

/// Two disjoint pixel sets and the guard radius applied at their boundaries.
#[derive(Clone, Debug)]
pub struct RegionPair<T> {
    pub a1: Vec<bool>,
    pub a2: Vec<bool>,
    pub epsilon: T,
}

impl<T: Real> RegionPair<T> {
    pub fn new(a1: Vec<bool>, a2: Vec<bool>, epsilon: T) -> Result<Self> {
        if a1.len() != a2.len() {
            return Err(Error::ShapeMismatch("region masks differ in length".into()));
        }
        if a1.iter().zip(&a2).any(|(x, y)| *x && *y) {
            return Err(Error::EmptyRegion("regions A1 and A2 overlap".into()));
        }
        Ok(Self { a1, a2, epsilon })
    }

    /// Masks whose observed sets are the ε-interiors of `A1` and `A2`.
    pub fn masks(&self, grid: &Arc<CubatureGrid<T>>) -> Result<(SkyMask<T>, SkyMask<T>)> {
        let complement = |a: &[bool]| a.iter().map(|&x| !x).collect::<Vec<_>>();
        let m1 = SkyMask::new(grid.clone(), complement(&self.a1), self.epsilon)
            .map_err(|_| Error::EmptyRegion("ε-interior of A1 is empty".into()))?;
        let m2 = SkyMask::new(grid.clone(), complement(&self.a2), self.epsilon)
            .map_err(|_| Error::EmptyRegion("ε-interior of A2 is empty".into()))?;
        Ok((m1, m2))
    }
}

/// Northern (`A1`) and southern (`A2`) hemispheres; the equator ring, if the
/// grid has one, belongs to neither.
pub fn hemispheres<T: Real>(grid: &CubatureGrid<T>, epsilon: T) -> RegionPair<T> {
    let n_phi = grid.n_phi;
    let mut a1 = vec![false; grid.len()];
    let mut a2 = vec![false; grid.len()];
    for (r, &c) in grid.ring_cos.iter().enumerate() {
        for i in 0..n_phi {
            let k = r * n_phi + i;
            a1[k] = c > T::zero();
            a2[k] = c < T::zero();
        }
    }
    RegionPair { a1, a2, epsilon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::spin_sph_harm;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 16, 65] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "n={n} deg={deg}: {got}");
            }
        }
    }

    #[test]
    fn grid_weights_and_sizes() {
        let g = CubatureGrid::<f64>::build(3, 2.0).unwrap();
        assert_eq!(g.n_theta(), 17);
        assert_eq!(g.n_phi, 33);
        assert_eq!(g.len(), 17 * 33);
        assert_eq!(g.band_limit, 32);
        assert!((g.total_weight() - 4.0 * PI).abs() < 1e-12);
        assert!(g.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn pixel_cap_is_enforced() {
        let err = CubatureGrid::<f64>::build_with_cap(6, 2.0, 1000).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit { .. }));
        assert!(matches!(
            CubatureGrid::<f64>::build(2, 1.0),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn small_grid_gram_is_identity() {
        let g = CubatureGrid::<f64>::build(2, 2.0).unwrap();
        let lmax = 8i64;
        for s in [0i64, 2] {
            let modes: Vec<(usize, i64)> = (s..=lmax)
                .flat_map(|l| (-l..=l).map(move |m| (l as usize, m)))
                .collect();
            let vals: Vec<Vec<_>> = modes
                .iter()
                .map(|&(l, m)| g.points.iter().map(|&p| spin_sph_harm(l, m, s, p).unwrap()).collect())
                .collect();
            for (a, va) in vals.iter().enumerate() {
                for (b, vb) in vals.iter().enumerate() {
                    let g_ab: num_complex::Complex<f64> =
                        va.iter().zip(vb).zip(&g.weights).map(|((x, y), w)| x * y.conj() * w).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g_ab.re - want).abs() < 1e-10 && g_ab.im.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn distances() {
        let n = SphPoint::new(0.0, 0.0);
        let s = SphPoint::new(PI, 0.0);
        let e = SphPoint::new(PI / 2.0, 1.0);
        assert_eq!(geodesic_distance(n, n), 0.0);
        assert!((geodesic_distance(n, s) - PI).abs() < 1e-15);
        assert!((geodesic_distance(n, e) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mask_text_round_trip() {
        let g = Arc::new(CubatureGrid::<f64>::build(2, 2.0).unwrap());
        let m = SkyMask::polar_cap(g.clone(), 0.5, 0.1).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("mask v1 j=2 B=2 npix={}\n", g.len())));
        let back = SkyMask::read_text(&buf[..], g.clone(), 0.1).unwrap();
        assert_eq!(back.excluded, m.excluded);
        assert_eq!(back.guard(), m.guard());
        let other = Arc::new(CubatureGrid::<f64>::build(3, 2.0).unwrap());
        assert!(matches!(SkyMask::read_text(&buf[..], other, 0.1), Err(Error::Format(_))));
    }

    #[test]
    fn hemisphere_regions() {
        let g = CubatureGrid::<f64>::build(3, 2.0).unwrap();
        let h = hemispheres(&g, 0.0);
        assert!(h.a1.iter().zip(&h.a2).all(|(a, b)| !(a & b)));
        let w1: f64 = g.weights.iter().zip(&h.a1).filter(|(_, a)| **a).map(|(w, _)| w).sum();
        let w2: f64 = g.weights.iter().zip(&h.a2).filter(|(_, a)| **a).map(|(w, _)| w).sum();
        assert!((w1 - w2).abs() / (4.0 * PI) < 1e-10);
        assert!(h.a1[0]);
        assert!(RegionPair::new(h.a1.clone(), h.a1.clone(), 0.0).is_err());
    }
}
