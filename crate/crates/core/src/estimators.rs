//! Needlet spectral estimators, test statistics and subsampling variances.
//!
//! Every estimator is a weighted sum of a per-pixel quantity `q_k` over an
//! observed pixel set, so one subsampling routine serves all of them:
//! the statistic restricted to a block `b` is `S_b = c Σ_{k∈b} q_k / W_b`
//! with `W_b` the block's total weight, and
//!
//! ```text
//! Var ≈ Σ_b W_b (S_b - S)² / (W (N_b - 1))
//! ```
//!
//! which is unbiased when block statistics are independent with variance
//! inversely proportional to block area.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PowerSpectrumModel;
use crate::grid::{CubatureGrid, RegionPair, SkyMask};
use crate::scalar::{to_f64, Real};
use crate::sum::NeumaierSum;
use crate::transform::NeedletCoefficients;
use crate::window::NeedletWindow;

/// Minimum number of subsampling blocks.
pub const MIN_BLOCKS: usize = 8;
/// Minimum observed pixels per subsampling block.
pub const MIN_BLOCK_PIXELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Masked-sky estimator from masked coefficients.
    Masked,
    /// The same sum with full-sky coefficients on the observed pixels.
    Unfeasible,
    /// Difference of the two region estimates.
    Asymmetry,
    /// Auto-power estimator with known noise bias.
    Ap,
    /// Cross-power estimator over distinct channel pairs.
    Cp,
    /// Cross-power minus auto-power.
    Hausman,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Masked => "masked",
            Self::Unfeasible => "unfeasible",
            Self::Asymmetry => "asymmetry",
            Self::Ap => "ap",
            Self::Cp => "cp",
            Self::Hausman => "hausman",
        }
    }

    /// Symbolic name of the statistic the kind computes.
    pub fn paper_kind(self) -> &'static str {
        match self {
            Self::Masked => "gamma_hat_star",
            Self::Unfeasible => "gamma_hat",
            Self::Asymmetry => "gamma_hat_star_a1_minus_a2",
            Self::Ap => "gamma_tilde_ap",
            Self::Cp => "gamma_tilde_cp",
            Self::Hausman => "gamma_tilde_cp_minus_ap",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "masked" => Self::Masked,
            "unfeasible" => Self::Unfeasible,
            "asymmetry" => Self::Asymmetry,
            "ap" => Self::Ap,
            "cp" => Self::Cp,
            "hausman" => Self::Hausman,
            other => {
                return Err(Error::InvalidPlan {
                    field: "kind".into(),
                    reason: format!("unknown estimator kind `{other}`"),
                })
            }
        })
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifiers of the inputs a report was computed from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub grid: String,
    pub window: String,
    pub mask: String,
    pub observed_pixels: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub j: u32,
    pub s: i64,
    pub kind: EstimatorKind,
    pub paper_kind: String,
    pub value: f64,
    pub theoretical_target: f64,
    pub variance_estimate: f64,
    /// `(value - target) / sqrt(variance)`, absent when the variance is zero.
    pub standardized: Option<f64>,
    pub meta: ReportMeta,
}

impl EstimateReport {
    fn new(j: u32, s: i64, kind: EstimatorKind, value: f64, target: f64, variance: f64, meta: ReportMeta) -> Self {
        Self {
            j,
            s,
            kind,
            paper_kind: kind.paper_kind().to_string(),
            value,
            theoretical_target: target,
            variance_estimate: variance.max(0.0),
            standardized: standardize(value, target, variance),
            meta,
        }
    }

    /// Replaces the variance and recomputes the standardized value.
    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance_estimate = variance.max(0.0);
        self.standardized = standardize(self.value, self.theoretical_target, variance);
        self
    }

    pub const CSV_HEADER: &'static str = "j,s,kind,paper_kind,value,theoretical_target,variance_estimate,standardized";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{}",
            self.j,
            self.s,
            self.kind,
            self.paper_kind,
            self.value,
            self.theoretical_target,
            self.variance_estimate,
            self.standardized.map(|z| format!("{z:e}")).unwrap_or_default()
        )
    }
}

fn standardize(value: f64, target: f64, variance: f64) -> Option<f64> {
    (variance > 0.0).then(|| (value - target) / variance.sqrt())
}

/// Writes reports as CSV, one row per report.
pub fn write_reports_csv<W: Write>(reports: &[EstimateReport], mut out: W) -> Result<()> {
    writeln!(out, "{}", EstimateReport::CSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `Γ_{j;s} = Σ_l b²(sqrt(e_ls)/B^j) C_l (2l+1)`; zero for an empty support.
pub fn gamma_theoretical<T: Real>(window: &NeedletWindow<T>, model: &PowerSpectrumModel, j: u32, s: i64) -> f64 {
    let mut acc = NeumaierSum::new();
    for l in window.support(j, s).iter() {
        acc.add(to_f64(window.level_weight2(l, s, j)) * model.cl_or_zero(l) * (2 * l + 1) as f64);
    }
    acc.value()
}

/// The noise counterpart of [`gamma_theoretical`].
pub fn gamma_noise_theoretical<T: Real>(window: &NeedletWindow<T>, noise: &PowerSpectrumModel, j: u32, s: i64) -> f64 {
    gamma_theoretical(window, noise, j, s)
}

/// `E|β_{jk;sN}|² / λ_k = Σ_l b² C_lN (2l+1) / (4π)`.
fn noise_bias_density<T: Real>(window: &NeedletWindow<T>, noise: &PowerSpectrumModel, j: u32, s: i64) -> f64 {
    gamma_theoretical(window, noise, j, s) / (4.0 * PI)
}

/// Partition of observed pixels into contiguous latitude-band × longitude-sector blocks.
#[derive(Clone, Debug)]
pub struct Blocks {
    pub blocks: Vec<Vec<usize>>,
}

impl Blocks {
    /// Splits `observed` (ascending pixel indices) into about
    /// `max(8, ⌈sqrt(N_obs)/4⌉)` blocks. Undersized blocks are merged into a
    /// neighbour; fails if fewer than 8 blocks of at least 16 pixels remain.
    pub fn partition<T: Real>(grid: &CubatureGrid<T>, observed: &[usize]) -> Result<Self> {
        let n_obs = observed.len();
        let target = MIN_BLOCKS.max(((n_obs as f64).sqrt() / 4.0).ceil() as usize);
        let n_lat = ((target as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let n_lon = target.div_ceil(n_lat);
        let n_phi = grid.n_phi;

        // latitude bands with roughly equal observed counts, rings kept whole
        let mut bands: Vec<Vec<usize>> = vec![Vec::new()];
        let per_band = n_obs.div_ceil(n_lat).max(1);
        let mut prev_ring = usize::MAX;
        for &k in observed {
            let ring = k / n_phi;
            if ring != prev_ring && bands.last().is_some_and(|b| b.len() >= per_band) && bands.len() < n_lat {
                bands.push(Vec::new());
            }
            prev_ring = ring;
            bands.last_mut().expect("non-empty").push(k);
        }

        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for band in bands {
            let mut sectors = vec![Vec::new(); n_lon];
            for k in band {
                let i = k % n_phi;
                sectors[i * n_lon / n_phi].push(k);
            }
            let mut pending: Vec<usize> = Vec::new();
            for mut sec in sectors {
                pending.append(&mut sec);
                if pending.len() >= MIN_BLOCK_PIXELS {
                    blocks.push(std::mem::take(&mut pending));
                }
            }
            if !pending.is_empty() {
                match blocks.last_mut() {
                    Some(last) => last.append(&mut pending),
                    None => blocks.push(pending),
                }
            }
        }
        blocks.retain(|b| !b.is_empty());
        for b in &mut blocks {
            b.sort_unstable();
        }
        let valid = blocks.iter().filter(|b| b.len() >= MIN_BLOCK_PIXELS).count();
        if valid < MIN_BLOCKS || valid != blocks.len() {
            return Err(Error::TooFewBlocks {
                blocks: valid,
                min_pixels: MIN_BLOCK_PIXELS,
                needed: MIN_BLOCKS,
            });
        }
        Ok(Self { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Subsampling variance of `S = scale · Σ q_k / Σ λ_k` over the blocks.
/// `q` and `weights` are indexed by pixel.
pub fn subsampling_variance(q: &[f64], weights: &[f64], blocks: &Blocks, scale: f64) -> Result<f64> {
    if blocks.len() < MIN_BLOCKS {
        return Err(Error::TooFewBlocks {
            blocks: blocks.len(),
            min_pixels: MIN_BLOCK_PIXELS,
            needed: MIN_BLOCKS,
        });
    }
    let mut stats = Vec::with_capacity(blocks.len());
    let mut total_q = NeumaierSum::new();
    let mut total_w = NeumaierSum::new();
    for b in &blocks.blocks {
        let mut sq = NeumaierSum::new();
        let mut sw = NeumaierSum::new();
        for &k in b {
            sq.add(q[k]);
            sw.add(weights[k]);
        }
        total_q.merge(&sq);
        total_w.merge(&sw);
        stats.push((sw.value(), scale * sq.value() / sw.value()));
    }
    let w = total_w.value();
    let full = scale * total_q.value() / w;
    let mut acc = NeumaierSum::new();
    for (wb, sb) in &stats {
        acc.add(wb * (sb - full) * (sb - full));
    }
    Ok(acc.value() / (w * (blocks.len() - 1) as f64))
}

fn grid_id<T: Real>(grid: &CubatureGrid<T>) -> String {
    format!("gl j={} B={} npix={}", grid.j, to_f64(grid.bandwidth), grid.len())
}

fn window_id<T: Real>(window: &NeedletWindow<T>) -> String {
    format!("bump B={} order={}", to_f64(window.bandwidth()), window.smoothness_order())
}

fn mask_id<T: Real>(mask: &SkyMask<T>) -> String {
    format!("excluded={} epsilon={}", mask.excluded_count(), to_f64(mask.epsilon))
}

fn support_warning<T: Real>(window: &NeedletWindow<T>, j: u32, s: i64, meta: &mut ReportMeta) {
    if window.support(j, s).is_empty() {
        meta.warnings.push(format!("empty window support at j={j}, s={s}"));
    }
}

/// Value `(4π / Σ_obs λ) Σ_obs |β_k|²` plus its subsampling variance.
/// A subsampling failure leaves the variance at zero with a warning.
fn region_estimate<T: Real>(values: &[Complex<T>], mask: &SkyMask<T>, meta: &mut ReportMeta) -> Result<(f64, f64)> {
    let grid = &mask.grid;
    let observed = mask.observed();
    if observed.is_empty() {
        return Err(Error::EmptyObservedRegion);
    }
    let q: Vec<f64> = values.iter().map(|v| to_f64(v.norm_sqr())).collect();
    let weights: Vec<f64> = grid.weights.iter().map(|&w| to_f64(w)).collect();
    let mut sq = NeumaierSum::new();
    let mut sw = NeumaierSum::new();
    for &k in &observed {
        sq.add(q[k]);
        sw.add(weights[k]);
    }
    let value = 4.0 * PI * sq.value() / sw.value();
    meta.observed_pixels = observed.len();
    let variance = match Blocks::partition(grid, &observed).and_then(|b| subsampling_variance(&q, &weights, &b, 4.0 * PI)) {
        Ok(v) => v,
        Err(e) => {
            meta.warnings.push(format!("no subsampling variance: {e}"));
            0.0
        }
    };
    Ok((value, variance))
}

fn masked_report<T: Real>(coeffs: &NeedletCoefficients<T>, mask: &SkyMask<T>, model: &PowerSpectrumModel, kind: EstimatorKind) -> Result<EstimateReport> {
    let expected = kind == EstimatorKind::Masked;
    if coeffs.masked != expected {
        return Err(Error::MaskedFlagMismatch {
            expected,
            found: coeffs.masked,
        });
    }
    if coeffs.values.len() != mask.grid.len() {
        return Err(Error::ShapeMismatch("coefficients and mask are on different grids".into()));
    }
    let mut meta = ReportMeta {
        grid: grid_id(&mask.grid),
        window: window_id(&coeffs.window),
        mask: mask_id(mask),
        ..Default::default()
    };
    support_warning(&coeffs.window, coeffs.j, coeffs.spin, &mut meta);
    let (value, variance) = region_estimate(&coeffs.values, mask, &mut meta)?;
    let target = gamma_theoretical(&coeffs.window, model, coeffs.j, coeffs.spin);
    Ok(EstimateReport::new(coeffs.j, coeffs.spin, kind, value, target, variance, meta))
}

/// Masked estimator over the pixels outside `G^ε`, targeting `Γ_{j;s}`.
pub fn estimate_masked<T: Real>(coeffs: &NeedletCoefficients<T>, mask: &SkyMask<T>, model: &PowerSpectrumModel) -> Result<EstimateReport> {
    masked_report(coeffs, mask, model, EstimatorKind::Masked)
}

/// The masked estimator's sum evaluated with full-sky coefficients.
pub fn estimate_unfeasible<T: Real>(coeffs: &NeedletCoefficients<T>, mask: &SkyMask<T>, model: &PowerSpectrumModel) -> Result<EstimateReport> {
    masked_report(coeffs, mask, model, EstimatorKind::Unfeasible)
}

/// Per-region estimates and their difference, over the ε-interiors of the regions.
#[derive(Clone, Debug)]
pub struct AsymmetryEstimate {
    pub a1: EstimateReport,
    pub a2: EstimateReport,
    pub difference: EstimateReport,
}

/// Difference of region estimates, standardized by the sum of the two
/// subsampling variances.
pub fn estimate_asymmetry<T: Real>(coeffs: &NeedletCoefficients<T>, regions: &RegionPair<T>, model: &PowerSpectrumModel) -> Result<AsymmetryEstimate> {
    let (m1, m2) = regions.masks(&coeffs.grid)?;
    let kind = if coeffs.masked {
        EstimatorKind::Masked
    } else {
        EstimatorKind::Unfeasible
    };
    let target = gamma_theoretical(&coeffs.window, model, coeffs.j, coeffs.spin);
    let region = |m: &SkyMask<T>, label: &str| -> Result<EstimateReport> {
        let mut meta = ReportMeta {
            grid: grid_id(&coeffs.grid),
            window: window_id(&coeffs.window),
            mask: format!("region {label} {}", mask_id(m)),
            ..Default::default()
        };
        support_warning(&coeffs.window, coeffs.j, coeffs.spin, &mut meta);
        let (value, variance) = region_estimate(&coeffs.values, m, &mut meta)?;
        Ok(EstimateReport::new(coeffs.j, coeffs.spin, kind, value, target, variance, meta))
    };
    let a1 = region(&m1, "A1")?;
    let a2 = region(&m2, "A2")?;
    let mut meta = ReportMeta {
        grid: grid_id(&coeffs.grid),
        window: window_id(&coeffs.window),
        mask: format!("regions A1/A2 epsilon={}", to_f64(regions.epsilon)),
        observed_pixels: a1.meta.observed_pixels + a2.meta.observed_pixels,
        warnings: a1.meta.warnings.iter().chain(&a2.meta.warnings).cloned().collect(),
    };
    meta.warnings.dedup();
    let difference = EstimateReport::new(
        coeffs.j,
        coeffs.spin,
        EstimatorKind::Asymmetry,
        a1.value - a2.value,
        0.0,
        a1.variance_estimate + a2.variance_estimate,
        meta,
    );
    Ok(AsymmetryEstimate { a1, a2, difference })
}

/// Full-sky needlet coefficients of every channel at one level.
#[derive(Clone, Debug)]
pub struct ChannelCoefficients<T> {
    pub channels: Vec<NeedletCoefficients<T>>,
    pub noise_models: Vec<PowerSpectrumModel>,
}

impl<T: Real> ChannelCoefficients<T> {
    fn check(&self, min_channels: usize) -> Result<(u32, i64)> {
        let d = self.channels.len();
        if d < min_channels {
            return Err(Error::InvalidChannelCount(d));
        }
        let first = &self.channels[0];
        for c in &self.channels {
            if c.masked {
                return Err(Error::MaskedFlagMismatch {
                    expected: false,
                    found: true,
                });
            }
            if c.j != first.j || c.spin != first.spin || c.values.len() != first.values.len() {
                return Err(Error::ShapeMismatch("channels differ in level, spin or grid".into()));
            }
        }
        Ok((first.j, first.spin))
    }

    fn meta(&self) -> ReportMeta {
        let c = &self.channels[0];
        let mut meta = ReportMeta {
            grid: grid_id(&c.grid),
            window: window_id(&c.window),
            mask: "full sky".into(),
            observed_pixels: c.values.len(),
            warnings: Vec::new(),
        };
        support_warning(&c.window, c.j, c.spin, &mut meta);
        meta
    }

    /// Per-channel `E|β_{jk;sN_r}|² / λ_k`, times `bias_scale`.
    fn bias_densities(&self, bias_scale: f64) -> Result<Vec<f64>> {
        let c = &self.channels[0];
        (0..self.channels.len())
            .map(|r| {
                let model = self.noise_models.get(r).ok_or(Error::MissingNoiseModel(r))?;
                Ok(bias_scale * noise_bias_density(&c.window, model, c.j, c.spin))
            })
            .collect()
    }

    fn weights(&self) -> Vec<f64> {
        self.channels[0].grid.weights.iter().map(|&w| to_f64(w)).collect()
    }

    /// AP per-pixel terms `(1/D) Σ_r (|β_kr|² - bias_r λ_k)`.
    fn ap_terms(&self, bias_scale: f64) -> Result<Vec<f64>> {
        let d = self.channels.len() as f64;
        let bias = self.bias_densities(bias_scale)?;
        let weights = self.weights();
        Ok((0..weights.len())
            .map(|k| {
                let mut acc = NeumaierSum::new();
                for (r, c) in self.channels.iter().enumerate() {
                    acc.add(to_f64(c.values[k].norm_sqr()) - bias[r] * weights[k]);
                }
                acc.value() / d
            })
            .collect())
    }

    /// CP per-pixel terms `(1/(D(D-1))) Σ_{r1≠r2} β_kr1 conj(β_kr2)` and the
    /// largest imaginary part relative to the pixel's power.
    fn cp_terms(&self) -> (Vec<f64>, f64) {
        let d = self.channels.len();
        let norm = (d * (d - 1)) as f64;
        let npix = self.channels[0].values.len();
        let mut worst = 0.0f64;
        let terms = (0..npix)
            .map(|k| {
                let mut re = NeumaierSum::new();
                let mut im = NeumaierSum::new();
                let mut scale = 0.0;
                for r1 in 0..d {
                    let b1 = self.channels[r1].values[k];
                    scale += to_f64(b1.norm_sqr());
                    for r2 in 0..d {
                        if r1 != r2 {
                            let p = b1 * self.channels[r2].values[k].conj();
                            re.add(to_f64(p.re));
                            im.add(to_f64(p.im));
                        }
                    }
                }
                if scale > 0.0 {
                    worst = worst.max(im.value().abs() / scale);
                }
                re.value() / norm
            })
            .collect();
        (terms, worst)
    }
}

/// Options for the auto-power estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApOptions {
    /// Multiplier on the assumed noise bias; 1 is the correct model.
    pub noise_bias_scale: f64,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self { noise_bias_scale: 1.0 }
    }
}

/// Largest relative imaginary part tolerated in the cross-power sum.
pub const CP_IMAGINARY_TOLERANCE: f64 = 1e-10;

fn full_sky_report<T: Real>(
    channels: &ChannelCoefficients<T>,
    q: &[f64],
    kind: EstimatorKind,
    target: f64,
    mut meta: ReportMeta,
) -> EstimateReport {
    let c = &channels.channels[0];
    let weights = channels.weights();
    let value = crate::sum::compensated_sum(q.iter().copied());
    let w_total = crate::sum::compensated_sum(weights.iter().copied());
    let all: Vec<usize> = (0..weights.len()).collect();
    let variance = match Blocks::partition(&c.grid, &all).and_then(|b| subsampling_variance(q, &weights, &b, w_total)) {
        Ok(v) => v,
        Err(e) => {
            meta.warnings.push(format!("no subsampling variance: {e}"));
            0.0
        }
    };
    EstimateReport::new(c.j, c.spin, kind, value, target, variance, meta)
}

/// Auto-power estimator `Σ_k (1/D) Σ_r (|β_{jk;r}|² - E|β_{jk;sN_r}|²)`,
/// targeting `Γ_{j;s}` of the signal.
pub fn estimate_ap<T: Real>(channels: &ChannelCoefficients<T>, signal: &PowerSpectrumModel, options: ApOptions) -> Result<EstimateReport> {
    let (j, s) = channels.check(1)?;
    let q = channels.ap_terms(options.noise_bias_scale)?;
    let target = gamma_theoretical(&channels.channels[0].window, signal, j, s);
    let mut meta = channels.meta();
    if options.noise_bias_scale != 1.0 {
        meta.warnings.push(format!("noise bias scaled by {}", options.noise_bias_scale));
    }
    Ok(full_sky_report(channels, &q, EstimatorKind::Ap, target, meta))
}

/// Cross-power estimator `Σ_k (1/(D(D-1))) Σ_{r1≠r2} β_{jk;r1} conj(β_{jk;r2})`.
pub fn estimate_cp<T: Real>(channels: &ChannelCoefficients<T>, signal: &PowerSpectrumModel) -> Result<EstimateReport> {
    let (j, s) = channels.check(2)?;
    let (q, worst_imag) = channels.cp_terms();
    let target = gamma_theoretical(&channels.channels[0].window, signal, j, s);
    let mut meta = channels.meta();
    if worst_imag > CP_IMAGINARY_TOLERANCE {
        meta.warnings.push(format!("cross-power imaginary part up to {worst_imag:e} of pixel power"));
    }
    Ok(full_sky_report(channels, &q, EstimatorKind::Cp, target, meta))
}

/// Largest relative residual tolerated between the direct and pairwise forms of `CP - AP`.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Hausman-type statistic `CP - AP` standardized by `variance`, targeting
/// zero when the noise model is right.
pub fn hausman_statistic(ap: &EstimateReport, cp: &EstimateReport, variance: f64) -> Result<EstimateReport> {
    if ap.kind != EstimatorKind::Ap || cp.kind != EstimatorKind::Cp {
        return Err(Error::ShapeMismatch(format!("expected ap and cp reports, got {} and {}", ap.kind, cp.kind)));
    }
    if ap.j != cp.j || ap.s != cp.s {
        return Err(Error::ShapeMismatch("ap and cp reports differ in level or spin".into()));
    }
    if !(variance > 0.0) {
        return Err(Error::NonpositiveVariance(variance));
    }
    let mut meta = cp.meta.clone();
    for w in &ap.meta.warnings {
        if !meta.warnings.contains(w) {
            meta.warnings.push(w.clone());
        }
    }
    Ok(EstimateReport::new(ap.j, ap.s, EstimatorKind::Hausman, cp.value - ap.value, 0.0, variance, meta))
}

/// AP, CP and the Hausman statistic from one channel analysis.
#[derive(Clone, Debug)]
pub struct HausmanEstimate {
    pub ap: EstimateReport,
    pub cp: EstimateReport,
    pub statistic: EstimateReport,
    /// `|(CP - AP) - pairwise form| / max(|AP|, |CP|)`.
    pub identity_residual: f64,
}

/// Runs AP and CP, estimates the variance of their difference by
/// subsampling, and checks the pairwise-difference identity.
pub fn estimate_hausman<T: Real>(channels: &ChannelCoefficients<T>, signal: &PowerSpectrumModel, options: ApOptions) -> Result<HausmanEstimate> {
    channels.check(2)?;
    let ap = estimate_ap(channels, signal, options)?;
    let cp = estimate_cp(channels, signal)?;
    let ap_terms = channels.ap_terms(options.noise_bias_scale)?;
    let (cp_terms, _) = channels.cp_terms();
    let q: Vec<f64> = cp_terms.iter().zip(&ap_terms).map(|(c, a)| c - a).collect();
    let diff = full_sky_report(channels, &q, EstimatorKind::Hausman, 0.0, channels.meta());
    let pairwise = hausman_from_differences(channels, options)?;
    let scale = ap.value.abs().max(cp.value.abs()).max(f64::MIN_POSITIVE);
    let identity_residual = ((cp.value - ap.value) - pairwise).abs() / scale;
    let mut statistic = if diff.variance_estimate > 0.0 {
        hausman_statistic(&ap, &cp, diff.variance_estimate)?
    } else {
        let mut meta = diff.meta.clone();
        meta.warnings.extend(ap.meta.warnings.iter().cloned());
        meta.warnings.dedup();
        EstimateReport::new(ap.j, ap.s, EstimatorKind::Hausman, cp.value - ap.value, 0.0, 0.0, meta)
    };
    if identity_residual > IDENTITY_TOLERANCE {
        statistic
            .meta
            .warnings
            .push(format!("pairwise identity residual {identity_residual:e}"));
    }
    Ok(HausmanEstimate {
        ap,
        cp,
        statistic,
        identity_residual,
    })
}

/// `CP - AP` through pairwise differences,
/// `(1/(D(D-1))) Σ_k [(D-1) Σ_r E|β_{jk;sN_r}|² - Σ_{r1<r2} |β_{jk;r1} - β_{jk;r2}|²]`,
/// which does not depend on the signal.
pub fn hausman_from_differences<T: Real>(channels: &ChannelCoefficients<T>, options: ApOptions) -> Result<f64> {
    channels.check(2)?;
    let d = channels.channels.len();
    let bias: f64 = channels.bias_densities(options.noise_bias_scale)?.iter().sum();
    let weights = channels.weights();
    let mut acc = NeumaierSum::new();
    for (k, &w) in weights.iter().enumerate() {
        acc.add((d - 1) as f64 * bias * w);
        for r1 in 0..d {
            for r2 in r1 + 1..d {
                let diff = channels.channels[r1].values[k] - channels.channels[r2].values[k];
                acc.add(-to_f64(diff.norm_sqr()));
            }
        }
    }
    Ok(acc.value() / (d * (d - 1)) as f64)
}
