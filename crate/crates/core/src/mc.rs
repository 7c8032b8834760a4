//! Monte Carlo experiments: replicate generation, standardization and
//! normality and scaling diagnostics.
//!
//! Replicate `r` draws everything from `derived_seed(seed, domain, r)`, so the
//! raw table is the same for any schedule or thread count. Statistics are
//! standardized by default with the sample variance of an independent
//! calibration run drawn from a disjoint seed domain.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_asymmetry, estimate_hausman, estimate_masked, estimate_unfeasible, ApOptions, ChannelCoefficients,
    EstimateReport, EstimatorKind,
};
use crate::field::{draw_total, observe_channels, synthesize_grid, ComponentKind, PowerSpectrumModel, SpinAlm};
use crate::grid::{hemispheres, level_degree, CubatureGrid, RegionPair, SkyMask};
use crate::rng::derived_seed;
use crate::transform::{masked_analyze, needlet_analyze};
use crate::window::NeedletWindow;

const DOMAIN_MAIN: u64 = 1;
const DOMAIN_CALIBRATION: u64 = 2;
const DOMAIN_INJECTION: u64 = 3;

/// Fewest replicates for which normality diagnostics are computed.
pub const MIN_NORMALITY_SAMPLES: usize = 100;
/// Fraction of failed replicates above which a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSpec {
    None,
    /// North polar cap given by angular radius or by sky fraction.
    PolarCap {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sky_fraction: Option<f64>,
    },
}

impl MaskSpec {
    fn radius(&self) -> Result<Option<f64>> {
        match *self {
            Self::None => Ok(None),
            Self::PolarCap {
                radius: Some(r),
                sky_fraction: None,
            } if r > 0.0 && r < std::f64::consts::PI => Ok(Some(r)),
            Self::PolarCap {
                radius: None,
                sky_fraction: Some(f),
            } if f > 0.0 && f < 1.0 => Ok(Some((1.0 - 2.0 * f).acos())),
            _ => Err(invalid("mask", "polar_cap needs exactly one of radius in (0, π) or sky_fraction in (0, 1)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSpec {
    None,
    /// Northern and southern hemispheres.
    Hemispheres,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// Sample variance of an independent calibration run.
    Calibration,
    /// Each replicate's own subsampling variance.
    Subsampling,
}

/// Noise channels: `D` channels with spectra `amplitude_r · l^{-gamma}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub gamma: f64,
    pub channels: usize,
    /// One amplitude shared by all channels, or one per channel.
    pub amplitudes: Vec<f64>,
}

impl NoiseSpec {
    fn models(&self) -> Result<Vec<PowerSpectrumModel>> {
        if self.amplitudes.len() != 1 && self.amplitudes.len() != self.channels {
            return Err(invalid("noise.amplitudes", "give one amplitude or one per channel"));
        }
        (0..self.channels)
            .map(|r| {
                let g = self.amplitudes[r.min(self.amplitudes.len() - 1)];
                PowerSpectrumModel::power_law(self.gamma, g, 1, ComponentKind::Noise)
                    .map_err(|e| invalid("noise", &e.to_string()))
            })
            .collect()
    }
}

fn default_smoothness() -> u32 {
    1
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_one() -> f64 {
    1.0
}

fn default_standardization() -> Standardization {
    Standardization::Calibration
}

fn default_mask() -> MaskSpec {
    MaskSpec::None
}

fn default_regions() -> RegionSpec {
    RegionSpec::None
}

/// A Monte Carlo experiment.
///
/// The field at level `j` is band-limited at `min(band_limit, N_j)` where
/// `N_j` is the degree the level's grid is built for; masked and map-based
/// statistics see only the signal, AP/CP/Hausman see signal plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub bandwidth: f64,
    #[serde(default = "default_smoothness")]
    pub smoothness_order: u32,
    pub spin: i64,
    pub levels: Vec<u32>,
    /// Harmonic band limit `L`; defaults to the largest level's grid degree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_limit: Option<usize>,
    pub alpha: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "default_mask")]
    pub mask: MaskSpec,
    /// Guard radius `ε = epsilon_scale · B^{-j}`.
    #[serde(default)]
    pub epsilon_scale: f64,
    #[serde(default = "default_regions")]
    pub regions: RegionSpec,
    /// Power multiplier on the first region, realized by replacing the field
    /// there with an independent draw scaled by its square root.
    #[serde(default = "default_one")]
    pub region_power_factor: f64,
    /// Multiplier on the noise bias assumed by AP and Hausman.
    #[serde(default = "default_one")]
    pub noise_bias_scale: f64,
    pub replicates: usize,
    /// Calibration replicates; defaults to `replicates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_replicates: Option<usize>,
    pub seed: u64,
    pub kinds: Vec<EstimatorKind>,
    #[serde(default = "default_standardization")]
    pub standardization: Standardization,
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::InvalidPlan {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentPlan {
    /// Plan with no noise, mask or regions.
    pub fn new(bandwidth: f64, spin: i64, levels: Vec<u32>, alpha: f64, replicates: usize, seed: u64, kinds: Vec<EstimatorKind>) -> Self {
        Self {
            bandwidth,
            smoothness_order: 1,
            spin,
            levels,
            band_limit: None,
            alpha,
            amplitude: 1.0,
            noise: None,
            mask: MaskSpec::None,
            epsilon_scale: 0.0,
            regions: RegionSpec::None,
            region_power_factor: 1.0,
            noise_bias_scale: 1.0,
            replicates,
            calibration_replicates: None,
            seed,
            kinds,
            standardization: Standardization::Calibration,
        }
    }

    fn level_band_limit(&self, j: u32) -> usize {
        let n = level_degree(j, self.bandwidth);
        self.band_limit.map_or(n, |l| l.min(n))
    }

    fn max_band_limit(&self) -> usize {
        self.levels.iter().map(|&j| self.level_band_limit(j)).max().unwrap_or(0)
    }

    fn needs(&self, kind: EstimatorKind) -> bool {
        self.kinds.contains(&kind)
    }

    fn needs_channels(&self) -> bool {
        self.needs(EstimatorKind::Ap) || self.needs(EstimatorKind::Cp) || self.needs(EstimatorKind::Hausman)
    }

    pub fn calibration_count(&self) -> usize {
        match self.standardization {
            Standardization::Calibration => self.calibration_replicates.unwrap_or(self.replicates),
            Standardization::Subsampling => 0,
        }
    }

    /// Checks the plan without running anything.
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 1.0) || !self.bandwidth.is_finite() {
            return Err(invalid("bandwidth", "must be a finite number greater than 1"));
        }
        if self.smoothness_order < 1 {
            return Err(invalid("smoothness_order", "must be at least 1"));
        }
        if self.levels.is_empty() {
            return Err(invalid("levels", "at least one level is required"));
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return Err(invalid("levels", "levels must be distinct"));
        }
        if self.levels.iter().any(|&j| j > 12) {
            return Err(invalid("levels", "levels above 12 are out of range"));
        }
        let window = NeedletWindow::<f64>::build(self.bandwidth, self.smoothness_order).map_err(|e| invalid("bandwidth", &e.to_string()))?;
        for &j in &self.levels {
            let support = window.support(j, self.spin);
            if !support.is_empty() && support.l_max > self.level_band_limit(j) {
                return Err(invalid(
                    "band_limit",
                    &format!("level {j} needs degrees up to {}, band limit is {}", support.l_max, self.level_band_limit(j)),
                ));
            }
        }
        if !(self.alpha > 2.0) {
            return Err(invalid("alpha", "must exceed 2"));
        }
        if !(self.amplitude > 0.0) {
            return Err(invalid("amplitude", "must be positive"));
        }
        if self.kinds.is_empty() {
            return Err(invalid("kinds", "at least one estimator kind is required"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be positive"));
        }
        if self.standardization == Standardization::Calibration && self.calibration_count() < 2 {
            return Err(invalid("calibration_replicates", "calibration needs at least 2 replicates"));
        }
        self.mask.radius()?;
        if !(self.epsilon_scale >= 0.0) {
            return Err(invalid("epsilon_scale", "must be non-negative"));
        }
        if !(self.noise_bias_scale >= 0.0) {
            return Err(invalid("noise_bias_scale", "must be non-negative"));
        }
        if !(self.region_power_factor > 0.0) {
            return Err(invalid("region_power_factor", "must be positive"));
        }
        if self.needs(EstimatorKind::Asymmetry) && self.regions == RegionSpec::None {
            return Err(invalid("regions", "the asymmetry statistic needs a region pair"));
        }
        if self.region_power_factor != 1.0 && self.regions == RegionSpec::None {
            return Err(invalid("region_power_factor", "needs a region pair"));
        }
        if self.needs_channels() {
            let noise = self.noise.as_ref().ok_or_else(|| invalid("noise", "ap, cp and hausman need noise channels"))?;
            if noise.channels < 2 {
                return Err(invalid("noise.channels", "at least 2 channels are required"));
            }
            noise.models()?;
        }
        Ok(())
    }
}

/// Statistic labels in the raw table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Masked,
    Unfeasible,
    RegionA1,
    RegionA2,
    Asymmetry,
    Ap,
    Cp,
    Hausman,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Masked => "masked",
            Self::Unfeasible => "unfeasible",
            Self::RegionA1 => "region_a1",
            Self::RegionA2 => "region_a2",
            Self::Asymmetry => "asymmetry",
            Self::Ap => "ap",
            Self::Cp => "cp",
            Self::Hausman => "hausman",
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One statistic of one replicate at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub replicate: usize,
    pub j: u32,
    pub kind: Statistic,
    pub value: f64,
    pub target: f64,
    /// Variance used to standardize.
    pub variance: f64,
    pub standardized: Option<f64>,
    /// The replicate's own subsampling variance.
    #[serde(skip)]
    pub subsampling_variance: f64,
}

pub const RAW_CSV_HEADER: &str = "replicate,j,kind,value,target,variance,standardized";

/// Writes the raw table as CSV. Floats use the shortest round-trip form.
pub fn write_raw_csv<W: Write>(rows: &[RawRow], mut out: W) -> Result<()> {
    writeln!(out, "{RAW_CSV_HEADER}")?;
    for r in rows {
        let z = r.standardized.map(|z| z.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{},{}", r.replicate, r.j, r.kind, r.value, r.target, r.variance, z)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normality {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance to the standard normal distribution.
    pub ks: f64,
}

/// Moments and KS distance to `N(0, 1)`. Skewness and kurtosis are 0 for
/// constant samples.
pub fn normality_diagnostics(samples: &[f64]) -> Result<Normality> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n,
            needed: MIN_NORMALITY_SAMPLES,
        });
    }
    let nf = n as f64;
    let mean = crate::sum::compensated_sum(samples.iter().copied()) / nf;
    let central = |p: i32| crate::sum::compensated_sum(samples.iter().map(|x| (x - mean).powi(p))) / nf;
    let m2 = central(2);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (central(3) / m2.powf(1.5), central(4) / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let normal = Normal::standard();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        ks = ks.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(Normality {
        n,
        mean,
        variance: m2 * nf / (nf - 1.0),
        skewness,
        excess_kurtosis,
        ks: ks.clamp(0.0, 1.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
    pub intercept: f64,
}

/// Least-squares slope of `ln Var_j` against `j`.
pub fn fit_variance_slope(table: &[(u32, f64)]) -> Result<SlopeFit> {
    if table.len() < 4 {
        return Err(Error::TooFewLevels(table.len()));
    }
    if let Some(&(_, v)) = table.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonpositiveVariance(v));
    }
    let n = table.len() as f64;
    let xs: Vec<f64> = table.iter().map(|&(j, _)| j as f64).collect();
    let ys: Vec<f64> = table.iter().map(|&(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewLevels(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        std_error: (ssr / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

/// Lag-1 sample autocorrelation of a series.
pub fn lag1_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let den: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = series.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    num / den
}

fn sample_mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::sum::compensated_sum(xs.iter().copied()) / n;
    let var = if xs.len() > 1 {
        crate::sum::compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Summary of one statistic at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsEntry {
    pub j: u32,
    pub kind: Statistic,
    pub replicates: usize,
    pub target: f64,
    pub value_mean: f64,
    pub value_variance: f64,
    /// Standard error of `value_mean`.
    pub value_std_error: f64,
    /// Variance used for standardization (calibration sample variance or mean subsampling variance).
    pub standardizing_variance: f64,
    pub mean_subsampling_variance: f64,
    /// `mean_subsampling_variance / value_variance`.
    pub subsampling_ratio: Option<f64>,
    pub lag1_autocorrelation: f64,
    /// Diagnostics of the standardized statistic.
    pub normality: Option<Normality>,
    /// Diagnostics of the statistic standardized by each replicate's own subsampling variance.
    pub subsampling_normality: Option<Normality>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub kind: Statistic,
    pub levels: Vec<u32>,
    pub fit: SlopeFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub plan: ExperimentPlan,
    pub entries: Vec<DiagnosticsEntry>,
    /// Slope of `ln` of the replicate variance of each statistic across levels.
    pub slopes: Vec<SlopeEntry>,
    /// Sample correlation of the standardized region estimates, per level.
    pub region_correlation: BTreeMap<u32, f64>,
    /// Largest per-replicate residual of the pairwise Hausman identity.
    pub max_identity_residual: Option<f64>,
    pub failed_replicates: usize,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn entry(&self, j: u32, kind: Statistic) -> Option<&DiagnosticsEntry> {
        self.entries.iter().find(|e| e.j == j && e.kind == kind)
    }

    pub fn slope(&self, kind: Statistic) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.kind == kind).map(|s| &s.fit)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<RawRow>,
    pub diagnostics: DiagnosticsReport,
}

struct LevelSetup {
    j: u32,
    band_limit: usize,
    grid: Arc<CubatureGrid<f64>>,
    mask: SkyMask<f64>,
    regions: Option<RegionPair<f64>>,
    // pixels whose field is replaced by the injected draw
    injected: Option<Vec<bool>>,
}

struct Context {
    plan: ExperimentPlan,
    window: Arc<NeedletWindow<f64>>,
    signal: PowerSpectrumModel,
    noise: Vec<PowerSpectrumModel>,
    levels: Vec<LevelSetup>,
    max_band_limit: usize,
}

impl Context {
    fn new(plan: &ExperimentPlan) -> Result<Self> {
        plan.validate()?;
        let window = Arc::new(NeedletWindow::build(plan.bandwidth, plan.smoothness_order)?);
        let signal = PowerSpectrumModel::power_law(plan.alpha, plan.amplitude, 1, ComponentKind::Signal)?;
        let noise = match &plan.noise {
            Some(n) if plan.needs_channels() => n.models()?,
            _ => Vec::new(),
        };
        let radius = plan.mask.radius()?;
        let mut levels = Vec::new();
        for &j in &plan.levels {
            let grid = Arc::new(CubatureGrid::build(j, plan.bandwidth)?);
            let epsilon = plan.epsilon_scale * plan.bandwidth.powi(-(j as i32));
            let mask = match radius {
                Some(r) => SkyMask::polar_cap(grid.clone(), r, epsilon)?,
                None => SkyMask::empty(grid.clone()),
            };
            let regions = match plan.regions {
                RegionSpec::None => None,
                RegionSpec::Hemispheres => Some(hemispheres(&grid, epsilon)),
            };
            let injected = match (&regions, plan.region_power_factor != 1.0) {
                (Some(r), true) => Some(r.a1.clone()),
                _ => None,
            };
            levels.push(LevelSetup {
                j,
                band_limit: plan.level_band_limit(j),
                grid,
                mask,
                regions,
                injected,
            });
        }
        Ok(Self {
            max_band_limit: plan.max_band_limit(),
            plan: plan.clone(),
            window,
            signal,
            noise,
            levels,
        })
    }

    fn replicate(&self, domain: u64, r: usize) -> Result<(Vec<Sample>, f64)> {
        let plan = &self.plan;
        let seed = derived_seed(plan.seed, domain, r as u64);
        let s = plan.spin;
        let alm: SpinAlm<f64> = draw_total(&self.signal, s, self.max_band_limit, seed);
        let injection: Option<SpinAlm<f64>> = self.levels.iter().any(|l| l.injected.is_some()).then(|| {
            let seed2 = derived_seed(plan.seed, DOMAIN_INJECTION + domain * 16, r as u64);
            draw_total(&self.signal, s, self.max_band_limit, seed2)
        });
        let channels = if plan.needs_channels() {
            Some(observe_channels(&alm, &self.noise, seed)?)
        } else {
            None
        };
        let opts = ApOptions {
            noise_bias_scale: plan.noise_bias_scale,
        };
        let mut out = Vec::new();
        let mut worst_identity = 0.0f64;
        for level in &self.levels {
            let j = level.j;
            let alm_j = alm.with_band_limit(level.band_limit);
            let map_based = plan.needs(EstimatorKind::Masked) || plan.needs(EstimatorKind::Asymmetry);
            let push = |out: &mut Vec<Sample>, kind: Statistic, rep: &EstimateReport| {
                out.push(Sample {
                    j,
                    kind,
                    value: rep.value,
                    target: rep.theoretical_target,
                    subsampling_variance: rep.variance_estimate,
                })
            };
            if map_based || plan.needs(EstimatorKind::Unfeasible) {
                let mut map = synthesize_grid(&alm_j, &level.grid);
                if let (Some(inj), Some(a1)) = (&injection, &level.injected) {
                    let extra = synthesize_grid(&inj.with_band_limit(level.band_limit), &level.grid);
                    let scale = plan.region_power_factor.sqrt();
                    for (k, v) in map.iter_mut().enumerate() {
                        if a1[k] {
                            *v = extra[k] * scale;
                        }
                    }
                }
                if plan.needs(EstimatorKind::Masked) {
                    let coeffs = masked_analyze(&map, &level.mask, &self.window, s, j)?;
                    push(&mut out, Statistic::Masked, &estimate_masked(&coeffs, &level.mask, &self.signal)?);
                }
                if plan.needs(EstimatorKind::Unfeasible) {
                    let coeffs = needlet_analyze(&alm_j, &self.window, &level.grid, j)?;
                    push(&mut out, Statistic::Unfeasible, &estimate_unfeasible(&coeffs, &level.mask, &self.signal)?);
                }
                if plan.needs(EstimatorKind::Asymmetry) {
                    let regions = level.regions.as_ref().expect("validated");
                    let coeffs = masked_analyze(&map, &level.mask, &self.window, s, j)?;
                    let a = estimate_asymmetry(&coeffs, regions, &self.signal)?;
                    push(&mut out, Statistic::RegionA1, &a.a1);
                    push(&mut out, Statistic::RegionA2, &a.a2);
                    push(&mut out, Statistic::Asymmetry, &a.difference);
                }
            }
            if let Some(set) = &channels {
                let set_j = set.with_band_limit(level.band_limit);
                let coeffs = ChannelCoefficients {
                    channels: (0..set_j.len())
                        .map(|r| needlet_analyze(&set_j.channel(r), &self.window, &level.grid, j))
                        .collect::<Result<Vec<_>>>()?,
                    noise_models: set_j.noise_models.clone(),
                };
                let h = estimate_hausman(&coeffs, &self.signal, opts)?;
                worst_identity = worst_identity.max(h.identity_residual);
                if plan.needs(EstimatorKind::Ap) {
                    push(&mut out, Statistic::Ap, &h.ap);
                }
                if plan.needs(EstimatorKind::Cp) {
                    push(&mut out, Statistic::Cp, &h.cp);
                }
                if plan.needs(EstimatorKind::Hausman) {
                    push(&mut out, Statistic::Hausman, &h.statistic);
                }
            }
        }
        Ok((out, worst_identity))
    }

    fn run(&self, domain: u64, count: usize) -> Result<(Vec<(usize, Vec<Sample>)>, usize, f64)> {
        let results: Vec<(usize, Result<(Vec<Sample>, f64)>)> =
            (0..count).into_par_iter().map(|r| (r, self.replicate(domain, r))).collect();
        let mut ok = Vec::with_capacity(count);
        let mut failed = 0;
        let mut first = None;
        let mut worst = 0.0f64;
        for (r, res) in results {
            match res {
                Ok((samples, identity)) => {
                    worst = worst.max(identity);
                    ok.push((r, samples));
                }
                Err(e) => {
                    failed += 1;
                    first.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed as f64 > MAX_FAILURE_FRACTION * count as f64 {
            return Err(Error::ReplicateFailures {
                failed,
                total: count,
                first: first.unwrap_or_default(),
            });
        }
        Ok((ok, failed, worst))
    }
}

struct Sample {
    j: u32,
    kind: Statistic,
    value: f64,
    target: f64,
    subsampling_variance: f64,
}

/// Runs `plan` on the current rayon pool.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let ctx = Context::new(plan)?;
    let mut warnings = Vec::new();
    for level in &ctx.levels {
        if ctx.window.support(level.j, plan.spin).is_empty() {
            warnings.push(format!("empty window support at j={}: all statistics are zero", level.j));
        }
    }

    let (main, failed_main, worst_main) = ctx.run(DOMAIN_MAIN, plan.replicates)?;
    let (calibration, failed_cal, worst_cal) = ctx.run(DOMAIN_CALIBRATION, plan.calibration_count())?;
    if failed_main + failed_cal > 0 {
        warnings.push(format!("{} main and {} calibration replicates failed", failed_main, failed_cal));
    }

    let mut calibration_var: BTreeMap<(u32, Statistic), f64> = BTreeMap::new();
    {
        let mut values: BTreeMap<(u32, Statistic), Vec<f64>> = BTreeMap::new();
        for (_, samples) in &calibration {
            for s in samples {
                values.entry((s.j, s.kind)).or_default().push(s.value);
            }
        }
        for (key, v) in &values {
            calibration_var.insert(*key, sample_mean_var(v).1);
        }
        // the asymmetry statistic is standardized by the sum of the region variances
        for &j in &plan.levels {
            if let (Some(a1), Some(a2)) = (
                calibration_var.get(&(j, Statistic::RegionA1)),
                calibration_var.get(&(j, Statistic::RegionA2)),
            ) {
                calibration_var.insert((j, Statistic::Asymmetry), a1 + a2);
            }
        }
    }

    let mut rows = Vec::new();
    for (r, samples) in &main {
        for s in samples {
            let variance = match plan.standardization {
                Standardization::Calibration => calibration_var.get(&(s.j, s.kind)).copied().unwrap_or(0.0),
                Standardization::Subsampling => s.subsampling_variance,
            };
            rows.push(RawRow {
                replicate: *r,
                j: s.j,
                kind: s.kind,
                value: s.value,
                target: s.target,
                variance,
                standardized: (variance > 0.0).then(|| (s.value - s.target) / variance.sqrt()),
                subsampling_variance: s.subsampling_variance,
            });
        }
    }

    let diagnostics = diagnose(plan, &rows, worst_main.max(worst_cal), failed_main, warnings);
    Ok(ExperimentOutput { rows, diagnostics })
}

/// Runs `plan` on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(plan: &ExperimentPlan, threads: usize) -> Result<ExperimentOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidPlan {
            field: "threads".into(),
            reason: e.to_string(),
        })?;
    pool.install(|| run_experiment(plan))
}

fn diagnose(plan: &ExperimentPlan, rows: &[RawRow], worst_identity: f64, failed: usize, mut warnings: Vec<String>) -> DiagnosticsReport {
    let mut groups: BTreeMap<(u32, Statistic), Vec<&RawRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.j, r.kind)).or_default().push(r);
    }
    let mut entries = Vec::new();
    for ((j, kind), group) in &groups {
        let values: Vec<f64> = group.iter().map(|r| r.value).collect();
        let (mean, var) = sample_mean_var(&values);
        let standardized: Vec<f64> = group.iter().filter_map(|r| r.standardized).collect();
        let normality = if standardized.len() == group.len() {
            normality_diagnostics(&standardized).ok()
        } else {
            None
        };
        let own: Vec<f64> = group
            .iter()
            .filter(|r| r.subsampling_variance > 0.0)
            .map(|r| (r.value - r.target) / r.subsampling_variance.sqrt())
            .collect();
        let subsampling_normality = if own.len() == group.len() {
            normality_diagnostics(&own).ok()
        } else {
            None
        };
        let mean_sub = group.iter().map(|r| r.subsampling_variance).sum::<f64>() / group.len() as f64;
        if normality.is_none() && group.len() >= MIN_NORMALITY_SAMPLES {
            warnings.push(format!("j={j} {kind}: no positive standardizing variance"));
        }
        entries.push(DiagnosticsEntry {
            j: *j,
            kind: *kind,
            replicates: group.len(),
            target: group[0].target,
            value_mean: mean,
            value_variance: var,
            value_std_error: (var / group.len() as f64).sqrt(),
            standardizing_variance: group.iter().map(|r| r.variance).sum::<f64>() / group.len() as f64,
            mean_subsampling_variance: mean_sub,
            subsampling_ratio: (var > 0.0).then(|| mean_sub / var),
            lag1_autocorrelation: lag1_autocorrelation(&values),
            normality,
            subsampling_normality,
        });
    }
    if plan.replicates < MIN_NORMALITY_SAMPLES {
        warnings.push(format!("{} replicates: normality diagnostics need at least {MIN_NORMALITY_SAMPLES}", plan.replicates));
    }

    let mut slopes = Vec::new();
    if plan.levels.len() >= 4 {
        let kinds: Vec<Statistic> = entries.iter().map(|e| e.kind).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for kind in kinds {
            let table: Vec<(u32, f64)> = entries.iter().filter(|e| e.kind == kind).map(|e| (e.j, e.value_variance)).collect();
            match fit_variance_slope(&table) {
                Ok(fit) => slopes.push(SlopeEntry {
                    kind,
                    levels: table.iter().map(|t| t.0).collect(),
                    fit,
                }),
                Err(e) => warnings.push(format!("{kind}: no variance slope: {e}")),
            }
        }
    }

    let mut region_correlation = BTreeMap::new();
    for &j in &plan.levels {
        let (Some(a1), Some(a2)) = (groups.get(&(j, Statistic::RegionA1)), groups.get(&(j, Statistic::RegionA2))) else {
            continue;
        };
        let x: Vec<f64> = a1.iter().map(|r| r.value).collect();
        let y: Vec<f64> = a2.iter().map(|r| r.value).collect();
        let (mx, vx) = sample_mean_var(&x);
        let (my, vy) = sample_mean_var(&y);
        if vx > 0.0 && vy > 0.0 {
            let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
            region_correlation.insert(j, cov / (vx * vy).sqrt());
        }
    }

    DiagnosticsReport {
        plan: plan.clone(),
        entries,
        slopes,
        region_correlation,
        max_identity_residual: plan.needs_channels().then_some(worst_identity),
        failed_replicates: failed,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn normality_of_pseudo_normal_draws() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = normality_diagnostics(&xs).unwrap();
        assert!(d.ks < 0.01, "{d:?}");
        assert!(d.skewness.abs() < 0.03);
        assert!((d.variance - 1.0).abs() < 0.02);
        let shifted: Vec<f64> = xs.iter().take(1000).map(|x| x + 3.0).collect();
        let d = normality_diagnostics(&shifted).unwrap();
        assert!((d.mean - 3.0).abs() < 0.1);
        assert!(d.ks > 0.8);
    }

    #[test]
    fn normality_of_constant_samples() {
        let d = normality_diagnostics(&[0.0; 200]).unwrap();
        assert_eq!(d.variance, 0.0);
        assert!((d.ks - 0.5).abs() < 1e-12);
        assert!(matches!(normality_diagnostics(&[0.0; 99]), Err(Error::TooFewSamples { got: 99, .. })));
    }

    #[test]
    fn slope_fits() {
        let b: f64 = 2.0;
        let exact: Vec<(u32, f64)> = (3..8).map(|j| (j, b.powf(2.0 * (1.0 - 3.0) * j as f64))).collect();
        let fit = fit_variance_slope(&exact).unwrap();
        assert!((fit.slope - 2.0 * (1.0 - 3.0) * b.ln()).abs() < 1e-12);
        assert!(fit.std_error < 1e-10);
        let flat: Vec<(u32, f64)> = (3..8).map(|j| (j, 5.0)).collect();
        assert_eq!(fit_variance_slope(&flat).unwrap().slope, 0.0);
        assert!(matches!(fit_variance_slope(&exact[..3]), Err(Error::TooFewLevels(3))));
    }

    #[test]
    fn plan_validation_names_the_field() {
        let mut plan = ExperimentPlan::new(2.0, 2, vec![], 3.0, 10, 1, vec![EstimatorKind::Masked]);
        let field = |p: &ExperimentPlan| match p.validate() {
            Err(Error::InvalidPlan { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(&plan), "levels");
        plan.levels = vec![3, 3];
        assert_eq!(field(&plan), "levels");
        plan.levels = vec![3];
        plan.band_limit = Some(10);
        assert_eq!(field(&plan), "band_limit");
        plan.band_limit = None;
        plan.kinds = vec![EstimatorKind::Cp];
        assert_eq!(field(&plan), "noise");
        plan.kinds = vec![EstimatorKind::Asymmetry];
        assert_eq!(field(&plan), "regions");
        plan.kinds = vec![EstimatorKind::Masked];
        plan.mask = MaskSpec::PolarCap {
            radius: Some(0.5),
            sky_fraction: Some(0.1),
        };
        assert_eq!(field(&plan), "mask");
        plan.mask = MaskSpec::PolarCap {
            radius: None,
            sky_fraction: Some(0.1),
        };
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn small_run_is_deterministic_across_pools() {
        let mut plan = ExperimentPlan::new(2.0, 2, vec![2, 3], 3.0, 12, 42, vec![EstimatorKind::Masked, EstimatorKind::Unfeasible]);
        plan.mask = MaskSpec::PolarCap {
            radius: Some(0.6),
            sky_fraction: None,
        };
        plan.calibration_replicates = Some(6);
        let csv = |threads| {
            let out = run_experiment_with_threads(&plan, threads).unwrap();
            let mut buf = Vec::new();
            write_raw_csv(&out.rows, &mut buf).unwrap();
            buf
        };
        let a = csv(1);
        assert_eq!(a, csv(3));
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 * 2 * 2);
    }

    #[test]
    fn empty_support_is_flagged() {
        // spin 40 has no degrees inside level 0's window
        let plan = ExperimentPlan::new(2.0, 40, vec![0], 3.0, 5, 1, vec![EstimatorKind::Unfeasible]);
        let out = run_experiment(&plan).unwrap();
        assert!(out.rows.iter().all(|r| r.value == 0.0 && r.standardized.is_none()));
        assert!(out.diagnostics.warnings.iter().any(|w| w.contains("empty window support")));
    }
}
