//! Run configuration files: TOML with one section per pipeline stage.
//!
//! Every value has a default, so a file only needs what it changes, and
//! command-line flags override file values. [`RunConfig::canonical`] prints
//! the fully resolved configuration, which parses back to itself.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spinlet::estimators::EstimatorKind;
use spinlet::field::{ComponentKind, PowerSpectrumModel};
use spinlet::mc::{ExperimentPlan, MaskSpec, NoiseSpec, RegionSpec, Standardization};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub spin: i64,
    pub band_limit: usize,
    pub alpha: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            spin: 2,
            band_limit: 64,
            alpha: 3.0,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub channels: usize,
    pub gamma: f64,
    pub amplitudes: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            channels: 0,
            gamma: 2.5,
            amplitudes: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedletSection {
    pub bandwidth: f64,
    pub smoothness_order: u32,
    /// Empty means every level whose window fits under the band limit.
    pub levels: Vec<u32>,
}

impl Default for NeedletSection {
    fn default() -> Self {
        Self {
            bandwidth: 2.0,
            smoothness_order: 1,
            levels: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    PolarCap,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    #[serde(rename = "type")]
    pub kind: MaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sky_fraction: Option<f64>,
    /// Mask file path; `{j}` is replaced by the level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Guard radius `ε = epsilon_scale · B^{-j}`.
    pub epsilon_scale: f64,
    pub regions: RegionSpec,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::None,
            radius: None,
            sky_fraction: None,
            path: None,
            epsilon_scale: 0.0,
            regions: RegionSpec::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub kinds: Vec<EstimatorKind>,
    pub noise_bias_scale: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            kinds: vec![EstimatorKind::Masked],
            noise_bias_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub replicates: usize,
    /// Zero means as many as `replicates`.
    pub calibration_replicates: usize,
    pub standardization: Standardization,
    pub region_power_factor: f64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            replicates: 100,
            calibration_replicates: 0,
            standardization: Standardization::Calibration,
            region_power_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSection,
    pub noise: NoiseSection,
    pub needlet: NeedletSection,
    pub mask: MaskSection,
    pub estimate: EstimateSection,
    pub mc: McSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn signal_model(&self) -> Result<PowerSpectrumModel> {
        Ok(PowerSpectrumModel::power_law(self.field.alpha, self.field.amplitude, 1, ComponentKind::Signal)?)
    }

    pub fn noise_models(&self) -> Result<Vec<PowerSpectrumModel>> {
        let n = &self.noise;
        if n.channels == 0 {
            return Ok(Vec::new());
        }
        if n.amplitudes.len() != 1 && n.amplitudes.len() != n.channels {
            bail!("invalid config field `noise.amplitudes`: give one amplitude or one per channel");
        }
        (0..n.channels)
            .map(|r| {
                let g = n.amplitudes[r.min(n.amplitudes.len() - 1)];
                Ok(PowerSpectrumModel::power_law(n.gamma, g, 1, ComponentKind::Noise)?)
            })
            .collect()
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        Ok(match self.mask.kind {
            MaskKind::None => MaskSpec::None,
            MaskKind::PolarCap => MaskSpec::PolarCap {
                radius: self.mask.radius,
                sky_fraction: self.mask.sky_fraction,
            },
            MaskKind::File => bail!("invalid config field `mask.type`: file masks are not available in Monte Carlo plans"),
        })
    }

    /// The Monte Carlo plan this configuration describes.
    pub fn plan(&self) -> Result<ExperimentPlan> {
        let noise = (self.noise.channels > 0).then(|| NoiseSpec {
            gamma: self.noise.gamma,
            channels: self.noise.channels,
            amplitudes: self.noise.amplitudes.clone(),
        });
        Ok(ExperimentPlan {
            bandwidth: self.needlet.bandwidth,
            smoothness_order: self.needlet.smoothness_order,
            spin: self.field.spin,
            levels: self.needlet.levels.clone(),
            band_limit: None,
            alpha: self.field.alpha,
            amplitude: self.field.amplitude,
            noise,
            mask: self.mask_spec()?,
            epsilon_scale: self.mask.epsilon_scale,
            regions: self.mask.regions,
            region_power_factor: self.mc.region_power_factor,
            noise_bias_scale: self.estimate.noise_bias_scale,
            replicates: self.mc.replicates,
            calibration_replicates: (self.mc.calibration_replicates > 0).then_some(self.mc.calibration_replicates),
            seed: self.field.seed,
            kinds: self.estimate.kinds.clone(),
            standardization: self.mc.standardization,
        })
    }
}

/// Parses `a..b` (inclusive), `a..=b` or a comma-separated list.
pub fn parse_levels(text: &str) -> Result<Vec<u32>> {
    let text = text.trim();
    let levels: Vec<u32> = if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty level range `{text}`");
        }
        (a..=b).collect()
    } else {
        text.split(',').map(|t| t.trim().parse::<u32>()).collect::<std::result::Result<_, _>>()?
    };
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_is_idempotent() {
        let text = "[field]\nspin = 0\n[mask]\ntype = \"polar_cap\"\nsky_fraction = 0.1\n[estimate]\nkinds = [\"masked\", \"ap\"]\n";
        let once = RunConfig::parse(text).unwrap().canonical();
        let twice = RunConfig::parse(&once).unwrap().canonical();
        assert_eq!(once, twice);
        assert_eq!(RunConfig::parse(&once).unwrap().field.spin, 0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::parse("[field]\nspin = 2\nalhpa = 3.0\n").unwrap_err().to_string();
        assert!(err.contains("alhpa") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn level_syntax() {
        assert_eq!(parse_levels("2..6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_levels("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_levels("1, 4").unwrap(), vec![1, 4]);
        assert!(parse_levels("5..2").is_err());
    }
}
