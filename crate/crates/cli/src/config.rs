//! Run configuration: TOML file, overridden field by field from the command line.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use speclidar::pipeline::{Mode, ReconParams, SensorParams};
use speclidar::sensor::{SpotParams, TimingModel};

/// Detection settings for the histogram path. Timing comes from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensing {
    pub fa_probability: f64,
    pub abs_threshold: f64,
    pub spot: SpotParams,
}

impl Default for Sensing {
    fn default() -> Self {
        let p = SensorParams::default();
        Self { fa_probability: p.fa_probability, abs_threshold: p.abs_threshold, spot: p.spot }
    }
}

impl Sensing {
    pub fn params(&self, timing: TimingModel) -> SensorParams {
        SensorParams { timing, fa_probability: self.fa_probability, abs_threshold: self.abs_threshold, spot: self.spot }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a scene file, or `bundled:NAME`.
    pub scene: Option<String>,
    pub mode: Mode,
    /// Recover spots from simulated histograms instead of using ideal spots.
    pub sensor: bool,
    /// Ignore the scene's `[noise]` perturbation.
    pub ideal: bool,
    pub seed: Option<u64>,
    /// Overrides the scene's detection floor.
    pub detection_floor: Option<f64>,
    pub out: Option<PathBuf>,
    pub recon: ReconParams,
    pub sensing: Sensing,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config {}", path.display()))
    }
}
