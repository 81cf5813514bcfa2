//! Complete model configuration with JSON round-tripping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::early_vision::EarlyVisionConfig;
use crate::error::{Error, Result};
use crate::lptc::LptcBankConfig;
use crate::stmd::StmdConfig;
use crate::synthgen::CalibrationStimulus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Multiplier applied to raw gray levels before the retina. The
    /// correlator is quadratic in luminance while the feedback subtraction
    /// is linear in the correlator output, so this sets how strongly the
    /// feedback acts relative to the channels. At unit gain the loop
    /// diverges on textured scenes moving at a few hundred px/s.
    pub input_gain: f64,
    pub early_vision: EarlyVisionConfig,
    pub stmd: StmdConfig,
    pub lptc: LptcBankConfig,
    pub calibration: CalibrationStimulus,
}

pub const DEFAULT_INPUT_GAIN: f64 = 0.1;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_gain: DEFAULT_INPUT_GAIN,
            early_vision: EarlyVisionConfig::default(),
            stmd: StmdConfig::default(),
            lptc: LptcBankConfig::default(),
            calibration: CalibrationStimulus::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_gain > 0.0 && self.input_gain.is_finite()) {
            return Err(Error::param(format!(
                "input gain must be positive, got {}",
                self.input_gain
            )));
        }
        self.early_vision.validate()?;
        self.stmd.validate()?;
        self.lptc.validate()
    }

    /// Frame step in ms.
    pub fn dt(&self) -> f64 {
        self.early_vision.dt
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
