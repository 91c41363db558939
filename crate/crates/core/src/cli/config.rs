use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::camera::RadTanDistortion;
use crate::ekf::FilterConfig;
use crate::geometry::PoseRecord;
use crate::sim::SceneTag;

/// Everything `run` and `eval` need besides the measurement log. Numbers
/// are SI, quaternions `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub filter: FilterConfig,
    /// Applied to tag records flagged `"undistorted": false`.
    #[serde(default)]
    pub distortion: Option<RadTanDistortion>,
    #[serde(default)]
    pub seed: u64,
    /// Ground truth of a simulated log.
    #[serde(default)]
    pub scenario: Option<ScenarioTruth>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub mocap: MocapNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTruth {
    /// Preset or scenario name plus seed; `eval` refuses to compare runs
    /// and truth with different ids.
    pub id: String,
    pub name: String,
    pub tags: Vec<SceneTag>,
    /// `_B r_BV`, `q_BV`
    pub extrinsics: PoseRecord,
}

/// Pass/fail limits for `eval`; `null` disables a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Largest final inter-tag distance error, m.
    pub tag_distance: Option<f64>,
    /// Largest final inter-tag relative rotation error, rad.
    pub tag_rotation: Option<f64>,
    pub position_rmse: Option<f64>,
    pub orientation_rmse: Option<f64>,
    pub loop_relative_error: Option<f64>,
    /// Absence after which a reobservation counts as a loop closure, s.
    pub loop_min_gap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tag_distance: Some(0.005),
            tag_rotation: Some(0.3f64.to_radians()),
            position_rmse: Some(0.02),
            orientation_rmse: Some(3f64.to_radians()),
            loop_relative_error: Some(0.02),
            loop_min_gap: 30.0,
        }
    }
}

/// Noise of the motion-capture stand-in used for the finite-difference
/// velocity baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MocapNoise {
    pub position_sigma: f64,
    pub rotation_sigma: f64,
    pub rate: f64,
}

impl Default for MocapNoise {
    fn default() -> Self {
        Self { position_sigma: 5e-4, rotation_sigma: 0.05f64.to_radians(), rate: 100.0 }
    }
}

impl RunConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            distortion: None,
            seed: 0,
            scenario: None,
            thresholds: Thresholds::default(),
            mocap: MocapNoise::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.filter.validate().map_err(|e| CliError::Data(format!("invalid filter config: {e}")))?;
        if let Some(d) = &self.distortion {
            d.validate(&self.filter.intrinsics).map_err(|e| CliError::Data(e.to_string()))?;
        }
        let m = &self.mocap;
        if !(m.position_sigma >= 0.0 && m.rotation_sigma >= 0.0 && m.rate > 0.0) {
            return Err(CliError::Data("mocap noise must be non-negative with a positive rate".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
