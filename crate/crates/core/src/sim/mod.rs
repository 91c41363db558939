//! Ground-truthed scenario generator.
//!
//! Trajectories are sums of sinusoids in a warped time that starts with a
//! static lead-in, so every derivative is available in closed form. IMU
//! samples and corner detections are synthesized from the analytic truth
//! with configurable noise, biases, dropout and blackouts.

mod presets;
mod synth;
mod trajectory;

use thiserror::Error;

pub use presets::{preset, Scenario, PRESET_NAMES};
pub use synth::{
    camera_pose, ideal_imu, merge_events, visible_corners, synth_detections, synth_imu, CameraFrame, SceneSpec, SceneTag, SensorSpec,
    SimOutput,
};
pub use trajectory::{truth, Sinusoid, TrajectorySpec, TruthSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time {t} outside the trajectory duration {duration}")]
    OutOfRange { t: f64, duration: f64 },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
