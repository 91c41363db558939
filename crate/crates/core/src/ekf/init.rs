use serde::{Deserialize, Serialize};

use super::state::{idx, Covariance, FilterState, SENSOR_DIM};
use super::EkfError;
use crate::geometry::{rot_x, rot_y, PoseRecord, Vec3};
use crate::models::ImuSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Number of leading IMU samples used for the static alignment.
    pub static_samples: usize,
    /// Fail with `NotStatic` when a sample's specific force deviates from
    /// gravity by more than `static_tolerance` (relative).
    pub require_static: bool,
    pub static_tolerance: f64,
    /// Take the mean gyro reading of the static window as the initial bias.
    pub estimate_gyro_bias: bool,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
    pub sigma_attitude: f64,
    pub sigma_accel_bias: f64,
    pub sigma_gyro_bias: f64,
    pub sigma_extrinsic_position: f64,
    pub sigma_extrinsic_rotation: f64,
    /// Prior camera pose in the body frame (`_B r_BV`, `q_BV`).
    pub extrinsics: PoseRecord,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            static_samples: 20,
            require_static: true,
            static_tolerance: 0.1,
            estimate_gyro_bias: true,
            sigma_position: 1e-3,
            sigma_velocity: 0.02,
            sigma_attitude: 0.02,
            sigma_accel_bias: 0.05,
            sigma_gyro_bias: 5e-3,
            sigma_extrinsic_position: 0.01,
            sigma_extrinsic_rotation: 0.01,
            extrinsics: PoseRecord {
                position: [0.0; 3],
                orientation: [1.0, 0.0, 0.0, 0.0],
            },
        }
    }
}

/// Static alignment from the leading IMU samples: roll and pitch from the
/// mean specific force, zero yaw, position and velocity.
pub fn initialize(samples: &[ImuSample], cfg: &InitConfig, gravity: f64) -> Result<(FilterState, Covariance), EkfError> {
    let needed = cfg.static_samples.max(1);
    if samples.len() < needed {
        return Err(EkfError::InsufficientData { needed, got: samples.len() });
    }
    let window = &samples[..needed];
    if cfg.require_static {
        for s in window {
            let dev = (s.accel.norm() - gravity).abs() / gravity;
            if dev > cfg.static_tolerance {
                return Err(EkfError::NotStatic(format!(
                    "specific force {:.3} m/s² at t={} is {:.0}% off gravity",
                    s.accel.norm(),
                    s.t,
                    100.0 * dev
                )));
            }
        }
    }
    let n = window.len() as f64;
    let f = window.iter().map(|s| s.accel).sum::<Vec3>() / n;
    let w = window.iter().map(|s| s.gyro).sum::<Vec3>() / n;
    if f.norm() < 1e-9 {
        return Err(EkfError::NotStatic("zero specific force".into()));
    }
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());

    let mut state = FilterState::new(window[needed - 1].t);
    state.q = rot_y(pitch) * rot_x(roll);
    if cfg.estimate_gyro_bias {
        state.b_w = w;
    }
    let ext = crate::geometry::Pose::from(&cfg.extrinsics);
    state.r_v = ext.position;
    state.q_v = ext.orientation.inverse();

    let mut cov = Covariance::zeros(SENSOR_DIM, SENSOR_DIM);
    let blocks = [
        (idx::R, cfg.sigma_position),
        (idx::V, cfg.sigma_velocity),
        (idx::Q, cfg.sigma_attitude),
        (idx::BF, cfg.sigma_accel_bias),
        (idx::BW, cfg.sigma_gyro_bias),
        (idx::RV, cfg.sigma_extrinsic_position),
        (idx::QV, cfg.sigma_extrinsic_rotation),
    ];
    for (o, sigma) in blocks {
        for i in 0..3 {
            cov[(o + i, o + i)] = sigma * sigma;
        }
    }
    Ok((state, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quat_exp, rotation_angle};

    fn static_samples(q: crate::geometry::UnitQuaternion, n: usize) -> Vec<ImuSample> {
        let f = q.inverse() * Vec3::new(0.0, 0.0, 9.81);
        (0..n).map(|i| ImuSample::new(i as f64 * 0.005, Vec3::new(1e-3, 0.0, -2e-3), f)).collect()
    }

    #[test]
    fn level_imu_gives_identity() {
        let (s, p) = initialize(&static_samples(Default::default(), 20), &InitConfig::default(), 9.81).unwrap();
        assert!(rotation_angle(&s.q) < 1e-12);
        assert_eq!(s.t, 19.0 * 0.005);
        assert_eq!(p.nrows(), 21);
        assert!((s.b_w - Vec3::new(1e-3, 0.0, -2e-3)).norm() < 1e-15);
    }

    #[test]
    fn tilted_imu_recovers_gravity_direction() {
        let q = quat_exp(&Vec3::new(0.3, -0.5, 1.2));
        let (s, _) = initialize(&static_samples(q, 40), &InitConfig::default(), 9.81).unwrap();
        let g = Vec3::new(0.0, 0.0, -1.0);
        assert!((s.q.inverse() * g - q.inverse() * g).norm() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let err = initialize(&static_samples(Default::default(), 5), &InitConfig::default(), 9.81);
        assert_eq!(err.unwrap_err(), EkfError::InsufficientData { needed: 20, got: 5 });
    }

    #[test]
    fn moving_imu_is_rejected() {
        let mut s = static_samples(Default::default(), 20);
        s[7].accel *= 1.5;
        assert!(matches!(initialize(&s, &InitConfig::default(), 9.81), Err(EkfError::NotStatic(_))));
        let cfg = InitConfig { require_static: false, ..Default::default() };
        assert!(initialize(&s, &cfg, 9.81).is_ok());
    }

    #[test]
    fn extrinsics_prior_is_applied() {
        let cfg = InitConfig {
            extrinsics: PoseRecord { position: [0.1, 0.0, -0.02], orientation: [0.0, 1.0, 0.0, 0.0] },
            ..Default::default()
        };
        let (s, _) = initialize(&static_samples(Default::default(), 20), &cfg, 9.81).unwrap();
        assert_eq!(s.r_v, Vec3::new(0.1, 0.0, -0.02));
        // q_VB is the inverse of the configured q_BV
        assert!((s.q_v * Vec3::y() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }
}
