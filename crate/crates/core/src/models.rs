//! Sensor records, tag geometry and the corner reprojection model.

use std::collections::BTreeMap;

use nalgebra::Matrix2x3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, project_jacobian, CameraError, PinholeIntrinsics, Pixel};
use crate::geometry::{quat_rotate, skew, UnitQuaternion, Vec3};

pub type TagId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("tag side length must be positive, got {0}")]
    InvalidTagSize(f64),
    #[error("invalid detection of tag {id}: {reason}")]
    InvalidDetection { id: TagId, reason: String },
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
}

/// One IMU reading: body-frame rotational rate (rad/s) and proper
/// acceleration (m/s²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().chain(self.accel.iter()).all(|v| v.is_finite())
    }
}

/// Four undistorted corner pixels of one tag, in canonical order (see
/// [`tag_corners`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagDetection {
    pub t: f64,
    pub tag_id: TagId,
    pub corners: [Pixel; 4],
}

impl TagDetection {
    pub fn validate(&self, k: &PinholeIntrinsics) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidDetection {
            id: self.tag_id,
            reason: reason.to_string(),
        };
        if self.corners.iter().any(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(bad("non-finite corner"));
        }
        if self.corners.iter().any(|c| !k.contains(c)) {
            return Err(bad("corner outside the image"));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                if (self.corners[i] - self.corners[j]).norm() < 1e-9 {
                    return Err(bad("duplicate corners"));
                }
            }
        }
        Ok(())
    }
}

/// Square tag of side `side` meters. The tag frame sits at the geometric
/// center with `z` normal to the tag plane, pointing out of the printed face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagGeometry {
    side: f64,
}

impl TagGeometry {
    pub fn new(side: f64) -> Result<Self, ModelError> {
        if side > 0.0 && side.is_finite() {
            Ok(Self { side })
        } else {
            Err(ModelError::InvalidTagSize(side))
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }
}

/// Tag sizes: a default plus per-id overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSizes {
    pub default_size: f64,
    #[serde(default)]
    pub sizes: BTreeMap<TagId, f64>,
}

impl Default for TagSizes {
    fn default() -> Self {
        Self {
            default_size: 0.16,
            sizes: BTreeMap::new(),
        }
    }
}

impl TagSizes {
    pub fn uniform(side: f64) -> Self {
        Self {
            default_size: side,
            sizes: BTreeMap::new(),
        }
    }

    pub fn geometry(&self, id: TagId) -> Result<TagGeometry, ModelError> {
        TagGeometry::new(*self.sizes.get(&id).unwrap_or(&self.default_size))
    }
}

/// Corner offsets in the tag frame, counter-clockwise from the lower-left:
/// `(-s/2,-s/2)`, `(s/2,-s/2)`, `(s/2,s/2)`, `(-s/2,s/2)`, all with `z = 0`.
pub fn tag_corners(geom: &TagGeometry) -> [Vec3; 4] {
    let h = 0.5 * geom.side;
    [
        Vec3::new(-h, -h, 0.0),
        Vec3::new(h, -h, 0.0),
        Vec3::new(h, h, 0.0),
        Vec3::new(-h, h, 0.0),
    ]
}

/// Camera-frame position of a tag corner: `r_T + q_T⁻¹(corner)`, with
/// `r_T = _V r_VT` and `q_T = q_TV`.
pub fn corner_in_camera(r_t: &Vec3, q_t: &UnitQuaternion, corner: &Vec3) -> Vec3 {
    r_t + quat_rotate(&q_t.inverse(), corner)
}

pub fn predict_corner(
    r_t: &Vec3,
    q_t: &UnitQuaternion,
    corner: &Vec3,
    k: &PinholeIntrinsics,
) -> Result<Pixel, CameraError> {
    project(&corner_in_camera(r_t, q_t, corner), k)
}

/// Jacobians of [`predict_corner`] w.r.t. `r_T` and a right perturbation of
/// `q_T`.
pub fn corner_jacobians(
    r_t: &Vec3,
    q_t: &UnitQuaternion,
    corner: &Vec3,
    k: &PinholeIntrinsics,
) -> Result<(Matrix2x3<f64>, Matrix2x3<f64>), CameraError> {
    let offset = quat_rotate(&q_t.inverse(), corner);
    let jp = project_jacobian(&(r_t + offset), k)?;
    Ok((jp, jp * skew(&offset)))
}

/// Continuous-time noise densities (diagonal, per axis) and pixel noise.
///
/// IMU terms follow the usual white-noise / random-walk split; the remaining
/// `position`, `tag_*` and `extrinsic_*` terms excite the corresponding
/// states and are tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParameters {
    /// Accelerometer white noise, (m/s²)²/Hz.
    pub accel: [f64; 3],
    /// Gyroscope white noise, (rad/s)²/Hz.
    pub gyro: [f64; 3],
    /// Accelerometer bias random walk, (m/s³)²/Hz.
    pub accel_bias: [f64; 3],
    /// Gyroscope bias random walk, (rad/s²)²/Hz.
    pub gyro_bias: [f64; 3],
    pub position: [f64; 3],
    pub tag_position: [f64; 3],
    pub tag_rotation: [f64; 3],
    pub extrinsic_position: [f64; 3],
    pub extrinsic_rotation: [f64; 3],
    /// Corner pixel covariance, px².
    pub pixel: [[f64; 2]; 2],
    /// Gravity magnitude, m/s², pointing along `-z` of the workspace frame.
    pub gravity: f64,
}

impl Default for NoiseParameters {
    fn default() -> Self {
        Self {
            accel: [4e-6; 3],
            gyro: [1e-6; 3],
            accel_bias: [1e-8; 3],
            gyro_bias: [1e-10; 3],
            position: [1e-8; 3],
            tag_position: [1e-8; 3],
            tag_rotation: [1e-8; 3],
            extrinsic_position: [0.0; 3],
            extrinsic_rotation: [0.0; 3],
            pixel: [[0.25, 0.0], [0.0, 0.25]],
            gravity: 9.81,
        }
    }
}

impl NoiseParameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        let groups = [
            ("accel", self.accel),
            ("gyro", self.gyro),
            ("accel_bias", self.accel_bias),
            ("gyro_bias", self.gyro_bias),
            ("position", self.position),
            ("tag_position", self.tag_position),
            ("tag_rotation", self.tag_rotation),
            ("extrinsic_position", self.extrinsic_position),
            ("extrinsic_rotation", self.extrinsic_rotation),
        ];
        for (name, g) in groups {
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ModelError::InvalidNoise(format!("{name} must be finite and non-negative")));
            }
        }
        let p = self.pixel;
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        if p[0][1] != p[1][0] || p[0][0] <= 0.0 || det <= 0.0 {
            return Err(ModelError::InvalidNoise("pixel covariance must be symmetric positive definite".into()));
        }
        if !(self.gravity > 0.0) {
            return Err(ModelError::InvalidNoise("gravity must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_isotropic(sigma: f64) -> [[f64; 2]; 2] {
        let v = sigma * sigma;
        [[v, 0.0], [0.0, v]]
    }

    /// Gravity vector in the workspace frame.
    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity)
    }
}
