//! Pinhole projection and radial-tangential distortion.
//!
//! The filter works in undistorted pixel space, so [`project`] is a pure
//! pinhole map. Distortion is only used when ingesting logs recorded in raw
//! pixels.

use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

/// Minimum depth in front of the camera, meters.
pub const MIN_DEPTH: f64 = 1e-6;
pub const UNDISTORT_MAX_ITERATIONS: usize = 20;
pub const UNDISTORT_TOLERANCE: f64 = 1e-8;

pub type Pixel = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point is behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("undistortion did not converge within {UNDISTORT_MAX_ITERATIONS} iterations")]
    NoConvergence,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    fn to_normalized(&self, u: &Pixel) -> Vector2<f64> {
        Vector2::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy)
    }

    fn to_pixel(&self, x: &Vector2<f64>) -> Pixel {
        Pixel::new(self.fx * x.x + self.cx, self.fy * x.y + self.cy)
    }
}

/// Projects a camera-frame point to pixels.
pub fn project(p: &Vec3, k: &PinholeIntrinsics) -> Result<Pixel, CameraError> {
    if p.z <= MIN_DEPTH {
        return Err(CameraError::PointBehindCamera(p.z));
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Analytic `∂project/∂p`.
pub fn project_jacobian(p: &Vec3, k: &PinholeIntrinsics) -> Result<Matrix2x3<f64>, CameraError> {
    if p.z <= MIN_DEPTH {
        return Err(CameraError::PointBehindCamera(p.z));
    }
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    ))
}

/// Radial-tangential (plumb-bob) coefficients acting on normalized coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadTanDistortion {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl RadTanDistortion {
    /// Creates the model and checks that it is invertible over the field of
    /// view of `k` (with a 50% margin on the radius).
    pub fn new(k1: f64, k2: f64, k3: f64, p1: f64, p2: f64, k: &PinholeIntrinsics) -> Result<Self, CameraError> {
        let d = Self { k1, k2, k3, p1, p2 };
        d.validate(k)?;
        Ok(d)
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn validate(&self, k: &PinholeIntrinsics) -> Result<(), CameraError> {
        let corners = [
            (0.0, 0.0),
            (k.width as f64, 0.0),
            (0.0, k.height as f64),
            (k.width as f64, k.height as f64),
        ];
        let r_max = corners
            .iter()
            .map(|&(u, v)| k.to_normalized(&Pixel::new(u, v)).norm())
            .fold(0.0, f64::max)
            * 1.5;
        const STEPS: usize = 200;
        for i in 0..=STEPS {
            let r = r_max * i as f64 / STEPS as f64;
            let r2 = r * r;
            // d/dr [ r (1 + k1 r^2 + k2 r^4 + k3 r^6) ]
            let slope = 1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2 + 7.0 * self.k3 * r2 * r2 * r2;
            if slope <= 0.0 {
                return Err(CameraError::InvalidDistortion(format!(
                    "radial map folds over at normalized radius {r:.3}"
                )));
            }
        }
        Ok(())
    }

    fn radial(&self, x: &Vector2<f64>) -> f64 {
        let r2 = x.norm_squared();
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    fn tangential(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let r2 = x.norm_squared();
        Vector2::new(
            2.0 * self.p1 * x.x * x.y + self.p2 * (r2 + 2.0 * x.x * x.x),
            self.p1 * (r2 + 2.0 * x.y * x.y) + 2.0 * self.p2 * x.x * x.y,
        )
    }

    pub fn distort_normalized(&self, x: &Vector2<f64>) -> Vector2<f64> {
        x * self.radial(x) + self.tangential(x)
    }

    /// Fixed-point inversion of [`Self::distort_normalized`].
    pub fn undistort_normalized(&self, xd: &Vector2<f64>) -> Result<Vector2<f64>, CameraError> {
        let mut x = *xd;
        let mut polish = 0;
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let next = (xd - self.tangential(&x)) / self.radial(&x);
            let step = (next - x).norm();
            x = next;
            if !x.iter().all(|c| c.is_finite()) {
                return Err(CameraError::NoConvergence);
            }
            if step < UNDISTORT_TOLERANCE {
                // a few extra contractions push the error well below the step size
                polish += 1;
                if polish > 2 || step < 1e-14 {
                    return Ok(x);
                }
            }
        }
        if polish > 0 {
            return Ok(x);
        }
        Err(CameraError::NoConvergence)
    }
}

pub fn distort_pixel(u: &Pixel, k: &PinholeIntrinsics, d: &RadTanDistortion) -> Pixel {
    k.to_pixel(&d.distort_normalized(&k.to_normalized(u)))
}

pub fn undistort_pixel(u: &Pixel, k: &PinholeIntrinsics, d: &RadTanDistortion) -> Result<Pixel, CameraError> {
    if d.is_zero() {
        return Ok(*u);
    }
    Ok(k.to_pixel(&d.undistort_normalized(&k.to_normalized(u))?))
}
