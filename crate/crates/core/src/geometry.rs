//! Rotation and rigid-transform algebra on the unit-quaternion manifold.
//!
//! Quaternions use the Hamilton product with `w` first. A quaternion `q_AB`
//! is read as a *passive* rotation: it maps coordinates of a vector expressed
//! in frame `B` into frame `A`, `_A r = q_AB(_B r)`. With this reading the
//! Hamilton product composes frames left to right, `q_AC = q_AB ⊗ q_BC`, and
//! `quat_rotate(q_AB, v)` is numerically the usual `C_AB · v`.
//!
//! Perturbations are applied on the right (local side):
//! `boxplus(q, δ) = q ⊗ exp(δ)`.

use nalgebra::{Matrix3, Quaternion, Vector3};
use serde::{Deserialize, Serialize};


/// Unit quaternion in `f64`, Hamilton convention.
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;
/// Axis-angle vector, radians.
pub type RotationVector = Vector3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle `quat_exp`/`quat_log` switch to a Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Builds a quaternion from `w, x, y, z` and renormalizes it.
pub fn quat(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

/// Quaternion components in `w, x, y, z` order.
pub fn quat_wxyz(q: &UnitQuaternion) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Hamilton product. `(a ⊗ b)(v) = a(b(v))`.
pub fn quat_multiply(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    renormalize(a * b)
}

/// Passive rotation of `v` from the right-hand frame into the left-hand frame.
pub fn quat_rotate(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    q * v
}

pub fn quat_exp(phi: &RotationVector) -> UnitQuaternion {
    let theta = phi.norm();
    let (w, s) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::from_quaternion(Quaternion::new(w, s * phi.x, s * phi.y, s * phi.z))
}

/// Principal logarithm, angle in `[0, π]`.
pub fn quat_log(q: &UnitQuaternion) -> RotationVector {
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let n = v.norm();
    if n < 0.5 * SMALL_ANGLE {
        // theta = 2 atan(n / w) ~ 2 n / w (1 - n^2 / (3 w^2))
        let scale = 2.0 / w * (1.0 - n * n / (3.0 * w * w));
        v * scale
    } else {
        let theta = 2.0 * n.atan2(w);
        v * (theta / n)
    }
}

/// `q ⊗ exp(δ)`.
pub fn boxplus(q: &UnitQuaternion, delta: &RotationVector) -> UnitQuaternion {
    renormalize(q * quat_exp(delta))
}

/// `log(b⁻¹ ⊗ a)`, the local difference with `boxplus(b, boxminus(a, b)) = a`.
pub fn boxminus(a: &UnitQuaternion, b: &UnitQuaternion) -> RotationVector {
    quat_log(&(b.inverse() * a))
}

pub fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ) ⊗ exp(J_r(φ) δ)`.
pub fn right_jacobian(phi: &RotationVector) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Mat3::identity() - (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Angle of the rotation represented by `q`, in `[0, π]`.
pub fn rotation_angle(q: &UnitQuaternion) -> f64 {
    quat_log(q).norm()
}

/// Elementary rotation about a body axis, as a quaternion.
pub fn rot_x(angle: f64) -> UnitQuaternion {
    quat_exp(&Vec3::new(angle, 0.0, 0.0))
}

pub fn rot_y(angle: f64) -> UnitQuaternion {
    quat_exp(&Vec3::new(0.0, angle, 0.0))
}

pub fn rot_z(angle: f64) -> UnitQuaternion {
    quat_exp(&Vec3::new(0.0, 0.0, angle))
}

fn renormalize(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Rigid transform of frame `B` relative to frame `A`: `position = _A r_AB`,
/// `orientation = q_AB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuaternion::identity())
    }

    /// `T_AB ∘ T_BC = T_AC`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + quat_rotate(&self.orientation, &other.position),
            orientation: quat_multiply(&self.orientation, &other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let q_inv = self.orientation.inverse();
        Pose {
            position: -quat_rotate(&q_inv, &self.position),
            orientation: q_inv,
        }
    }

    /// Maps a point given in `B` coordinates to `A` coordinates.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + quat_rotate(&self.orientation, p)
    }
}

/// JSON-friendly pose: position in meters, orientation as `[w, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: quat_wxyz(&p.orientation),
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        let [w, x, y, z] = r.orientation;
        Pose::new(Vec3::from(r.position), quat(w, x, y, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Rodrigues' formula, independent of the quaternion path.
    fn rotation_matrix(phi: &Vec3) -> Mat3 {
        let theta = phi.norm();
        if theta == 0.0 {
            return Mat3::identity();
        }
        let k = skew(&(phi / theta));
        Mat3::identity() + theta.sin() * k + (1.0 - theta.cos()) * k * k
    }

    fn rotvec() -> impl Strategy<Value = Vec3> {
        (-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn any_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| quat(w, x, y, z))
    }

    #[test]
    fn identity_is_neutral() {
        let q = quat_exp(&Vec3::new(0.3, -0.1, 0.7));
        let r = quat_multiply(&UnitQuaternion::identity(), &q);
        assert_relative_eq!(r.into_inner(), q.into_inner(), epsilon = 1e-15);
        let e = quat_multiply(&q, &q.inverse());
        assert!(rotation_angle(&e) < 1e-12);
    }

    #[test]
    fn half_turns_compose_to_full_turn_about_x() {
        let a = quat_exp(&Vec3::new(PI / 2.0, 0.0, 0.0));
        let prod = quat_multiply(&a, &a);
        let expected = quat_exp(&Vec3::new(PI, 0.0, 0.0));
        let oracle = rotation_matrix(&Vec3::new(PI / 2.0, 0.0, 0.0))
            * rotation_matrix(&Vec3::new(PI / 2.0, 0.0, 0.0));
        assert_relative_eq!(prod.to_rotation_matrix().into_inner(), oracle, epsilon = 1e-12);
        assert_relative_eq!(
            prod.to_rotation_matrix().into_inner(),
            expected.to_rotation_matrix().into_inner(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn half_turn_about_z_flips_x() {
        let q = quat_exp(&Vec3::new(0.0, 0.0, PI));
        let v = quat_rotate(&q, &Vec3::new(1.0, 0.0, 0.0));
        let oracle = rotation_matrix(&Vec3::new(0.0, 0.0, PI)) * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(v, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(v, oracle, epsilon = 1e-12);
    }

    #[test]
    fn exp_log_edge_cases() {
        assert_eq!(quat_exp(&Vec3::zeros()), UnitQuaternion::identity());
        let phi = Vec3::new(0.1, -0.2, 0.3);
        assert_relative_eq!(quat_log(&quat_exp(&phi)), phi, epsilon = 1e-12);
        let tiny = quat_exp(&Vec3::new(1e-12, 0.0, 0.0));
        assert!(tiny.coords.iter().all(|c| c.is_finite()));
        assert_relative_eq!(tiny.norm(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(quat_log(&tiny), Vec3::new(1e-12, 0.0, 0.0), epsilon = 1e-24);
        // near pi the principal value is returned
        let near_pi = quat_log(&quat_exp(&Vec3::new(0.0, 0.0, PI - 1e-9)));
        assert_relative_eq!(near_pi.norm(), PI - 1e-9, epsilon = 1e-8);
    }

    #[test]
    fn boxplus_boxminus_trivial_cases() {
        let q = quat_exp(&Vec3::new(0.4, 0.2, -1.0));
        assert_relative_eq!(boxplus(&q, &Vec3::zeros()).into_inner(), q.into_inner(), epsilon = 1e-15);
        assert_eq!(boxminus(&q, &q), Vec3::zeros());
    }

    #[test]
    fn skew_is_cross_product() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(
            skew(&Vec3::new(1.0, 0.0, 0.0)) * Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let phi = Vec3::new(0.7, -0.4, 1.1);
        let jr = right_jacobian(&phi);
        let h = 1e-6;
        for j in 0..3 {
            let mut d = Vec3::zeros();
            d[j] = h;
            let plus = boxminus(&quat_exp(&(phi + d)), &quat_exp(&phi));
            let minus = boxminus(&quat_exp(&(phi - d)), &quat_exp(&phi));
            let col = (plus - minus) / (2.0 * h);
            assert_relative_eq!(col, jr.column(j).into_owned(), epsilon = 1e-8);
        }
    }

    #[test]
    fn pose_inverse_and_associativity() {
        let a = Pose::new(Vec3::new(1.0, 2.0, 3.0), quat_exp(&Vec3::new(0.1, 0.2, 0.3)));
        let b = Pose::new(Vec3::new(-0.5, 0.0, 0.2), quat_exp(&Vec3::new(-1.0, 0.4, 0.0)));
        let c = Pose::new(Vec3::new(0.0, 3.0, -1.0), quat_exp(&Vec3::new(0.0, 2.0, 0.5)));
        let e = a.compose(&a.inverse());
        assert!(e.position.norm() < 1e-9);
        assert!(rotation_angle(&e.orientation) < 1e-9);
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assert_relative_eq!(l.position, r.position, epsilon = 1e-12);
        assert!(rotation_angle(&l.orientation.rotation_to(&r.orientation)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotation_is_isometric_and_matches_matrix(q in any_quat(), x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let v = Vec3::new(x, y, z);
            let r = quat_rotate(&q, &v);
            prop_assert!((r.norm() - v.norm()).abs() < 1e-9);
            let m = rotation_matrix(&quat_log(&q));
            prop_assert!((r - m * v).norm() < 1e-12 * (1.0 + v.norm()));
            let back = quat_rotate(&q.inverse(), &r);
            prop_assert!((back - v).norm() < 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn products_stay_unit_and_compose_passively(a in any_quat(), b in any_quat(), x in -1.0f64..1.0) {
            let v = Vec3::new(x, 1.0 - x, 0.5);
            let ab = quat_multiply(&a, &b);
            prop_assert!((ab.norm() - 1.0).abs() < 1e-9);
            let lhs = quat_rotate(&ab, &v);
            let rhs = quat_rotate(&a, &quat_rotate(&b, &v));
            prop_assert!((lhs - rhs).norm() < 1e-12);
            let oracle = Rotation3::from(a).into_inner() * Rotation3::from(b).into_inner() * v;
            prop_assert!((lhs - oracle).norm() < 1e-12);
        }

        #[test]
        fn exp_log_round_trip(phi in rotvec()) {
            let q = quat_exp(&phi);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!((quat_log(&q) - phi).norm() < 1e-12);
        }

        #[test]
        fn boxplus_round_trip(q in any_quat(), d in (-0.577f64..0.577, -0.577f64..0.577, -0.577f64..0.577)) {
            let delta = Vec3::new(d.0, d.1, d.2);
            let p = boxplus(&q, &delta);
            prop_assert!((p.norm() - 1.0).abs() < 1e-9);
            prop_assert!((boxminus(&p, &q) - delta).norm() < 1e-10);
        }

        #[test]
        fn skew_is_antisymmetric(v in rotvec()) {
            let s = skew(&v);
            prop_assert_eq!(s.transpose(), -s);
        }
    }
}
