use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{quat_exp, right_jacobian, rot_z, Pose, UnitQuaternion, Vec3};

/// `amplitude · sin(2π · frequency · τ + phase)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self { amplitude, frequency, phase }
    }

    /// Value and first two derivatives at `tau`.
    fn eval(&self, tau: f64) -> (f64, f64, f64) {
        let w = TAU * self.frequency;
        let arg = w * tau + self.phase;
        let (s, c) = arg.sin_cos();
        (self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s)
    }
}

/// Body trajectory in the workspace frame.
///
/// Motion runs on a warped clock `τ(t)`: zero during `static_duration`, a
/// C² ramp of length `ramp_duration` that reaches unit speed, then
/// `τ = t − static_duration − ramp_duration / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub static_duration: f64,
    pub ramp_duration: f64,
    pub position_center: [f64; 3],
    /// Per-axis position terms, meters.
    pub position: [Vec<Sinusoid>; 3],
    /// Constant orientation `C0`, `w, x, y, z`.
    pub base_orientation: [f64; 4],
    /// Per-component rotation-vector terms, radians.
    pub rotation: [Vec<Sinusoid>; 3],
    /// Constant heading rate about the workspace `z` axis, rad per unit `τ`.
    #[serde(default)]
    pub yaw_rate: f64,
}

/// Exact kinematic state of the body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    /// `_W r_WB`, `q_WB`
    pub pose: Pose,
    /// World-frame velocity.
    pub velocity: Vec3,
    /// Body-frame rotational rate.
    pub omega: Vec3,
    /// World-frame acceleration.
    pub acceleration: Vec3,
}

impl TruthSample {
    /// Velocity expressed in the body frame.
    pub fn body_velocity(&self) -> Vec3 {
        self.pose.orientation.inverse() * self.velocity
    }
}

impl TrajectorySpec {
    /// A motionless body at `pose`.
    pub fn stationary(pose: &Pose, duration: f64) -> Self {
        let q = pose.orientation;
        Self {
            duration,
            static_duration: duration,
            ramp_duration: 0.0,
            position_center: pose.position.into(),
            position: Default::default(),
            base_orientation: [q.w, q.i, q.j, q.k],
            rotation: Default::default(),
            yaw_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.static_duration >= 0.0 && self.ramp_duration >= 0.0) {
            return bad("static and ramp durations must be non-negative");
        }
        let terms = self.position.iter().chain(self.rotation.iter()).flatten();
        for s in terms {
            if !(s.amplitude.is_finite() && s.frequency.is_finite() && s.phase.is_finite()) {
                return bad("non-finite sinusoid");
            }
        }
        Ok(())
    }

    /// `(τ, dτ/dt, d²τ/dt²)`
    pub fn warp(&self, t: f64) -> (f64, f64, f64) {
        let t0 = self.static_duration;
        let ramp = self.ramp_duration;
        if t <= t0 {
            return (0.0, 0.0, 0.0);
        }
        if ramp <= 0.0 {
            return (t - t0, 1.0, 0.0);
        }
        if t >= t0 + ramp {
            return (0.5 * ramp + (t - t0 - ramp), 1.0, 0.0);
        }
        let u = (t - t0) / ramp;
        let u2 = u * u;
        let u3 = u2 * u;
        let tau = ramp * u2 * u2 * (u2 - 3.0 * u + 2.5);
        let rate = u3 * (6.0 * u2 - 15.0 * u + 10.0);
        let accel = 30.0 * u2 * (u2 - 2.0 * u + 1.0) / ramp;
        (tau, rate, accel)
    }

    fn base(&self) -> UnitQuaternion {
        let [w, x, y, z] = self.base_orientation;
        crate::geometry::quat(w, x, y, z)
    }
}

fn sum_terms(terms: &[Sinusoid], tau: f64) -> (f64, f64, f64) {
    terms.iter().fold((0.0, 0.0, 0.0), |acc, s| {
        let (a, b, c) = s.eval(tau);
        (acc.0 + a, acc.1 + b, acc.2 + c)
    })
}

/// Closed-form pose and derivatives at `t`.
pub fn truth(spec: &TrajectorySpec, t: f64) -> Result<TruthSample, SimError> {
    if !(0.0..=spec.duration).contains(&t) {
        return Err(SimError::OutOfRange { t, duration: spec.duration });
    }
    let (tau, rate, accel) = spec.warp(t);
    let mut p = Vec3::from(spec.position_center);
    let mut dp = Vec3::zeros();
    let mut ddp = Vec3::zeros();
    let mut phi = Vec3::zeros();
    let mut dphi = Vec3::zeros();
    for axis in 0..3 {
        let (x, dx, ddx) = sum_terms(&spec.position[axis], tau);
        p[axis] += x;
        dp[axis] = dx;
        ddp[axis] = ddx;
        let (a, da, _) = sum_terms(&spec.rotation[axis], tau);
        phi[axis] = a;
        dphi[axis] = da;
    }
    let c0e = spec.base() * quat_exp(&phi);
    let q = rot_z(spec.yaw_rate * tau) * c0e;
    let omega = rate * (c0e.inverse() * Vec3::z() * spec.yaw_rate + right_jacobian(&phi) * dphi);
    Ok(TruthSample {
        t,
        pose: Pose::new(p, q),
        velocity: rate * dp,
        omega,
        acceleration: accel * dp + rate * rate * ddp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{boxminus, quat_exp};

    fn wobbly() -> TrajectorySpec {
        TrajectorySpec {
            duration: 10.0,
            static_duration: 1.0,
            ramp_duration: 2.0,
            position_center: [0.1, 0.2, 0.9],
            position: [
                vec![Sinusoid::new(0.2, 0.3, 0.1)],
                vec![Sinusoid::new(0.1, 0.45, 1.0), Sinusoid::new(0.03, 1.1, 0.0)],
                vec![Sinusoid::new(0.05, 0.25, -0.4)],
            ],
            base_orientation: [0.0, 1.0, 0.0, 0.0],
            rotation: [
                vec![Sinusoid::new(0.3, 0.35, 0.2)],
                vec![Sinusoid::new(0.2, 0.5, 0.0)],
                vec![Sinusoid::new(0.6, 0.2, 1.3)],
            ],
            yaw_rate: 0.4,
        }
    }

    #[test]
    fn zero_amplitude_is_static() {
        let pose = Pose::new(Vec3::new(1.0, 2.0, 3.0), quat_exp(&Vec3::new(0.1, 0.2, 0.3)));
        let spec = TrajectorySpec::stationary(&pose, 5.0);
        for t in [0.0, 2.5, 5.0] {
            let s = truth(&spec, t).unwrap();
            assert_eq!(s.pose.position, pose.position);
            assert!(boxminus(&s.pose.orientation, &pose.orientation).norm() < 1e-15);
            assert_eq!(s.velocity, Vec3::zeros());
            assert_eq!(s.omega, Vec3::zeros());
            assert_eq!(s.acceleration, Vec3::zeros());
        }
    }

    #[test]
    fn single_sinusoid_velocity_is_cosine() {
        let mut spec = TrajectorySpec::stationary(&Pose::identity(), 10.0);
        spec.static_duration = 0.0;
        spec.position[0] = vec![Sinusoid::new(0.5, 0.2, 0.0)];
        let w = TAU * 0.2;
        for t in [0.5, 1.3, 7.7] {
            let s = truth(&spec, t).unwrap();
            assert!((s.velocity.x - 0.5 * w * (w * t).cos()).abs() < 1e-12);
            assert!((s.acceleration.x + 0.5 * w * w * (w * t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_is_smooth() {
        let spec = wobbly();
        let h = 1e-6;
        for t in [0.9, 1.0, 1.5, 2.2, 2.999, 3.0, 3.5] {
            let (a, ra, aa) = spec.warp(t);
            let (b, rb, _) = spec.warp(t + h);
            let (c, rc, _) = spec.warp(t - h);
            assert!(((b - c) / (2.0 * h) - ra).abs() < 1e-6, "rate at {t}");
            assert!(((rb - rc) / (2.0 * h) - aa).abs() < 1e-5, "accel at {t}");
            assert!(a >= 0.0);
        }
        assert_eq!(spec.warp(3.0).0, 1.0);
        assert_eq!(spec.warp(5.0), (3.0, 1.0, 0.0));
    }

    #[test]
    fn derivatives_match_numerical_differentiation() {
        let spec = wobbly();
        let h = 1e-5;
        for k in 1..90 {
            let t = k as f64 * 0.1;
            let s = truth(&spec, t).unwrap();
            let a = truth(&spec, t + h).unwrap();
            let b = truth(&spec, t - h).unwrap();
            let v = (a.pose.position - b.pose.position) / (2.0 * h);
            let acc = (a.velocity - b.velocity) / (2.0 * h);
            // body rate from the quaternion track: q(t+h) = q(t-h) exp(2h ω)
            let w = boxminus(&a.pose.orientation, &b.pose.orientation) / (2.0 * h);
            assert!((v - s.velocity).norm() < 1e-6, "velocity at {t}");
            assert!((acc - s.acceleration).norm() < 1e-5, "acceleration at {t}");
            assert!((w - s.omega).norm() < 1e-6, "rate at {t}: {w} vs {}", s.omega);
        }
    }

    #[test]
    fn out_of_range() {
        let spec = wobbly();
        assert!(matches!(truth(&spec, 10.5), Err(SimError::OutOfRange { .. })));
        assert!(matches!(truth(&spec, -0.1), Err(SimError::OutOfRange { .. })));
    }
}
