use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::synth::{synth_detections, synth_imu, SceneSpec, SceneTag, SensorSpec, SimOutput};
use super::trajectory::{truth, Sinusoid, TrajectorySpec, TruthSample};
use super::SimError;
use crate::camera::PinholeIntrinsics;
use crate::ekf::FilterConfig;
use crate::geometry::{quat_exp, rot_x, Pose, PoseRecord, UnitQuaternion, Vec3};
use crate::models::{NoiseParameters, TagSizes};

pub const PRESET_NAMES: [&str; 4] = ["table", "dataset_1", "loop", "calibration"];

/// A complete synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub trajectory: TrajectorySpec,
    pub scene: SceneSpec,
    pub sensor: SensorSpec,
    pub intrinsics: PinholeIntrinsics,
    /// Filter tag cap suited to the scene.
    pub tag_cap: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.trajectory.validate()?;
        self.scene.validate()?;
        self.sensor.validate()?;
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn generate(&self, seed: u64) -> Result<SimOutput, SimError> {
        self.validate()?;
        let imu = synth_imu(&self.trajectory, &self.sensor, seed)?;
        let frames = synth_detections(&self.trajectory, &self.scene, &self.sensor, &self.intrinsics, seed)?;
        let truth = imu
            .iter()
            .map(|s| truth(&self.trajectory, s.t))
            .collect::<Result<Vec<TruthSample>, _>>()?;
        Ok(SimOutput { imu, frames, truth })
    }

    /// Filter settings matched to this scenario: sensor noise, tag sizes,
    /// intrinsics and the true extrinsics as prior.
    pub fn filter_config(&self) -> FilterConfig {
        let mut cfg = FilterConfig::default();
        let sn = &self.sensor.noise;
        cfg.noise = NoiseParameters {
            accel: sn.accel,
            gyro: sn.gyro,
            accel_bias: sn.accel_bias,
            gyro_bias: sn.gyro_bias,
            gravity: sn.gravity,
            pixel: NoiseParameters::pixel_isotropic(self.sensor.pixel_sigma.max(0.05)),
            ..NoiseParameters::default()
        };
        cfg.intrinsics = self.intrinsics;
        let default_size = self.scene.tags.first().map_or(0.16, |t| t.side);
        let mut sizes = TagSizes::uniform(default_size);
        for t in &self.scene.tags {
            if t.side != default_size {
                sizes.sizes.insert(t.id, t.side);
            }
        }
        cfg.tag_sizes = sizes;
        cfg.augment.tag_cap = self.tag_cap;
        cfg.init.extrinsics = self.sensor.extrinsics;
        cfg
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.trajectory.duration = duration;
        self
    }
}

fn vi_sensor_intrinsics() -> PinholeIntrinsics {
    PinholeIntrinsics {
        fx: 460.0,
        fy: 460.0,
        cx: 376.0,
        cy: 240.0,
        width: 752,
        height: 480,
    }
}

fn record(p: Vec3, q: UnitQuaternion) -> PoseRecord {
    PoseRecord::from(&Pose::new(p, q))
}

fn sensor(pixel_sigma: f64, dropout: f64, blackouts: Vec<[f64; 2]>) -> SensorSpec {
    SensorSpec {
        imu_rate: 200.0,
        camera_rate: 20.0,
        noise: NoiseParameters::default(),
        initial_accel_bias: [0.03, -0.02, 0.05],
        initial_gyro_bias: [0.002, -0.003, 0.001],
        pixel_sigma,
        dropout,
        blackouts,
        extrinsics: record(Vec3::new(0.03, -0.01, 0.02), quat_exp(&Vec3::new(0.03, -0.02, 0.05))),
    }
}

fn s(amplitude: f64, frequency: f64, phase: f64) -> Sinusoid {
    Sinusoid::new(amplitude, frequency, phase)
}

fn wxyz(q: UnitQuaternion) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Three identically oriented tags flat on a table, observed from about
/// 0.9 m above with a hand-held wobble.
fn table() -> Scenario {
    let flat = UnitQuaternion::identity();
    let tags = [(0, 0.0, 0.0), (1, 0.45, 0.0), (2, 0.15, 0.3)]
        .into_iter()
        .map(|(id, x, y)| SceneTag { id, pose: record(Vec3::new(x, y, 0.0), flat), side: 0.16 })
        .collect();
    Scenario {
        name: "table".into(),
        trajectory: TrajectorySpec {
            duration: 60.0,
            static_duration: 1.0,
            ramp_duration: 2.0,
            position_center: [0.2, 0.12, 0.9],
            position: [
                vec![s(0.12, 0.23, 0.0), s(0.02, 0.9, 0.3)],
                vec![s(0.08, 0.31, 1.0), s(0.015, 1.1, 2.0)],
                vec![s(0.06, 0.17, 0.5), s(0.01, 0.7, 1.0)],
            ],
            base_orientation: wxyz(rot_x(PI)),
            rotation: [
                vec![s(0.12, 0.27, 0.0)],
                vec![s(0.12, 0.21, 0.7)],
                vec![s(0.4, 0.13, 0.2)],
            ],
            yaw_rate: 0.0,
        },
        scene: SceneSpec { tags, max_view_angle_deg: 70.0, min_side_px: 12.0 },
        sensor: sensor(0.5, 0.0, Vec::new()),
        intrinsics: vi_sensor_intrinsics(),
        tag_cap: 20,
    }
}

/// The table scene under brisk rotation and translation, which makes the
/// camera-IMU extrinsics observable.
fn calibration() -> Scenario {
    let mut sc = table();
    sc.name = "calibration".into();
    let tr = &mut sc.trajectory;
    tr.rotation = [
        vec![s(0.35, 0.5, 0.0)],
        vec![s(0.35, 0.415, 0.7)],
        vec![s(0.6, 0.305, 0.2)],
    ];
    for (axis, speedup) in tr.position.iter_mut().zip([1.7, 1.5, 2.0]) {
        axis[0].amplitude *= 1.5;
        axis[0].frequency *= speedup;
    }
    sc
}

/// Three wall tags in a 4×4×4 m room with fast yaw sweeps, random frame
/// loss and a 6 s blackout.
fn dataset_1() -> Scenario {
    // tags on the wall y = 2 facing into the room (-y)
    let facing = UnitQuaternion::from_matrix(&nalgebra::Matrix3::from_columns(&[
        Vec3::x(),
        Vec3::z(),
        -Vec3::y(),
    ]));
    let tags = [(10, -0.8, 1.3), (11, 0.3, 1.8), (12, 1.0, 1.4)]
        .into_iter()
        .map(|(id, x, z)| SceneTag { id, pose: record(Vec3::new(x, 2.0, z), facing), side: 0.25 })
        .collect();
    // camera z along +y, camera y down
    let look_wall = UnitQuaternion::from_matrix(&nalgebra::Matrix3::from_columns(&[
        Vec3::x(),
        -Vec3::z(),
        Vec3::y(),
    ]));
    Scenario {
        name: "dataset_1".into(),
        trajectory: TrajectorySpec {
            duration: 60.0,
            static_duration: 1.0,
            ramp_duration: 2.0,
            position_center: [0.0, 0.0, 1.5],
            position: [
                vec![s(0.5, 0.15, 0.0), s(0.05, 0.8, 1.0)],
                vec![s(0.3, 0.21, 1.5)],
                vec![s(0.2, 0.27, 0.3)],
            ],
            base_orientation: wxyz(look_wall),
            // the body y axis is the world vertical: yaw sweeps act on it
            rotation: [
                vec![s(0.1, 0.3, 0.0)],
                vec![s(0.85, 0.2, 0.0), s(0.1, 0.7, 0.4)],
                vec![s(0.1, 0.25, 1.0)],
            ],
            yaw_rate: 0.0,
        },
        scene: SceneSpec { tags, max_view_angle_deg: 70.0, min_side_px: 12.0 },
        sensor: sensor(0.5, 0.05, vec![[30.0, 36.0]]),
        intrinsics: vi_sensor_intrinsics(),
        tag_cap: 20,
    }
}

/// Closed ~70 m circuit past a trail of 36 tags facing the path.
fn loop_circuit() -> Scenario {
    let circumference = 70.0;
    let radius = circumference / TAU;
    let tag_radius = radius + 1.5;
    let tags = (0..36)
        .map(|i| {
            let a = TAU * i as f64 / 36.0;
            // z toward the circle center, x along the direction of travel
            let z = -Vec3::new(a.cos(), a.sin(), 0.0);
            let x = Vec3::new(-a.sin(), a.cos(), 0.0);
            let y = z.cross(&x);
            let q = UnitQuaternion::from_matrix(&nalgebra::Matrix3::from_columns(&[x, y, z]));
            SceneTag {
                id: i,
                pose: record(Vec3::new(tag_radius * a.cos(), tag_radius * a.sin(), 1.2), q),
                side: 0.2,
            }
        })
        .collect();
    // camera looking radially outward at the start (+x), camera y down
    let outward = UnitQuaternion::from_matrix(&nalgebra::Matrix3::from_columns(&[
        -Vec3::y(),
        -Vec3::z(),
        Vec3::x(),
    ]));
    let f = 1.0 / circumference;
    Scenario {
        name: "loop".into(),
        trajectory: TrajectorySpec {
            duration: 76.0,
            static_duration: 1.0,
            ramp_duration: 2.0,
            position_center: [0.0, 0.0, 1.2],
            position: [
                vec![s(radius, f, FRAC_PI_2), s(0.05, 0.5, 0.0)],
                vec![s(radius, f, 0.0), s(0.05, 0.4, 1.0)],
                vec![s(0.1, 0.3, 0.0)],
            ],
            base_orientation: wxyz(outward),
            rotation: [
                vec![s(0.05, 0.4, 0.0)],
                vec![s(0.08, 0.25, 1.0)],
                vec![s(0.05, 0.35, 2.0)],
            ],
            yaw_rate: TAU * f,
        },
        scene: SceneSpec { tags, max_view_angle_deg: 70.0, min_side_px: 12.0 },
        sensor: sensor(0.5, 0.0, Vec::new()),
        intrinsics: vi_sensor_intrinsics(),
        tag_cap: 40,
    }
}

pub fn preset(name: &str) -> Result<Scenario, SimError> {
    match name {
        "table" => Ok(table()),
        "dataset_1" => Ok(dataset_1()),
        "loop" => Ok(loop_circuit()),
        "calibration" => Ok(calibration()),
        other => Err(SimError::UnknownPreset(other.to_string())),
    }
}
