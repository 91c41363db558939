use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trajectory::{truth, TrajectorySpec, TruthSample};
use super::SimError;
use crate::camera::{project, PinholeIntrinsics, Pixel};
use crate::ekf::Event;
use crate::geometry::{Pose, PoseRecord, Vec3};
use crate::models::{tag_corners, ImuSample, NoiseParameters, TagDetection, TagGeometry, TagId};

const IMU_STREAM: u64 = 1;
const CAMERA_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTag {
    pub id: TagId,
    /// `_W r_WT`, `q_WT`; the tag faces its `+z` axis.
    pub pose: PoseRecord,
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub tags: Vec<SceneTag>,
    /// Largest angle between the tag normal and the direction to the
    /// camera, degrees.
    pub max_view_angle_deg: f64,
    /// Smallest projected side length, pixels.
    pub min_side_px: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut ids: Vec<_> = self.tags.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidScenario("duplicate tag id".into()));
        }
        if self.tags.iter().any(|t| !(t.side > 0.0)) {
            return Err(SimError::InvalidScenario("tag side must be positive".into()));
        }
        Ok(())
    }

    pub fn tag(&self, id: TagId) -> Option<&SceneTag> {
        self.tags.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub imu_rate: f64,
    pub camera_rate: f64,
    /// IMU noise densities used for synthesis (`accel`, `gyro` and the bias
    /// walks; the other fields are ignored).
    pub noise: NoiseParameters,
    pub initial_accel_bias: [f64; 3],
    pub initial_gyro_bias: [f64; 3],
    /// Corner noise standard deviation, pixels.
    pub pixel_sigma: f64,
    /// Probability that a whole frame is lost.
    pub dropout: f64,
    /// Intervals `[start, end]` without any detection.
    pub blackouts: Vec<[f64; 2]>,
    /// Camera pose in the body frame (`_B r_BV`, `q_BV`).
    pub extrinsics: PoseRecord,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.imu_rate > 0.0 && self.camera_rate > 0.0) {
            return Err(SimError::InvalidScenario("rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(SimError::InvalidScenario("dropout must lie in [0, 1]".into()));
        }
        if !(self.pixel_sigma >= 0.0) {
            return Err(SimError::InvalidScenario("pixel noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn extrinsics_pose(&self) -> Pose {
        Pose::from(&self.extrinsics)
    }
}

/// One image: detections that survived visibility, dropout and blackouts.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub t: f64,
    pub detections: Vec<TagDetection>,
    /// Lost to dropout or a blackout, regardless of visibility.
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<CameraFrame>,
    /// Truth at every IMU timestamp.
    pub truth: Vec<TruthSample>,
}

impl SimOutput {
    pub fn events(&self) -> Vec<Event> {
        merge_events(&self.imu, &self.frames)
    }

    pub fn empty_frame_fraction(&self) -> f64 {
        let empty = self.frames.iter().filter(|f| f.detections.is_empty()).count();
        empty as f64 / self.frames.len().max(1) as f64
    }
}

/// Time-ordered event stream; at equal timestamps the IMU sample comes
/// first. Frames without detections are skipped.
pub fn merge_events(imu: &[ImuSample], frames: &[CameraFrame]) -> Vec<Event> {
    let mut out = Vec::with_capacity(imu.len() + frames.len());
    let mut fi = frames.iter().filter(|f| !f.detections.is_empty()).peekable();
    for s in imu {
        while let Some(f) = fi.next_if(|f| f.t < s.t) {
            out.push(Event::Detections { t: f.t, dets: f.detections.clone() });
        }
        out.push(Event::Imu(*s));
    }
    out.extend(fi.map(|f| Event::Detections { t: f.t, dets: f.detections.clone() }));
    out
}

fn sample_times(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as u64;
    (0..=n).map(move |k| k as f64 / rate)
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Noise-free IMU reading at `t`.
pub fn ideal_imu(spec: &TrajectorySpec, t: f64, gravity: f64) -> Result<ImuSample, SimError> {
    let s = truth(spec, t)?;
    let g = Vec3::new(0.0, 0.0, -gravity);
    Ok(ImuSample::new(t, s.omega, s.pose.orientation.inverse() * (s.acceleration - g)))
}

/// IMU samples at `sensor.imu_rate` with white noise and random-walk biases.
pub fn synth_imu(spec: &TrajectorySpec, sensor: &SensorSpec, seed: u64) -> Result<Vec<ImuSample>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(IMU_STREAM);
    let dt = 1.0 / sensor.imu_rate;
    let n = &sensor.noise;
    let white = |d: [f64; 3]| Vec3::from(d).map(|v| (v / dt).sqrt());
    let walk = |d: [f64; 3]| Vec3::from(d).map(|v| (v * dt).sqrt());
    let (sa, sg, sba, sbg) = (white(n.accel), white(n.gyro), walk(n.accel_bias), walk(n.gyro_bias));
    let mut b_f = Vec3::from(sensor.initial_accel_bias);
    let mut b_w = Vec3::from(sensor.initial_gyro_bias);
    let mut out = Vec::new();
    for t in sample_times(spec.duration, sensor.imu_rate) {
        let ideal = ideal_imu(spec, t, n.gravity)?;
        let accel = ideal.accel + b_f + sa.component_mul(&gaussian3(&mut rng));
        let gyro = ideal.gyro + b_w + sg.component_mul(&gaussian3(&mut rng));
        out.push(ImuSample::new(t, gyro, accel));
        b_f += sba.component_mul(&gaussian3(&mut rng));
        b_w += sbg.component_mul(&gaussian3(&mut rng));
    }
    Ok(out)
}

/// Camera pose in the workspace at time `t`.
pub fn camera_pose(spec: &TrajectorySpec, sensor: &SensorSpec, t: f64) -> Result<Pose, SimError> {
    Ok(truth(spec, t)?.pose.compose(&sensor.extrinsics_pose()))
}

/// Noise-free corners of `tag` seen from `camera`, or `None` when the
/// visibility rules reject it.
pub fn visible_corners(
    camera: &Pose,
    tag: &SceneTag,
    scene: &SceneSpec,
    k: &PinholeIntrinsics,
) -> Option<[Pixel; 4]> {
    let tag_pose = Pose::from(&tag.pose);
    let normal = tag_pose.orientation * Vec3::z();
    let to_cam = camera.position - tag_pose.position;
    let cos = normal.dot(&to_cam) / to_cam.norm();
    if cos < scene.max_view_angle_deg.to_radians().cos() {
        return None;
    }
    let world_to_cam = camera.inverse();
    let geom = TagGeometry::new(tag.side).ok()?;
    let mut px = [Pixel::zeros(); 4];
    for (i, c) in tag_corners(&geom).iter().enumerate() {
        let p = world_to_cam.transform_point(&tag_pose.transform_point(c));
        px[i] = project(&p, k).ok()?;
        if !k.contains(&px[i]) {
            return None;
        }
    }
    let min_side = (0..4).map(|i| (px[(i + 1) % 4] - px[i]).norm()).fold(f64::INFINITY, f64::min);
    (min_side >= scene.min_side_px).then_some(px)
}

/// Corner detections for every camera frame.
pub fn synth_detections(
    spec: &TrajectorySpec,
    scene: &SceneSpec,
    sensor: &SensorSpec,
    k: &PinholeIntrinsics,
    seed: u64,
) -> Result<Vec<CameraFrame>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CAMERA_STREAM);
    let drop = Bernoulli::new(sensor.dropout).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let mut frames = Vec::new();
    for t in sample_times(spec.duration, sensor.camera_rate) {
        let cam = camera_pose(spec, sensor, t)?;
        let lost = drop.sample(&mut rng);
        let blackout = sensor.blackouts.iter().any(|[a, b]| (*a..=*b).contains(&t));
        let mut detections = Vec::new();
        for tag in &scene.tags {
            let Some(mut corners) = visible_corners(&cam, tag, scene, k) else {
                continue;
            };
            // noise is drawn for every visible tag so streams do not shift
            // with dropout decisions
            for c in corners.iter_mut() {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                *c += Pixel::new(dx, dy) * sensor.pixel_sigma;
            }
            if !corners.iter().all(|c| k.contains(c)) {
                continue;
            }
            detections.push(TagDetection { t, tag_id: tag.id, corners });
        }
        let dropped = lost || blackout;
        if dropped {
            detections.clear();
        }
        frames.push(CameraFrame { t, detections, dropped });
    }
    Ok(frames)
}
