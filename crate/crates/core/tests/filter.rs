use std::collections::BTreeMap;

use fiducial_ekf::ekf::{
    augment, idx, is_psd, propagate, update, Covariance, Event, Filter, FilterState, KnownTagMap, MeasurementModel,
    SnapshotKind,
};
use fiducial_ekf::eval::{anchor_frame_of, pose_errors, workspace_track};
use fiducial_ekf::geometry::{rot_z, rotation_angle, Pose, PoseRecord, UnitQuaternion, Vec3};
use fiducial_ekf::models::ImuSample;
use fiducial_ekf::sim::{preset, Scenario, Sinusoid, SimOutput, TruthSample};

fn true_state(scenario: &Scenario, s: &TruthSample) -> FilterState {
    let mut st = FilterState::new(s.t);
    let q = s.pose.orientation;
    st.q = q;
    st.r = q.inverse() * s.pose.position;
    st.v = q.inverse() * s.velocity;
    st.b_f = Vec3::from(scenario.sensor.initial_accel_bias);
    st.b_w = Vec3::from(scenario.sensor.initial_gyro_bias);
    let ex = scenario.sensor.extrinsics_pose();
    st.r_v = ex.position;
    st.q_v = ex.orientation.inverse();
    st
}

fn small_covariance() -> Covariance {
    Covariance::from_diagonal_element(21, 21, 1e-6)
}

fn truth_tags(scenario: &Scenario) -> BTreeMap<u32, Pose> {
    scenario.scene.tags.iter().map(|t| (t.id, Pose::from(&t.pose))).collect()
}

fn anchored_errors(scenario: &Scenario, sim: &SimOutput, filter: &Filter, snaps: &[fiducial_ekf::ekf::StateSnapshot]) -> f64 {
    let anchor = filter.anchor().expect("anchor").tag_id;
    let to_ws = anchor_frame_of(&truth_tags(scenario)[&anchor]).inverse();
    let truth: Vec<_> = sim.truth.iter().map(|s| (s.t, to_ws.compose(&s.pose))).collect();
    pose_errors(&workspace_track(snaps, Some(SnapshotKind::Imu)), &truth).position_rmse()
}

#[test]
fn imu_only_stream_is_dead_reckoning() {
    let scenario = preset("table").unwrap().with_duration(10.0);
    let sim = scenario.generate(1).unwrap();
    let events: Vec<Event> = sim.imu.iter().map(|s| Event::Imu(*s)).collect();
    let mut filter = Filter::new(scenario.filter_config()).unwrap();
    let mut last = 0.0;
    let mut steps = 0;
    for e in &events {
        let Ok(snaps) = filter.process(e) else { continue };
        if !filter.is_initialized() {
            continue;
        }
        assert!(snaps.iter().all(|s| s.kind != SnapshotKind::Update));
        let p = filter.covariance();
        let trace = p[(idx::R, idx::R)] + p[(idx::R + 1, idx::R + 1)] + p[(idx::R + 2, idx::R + 2)];
        assert!(trace >= last, "position trace shrank at t={}", e.t());
        last = trace;
        steps += 1;
    }
    assert!(steps > 1900);
    assert!(filter.state().unwrap().tags.is_empty());
}

#[test]
fn detection_between_samples_sets_state_time() {
    let scenario = preset("table").unwrap().with_duration(2.0);
    let sim = scenario.generate(2).unwrap();
    let start = true_state(&scenario, &sim.truth[0]);
    let mut filter = Filter::with_state(scenario.filter_config(), start, small_covariance()).unwrap();
    for s in sim.imu.iter().take(21) {
        filter.process(&Event::Imu(*s)).unwrap();
    }
    let frame = sim.frames.iter().find(|f| f.t > 0.1 && !f.detections.is_empty()).unwrap();
    let t = sim.imu[20].t + 0.0025;
    let mut dets = frame.detections.clone();
    for d in &mut dets {
        d.t = t;
    }
    let snaps = filter.process(&Event::Detections { t, dets }).unwrap();
    assert_eq!(filter.state().unwrap().t, t);
    assert!(snaps.iter().all(|s| s.state.t == t));
    assert_eq!(snaps[0].kind, SnapshotKind::Prior);
}

#[test]
fn filter_equals_manual_composition() {
    let scenario = preset("table").unwrap().with_duration(4.0);
    let sim = scenario.generate(3).unwrap();
    let cfg = scenario.filter_config();
    let start = true_state(&scenario, &sim.truth[0]);
    let mut filter = Filter::with_state(cfg.clone(), start.clone(), small_covariance()).unwrap();
    let events = sim.events();
    let run = filter.run(&events);
    assert!(run.rejected.is_empty());

    let model = MeasurementModel { intrinsics: cfg.intrinsics, sizes: cfg.tag_sizes.clone(), known: KnownTagMap::new() };
    let (mut st, mut p) = (start, small_covariance());
    let mut last: Option<ImuSample> = None;
    for e in &events {
        match e {
            Event::Imu(next) => {
                if let Some(prev) = last {
                    let u = ((st.t - prev.t) / (next.t - prev.t)).clamp(0.0, 1.0);
                    let gyro = (prev.gyro.lerp(&next.gyro, u) + next.gyro) * 0.5;
                    let accel = (prev.accel.lerp(&next.accel, u) + next.accel) * 0.5;
                    propagate(&mut st, &mut p, &ImuSample::new(next.t, gyro, accel), &cfg.noise).unwrap();
                }
                last = Some(*next);
            }
            Event::Detections { t, dets } => {
                let held = last.unwrap();
                propagate(&mut st, &mut p, &ImuSample::new(*t, held.gyro, held.accel), &cfg.noise).unwrap();
                let report = update(&mut st, &mut p, dets, &model, &cfg.noise, cfg.gate).unwrap();
                for det in &report.unknown {
                    let geom = cfg.tag_sizes.geometry(det.tag_id).unwrap();
                    augment(&mut st, &mut p, det, &geom, &cfg.intrinsics, &cfg.augment).unwrap();
                }
            }
        }
    }
    let filtered = filter.state().unwrap();
    assert_eq!(filtered.tags.len(), 3);
    assert_eq!(filtered, &st);
    assert_eq!(filter.covariance(), &p);
}

#[test]
fn noiseless_augmentation_recovers_the_relative_pose() {
    let mut scenario = preset("table").unwrap().with_duration(2.0);
    scenario.sensor.pixel_sigma = 0.0;
    let sim = scenario.generate(4).unwrap();
    let frame = sim.frames.iter().find(|f| !f.detections.is_empty()).unwrap();
    let truth = sim.truth.iter().find(|s| s.t == frame.t).unwrap();
    let camera = truth.pose.compose(&scenario.sensor.extrinsics_pose());
    let cfg = scenario.filter_config();
    let mut st = true_state(&scenario, truth);
    let mut p = small_covariance();
    for det in &frame.detections {
        let geom = cfg.tag_sizes.geometry(det.tag_id).unwrap();
        augment(&mut st, &mut p, det, &geom, &cfg.intrinsics, &cfg.augment).unwrap();
        let tag = truth_tags(&scenario)[&det.tag_id];
        let tag_in_camera = camera.inverse().compose(&tag);
        let est = &st.tags[&det.tag_id];
        assert!((est.r - tag_in_camera.position).norm() < 1e-6);
        assert!(rotation_angle(&(est.q * tag_in_camera.orientation)) < 1e-6);
    }
    assert_eq!(p.nrows(), 21 + 6 * frame.detections.len());
}

/// A quarter turn about the vertical plus a shift, applied to tags and
/// trajectory alike.
fn transform_world(scenario: &Scenario) -> Scenario {
    let turn = rot_z(std::f64::consts::FRAC_PI_2);
    let shift = Vec3::new(3.0, -2.0, 0.5);
    let mut out = scenario.clone();
    let tr = &mut out.trajectory;
    let c = turn * Vec3::from(tr.position_center) + shift;
    tr.position_center = c.into();
    let [x, y, z] = scenario.trajectory.position.clone();
    let neg = |v: Vec<Sinusoid>| v.into_iter().map(|s| Sinusoid::new(-s.amplitude, s.frequency, s.phase)).collect();
    tr.position = [neg(y), x, z];
    let [w, i, j, k] = tr.base_orientation;
    let q = turn * fiducial_ekf::geometry::quat(w, i, j, k);
    tr.base_orientation = [q.w, q.i, q.j, q.k];
    for t in &mut out.scene.tags {
        let p = Pose::from(&t.pose);
        t.pose = PoseRecord::from(&Pose::new(turn * p.position + shift, turn * p.orientation));
    }
    out
}

#[test]
fn anchored_workspace_is_gauge_invariant() {
    let scenario = preset("table").unwrap().with_duration(20.0);
    let moved = transform_world(&scenario);
    let mut tracks = Vec::new();
    for sc in [&scenario, &moved] {
        let sim = sc.generate(5).unwrap();
        let mut f = Filter::new(sc.filter_config()).unwrap();
        let run = f.run(&sim.events());
        assert!(anchored_errors(sc, &sim, &f, &run.snapshots) < 0.02);
        tracks.push(workspace_track(&run.snapshots, Some(SnapshotKind::Imu)));
    }
    assert_eq!(tracks[0].len(), tracks[1].len());
    for ((ta, a), (tb, b)) in tracks[0].iter().zip(&tracks[1]) {
        assert_eq!(ta, tb);
        assert!((a.position - b.position).norm() < 1e-3, "t={ta}");
        assert!(rotation_angle(&(a.orientation.inverse() * b.orientation)) < 1e-3);
    }
}

#[test]
fn known_tags_give_world_poses() {
    let scenario = preset("table").unwrap().with_duration(30.0);
    let sim = scenario.generate(6).unwrap();
    let mut cfg = scenario.filter_config();
    let mut known = KnownTagMap::new();
    for t in &scenario.scene.tags {
        known.insert(t.id, Pose::from(&t.pose), None);
    }
    cfg.known_tags = known;
    let mut f = Filter::new(cfg).unwrap();
    let run = f.run(&sim.events());
    assert!(f.state().unwrap().tags.is_empty());
    let truth: Vec<_> = sim.truth.iter().map(|s| (s.t, s.pose)).collect();
    let errors = pose_errors(&workspace_track(&run.snapshots, Some(SnapshotKind::Imu)), &truth);
    assert!(errors.len() > 5000);
    assert!(errors.since(5.0).position_rmse() < 0.01, "{}", errors.since(5.0).position_rmse());
    assert!(errors.since(5.0).orientation_rmse() < 0.01);
}

#[test]
fn accuracy_is_insensitive_to_augmentation_prior() {
    let scenario = preset("table").unwrap();
    let sim = scenario.generate(7).unwrap();
    let rmse = |scale: f64| {
        let mut cfg = scenario.filter_config();
        cfg.augment.sigma_position *= scale.sqrt();
        cfg.augment.sigma_rotation *= scale.sqrt();
        let mut f = Filter::new(cfg).unwrap();
        let run = f.run(&sim.events());
        anchored_errors(&scenario, &sim, &f, &run.snapshots)
    };
    let nominal = rmse(1.0);
    for scale in [0.25, 4.0] {
        let e = rmse(scale);
        assert!((e - nominal).abs() <= 0.1 * nominal, "variance x{scale}: {e} vs {nominal}");
    }
}

#[test]
fn extrinsics_converge_from_an_offset() {
    let scenario = preset("calibration").unwrap();
    let sim = scenario.generate(8).unwrap();
    let truth = scenario.sensor.extrinsics_pose();
    let mut cfg = scenario.filter_config();
    let offset = Pose::new(
        truth.position + Vec3::new(0.03, -0.03, 0.025),
        truth.orientation * UnitQuaternion::from_scaled_axis(Vec3::new(0.05, 0.05, -0.04)),
    );
    cfg.init.extrinsics = PoseRecord::from(&offset);
    cfg.init.sigma_extrinsic_position = 0.05;
    cfg.init.sigma_extrinsic_rotation = 0.1;
    let mut f = Filter::new(cfg).unwrap();
    let run = f.run(&sim.events());
    for s in run.snapshots.iter().step_by(97) {
        assert!(s.state.is_finite());
    }
    assert!(is_psd(f.covariance()));
    let st = f.state().unwrap();
    let e0 = (offset.position - truth.position).norm();
    let r0 = rotation_angle(&(offset.orientation.inverse() * truth.orientation));
    let e1 = (st.r_v - truth.position).norm();
    let r1 = rotation_angle(&(st.q_v * truth.orientation));
    assert!(e1 < e0 / 10.0, "{e1} vs {e0}");
    assert!(r1 < r0 / 10.0, "{r1} vs {r0}");
}
