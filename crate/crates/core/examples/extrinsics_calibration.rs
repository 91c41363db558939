//! Online camera-IMU calibration from a deliberately wrong starting guess.

use fiducial_ekf::ekf::Filter;
use fiducial_ekf::eval::extrinsics_repeatability;
use fiducial_ekf::geometry::{boxplus, rotation_angle, Pose, PoseRecord, Vec3};
use fiducial_ekf::sim::preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = preset("calibration")?;
    let truth = scenario.sensor.extrinsics_pose();
    let mut finals = Vec::new();
    for seed in 0..5u64 {
        let s = seed as f64;
        let guess = Pose::new(
            truth.position + Vec3::new(s.cos(), s.sin(), 0.5).normalize() * 0.05,
            boxplus(&truth.orientation, &(Vec3::new(0.3, s.sin(), s.cos()).normalize() * 5f64.to_radians())),
        );
        let mut cfg = scenario.filter_config();
        cfg.init.extrinsics = PoseRecord::from(&guess);
        cfg.init.sigma_extrinsic_position = 0.05;
        cfg.init.sigma_extrinsic_rotation = 0.17;

        let sim = scenario.generate(seed)?;
        let mut filter = Filter::new(cfg)?;
        filter.run(&sim.events());
        let st = filter.state().expect("initialized");
        let est = Pose::new(st.r_v, st.q_v.inverse());
        println!(
            "seed {seed}: translation error {:.1} -> {:.2} mm, rotation error {:.2} -> {:.3} deg",
            (guess.position - truth.position).norm() * 1e3,
            (est.position - truth.position).norm() * 1e3,
            rotation_angle(&(guess.orientation.inverse() * truth.orientation)).to_degrees(),
            rotation_angle(&(est.orientation.inverse() * truth.orientation)).to_degrees()
        );
        finals.push(est);
    }
    let (t, r) = extrinsics_repeatability(&finals)?;
    println!("repeatability: {:.2} mm, {r:.5} rad", t * 1e3);
    Ok(())
}
