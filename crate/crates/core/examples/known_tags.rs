//! Localizing against tags whose workspace poses are surveyed in advance.

use fiducial_ekf::ekf::{Filter, KnownTagMap, SnapshotKind};
use fiducial_ekf::eval::{pose_errors, workspace_track};
use fiducial_ekf::geometry::Pose;
use fiducial_ekf::sim::preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = preset("table")?.with_duration(30.0);
    let sim = scenario.generate(2)?;
    let mut cfg = scenario.filter_config();
    let mut known = KnownTagMap::new();
    for t in &scenario.scene.tags {
        known.insert(t.id, Pose::from(&t.pose), None);
    }
    cfg.known_tags = known;

    let mut filter = Filter::new(cfg)?;
    let run = filter.run(&sim.events());
    let truth: Vec<_> = sim.truth.iter().map(|s| (s.t, s.pose)).collect();
    let errors = pose_errors(&workspace_track(&run.snapshots, Some(SnapshotKind::Imu)), &truth).since(5.0);
    println!("estimated tags in the state: {}", filter.state().map_or(0, |s| s.tags.len()));
    println!(
        "world-frame position RMSE {:.2} cm, orientation RMSE {:.2} deg",
        errors.position_rmse() * 100.0,
        errors.orientation_rmse().to_degrees()
    );
    Ok(())
}
