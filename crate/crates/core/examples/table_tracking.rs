//! Tracking a hand-held sensor over three tags on a table, with the first
//! tag as workspace origin.

use fiducial_ekf::ekf::{Filter, SnapshotKind};
use fiducial_ekf::eval::{all_tag_pair_errors, anchor_frame_of, pose_errors, workspace_track};
use fiducial_ekf::geometry::Pose;
use fiducial_ekf::sim::preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = preset("table")?;
    let sim = scenario.generate(1)?;
    let mut filter = Filter::new(scenario.filter_config())?;
    let run = filter.run(&sim.events());

    let tags = scenario.scene.tags.iter().map(|t| (t.id, Pose::from(&t.pose))).collect();
    for ((a, b), e) in all_tag_pair_errors(&run.snapshots, &tags) {
        println!(
            "tags {a}-{b}: distance error {:.2} mm, relative rotation error {:.3} deg",
            e.final_position().unwrap_or(f64::NAN) * 1e3,
            e.final_orientation().unwrap_or(f64::NAN).to_degrees()
        );
    }

    let anchor = filter.anchor().expect("a tag was seen").tag_id;
    let to_ws = anchor_frame_of(&tags[&anchor]).inverse();
    let truth: Vec<_> = sim.truth.iter().map(|s| (s.t, to_ws.compose(&s.pose))).collect();
    let errors = pose_errors(&workspace_track(&run.snapshots, Some(SnapshotKind::Imu)), &truth);
    println!(
        "workspace anchored on tag {anchor}: position RMSE {:.2} cm, orientation RMSE {:.2} deg",
        errors.position_rmse() * 100.0,
        errors.orientation_rmse().to_degrees()
    );
    let mean_ms = 1e3 * run.event_seconds.iter().sum::<f64>() / run.event_seconds.len() as f64;
    println!("{} events, {mean_ms:.3} ms per event", run.event_seconds.len());
    Ok(())
}
