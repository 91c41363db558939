//! Filter consistency: NEES of the body pose relative to the anchor tag,
//! averaged over time and over seeded runs.
//!
//! cargo run --release --example monte_carlo_nees -- 20

use std::collections::BTreeMap;

use fiducial_ekf::ekf::{Event, Filter};
use fiducial_ekf::eval::body_in_tag_nees;
use fiducial_ekf::geometry::Pose;
use fiducial_ekf::sim::{preset, Scenario};

fn time_averaged_nees(scenario: &Scenario, seed: u64) -> Option<f64> {
    let tags: BTreeMap<_, _> = scenario.scene.tags.iter().map(|t| (t.id, Pose::from(&t.pose))).collect();
    let sim = scenario.generate(seed).ok()?;
    let truth: BTreeMap<u64, _> = sim.truth.iter().map(|s| (s.t.to_bits(), s.pose)).collect();
    let mut filter = Filter::new(scenario.filter_config()).ok()?;
    let (mut next, mut sum, mut n) = (5.0, 0.0, 0);
    for e in &sim.events() {
        let _ = filter.process(e);
        let (Event::Imu(s), Some(st)) = (e, filter.state()) else { continue };
        if s.t < next {
            continue;
        }
        next += 1.0;
        let anchor = filter.anchor()?.tag_id;
        let body_in_anchor = tags[&anchor].inverse().compose(&truth[&s.t.to_bits()]);
        sum += body_in_tag_nees(st, filter.covariance(), anchor, &body_in_anchor)?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs: u64 = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let scenario = preset("table")?;
    let values: Vec<f64> = (0..runs).filter_map(|i| time_averaged_nees(&scenario, 100 + i)).collect();
    for (i, v) in values.iter().enumerate() {
        println!("run {i:>3}: {v:.2}");
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!("mean NEES {mean:.2} over {} runs (6 degrees of freedom)", values.len());
    Ok(())
}
