//! Single-frame tag pose from four noisy corners.

use fiducial_ekf::camera::PinholeIntrinsics;
use fiducial_ekf::geometry::{rotation_angle, quat_exp, Vec3};
use fiducial_ekf::models::{predict_corner, tag_corners, TagDetection, TagGeometry};
use fiducial_ekf::tag_init::estimate_tag_pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = PinholeIntrinsics::new(460.0, 460.0, 376.0, 240.0, 752, 480)?;
    let geom = TagGeometry::new(0.16)?;
    let r = Vec3::new(-0.1, 0.08, 0.9);
    let q = quat_exp(&Vec3::new(std::f64::consts::PI - 0.3, 0.2, 0.4));

    let noise = Normal::new(0.0, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut corners = [nalgebra::Vector2::zeros(); 4];
    for (out, c) in corners.iter_mut().zip(tag_corners(&geom)) {
        let p = predict_corner(&r, &q, &c, &k)?;
        *out = p + nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
    }
    let det = TagDetection { t: 0.0, tag_id: 7, corners };
    let est = estimate_tag_pose(&det, &geom, &k)?;
    println!("iterations {}, rms residual {:.3} px, ambiguous {}", est.iterations, est.rms_residual, est.ambiguous);
    println!("position error {:.2} mm", (est.r - r).norm() * 1e3);
    println!("rotation error {:.3} deg", rotation_angle(&(est.q.inverse() * q)).to_degrees());
    Ok(())
}
