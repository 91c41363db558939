//! Projecting tag corners, with and without lens distortion.

use fiducial_ekf::camera::{distort_pixel, project, undistort_pixel, PinholeIntrinsics, RadTanDistortion};
use fiducial_ekf::geometry::{quat_exp, Vec3};
use fiducial_ekf::models::{corner_in_camera, predict_corner, tag_corners, TagGeometry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = PinholeIntrinsics::new(460.0, 460.0, 376.0, 240.0, 752, 480)?;
    let d = RadTanDistortion::new(-0.28, 0.07, 0.0, 2e-4, 1e-5, &k)?;
    let geom = TagGeometry::new(0.16)?;

    // Tag 1.2 m in front of the camera, tilted a little.
    let r_vt = Vec3::new(0.1, -0.05, 1.2);
    let q_tv = quat_exp(&Vec3::new(std::f64::consts::PI + 0.2, 0.1, 0.0)).inverse();

    for (i, c) in tag_corners(&geom).iter().enumerate() {
        let p = corner_in_camera(&r_vt, &q_tv, c);
        let ideal = predict_corner(&r_vt, &q_tv, c, &k)?;
        let raw = distort_pixel(&ideal, &k, &d);
        let back = undistort_pixel(&raw, &k, &d)?;
        println!(
            "corner {i}: camera ({:.3}, {:.3}, {:.3}) -> {:.2?} px, distorted {:.2?}, recovered error {:.1e} px",
            p.x,
            p.y,
            p.z,
            [ideal.x, ideal.y],
            [raw.x, raw.y],
            (back - ideal).norm()
        );
    }
    println!("principal axis point: {:?}", project(&Vec3::new(0.0, 0.0, 2.0), &k)?);
    Ok(())
}
