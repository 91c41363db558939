//! Hamilton quaternions with passive semantics and right-side boxplus.

use fiducial_ekf::geometry::{boxminus, boxplus, quat_exp, quat_log, quat_wxyz, right_jacobian, rot_z, Pose, Vec3};

fn main() {
    // q_WB maps body-frame vectors into the world frame.
    let q_wb = rot_z(std::f64::consts::FRAC_PI_2);
    println!("q_WB = {:?} (w, x, y, z)", quat_wxyz(&q_wb));
    println!("body x axis in world: {:.3?}", (q_wb * Vec3::x()).as_slice());

    // A small body-frame rotation applied on the right.
    let delta = Vec3::new(0.01, -0.02, 0.03);
    let q = boxplus(&q_wb, &delta);
    println!("boxminus(boxplus(q, d), q) = {:.6?}", boxminus(&q, &q_wb).as_slice());

    let phi = Vec3::new(0.3, -1.2, 0.8);
    println!("log(exp(phi)) = {:.6?}", quat_log(&quat_exp(&phi)).as_slice());
    println!("right Jacobian at phi:{:.4}", right_jacobian(&phi));

    // Poses compose like transforms: T_WC = T_WB * T_BC.
    let t_wb = Pose::new(Vec3::new(1.0, 2.0, 0.5), q_wb);
    let t_bc = Pose::new(Vec3::new(0.05, 0.0, 0.02), quat_exp(&Vec3::new(0.0, 0.1, 0.0)));
    let t_wc = t_wb.compose(&t_bc);
    println!("camera origin in world: {:.4?}", t_wc.position.as_slice());
    println!("round trip error: {:.2e}", (t_wc.compose(&t_wc.inverse()).position).norm());
}
