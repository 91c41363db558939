//! Single-frame tag pose from four corner detections.
//!
//! A normalized DLT homography maps the tag plane to normalized image
//! coordinates. It is decomposed into the two rotations that are consistent
//! with the local affine part of the homography (the classic planar pose
//! ambiguity), translation is solved linearly for each, and both candidates
//! are refined by Gauss-Newton on the corner reprojection error.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{PinholeIntrinsics, Pixel};
use crate::geometry::{boxplus, rotation_angle, UnitQuaternion, Vec3};
use crate::models::{corner_jacobians, predict_corner, tag_corners, TagDetection, TagGeometry};

pub const MAX_ITERATIONS: usize = 50;
pub const MAX_HALVINGS: usize = 10;
pub const STEP_TOLERANCE: f64 = 1e-10;
/// Minimum triangle area between any three corners, px².
pub const MIN_TRIANGLE_AREA: f64 = 1.0;
/// Residual ratio under which the two planar solutions count as ambiguous.
pub const AMBIGUITY_RATIO: f64 = 0.1;
/// Rotation difference (rad) below which the two solutions are the same pose.
const DISTINCT_SOLUTIONS: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TagInitError {
    #[error("tag corners are degenerate (collinear or duplicate)")]
    DegenerateCorners,
    #[error("pose refinement did not converge")]
    NoConvergence,
    #[error("every pose solution places the tag behind the camera")]
    BehindCamera,
}

/// Relative tag pose: `r = _V r_VT`, `q = q_TV`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagPoseEstimate {
    pub r: Vec3,
    pub q: UnitQuaternion,
    pub rms_residual: f64,
    pub iterations: usize,
    /// Both planar solutions explain the corners about equally well.
    pub ambiguous: bool,
}

pub fn estimate_tag_pose(
    det: &TagDetection,
    geom: &TagGeometry,
    k: &PinholeIntrinsics,
) -> Result<TagPoseEstimate, TagInitError> {
    check_corners(&det.corners)?;
    let model = tag_corners(geom);
    let normalized: Vec<Vector2<f64>> = det
        .corners
        .iter()
        .map(|p| Vector2::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy))
        .collect();
    let plane: Vec<Vector2<f64>> = model.iter().map(|c| Vector2::new(c.x, c.y)).collect();
    let h = homography_dlt(&plane, &normalized).ok_or(TagInitError::DegenerateCorners)?;

    let mut candidates = Vec::with_capacity(2);
    for rot in planar_rotations(&h) {
        let Some(t) = solve_translation(&rot, &model, &normalized) else {
            continue;
        };
        if model.iter().any(|c| (rot * c + t).z <= 0.0) {
            continue;
        }
        // rot maps tag coordinates into the camera frame, i.e. it is C_VT
        let q_tv = UnitQuaternion::from_matrix(&rot).inverse();
        match refine(&det.corners, &model, k, t, q_tv) {
            Ok((c, _)) => candidates.push(c),
            Err(TagInitError::BehindCamera) => continue,
            Err(e) => return Err(e),
        }
    }
    if candidates.is_empty() {
        return Err(TagInitError::BehindCamera);
    }
    candidates.sort_by(|a, b| a.rms_residual.total_cmp(&b.rms_residual));
    let mut best = candidates[0];
    if let Some(other) = candidates.get(1) {
        let distinct = rotation_angle(&best.q.rotation_to(&other.q)) > DISTINCT_SOLUTIONS;
        let close = other.rms_residual - best.rms_residual <= AMBIGUITY_RATIO * other.rms_residual;
        best.ambiguous = distinct && close;
    }
    Ok(best)
}

fn check_corners(c: &[Pixel; 4]) -> Result<(), TagInitError> {
    for i in 0..4 {
        for j in (i + 1)..4 {
            for l in (j + 1)..4 {
                let a = c[j] - c[i];
                let b = c[l] - c[i];
                let area = 0.5 * (a.x * b.y - a.y * b.x).abs();
                if !(area > MIN_TRIANGLE_AREA) {
                    return Err(TagInitError::DegenerateCorners);
                }
            }
        }
    }
    Ok(())
}

/// Hartley similarity: centroid to origin, mean distance √2.
fn normalizing_transform(pts: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if mean_dist < 1e-15 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(v.x / v.z, v.y / v.z)
}

/// Normalized DLT for the plane-to-image homography, scaled so `H[(2,2)] = 1`.
pub fn homography_dlt(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (i, (s, d)) in src.iter().zip(dst).take(4).enumerate() {
        let s = apply(&ts, s);
        let d = apply(&td, d);
        let r0 = [-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x];
        let r1 = [0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let hm = td.try_inverse()? * hn * ts;
    if hm[(2, 2)].abs() < 1e-15 {
        return None;
    }
    Some(hm / hm[(2, 2)])
}

/// The two tag-to-camera rotations compatible with the homography's affine
/// part at the tag origin.
fn planar_rotations(h: &Matrix3<f64>) -> Vec<Matrix3<f64>> {
    let v = Vector2::new(h[(0, 2)], h[(1, 2)]);
    let jac = Matrix2::new(
        h[(0, 0)] - h[(2, 0)] * v.x,
        h[(0, 1)] - h[(2, 1)] * v.x,
        h[(1, 0)] - h[(2, 0)] * v.y,
        h[(1, 1)] - h[(2, 1)] * v.y,
    );

    // rotation taking the optical axis onto the ray through v
    let t = v.norm();
    let rv = if t < 1e-15 {
        Matrix3::identity()
    } else {
        let s = (1.0 + t * t).sqrt();
        let cos = 1.0 / s;
        let sin = (1.0 - 1.0 / (s * s)).max(0.0).sqrt();
        let kx = Matrix3::new(0.0, 0.0, v.x, 0.0, 0.0, v.y, -v.x, -v.y, 0.0) / t;
        Matrix3::identity() + sin * kx + (1.0 - cos) * kx * kx
    };
    let b = Matrix2::new(
        rv[(0, 0)] - v.x * rv[(2, 0)],
        rv[(0, 1)] - v.x * rv[(2, 1)],
        rv[(1, 0)] - v.y * rv[(2, 0)],
        rv[(1, 1)] - v.y * rv[(2, 1)],
    );
    let Some(b_inv) = b.try_inverse() else {
        return Vec::new();
    };
    let a = b_inv * jac;
    let aat = a * a.transpose();
    let gamma = (0.5
        * (aat[(0, 0)] + aat[(1, 1)] + ((aat[(0, 0)] - aat[(1, 1)]).powi(2) + 4.0 * aat[(0, 1)].powi(2)).sqrt()))
    .sqrt();
    if !(gamma > 0.0) {
        return Vec::new();
    }
    let r22 = a / gamma;
    let hh = Matrix2::identity() - r22.transpose() * r22;
    let mut bvec = Vector2::new(hh[(0, 0)].max(0.0).sqrt(), hh[(1, 1)].max(0.0).sqrt());
    if hh[(0, 1)] < 0.0 {
        bvec.y = -bvec.y;
    }
    let d = Vector3::new(r22[(0, 0)], r22[(1, 0)], bvec.x).cross(&Vector3::new(r22[(0, 1)], r22[(1, 1)], bvec.y));
    let (c, a33) = (Vector2::new(d.x, d.y), d.z);
    let build = |sign: f64| {
        rv * Matrix3::new(
            r22[(0, 0)],
            r22[(0, 1)],
            sign * c.x,
            r22[(1, 0)],
            r22[(1, 1)],
            sign * c.y,
            sign * bvec.x,
            sign * bvec.y,
            a33,
        )
    };
    vec![build(1.0), build(-1.0)]
}

/// Linear least squares for `t` given the rotation, from
/// `u (R X + t)_z = (R X + t)_x` and the analogous `y` rows.
fn solve_translation(rot: &Matrix3<f64>, model: &[Vec3; 4], img: &[Vector2<f64>]) -> Option<Vec3> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vec3::zeros();
    for (x, u) in model.iter().zip(img) {
        let p = rot * x;
        let rows = [
            (Vec3::new(1.0, 0.0, -u.x), u.x * p.z - p.x),
            (Vec3::new(0.0, 1.0, -u.y), u.y * p.z - p.y),
        ];
        for (row, rhs) in rows {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    ata.try_inverse().map(|inv| inv * atb)
}

fn residuals(
    obs: &[Pixel; 4],
    model: &[Vec3; 4],
    k: &PinholeIntrinsics,
    r: &Vec3,
    q: &UnitQuaternion,
) -> Option<SVector<f64, 8>> {
    let mut res = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let p = predict_corner(r, q, &model[i], k).ok()?;
        let e = obs[i] - p;
        res[2 * i] = e.x;
        res[2 * i + 1] = e.y;
    }
    Some(res)
}

fn refine(
    obs: &[Pixel; 4],
    model: &[Vec3; 4],
    k: &PinholeIntrinsics,
    mut r: Vec3,
    mut q: UnitQuaternion,
) -> Result<(TagPoseEstimate, Vec<f64>), TagInitError> {
    let mut res = residuals(obs, model, k, &r, &q).ok_or(TagInitError::BehindCamera)?;
    let mut cost = res.norm_squared();
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jac = SMatrix::<f64, 8, 6>::zeros();
        for i in 0..4 {
            let (jr, jq) = corner_jacobians(&r, &q, &model[i], k).map_err(|_| TagInitError::BehindCamera)?;
            jac.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&jr);
            jac.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&jq);
        }
        let normal = jac.transpose() * jac;
        let Some(step) = normal.cholesky().map(|c| c.solve(&(jac.transpose() * res))) else {
            return Err(TagInitError::NoConvergence);
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let s = step * scale;
            let r_new = r + s.fixed_rows::<3>(0);
            let q_new = boxplus(&q, &s.fixed_rows::<3>(3).into_owned());
            if let Some(res_new) = residuals(obs, model, k, &r_new, &q_new) {
                let c = res_new.norm_squared();
                if c <= cost {
                    r = r_new;
                    q = q_new;
                    res = res_new;
                    cost = c;
                    history.push(c);
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted || step.norm() * scale < STEP_TOLERANCE {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(TagInitError::NoConvergence);
    }
    if r.z <= 0.0 {
        return Err(TagInitError::BehindCamera);
    }
    let est = TagPoseEstimate {
        r,
        q,
        rms_residual: (cost / 4.0).sqrt(),
        iterations,
        ambiguous: false,
    };
    Ok((est, history))
}
