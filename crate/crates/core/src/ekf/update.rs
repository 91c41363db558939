use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3};

use super::state::{idx, symmetrize, Covariance, FilterState};
use super::workspace::KnownTagMap;
use super::EkfError;
use crate::camera::{project, project_jacobian, PinholeIntrinsics, Pixel};
use crate::geometry::skew;
use crate::models::{
    corner_jacobians, predict_corner, tag_corners, ModelError, NoiseParameters, TagDetection, TagGeometry, TagId,
    TagSizes,
};

/// Everything the corner model needs besides the state.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub intrinsics: PinholeIntrinsics,
    pub sizes: TagSizes,
    pub known: KnownTagMap,
}

impl MeasurementModel {
    pub fn geometry(&self, id: TagId) -> Result<TagGeometry, ModelError> {
        match self.known.geometry_override(id) {
            Some(g) => Ok(g),
            None => self.sizes.geometry(id),
        }
    }
}

/// 0.999 quantile of the χ² distribution for 2, 4, 6 or 8 degrees of
/// freedom.
pub fn chi2_quantile_999(dof: usize) -> f64 {
    match dof {
        2 => 13.816,
        4 => 18.467,
        6 => 22.458,
        8 => 26.125,
        _ => panic!("no tabulated quantile for {dof} degrees of freedom"),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    /// Tags whose corners entered the update.
    pub used: Vec<TagId>,
    /// Tags rejected by the gate, with their squared Mahalanobis distance.
    pub gated: Vec<(TagId, f64)>,
    /// Tags with at least one corner behind the camera, and the number of
    /// corners dropped.
    pub dropped_corners: Vec<(TagId, usize)>,
    /// Detections of tags that are neither tracked nor known.
    pub unknown: Vec<TagDetection>,
    /// Squared Mahalanobis distance of the whole stacked innovation.
    pub nis: Option<f64>,
}

/// Predicted corners of a tracked or known tag; `None` entries are behind
/// the camera. Returns `None` for tags the model does not know.
pub fn predict_measurement(state: &FilterState, id: TagId, model: &MeasurementModel) -> Option<[Option<Pixel>; 4]> {
    let geom = model.geometry(id).ok()?;
    let corners = tag_corners(&geom);
    let k = &model.intrinsics;
    if let Some(tag) = state.tags.get(&id) {
        return Some(corners.map(|c| predict_corner(&tag.r, &tag.q, &c, k).ok()));
    }
    let pose = model.known.pose(id)?;
    Some(corners.map(|c| project(&known_corner_in_camera(state, &pose.transform_point(&c)), k).ok()))
}

/// `C_VB (C_BW p − r − r_V)` for a workspace point `p`.
fn known_corner_in_camera(state: &FilterState, p: &nalgebra::Vector3<f64>) -> nalgebra::Vector3<f64> {
    state.q_v * (state.q.inverse() * p - state.r - state.r_v)
}

/// Measurement Jacobian of the four corners of tag `id`, `8 × dim`. Rows
/// of corners behind the camera are zero.
pub fn measurement_jacobian(state: &FilterState, id: TagId, model: &MeasurementModel) -> Option<DMatrix<f64>> {
    let geom = model.geometry(id).ok()?;
    let corners = tag_corners(&geom);
    let k = &model.intrinsics;
    let mut h = DMatrix::zeros(8, state.dim());
    if let Some(o) = state.tag_index(id) {
        let tag = &state.tags[&id];
        for (i, c) in corners.iter().enumerate() {
            if let Ok((jr, jq)) = corner_jacobians(&tag.r, &tag.q, c, k) {
                h.fixed_view_mut::<2, 3>(2 * i, o).copy_from(&jr);
                h.fixed_view_mut::<2, 3>(2 * i, o + 3).copy_from(&jq);
            }
        }
        return Some(h);
    }
    let pose = model.known.pose(id)?;
    let c_vb = state.q_v.to_rotation_matrix().into_inner();
    let c_bw = state.q.inverse().to_rotation_matrix().into_inner();
    for (i, c) in corners.iter().enumerate() {
        let p = pose.transform_point(c);
        let Ok(jp) = project_jacobian(&known_corner_in_camera(state, &p), k) else {
            continue;
        };
        let pb = c_bw * p;
        let a = pb - state.r - state.r_v;
        let blocks: [(usize, Matrix2x3<f64>); 4] = [
            (idx::R, -jp * c_vb),
            (idx::Q, jp * c_vb * skew(&pb)),
            (idx::RV, -jp * c_vb),
            (idx::QV, -jp * c_vb * skew(&a)),
        ];
        for (col, b) in blocks {
            h.fixed_view_mut::<2, 3>(2 * i, col).copy_from(&b);
        }
    }
    Some(h)
}

struct TagRows {
    id: TagId,
    h: DMatrix<f64>,
    y: DVector<f64>,
}

/// One EKF update with the corners of every tracked or known tag in `dets`.
///
/// All detections must carry the filter timestamp. Detections of other tags
/// are returned in the report for augmentation.
pub fn update(
    state: &mut FilterState,
    cov: &mut Covariance,
    dets: &[TagDetection],
    model: &MeasurementModel,
    noise: &NoiseParameters,
    gate: bool,
) -> Result<UpdateReport, EkfError> {
    let mut report = UpdateReport::default();
    let r_px = Matrix2::new(noise.pixel[0][0], noise.pixel[0][1], noise.pixel[1][0], noise.pixel[1][1]);
    let n = state.dim();
    let mut rows: Vec<TagRows> = Vec::new();
    for det in dets {
        if rows.iter().any(|r| r.id == det.tag_id) {
            continue;
        }
        let Some(pred) = predict_measurement(state, det.tag_id, model) else {
            if !report.unknown.iter().any(|d| d.tag_id == det.tag_id) {
                report.unknown.push(*det);
            }
            continue;
        };
        let h_full = measurement_jacobian(state, det.tag_id, model).expect("tag known to the model");
        let valid: Vec<usize> = (0..4).filter(|&i| pred[i].is_some()).collect();
        if valid.len() < 4 {
            report.dropped_corners.push((det.tag_id, 4 - valid.len()));
        }
        if valid.is_empty() {
            continue;
        }
        let m = 2 * valid.len();
        let mut h = DMatrix::zeros(m, n);
        let mut y = DVector::zeros(m);
        for (row, &i) in valid.iter().enumerate() {
            h.rows_mut(2 * row, 2).copy_from(&h_full.rows(2 * i, 2));
            let p = pred[i].expect("filtered above");
            y[2 * row] = det.corners[i].x - p.x;
            y[2 * row + 1] = det.corners[i].y - p.y;
        }
        if gate {
            let s = &h * &*cov * h.transpose() + block_diag(&r_px, valid.len());
            let d2 = s
                .cholesky()
                .map(|c| y.dot(&c.solve(&y)))
                .ok_or(EkfError::SingularInnovationCovariance)?;
            if d2 > chi2_quantile_999(m) {
                report.gated.push((det.tag_id, d2));
                continue;
            }
        }
        rows.push(TagRows { id: det.tag_id, h, y });
    }
    if rows.is_empty() {
        return Ok(report);
    }

    let m: usize = rows.iter().map(|r| r.y.len()).sum();
    let mut h = DMatrix::zeros(m, n);
    let mut y = DVector::zeros(m);
    let mut o = 0;
    for r in &rows {
        let k = r.y.len();
        h.rows_mut(o, k).copy_from(&r.h);
        y.rows_mut(o, k).copy_from(&r.y);
        o += k;
    }
    let r_all = block_diag(&r_px, m / 2);
    let hp = &h * &*cov;
    let mut s = &hp * h.transpose() + &r_all;
    symmetrize(&mut s);
    let chol = s.cholesky().ok_or(EkfError::SingularInnovationCovariance)?;
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
    let gain = chol.solve(&hp).transpose();
    report.nis = Some(y.dot(&chol.solve(&y)));
    let dx = &gain * &y;

    // Joseph form: (I − KH) P (I − KH)ᵀ + K R Kᵀ
    let t = &*cov - &gain * &hp;
    let mut p = &t - (&t * h.transpose()) * gain.transpose() + &gain * r_all * gain.transpose();
    symmetrize(&mut p);
    state.apply_correction(&dx);
    *cov = p;
    report.used = rows.iter().map(|r| r.id).collect();
    Ok(report)
}

fn block_diag(b: &Matrix2<f64>, count: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * count, 2 * count);
    for i in 0..count {
        out.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(b);
    }
    out
}
