//! Accuracy metrics over completed runs.
//!
//! Estimates and truth are matched by exact timestamp. Orientation errors
//! are principal rotation angles in `[0, π]`.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix6, SMatrix, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::{
    anchor_rotation, body_in_tag, idx, Covariance, FilterState, MeasurementModel, SnapshotKind, StateSnapshot,
};
use crate::geometry::{boxminus, boxplus, rotation_angle, Pose, Vec3};
use crate::models::{predict_corner, tag_corners, TagDetection, TagId};
use crate::tag_init::estimate_tag_pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("tag {0} is missing from the estimate or the scene")]
    TagMissing(TagId),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no tag was reobserved after the absence threshold")]
    NoLoopDetected,
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("estimate and truth do not match: {0}")]
    Mismatch(String),
}

/// Position and orientation error over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub t: Vec<f64>,
    /// Meters.
    pub position: Vec<f64>,
    /// Radians.
    pub orientation: Vec<f64>,
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: f64, position: f64, orientation: f64) {
        self.t.push(t);
        self.position.push(position);
        self.orientation.push(orientation);
    }

    pub fn position_rmse(&self) -> f64 {
        rms(&self.position)
    }

    pub fn orientation_rmse(&self) -> f64 {
        rms(&self.orientation)
    }

    pub fn final_position(&self) -> Option<f64> {
        self.position.last().copied()
    }

    pub fn final_orientation(&self) -> Option<f64> {
        self.orientation.last().copied()
    }

    /// Samples with `t >= t0`.
    pub fn since(&self, t0: f64) -> ErrorSeries {
        let mut out = ErrorSeries::default();
        for i in 0..self.len() {
            if self.t[i] >= t0 {
                out.push(self.t[i], self.position[i], self.orientation[i]);
            }
        }
        out
    }
}

/// Least-squares slope of `y` over `t`.
pub fn linear_fit_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    if t.len() != y.len() || t.len() < 2 {
        return None;
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Position and orientation error of `estimate` against `truth`, matched by
/// exact timestamp. Estimates without a truth sample are skipped.
pub fn pose_errors(estimate: &[(f64, Pose)], truth: &[(f64, Pose)]) -> ErrorSeries {
    let lookup: BTreeMap<u64, &Pose> = truth.iter().map(|(t, p)| (t.to_bits(), p)).collect();
    let mut out = ErrorSeries::default();
    for (t, est) in estimate {
        if let Some(tr) = lookup.get(&t.to_bits()) {
            out.push(
                *t,
                (est.position - tr.position).norm(),
                rotation_angle(&(est.orientation.inverse() * tr.orientation)),
            );
        }
    }
    out
}

/// Gravity-aligned workspace frame attached to a tag, as a pose in the
/// simulation world. Mirrors the rule used by the filter's anchor frame.
pub fn anchor_frame_of(tag_in_world: &Pose) -> Pose {
    let up = tag_in_world.orientation.inverse() * Vec3::z();
    let q_at = anchor_rotation(&up);
    Pose::new(tag_in_world.position, tag_in_world.orientation * q_at.inverse())
}

/// Estimated workspace poses from `snapshots`, optionally restricted to one
/// snapshot kind.
pub fn workspace_track(snapshots: &[StateSnapshot], kind: Option<SnapshotKind>) -> Vec<(f64, Pose)> {
    snapshots
        .iter()
        .filter(|s| kind.is_none_or(|k| s.kind == k))
        .filter_map(|s| s.workspace.map(|p| (s.state.t, p)))
        .collect()
}

/// Relative pose `T_a → T_b` from the robocentric tag states:
/// `(distance, q_{T_a T_b})`.
fn relative_tag_pose(state: &FilterState, a: TagId, b: TagId) -> Option<(f64, crate::geometry::UnitQuaternion)> {
    let ta = state.tags.get(&a)?;
    let tb = state.tags.get(&b)?;
    Some(((tb.r - ta.r).norm(), ta.q * tb.q.inverse()))
}

/// Inter-tag distance and relative-rotation error of the pair `(a, b)`
/// over every update snapshot where both tags are tracked.
pub fn tag_pair_errors(
    snapshots: &[StateSnapshot],
    truth_tags: &BTreeMap<TagId, Pose>,
    a: TagId,
    b: TagId,
) -> Result<ErrorSeries, EvalError> {
    let pa = truth_tags.get(&a).ok_or(EvalError::TagMissing(a))?;
    let pb = truth_tags.get(&b).ok_or(EvalError::TagMissing(b))?;
    let true_dist = (pb.position - pa.position).norm();
    let true_rel = pa.orientation.inverse() * pb.orientation;
    let mut out = ErrorSeries::default();
    for s in snapshots.iter().filter(|s| s.kind == SnapshotKind::Update) {
        if let Some((d, q)) = relative_tag_pose(&s.state, a, b) {
            out.push(s.state.t, (d - true_dist).abs(), rotation_angle(&(q.inverse() * true_rel)));
        }
    }
    if out.is_empty() {
        let missing = if snapshots.iter().any(|s| s.state.tags.contains_key(&a)) { b } else { a };
        return Err(EvalError::TagMissing(missing));
    }
    Ok(out)
}

/// Errors for every pair of tracked tags that also appear in the truth.
pub fn all_tag_pair_errors(
    snapshots: &[StateSnapshot],
    truth_tags: &BTreeMap<TagId, Pose>,
) -> Vec<((TagId, TagId), ErrorSeries)> {
    let Some(last) = snapshots.last() else {
        return Vec::new();
    };
    let ids: Vec<TagId> = last.state.tags.keys().copied().filter(|id| truth_tags.contains_key(id)).collect();
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if let Ok(e) = tag_pair_errors(snapshots, truth_tags, *a, *b) {
                out.push(((*a, *b), e));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySample {
    pub t: f64,
    /// Linear velocity in the frame of the pose series.
    pub linear: Vec3,
    /// Body-frame rotational rate.
    pub angular: Vec3,
}

/// Central-difference velocities of a uniformly sampled pose series, after
/// corrupting it with Gaussian position noise `sigma_position` (m, per
/// axis) and rotation noise `sigma_rotation` (rad, per axis).
pub fn finite_difference_velocity(
    poses: &[(f64, Pose)],
    sigma_position: f64,
    sigma_rotation: f64,
    seed: u64,
) -> Result<Vec<VelocitySample>, EvalError> {
    if poses.len() < 3 {
        return Err(EvalError::TooFewSamples { needed: 3, got: poses.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n3 = || Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let noisy: Vec<(f64, Pose)> = poses
        .iter()
        .map(|(t, p)| {
            let pos = p.position + n3() * sigma_position;
            let rot = boxplus(&p.orientation, &(n3() * sigma_rotation));
            (*t, Pose::new(pos, rot))
        })
        .collect();
    Ok(noisy
        .windows(3)
        .map(|w| {
            let dt = w[2].0 - w[0].0;
            VelocitySample {
                t: w[1].0,
                linear: (w[2].1.position - w[0].1.position) / dt,
                angular: boxminus(&w[2].1.orientation, &w[0].1.orientation) / dt,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopClosureReport {
    pub tag_id: TagId,
    /// Time of the first reobservation.
    pub t: f64,
    /// Absence before the reobservation, seconds.
    pub gap: f64,
    /// Mean distance between predicted and detected corners before the
    /// update, pixels.
    pub reprojection_px: f64,
    /// Offset between the predicted tag position and its single-frame
    /// estimate, meters.
    pub position_offset: f64,
    /// Estimated distance travelled up to the reobservation, summed over
    /// update snapshots, meters.
    pub path_length: f64,
    /// `position_offset / path_length`.
    pub relative_error: f64,
    /// The reference is a single-frame tag estimate, not ground truth.
    pub reference_is_single_frame: bool,
}

/// First reobservation of any tag after an absence longer than `min_gap`,
/// evaluated on the prior (pre-update) snapshot at that time.
pub fn loop_closure_report(
    snapshots: &[StateSnapshot],
    detections: &[TagDetection],
    model: &MeasurementModel,
    min_gap: f64,
) -> Result<LoopClosureReport, EvalError> {
    let mut last_seen: BTreeMap<TagId, f64> = BTreeMap::new();
    let mut found = None;
    for d in detections {
        if let Some(prev) = last_seen.get(&d.tag_id) {
            if d.t - prev > min_gap {
                found = Some((*d, d.t - prev));
                break;
            }
        }
        last_seen.insert(d.tag_id, d.t);
    }
    let (det, gap) = found.ok_or(EvalError::NoLoopDetected)?;
    let prior = snapshots
        .iter()
        .find(|s| s.kind == SnapshotKind::Prior && s.state.t == det.t)
        .ok_or_else(|| EvalError::Mismatch(format!("no prior snapshot at t={}", det.t)))?;
    let tag = prior.state.tags.get(&det.tag_id).ok_or(EvalError::TagMissing(det.tag_id))?;
    let geom = model.geometry(det.tag_id).map_err(|e| EvalError::Mismatch(e.to_string()))?;
    let k = &model.intrinsics;
    let mut px = 0.0;
    for (c, z) in tag_corners(&geom).iter().zip(det.corners.iter()) {
        let p = predict_corner(&tag.r, &tag.q, c, k).map_err(|e| EvalError::Mismatch(e.to_string()))?;
        px += (p - z).norm() / 4.0;
    }
    let single = estimate_tag_pose(&det, &geom, k).map_err(|e| EvalError::Mismatch(e.to_string()))?;
    let offset = (tag.r - single.r).norm();

    let mut path = 0.0;
    let mut prev: Option<Vec3> = None;
    let updates = snapshots.iter().filter(|s| s.kind == SnapshotKind::Update);
    for s in updates.take_while(|s| s.state.t <= det.t) {
        if let Some(w) = s.workspace {
            if let Some(p) = prev {
                path += (w.position - p).norm();
            }
            prev = Some(w.position);
        }
    }
    if path <= 0.0 {
        return Err(EvalError::Mismatch("no workspace track before the reobservation".into()));
    }
    Ok(LoopClosureReport {
        tag_id: det.tag_id,
        t: det.t,
        gap,
        reprojection_px: px,
        position_offset: offset,
        path_length: path,
        relative_error: offset / path,
        reference_is_single_frame: true,
    })
}

/// RMS deviation of extrinsics estimates from their mean:
/// `(translation m, rotation rad)`.
pub fn extrinsics_repeatability(runs: &[Pose]) -> Result<(f64, f64), EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(runs.len()));
    }
    let n = runs.len() as f64;
    let mean_p = runs.iter().map(|p| p.position).sum::<Vec3>() / n;
    // rotation mean by fixed-point iteration in the tangent space
    let mut mean_q = runs[0].orientation;
    for _ in 0..20 {
        let step = runs.iter().map(|p| boxminus(&p.orientation, &mean_q)).sum::<Vec3>() / n;
        mean_q = boxplus(&mean_q, &step);
        if step.norm() < 1e-15 {
            break;
        }
    }
    let t = (runs.iter().map(|p| (p.position - mean_p).norm_squared()).sum::<f64>() / n).sqrt();
    let r = (runs.iter().map(|p| boxminus(&p.orientation, &mean_q).norm_squared()).sum::<f64>() / n).sqrt();
    Ok((t, r))
}

/// Normalized estimation error squared `eᵀ P⁻¹ e`.
pub fn nees(error: &DVector<f64>, cov: &Covariance) -> Option<f64> {
    cov.clone().cholesky().map(|c| error.dot(&c.solve(error)))
}

/// Error of an estimated pose against truth in the pose's own
/// parametrization: position difference, then `boxminus(truth, estimate)`.
pub fn pose_error_vector(estimate: &Pose, truth: &Pose) -> Vector6<f64> {
    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(truth.position - estimate.position));
    e.fixed_rows_mut::<3>(3).copy_from(&boxminus(&truth.orientation, &estimate.orientation));
    e
}

/// Covariance of the body pose in the frame of tag `id`, by numerical
/// linearization of [`body_in_tag`] over the tag and extrinsics errors.
pub fn body_in_tag_covariance(state: &FilterState, cov: &Covariance, id: TagId) -> Option<Matrix6<f64>> {
    let base = body_in_tag(state, id)?;
    let o = state.tag_index(id)?;
    let cols: [usize; 12] = std::array::from_fn(|i| match i / 3 {
        0 => o + i,
        1 => o + i,
        2 => idx::RV + i - 6,
        _ => idx::QV + i - 9,
    });
    let h = 1e-6;
    let mut j = SMatrix::<f64, 6, 12>::zeros();
    for (c, &col) in cols.iter().enumerate() {
        let mut e = DVector::zeros(state.dim());
        e[col] = h;
        let mut sp = state.clone();
        sp.apply_correction(&e);
        let mut sm = state.clone();
        sm.apply_correction(&(-e));
        let dp = pose_error_vector(&base, &body_in_tag(&sp, id)?) - pose_error_vector(&base, &body_in_tag(&sm, id)?);
        j.set_column(c, &(dp / (2.0 * h)));
    }
    let mut sub = SMatrix::<f64, 12, 12>::zeros();
    for (a, &ra) in cols.iter().enumerate() {
        for (b, &rb) in cols.iter().enumerate() {
            sub[(a, b)] = cov[(ra, rb)];
        }
    }
    Some(j * sub * j.transpose())
}

/// NEES of the body pose in the frame of tag `id` against the true
/// body-in-tag pose.
pub fn body_in_tag_nees(state: &FilterState, cov: &Covariance, id: TagId, truth: &Pose) -> Option<f64> {
    let est = body_in_tag(state, id)?;
    let p = body_in_tag_covariance(state, cov, id)?;
    let e = pose_error_vector(&est, truth);
    p.cholesky().map(|c| e.dot(&c.solve(&e)))
}
