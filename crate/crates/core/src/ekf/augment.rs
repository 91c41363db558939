use serde::{Deserialize, Serialize};

use super::state::{Covariance, FilterState, TagPose, TAG_DIM};
use super::EkfError;
use crate::camera::PinholeIntrinsics;
use crate::models::{TagDetection, TagGeometry};
use crate::tag_init::{estimate_tag_pose, TagPoseEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Initial standard deviation of a new tag position, meters.
    pub sigma_position: f64,
    /// Initial standard deviation of a new tag orientation, radians.
    pub sigma_rotation: f64,
    /// Rotation variance multiplier for ambiguous single-frame estimates.
    pub ambiguous_factor: f64,
    /// Maximum number of tags in the state.
    pub tag_cap: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma_position: 0.5,
            sigma_rotation: 0.3,
            ambiguous_factor: 4.0,
            tag_cap: 20,
        }
    }
}

/// Adds the tag seen in `det` to the state, initialized from a single-frame
/// pose estimate with a large, uncorrelated covariance.
pub fn augment(
    state: &mut FilterState,
    cov: &mut Covariance,
    det: &TagDetection,
    geom: &TagGeometry,
    k: &PinholeIntrinsics,
    cfg: &AugmentConfig,
) -> Result<TagPoseEstimate, EkfError> {
    if state.tags.contains_key(&det.tag_id) {
        return Err(EkfError::DuplicateTag(det.tag_id));
    }
    if state.tags.len() >= cfg.tag_cap {
        return Err(EkfError::TagCapExceeded(cfg.tag_cap));
    }
    let est = estimate_tag_pose(det, geom, k)?;
    let n = state.dim();
    let mut p = Covariance::zeros(n + TAG_DIM, n + TAG_DIM);
    p.view_mut((0, 0), (n, n)).copy_from(cov);
    let var_pos = cfg.sigma_position * cfg.sigma_position;
    let mut var_rot = cfg.sigma_rotation * cfg.sigma_rotation;
    if est.ambiguous {
        var_rot *= cfg.ambiguous_factor;
    }
    for i in 0..3 {
        p[(n + i, n + i)] = var_pos;
        p[(n + 3 + i, n + 3 + i)] = var_rot;
    }
    state.tags.insert(det.tag_id, TagPose { r: est.r, q: est.q });
    *cov = p;
    Ok(est)
}
