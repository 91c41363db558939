use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::state::FilterState;
use super::EkfError;
use crate::geometry::{Pose, PoseRecord, UnitQuaternion, Vec3};
use crate::models::{TagGeometry, TagId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownTag {
    /// Tag pose in the workspace frame (`_W r_WT`, `q_WT`).
    pub pose: PoseRecord,
    /// Side length override, meters.
    #[serde(default)]
    pub side: Option<f64>,
}

/// Tags with surveyed workspace poses. They are measurement parameters and
/// never enter the state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnownTagMap {
    tags: BTreeMap<TagId, KnownTag>,
}

impl KnownTagMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: TagId, pose: Pose, side: Option<f64>) {
        self.tags.insert(id, KnownTag { pose: PoseRecord::from(&pose), side });
    }

    pub fn contains(&self, id: TagId) -> bool {
        self.tags.contains_key(&id)
    }

    pub fn pose(&self, id: TagId) -> Option<Pose> {
        self.tags.get(&id).map(|t| Pose::from(&t.pose))
    }

    pub fn side(&self, id: TagId) -> Option<f64> {
        self.tags.get(&id).and_then(|t| t.side)
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = TagId> + '_ {
        self.tags.keys().copied()
    }

    pub fn geometry_override(&self, id: TagId) -> Option<TagGeometry> {
        self.side(id).and_then(|s| TagGeometry::new(s).ok())
    }
}

/// Pose of the body in the frame of tracked tag `id`.
pub fn body_in_tag(state: &FilterState, id: TagId) -> Option<Pose> {
    let tag = state.tags.get(&id)?;
    let c_tv = tag.q.to_rotation_matrix();
    let c_vb = state.q_v.to_rotation_matrix();
    let position = -(c_tv * (tag.r + c_vb * state.r_v));
    Some(Pose::new(position, tag.q * state.q_v))
}

/// Rotation `q_AT` of the gravity-aligned frame `A` attached to a tag.
///
/// `up` is the direction opposite to gravity, expressed in the tag frame.
/// The `x` axis of `A` is the tag `x` axis projected onto the horizontal
/// plane, or the tag `y` axis when `x` is nearly vertical.
pub fn anchor_rotation(up: &Vec3) -> UnitQuaternion {
    let z = up.normalize();
    let mut x = Vec3::x() - z * z.x;
    if x.norm() < 1e-3 {
        x = Vec3::y() - z * z.y;
    }
    let x = x.normalize();
    let y = z.cross(&x);
    // columns are the axes of A in tag coordinates: C_TA
    let c_ta = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_matrix(&c_ta).inverse()
}

/// Workspace frame defined by an estimated anchor tag.
///
/// The origin is the tag center, `z` points up and yaw follows the tag `x`
/// axis. The rotation is refreshed on every anchor update until `freeze`
/// is called.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFrame {
    pub tag_id: TagId,
    /// `q_AT`
    pub rotation: UnitQuaternion,
    pub updates: usize,
    pub frozen: bool,
}

impl AnchorFrame {
    pub fn new(state: &FilterState, tag_id: TagId) -> Result<Self, EkfError> {
        let mut a = Self {
            tag_id,
            rotation: UnitQuaternion::identity(),
            updates: 0,
            frozen: false,
        };
        a.refresh(state)?;
        Ok(a)
    }

    /// Recomputes the rotation from the current estimate unless frozen.
    pub fn refresh(&mut self, state: &FilterState) -> Result<(), EkfError> {
        if self.frozen {
            return Ok(());
        }
        let b = body_in_tag(state, self.tag_id).ok_or(EkfError::AnchorNotVisibleYet)?;
        // up direction in body coordinates, then in tag coordinates
        let up = b.orientation * (state.q.inverse() * Vec3::z());
        self.rotation = anchor_rotation(&up);
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Body pose in the anchor frame.
    pub fn body_pose(&self, state: &FilterState) -> Result<Pose, EkfError> {
        let b = body_in_tag(state, self.tag_id).ok_or(EkfError::AnchorNotVisibleYet)?;
        Ok(Pose::new(self.rotation * b.position, self.rotation * b.orientation))
    }

    /// Pose of a tracked tag in the anchor frame.
    pub fn tag_pose(&self, state: &FilterState, id: TagId) -> Result<Pose, EkfError> {
        let body = self.body_pose(state)?;
        let tag = state.tags.get(&id).ok_or(EkfError::AnchorNotVisibleYet)?;
        let cam = body.compose(&Pose::new(state.r_v, state.q_v.inverse()));
        Ok(cam.compose(&Pose::new(tag.r, tag.q.inverse())))
    }
}
