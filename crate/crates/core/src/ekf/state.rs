use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use crate::geometry::{boxminus, boxplus, UnitQuaternion, Vec3};
use crate::models::TagId;

/// Error-state covariance over the minimal parametrization.
pub type Covariance = DMatrix<f64>;

/// Position, velocity, attitude and the two IMU biases.
pub const IMU_DIM: usize = 15;
/// IMU block plus camera extrinsics.
pub const SENSOR_DIM: usize = 21;
pub const TAG_DIM: usize = 6;

/// Offsets of the 3-dimensional error blocks.
pub mod idx {
    pub const R: usize = 0;
    pub const V: usize = 3;
    pub const Q: usize = 6;
    pub const BF: usize = 9;
    pub const BW: usize = 12;
    pub const RV: usize = 15;
    pub const QV: usize = 18;
}

/// Relative tag pose: `r = _V r_VT`, `q = q_TV`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagPose {
    pub r: Vec3,
    pub q: UnitQuaternion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    /// `_B r_WB`
    pub r: Vec3,
    /// `_B v_B`
    pub v: Vec3,
    /// `q_WB`
    pub q: UnitQuaternion,
    pub b_f: Vec3,
    pub b_w: Vec3,
    /// `_B r_BV`
    pub r_v: Vec3,
    /// `q_VB`
    pub q_v: UnitQuaternion,
    /// Tracked tags; iteration order equals block order in the covariance.
    pub tags: IndexMap<TagId, TagPose>,
}

/// What a 3-dimensional error block stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorBlock {
    Position,
    Velocity,
    Attitude,
    AccelBias,
    GyroBias,
    ExtrinsicPosition,
    ExtrinsicRotation,
    TagPosition(TagId),
    TagRotation(TagId),
}

/// Error blocks of `state` in covariance order, with their offsets.
pub fn block_layout(state: &FilterState) -> Vec<(usize, ErrorBlock)> {
    use ErrorBlock::*;
    let mut out = vec![
        (idx::R, Position),
        (idx::V, Velocity),
        (idx::Q, Attitude),
        (idx::BF, AccelBias),
        (idx::BW, GyroBias),
        (idx::RV, ExtrinsicPosition),
        (idx::QV, ExtrinsicRotation),
    ];
    for (k, id) in state.tags.keys().enumerate() {
        out.push((FilterState::tag_offset(k), TagPosition(*id)));
        out.push((FilterState::tag_offset(k) + 3, TagRotation(*id)));
    }
    out
}

impl FilterState {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            r: Vec3::zeros(),
            v: Vec3::zeros(),
            q: UnitQuaternion::identity(),
            b_f: Vec3::zeros(),
            b_w: Vec3::zeros(),
            r_v: Vec3::zeros(),
            q_v: UnitQuaternion::identity(),
            tags: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        SENSOR_DIM + TAG_DIM * self.tags.len()
    }

    pub fn tag_offset(k: usize) -> usize {
        SENSOR_DIM + TAG_DIM * k
    }

    /// Covariance offset of a tracked tag.
    pub fn tag_index(&self, id: TagId) -> Option<usize> {
        self.tags.get_index_of(&id).map(Self::tag_offset)
    }

    /// Applies an error-state correction with boxplus on every rotation.
    pub fn apply_correction(&mut self, dx: &DVector<f64>) {
        assert_eq!(dx.len(), self.dim(), "correction dimension mismatch");
        let seg = |o: usize| Vec3::new(dx[o], dx[o + 1], dx[o + 2]);
        self.r += seg(idx::R);
        self.v += seg(idx::V);
        self.q = boxplus(&self.q, &seg(idx::Q));
        self.b_f += seg(idx::BF);
        self.b_w += seg(idx::BW);
        self.r_v += seg(idx::RV);
        self.q_v = boxplus(&self.q_v, &seg(idx::QV));
        for (k, tag) in self.tags.values_mut().enumerate() {
            let o = Self::tag_offset(k);
            tag.r += seg(o);
            tag.q = boxplus(&tag.q, &seg(o + 3));
        }
    }

    /// `self ⊟ other`: the correction that takes `other` to `self`. Both
    /// states must track the same tags in the same order.
    pub fn difference(&self, other: &FilterState) -> DVector<f64> {
        assert_eq!(self.dim(), other.dim(), "state dimension mismatch");
        let mut dx = DVector::zeros(self.dim());
        let mut put = |o: usize, v: Vec3| dx.fixed_rows_mut::<3>(o).copy_from(&v);
        put(idx::R, self.r - other.r);
        put(idx::V, self.v - other.v);
        put(idx::Q, boxminus(&self.q, &other.q));
        put(idx::BF, self.b_f - other.b_f);
        put(idx::BW, self.b_w - other.b_w);
        put(idx::RV, self.r_v - other.r_v);
        put(idx::QV, boxminus(&self.q_v, &other.q_v));
        for (k, (a, b)) in self.tags.values().zip(other.tags.values()).enumerate() {
            let o = Self::tag_offset(k);
            put(o, a.r - b.r);
            put(o + 3, boxminus(&a.q, &b.q));
        }
        dx
    }

    pub fn is_finite(&self) -> bool {
        let vecs = [self.r, self.v, self.b_f, self.b_w, self.r_v];
        let quats = [self.q, self.q_v];
        vecs.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && quats.iter().all(|q| q.coords.iter().all(|c| c.is_finite()))
            && self
                .tags
                .values()
                .all(|t| t.r.iter().chain(t.q.coords.iter()).all(|c| c.is_finite()))
    }
}

/// Replaces `p` by `(p + pᵀ) / 2`.
pub fn symmetrize(p: &mut Covariance) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Cholesky succeeds after adding `1e-12` to the diagonal.
pub fn is_psd(p: &Covariance) -> bool {
    if p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut m = p.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += 1e-12;
    }
    m.cholesky().is_some()
}
