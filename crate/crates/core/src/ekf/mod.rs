//! Robocentric error-state EKF.
//!
//! The filter state holds the body position and velocity expressed in the
//! body frame, the attitude, IMU biases, the camera-IMU extrinsics and the
//! pose of every tracked tag relative to the camera. Errors are kept in a
//! minimal parametrization: three components per vector and three per
//! rotation, applied with [`crate::geometry::boxplus`].
//!
//! The free functions [`propagate`], [`update`], [`augment`] and
//! [`initialize`] are the building blocks; [`Filter`] drives them from a
//! time-ordered event stream.

mod augment;
mod filter;
mod init;
mod propagation;
mod state;
mod update;
mod workspace;

use thiserror::Error;

use crate::models::{ModelError, TagId};
use crate::tag_init::TagInitError;

pub use augment::{augment, AugmentConfig};
pub use filter::{Event, Filter, FilterConfig, RunOutput, SnapshotKind, StateSnapshot};
pub use init::{initialize, InitConfig};
pub use propagation::{
    propagate, propagate_mean, propagation_jacobians, BlockSparse, MAX_DT,
};
pub use state::{
    idx, block_layout, is_psd, symmetrize, Covariance, ErrorBlock, FilterState, TagPose, IMU_DIM,
    SENSOR_DIM, TAG_DIM,
};
pub use update::{
    chi2_quantile_999, measurement_jacobian, predict_measurement, update, MeasurementModel, UpdateReport,
};
pub use workspace::{anchor_rotation, body_in_tag, AnchorFrame, KnownTag, KnownTagMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("event at t={t} precedes filter time {state_t}")]
    NonMonotonicTime { t: f64, state_t: f64 },
    #[error("time step {0} s exceeds the propagation limit")]
    ExcessiveDt(f64),
    #[error("innovation covariance is not positive definite")]
    SingularInnovationCovariance,
    #[error("tag cap of {0} estimated tags reached")]
    TagCapExceeded(usize),
    #[error("anchor tag has not been observed yet")]
    AnchorNotVisibleYet,
    #[error("IMU data is not static: {0}")]
    NotStatic(String),
    #[error("need at least {needed} IMU samples for initialization, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("tag {0} is already tracked or known")]
    DuplicateTag(TagId),
    #[error("filter is not initialized")]
    NotInitialized,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    TagInit(#[from] TagInitError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
