//! Tightly-coupled visual-inertial EKF-SLAM on square fiducial markers.
//!
//! The filter fuses IMU samples with corner detections of square tags. It
//! estimates the sensor pose, velocity and IMU biases together with the
//! 6-DoF pose of every observed tag (kept relative to the camera) and the
//! camera-IMU extrinsics. A simulator produces ground-truthed measurement
//! logs and the [`eval`] module reproduces the usual accuracy analyses.
//!
//! Module map:
//! - [`geometry`]: quaternion and rigid-transform algebra
//! - [`camera`]: pinhole projection, radial-tangential distortion
//! - [`models`]: IMU/tag records, corner reprojection model, noise parameters
//! - [`tag_init`]: single-frame tag pose from four corners
//! - [`ekf`]: the filter itself
//! - [`sim`]: synthetic scenarios
//! - [`eval`]: error metrics against simulation truth
//! - [`cli`]: file formats and the `simulate` / `run` / `eval` commands

pub mod camera;
pub mod cli;
pub mod ekf;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod sim;
pub mod tag_init;
