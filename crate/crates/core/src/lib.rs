//! Calibration-free alignment of a 2D LiDAR with a monocular camera, and the
//! indoor layout estimation built on top of it.
//!
//! Pipeline stages map onto modules:
//! - [`geometry`]: rectification, similarity and epipolar closed forms.
//! - [`features`]: LiDAR lines, ICP odometry, image line grouping, track weights.
//! - [`alignment`]: recursive multi-hypothesis RANSAC over the alignment.
//! - [`mapping`]: scan integration and fused pose/map refinement.
//! - [`sim`]: synthetic worlds used as ground truth.
//! - [`eval`]: segmentation accuracy, corner RMSE and polygon F-score.
//! - [`pipeline`], [`dataset`], [`config`], [`export`]: orchestration and I/O.

pub mod geometry;
pub mod features;
pub mod mapping;
pub mod sim;
pub mod eval;
pub mod dataset;
pub mod alignment;
pub mod config;
pub mod pipeline;
pub mod export;
