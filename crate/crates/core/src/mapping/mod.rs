//! Floor-plan integration and fused trajectory / map refinement.

mod fused;
mod integrate;

pub use fused::{fused_refine, solve, FusedOutcome, FusedProblem, ResidualRow};
pub use integrate::{compute_corners, integrate_scans, merge_segments};

use crate::features::LineSegment2;
use crate::geometry::{Pose2, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MappingError {
    #[error("fused refinement diverged: {reason}")]
    SolverDiverged { reason: String },
    #[error("fused refinement needs at least 2 frames with poses, got {frames}")]
    TooFewFrames { frames: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    /// Segments within this angle (deg) may belong to one wall.
    pub merge_angle_deg: f64,
    /// Maximum endpoint distance from a wall's line (m).
    pub merge_offset: f64,
    /// Maximum gap along a wall between merged pieces (m).
    pub merge_gap: f64,
    pub min_wall_len: f64,
    /// Walls crossing at less than this angle (deg) never form a corner.
    pub corner_min_angle_deg: f64,
    /// Maximum distance from an intersection to either wall (m).
    pub corner_snap: f64,
    pub corner_dedup: f64,
    pub fusion: FusionConfig,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            merge_angle_deg: 3.0,
            merge_offset: 0.10,
            merge_gap: 0.5,
            min_wall_len: 0.3,
            corner_min_angle_deg: 20.0,
            corner_snap: 0.5,
            corner_dedup: 0.01,
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// LiDAR point-to-wall noise and Huber threshold (m).
    pub lidar_sigma: f64,
    pub lidar_huber: f64,
    /// Epipolar residual noise and Huber threshold (px).
    pub pixel_sigma: f64,
    pub pixel_huber: f64,
    /// Each frame is paired with this many following frames.
    pub pair_span: usize,
    /// Poses are first refined in sliding windows of this many frames (0 disables).
    pub window: usize,
    /// Frames added per window step.
    pub window_step: usize,
    /// Pairs whose camera moves less than this are skipped (m).
    pub min_baseline: f64,
    /// Maximum point-to-wall distance for a LiDAR association (m).
    pub assoc_dist: f64,
    /// Use every n-th scan point.
    pub lidar_stride: usize,
    pub max_iter: usize,
    /// Largest pose / wall change accepted in one iteration (m, rad).
    pub max_step_translation: f64,
    pub max_step_rotation: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
    /// Relative cost decrease below which the solver stops.
    pub cost_tol: f64,
    /// Gradient magnitude (relative to 1 + cost) below which the solver stops.
    pub gradient_tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lidar_sigma: 0.01,
            lidar_huber: 0.05,
            pixel_sigma: 1.0,
            pixel_huber: 2.0,
            pair_span: 3,
            window: 20,
            window_step: 10,
            min_baseline: 0.02,
            assoc_dist: 0.15,
            lidar_stride: 2,
            max_iter: 100,
            max_step_translation: 0.5,
            max_step_rotation: 0.1,
            initial_damping: 1e-4,
            max_damping: 1e10,
            cost_tol: 1e-9,
            gradient_tol: 1e-10,
        }
    }
}

/// Wall map in world coordinates (m).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FloorPlan {
    pub walls: Vec<LineSegment2>,
    /// Wall intersections and free wall endpoints.
    pub corners: Vec<Vec2>,
}

impl FloorPlan {
    pub fn is_empty(&self) -> bool {
        self.walls.is_empty()
    }
}

/// One LiDAR pose per frame; pose 0 fixes the gauge.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose2>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose2>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}
