//! Online estimation of the LiDAR/camera alignment.
//!
//! Hypotheses are generated from motion-constrained minimal subsets, scored by
//! epipolar consistency of tracked features, kept in a bounded bank that is
//! updated frame by frame, and the winner is refined against ground-wall
//! boundaries.

mod baseline;
mod boundaries;
mod evaluate;
mod generate;
mod tracker;

pub use baseline::generate_baseline_hypotheses;
pub use boundaries::{
    boundary_cost, estimate_scale, identify_boundaries, optimize_hypothesis, residuals_and_jacobian, Association,
    BoundaryObservation, OptimizeOutcome,
};
pub use evaluate::{evaluate_hypothesis, PairEvaluation};
pub use generate::{generate_hypotheses, window_poses};
pub use tracker::{ranked_mature, select_best, StepReport, TrackerState};

use crate::geometry::{topdown_frame, CameraIntrinsics, GeometryError, SimilarityTransform2, TopDownFrame};
use crate::features::SensorFrame;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("no scan pair in the window rotates by more than {eps_deg} deg")]
    NoValidMotion { eps_deg: f64 },
    #[error("frame pair {prev}->{next} skipped: {reason}")]
    SkippedPair { prev: usize, next: usize, reason: String },
    #[error("boundary associations constrain fewer than 4 parameters ({directions} distinct directions)")]
    RankDeficient { directions: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Every threshold used by hypothesis generation, evaluation and tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Vanishing point degeneracy bound in normalized coordinates.
    pub eps_v: f64,
    /// Minimum scan-pair rotation for a motion constraint (deg).
    pub eps_r_deg: f64,
    /// Frames considered when picking scan pairs.
    pub window: usize,
    /// Minimal subsets drawn per generation round.
    pub budget: usize,
    /// Hard cap on draws, as a multiple of the budget.
    pub draw_cap_factor: usize,
    /// Minimum tracks shared by a frame pair for generation or evaluation.
    pub min_pairs: usize,
    /// Minimum distance between the rotation centres of the two scan pairs (m).
    pub icr_separation: f64,
    /// Exponent of the image-row sampling weight.
    pub gamma: f64,
    /// Epipolar inlier threshold on the scale-free score.
    pub tau: f64,
    pub capacity: usize,
    /// Consecutive unsupported frame pairs after which a hypothesis is dropped.
    pub stale_age: usize,
    /// Best score above which no new hypotheses are generated.
    pub promote_thresh: f64,
    /// Frame pairs a hypothesis needs before it can be selected.
    pub min_maturity: usize,
    /// Pair inlier fraction counting as support.
    pub support_frac: f64,
    /// Candidates this close to a stored hypothesis are not added (relative scale, deg, m).
    pub duplicate_scale: f64,
    pub duplicate_angle_deg: f64,
    pub duplicate_origin: f64,
    /// Maximum mean distance for a LiDAR segment / image line association (px).
    pub assoc_thresh_px: f64,
    /// Samples per LiDAR segment when associating and optimizing.
    pub segment_samples: usize,
    /// Parallelism tolerance when pairing segments with boundary candidates for scale (deg).
    pub scale_parallel_deg: f64,
    pub scale_min_segments: usize,
    /// Associate / optimize rounds during boundary refinement.
    pub refine_rounds: usize,
    /// Best-ranked mature hypotheses refined against boundaries; the one
    /// explaining the most boundary associations wins.
    pub refine_candidates: usize,
    /// Refinements moving the rotation or origin further than this, or
    /// explaining fewer boundary associations than their start, are rejected (deg, m).
    pub refine_max_angle_deg: f64,
    pub refine_max_origin: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            eps_v: 1e-6,
            eps_r_deg: 0.5,
            window: 8,
            budget: 25,
            draw_cap_factor: 4,
            min_pairs: 8,
            icr_separation: 0.3,
            gamma: 2.0,
            tau: 3.0e-8,
            capacity: 20,
            stale_age: 10,
            promote_thresh: 0.7,
            min_maturity: 5,
            support_frac: 0.5,
            duplicate_scale: 0.005,
            duplicate_angle_deg: 0.25,
            duplicate_origin: 0.01,
            assoc_thresh_px: 5.0,
            segment_samples: 12,
            scale_parallel_deg: 3.0,
            scale_min_segments: 3,
            refine_rounds: 3,
            refine_candidates: 5,
            refine_max_angle_deg: 10.0,
            refine_max_origin: 1.0,
        }
    }
}

impl AlignmentConfig {
    pub fn eps_r(&self) -> f64 {
        self.eps_r_deg.to_radians()
    }
}

/// A tracked alignment hypothesis with its epipolar support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: u64,
    pub transform: SimilarityTransform2,
    pub inlier_count: usize,
    /// Track correspondences scored so far.
    pub pairs_evaluated: usize,
    /// Frame pairs scored so far.
    pub frames_evaluated: usize,
    pub last_support_frame: usize,
    /// Evaluated frame pairs since the last supporting one.
    pub missed: usize,
    /// Inliers per evaluated correspondence, in `[0, 1]`.
    pub score: f64,
}

impl Hypothesis {
    pub fn new(id: u64, transform: SimilarityTransform2, created_at: usize) -> Self {
        Self {
            id,
            transform,
            inlier_count: 0,
            pairs_evaluated: 0,
            frames_evaluated: 0,
            last_support_frame: created_at,
            missed: 0,
            score: 0.0,
        }
    }
}

/// Image geometry shared by all frames of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn topdown(&self, frame: &SensorFrame, eps_v: f64) -> Result<TopDownFrame, GeometryError> {
        topdown_frame(&frame.vp, &self.intrinsics, eps_v)
    }
}
