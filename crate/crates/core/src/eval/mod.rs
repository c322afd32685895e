//! Layout metrics: segmentation accuracy, corner RMSE and polygon F-score.

mod corners;
mod polygon;
mod segmentation;

pub use corners::{corner_rmse, CornerRmse};
pub use polygon::{fscore, intersection_area, plan_polygon, signed_area, validate_polygon};
pub use segmentation::{
    match_wall_labels, render_segmentation, segmentation_accuracy, LabelImage,
    LABEL_GROUND, LABEL_UNKNOWN, LABEL_UNMATCHED_BASE, LABEL_WALL_BASE,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("corner RMSE needs at least one corner in each plan")]
    NoCorners,
    #[error("label images differ in size: predicted {pred:?}, reference {truth:?}")]
    DimensionMismatch { pred: (usize, usize), truth: (usize, usize) },
}
