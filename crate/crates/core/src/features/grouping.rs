use super::{ImageLineSet, ImageSegment};
use crate::geometry::{topdown_frame, CameraIntrinsics, VanishingPoint, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    /// Maximum angle between a segment and the direction to the vanishing point (deg).
    pub ang_thresh_deg: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { ang_thresh_deg: 2.0 }
    }
}

fn points_at(seg: &ImageSegment, vp: &VanishingPoint, thresh: f64) -> bool {
    let d = seg.b - seg.a;
    let to_vp = vp.pixel() - seg.midpoint();
    if d.norm() < 1e-9 || to_vp.norm() < 1e-9 {
        return false;
    }
    let cos = (d.dot(&to_vp) / (d.norm() * to_vp.norm())).abs().min(1.0);
    cos.acos() <= thresh
}

/// Splits raw image segments into vertical lines (through the vertical
/// vanishing point) and ground-wall boundary candidates (below the rectified
/// horizon). Returns the grouped set and the number of discarded segments.
pub fn group_lines(
    lines: &[ImageSegment],
    vp: &VanishingPoint,
    k: &CameraIntrinsics,
    eps_v: f64,
    cfg: &GroupingConfig,
) -> (ImageLineSet, usize) {
    let thresh = cfg.ang_thresh_deg.to_radians();
    let floor_axis: Option<Vec3> = topdown_frame(vp, k, eps_v).ok().map(|f| f.e_z());
    let below = |p| floor_axis.is_some_and(|ez| ez.dot(&k.normalize(p)) > 0.0);

    let mut set = ImageLineSet::default();
    let mut discarded = 0;
    for seg in lines {
        if points_at(seg, vp, thresh) {
            set.vertical.push(*seg);
        } else if below(&seg.a) && below(&seg.b) {
            set.horizontal.push(*seg);
        } else {
            discarded += 1;
        }
    }
    (set, discarded)
}
