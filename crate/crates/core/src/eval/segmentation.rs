use super::EvalError;
use crate::features::LineSegment2;
use crate::geometry::{rot3_z, CameraIntrinsics, Pose2, SimilarityTransform2, TopDownFrame, Vec2};
use crate::mapping::FloorPlan;
use serde::{Deserialize, Serialize};

pub const LABEL_UNKNOWN: u16 = 0;
pub const LABEL_GROUND: u16 = 1;
/// Wall `i` is labelled `LABEL_WALL_BASE + i`.
pub const LABEL_WALL_BASE: u16 = 2;
/// Label offset for predicted walls that match no reference wall.
pub const LABEL_UNMATCHED_BASE: u16 = 1000;

/// Labels sampled on a regular pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub cols: usize,
    pub rows: usize,
    pub labels: Vec<u16>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let cols = width.div_ceil(stride);
        let rows = height.div_ceil(stride);
        Self { width, height, stride, cols, rows, labels: vec![LABEL_UNKNOWN; cols * rows] }
    }

    /// Pixel coordinates sampled by grid cell `(i, j)`: the centre of its block.
    pub fn pixel_center(&self, i: usize, j: usize) -> Vec2 {
        let off = 0.5 * (self.stride as f64 - 1.0);
        Vec2::new((i * self.stride) as f64 + off, (j * self.stride) as f64 + off)
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.labels[j * self.cols + i]
    }

    pub fn set(&mut self, i: usize, j: usize, label: u16) {
        self.labels[j * self.cols + i] = label;
    }

    /// Replaces wall labels through `map` (indexed by wall number).
    pub fn relabel_walls(&mut self, map: &[u16]) {
        for l in &mut self.labels {
            if *l >= LABEL_WALL_BASE {
                if let Some(m) = map.get((*l - LABEL_WALL_BASE) as usize) {
                    *l = *m;
                }
            }
        }
    }
}

/// Renders ground / wall / unknown labels by casting each pixel's ray into the plan.
///
/// The camera pose comes from the LiDAR pose and the alignment: the optical
/// centre sits at `origin` in the LiDAR frame, `delta` metres above the floor
/// (top-down units are camera heights). Walls extend upward without limit, so
/// the nearest wall crossing in front of the floor hit wins.
#[allow(clippy::too_many_arguments)]
pub fn render_segmentation(
    plan: &FloorPlan,
    pose: &Pose2,
    h: &SimilarityTransform2,
    frame: &TopDownFrame,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
    stride: usize,
) -> LabelImage {
    let mut img = LabelImage::new(width, height, stride);
    let to_world = rot3_z(pose.heading + h.phi) * frame.rotation();
    let c = pose.to_world(&h.origin);
    let cam_height = h.delta;
    for j in 0..img.rows {
        for i in 0..img.cols {
            let d = to_world * k.normalize(&img.pixel_center(i, j));
            let mut best = (f64::INFINITY, LABEL_UNKNOWN);
            if d.z > 1e-12 {
                best = (cam_height / d.z, LABEL_GROUND);
            }
            let planar = d.xy();
            for (wi, w) in plan.walls.iter().enumerate() {
                if let Some(s) = crossing(&c, &planar, w) {
                    if s < best.0 {
                        best = (s, LABEL_WALL_BASE + wi as u16);
                    }
                }
            }
            img.set(i, j, best.1);
        }
    }
    img
}

fn crossing(p: &Vec2, d: &Vec2, w: &LineSegment2) -> Option<f64> {
    let e = w.b - w.a;
    let den = d.perp(&e);
    if den.abs() < 1e-15 {
        return None;
    }
    let q = w.a - p;
    let s = q.perp(&e) / den;
    let u = q.perp(d) / den;
    (s > 0.0 && (0.0..=1.0).contains(&u)).then_some(s)
}

/// Maps each predicted wall to the reference wall it lies on, as a label.
///
/// A match needs directions within `ang_tol` (rad), the predicted midpoint
/// within `dist_tol` of the reference line, and overlapping extents. The
/// closest qualifying reference wall wins.
pub fn match_wall_labels(pred: &[LineSegment2], truth: &[LineSegment2], ang_tol: f64, dist_tol: f64) -> Vec<u16> {
    pred.iter()
        .enumerate()
        .map(|(pi, p)| {
            let m = p.midpoint();
            truth
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    let cos = p.direction().dot(&t.direction()).abs().min(1.0);
                    let u = (t.b - t.a).dot(&(m - t.a)) / (t.b - t.a).norm_squared();
                    cos.acos() <= ang_tol && t.line_distance(&m) <= dist_tol && (-0.1..=1.1).contains(&u)
                })
                .min_by(|a, b| a.1.line_distance(&m).total_cmp(&b.1.line_distance(&m)).then(a.0.cmp(&b.0)))
                .map(|(ti, _)| LABEL_WALL_BASE + ti as u16)
                .unwrap_or(LABEL_UNMATCHED_BASE + pi as u16)
        })
        .collect()
}

/// Percentage of correctly labelled pixels among the labelled reference pixels.
pub fn segmentation_accuracy(pred: &LabelImage, truth: &LabelImage) -> Result<f64, EvalError> {
    if (pred.cols, pred.rows, pred.stride) != (truth.cols, truth.rows, truth.stride) {
        return Err(EvalError::DimensionMismatch {
            pred: (pred.cols, pred.rows),
            truth: (truth.cols, truth.rows),
        });
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for (p, t) in pred.labels.iter().zip(&truth.labels) {
        if *t != LABEL_UNKNOWN {
            total += 1;
            correct += usize::from(p == t);
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(labels: &[u16]) -> LabelImage {
        let mut im = LabelImage::new(labels.len(), 1, 1);
        im.labels = labels.to_vec();
        im
    }

    #[test]
    fn accuracy_examples() {
        let t = img(&[1, 2, 3, 1]);
        assert_eq!(segmentation_accuracy(&t, &t).unwrap(), 100.0);
        assert_eq!(segmentation_accuracy(&img(&[1, 2, 0, 0]), &t).unwrap(), 50.0);
        assert_eq!(segmentation_accuracy(&img(&[0, 0, 0, 0]), &t).unwrap(), 0.0);
        assert!(matches!(
            segmentation_accuracy(&img(&[1, 2]), &t),
            Err(EvalError::DimensionMismatch { .. })
        ));
        // Unknown reference pixels are not scored.
        assert_eq!(segmentation_accuracy(&img(&[1, 5]), &img(&[1, 0])).unwrap(), 100.0);
    }

    #[test]
    fn grid_geometry() {
        let im = LabelImage::new(1920, 1080, 4);
        assert_eq!((im.cols, im.rows), (480, 270));
        assert_eq!(im.pixel_center(0, 0), Vec2::new(1.5, 1.5));
        assert_eq!(LabelImage::new(10, 10, 1).pixel_center(3, 2), Vec2::new(3.0, 2.0));
    }

    #[test]
    fn wall_matching() {
        let truth = vec![
            LineSegment2::new(Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0)),
            LineSegment2::new(Vec2::new(4.0, 0.0), Vec2::new(4.0, 4.0)),
        ];
        let pred = vec![
            LineSegment2::new(Vec2::new(4.02, 3.0), Vec2::new(4.01, 0.5)),
            LineSegment2::new(Vec2::new(1.0, 2.0), Vec2::new(2.0, 2.0)),
        ];
        let m = match_wall_labels(&pred, &truth, 3f64.to_radians(), 0.1);
        assert_eq!(m, vec![LABEL_WALL_BASE + 1, LABEL_UNMATCHED_BASE + 1]);
    }
}
