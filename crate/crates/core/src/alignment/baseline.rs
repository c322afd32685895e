use super::{AlignmentConfig, CameraModel, Hypothesis};
use crate::features::{LineSegment2, SensorFrame};
use crate::geometry::{project_topdown, similarity_from_pairs, PointPair2, Vec2};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Intersection of two lines if they cross at more than `min_angle` within
/// `slack` (relative to each length) of both segments.
fn corner(a: (Vec2, Vec2), b: (Vec2, Vec2), min_angle: f64, slack: f64) -> Option<Vec2> {
    let (da, db) = (a.1 - a.0, b.1 - b.0);
    let den = da.perp(&db);
    let sin = den.abs() / (da.norm() * db.norm());
    if !(sin.is_finite() && sin > min_angle.sin()) {
        return None;
    }
    let s = (b.0 - a.0).perp(&db) / den;
    let u = (b.0 - a.0).perp(&da) / den;
    let ok = |t: f64| (-slack..=1.0 + slack).contains(&t);
    (ok(s) && ok(u)).then(|| a.0 + da * s)
}

fn corners(lines: &[(Vec2, Vec2)]) -> Vec<Vec2> {
    let mut out = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            out.extend(corner(lines[i], lines[j], 20f64.to_radians(), 0.5));
        }
    }
    out
}

fn two_distinct(n: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let j = (i + rng.random_range(1..n)) % n;
    (i, j)
}

/// Control strategy without motion cues: random pairs of image boundary-line
/// intersections matched to random pairs of LiDAR wall intersections.
pub fn generate_baseline_hypotheses(
    frame: &SensorFrame,
    segments: &[LineSegment2],
    camera: &CameraModel,
    budget: usize,
    cfg: &AlignmentConfig,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Vec<Hypothesis> {
    let Ok(td) = camera.topdown(frame, cfg.eps_v) else { return Vec::new() };
    let image_lines: Vec<(Vec2, Vec2)> = frame
        .lines
        .horizontal
        .iter()
        .filter_map(|l| Some((project_topdown(&l.a, &td).ok()?, project_topdown(&l.b, &td).ok()?)))
        .collect();
    let lidar_lines: Vec<(Vec2, Vec2)> = segments.iter().map(|s| (s.a, s.b)).collect();
    let (src, dst) = (corners(&image_lines), corners(&lidar_lines));
    if src.len() < 2 || dst.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for _ in 0..budget * cfg.draw_cap_factor.max(1) {
        if out.len() >= budget {
            break;
        }
        let (i, j) = two_distinct(src.len(), rng);
        let (k, l) = two_distinct(dst.len(), rng);
        let Ok(t) = similarity_from_pairs(&PointPair2::new(src[i], dst[k]), &PointPair2::new(src[j], dst[l])) else {
            continue;
        };
        out.push(Hypothesis::new(*next_id, t, frame.index));
        *next_id += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_of_perpendicular_lines() {
        let c = corner(
            (Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)),
            (Vec2::new(1.2, -1.0), Vec2::new(1.2, 1.0)),
            0.3,
            0.5,
        );
        assert_eq!(c, Some(Vec2::new(1.2, 0.0)));
        let parallel = corner((Vec2::zeros(), Vec2::x()), (Vec2::y(), Vec2::new(1.0, 1.0)), 0.3, 0.5);
        assert!(parallel.is_none());
    }
}
