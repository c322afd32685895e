use super::{LidarScan, LineSegment2};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineExtractionConfig {
    /// Split threshold and inlier distance (m).
    pub dist_thresh: f64,
    /// Minimum segment length (m).
    pub min_len: f64,
    pub min_points: usize,
    /// Consecutive points farther apart than this start a new cluster (m).
    pub gap_thresh: f64,
}

impl Default for LineExtractionConfig {
    fn default() -> Self {
        Self { dist_thresh: 0.03, min_len: 0.15, min_points: 5, gap_thresh: 0.5 }
    }
}

/// Total-least-squares line through `points`: `(centroid, unit direction, rms)`.
pub(crate) fn fit_line(points: &[Vec2]) -> (Vec2, Vec2, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = Vec2::new(theta.cos(), theta.sin());
    let normal = Vec2::new(-dir.y, dir.x);
    let ss: f64 = points.iter().map(|p| normal.dot(&(p - c)).powi(2)).sum();
    (c, dir, (ss / n).sqrt())
}

fn chord_split(points: &[Vec2], thresh: f64, out: &mut Vec<(usize, usize)>, offset: usize) {
    let n = points.len();
    if n < 3 {
        out.push((offset, offset + n));
        return;
    }
    let (a, b) = (points[0], points[n - 1]);
    let chord = b - a;
    let len = chord.norm();
    let dist = |p: &Vec2| {
        if len < 1e-12 {
            (p - a).norm()
        } else {
            (chord.x * (p.y - a.y) - chord.y * (p.x - a.x)).abs() / len
        }
    };
    let (k, dmax) = points[1..n - 1]
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1, dist(p)))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if dmax > thresh {
        chord_split(&points[..k], thresh, out, offset);
        chord_split(&points[k..], thresh, out, offset + k);
    } else {
        out.push((offset, offset + n));
    }
}

fn residual(c: &Vec2, dir: &Vec2, p: &Vec2) -> f64 {
    (dir.x * (p.y - c.y) - dir.y * (p.x - c.x)).abs()
}

/// Split-and-merge line extraction over a bearing-ordered scan.
///
/// Degenerate scans yield an empty list.
pub fn extract_lines(scan: &LidarScan, cfg: &LineExtractionConfig) -> Vec<LineSegment2> {
    let pts: Vec<Vec2> =
        scan.points.iter().copied().filter(|p| p.x.is_finite() && p.y.is_finite()).collect();
    let n = pts.len();
    if n < 2 {
        return Vec::new();
    }

    // Start the sequence after the widest gap so a wall crossing the scan seam
    // stays in one cluster.
    let gap = |i: usize| (pts[(i + 1) % n] - pts[i]).norm();
    let seam = (0..n).max_by(|&i, &j| gap(i).total_cmp(&gap(j))).unwrap_or(n - 1);
    let ordered: Vec<Vec2> = (0..n).map(|i| pts[(seam + 1 + i) % n]).collect();

    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || (ordered[i] - ordered[i - 1]).norm() > cfg.gap_thresh {
            clusters.push((start, i));
            start = i;
        }
    }

    let mut pieces: Vec<(usize, usize)> = Vec::new();
    for (s, e) in clusters {
        let before = pieces.len();
        chord_split(&ordered[s..e], cfg.dist_thresh, &mut pieces, s);
        // Merge adjacent pieces of this cluster while the joint fit stays tight.
        let mut local: Vec<(usize, usize)> = pieces.split_off(before);
        let mut merged = true;
        while merged && local.len() > 1 {
            merged = false;
            let mut best: Option<(usize, f64)> = None;
            for k in 0..local.len() - 1 {
                let (s0, _) = local[k];
                let (_, e1) = local[k + 1];
                let (_, _, rms) = fit_line(&ordered[s0..e1]);
                if rms <= 0.5 * cfg.dist_thresh && best.is_none_or(|(_, r)| rms < r) {
                    best = Some((k, rms));
                }
            }
            if let Some((k, _)) = best {
                local[k].1 = local[k + 1].1;
                local.remove(k + 1);
                merged = true;
            }
        }
        pieces.extend(local);
    }

    let mut segments = Vec::new();
    for (mut s, mut e) in pieces {
        if e - s < cfg.min_points.max(2) {
            continue;
        }
        // Trim stray end points, typically samples of the adjoining wall.
        let (mut c, mut dir, mut rms) = fit_line(&ordered[s..e]);
        while e - s > cfg.min_points.max(2) {
            let tol = (3.0 * rms).max(1e-6);
            let r_first = residual(&c, &dir, &ordered[s]);
            let r_last = residual(&c, &dir, &ordered[e - 1]);
            if r_first.max(r_last) <= tol {
                break;
            }
            if r_first >= r_last {
                s += 1;
            } else {
                e -= 1;
            }
            (c, dir, rms) = fit_line(&ordered[s..e]);
        }
        if rms >= cfg.dist_thresh {
            continue;
        }
        let project = |p: &Vec2| c + dir * dir.dot(&(p - c));
        let a = project(&ordered[s]);
        let b = project(&ordered[e - 1]);
        if (b - a).norm() < cfg.min_len {
            continue;
        }
        let inliers = ordered[s..e].iter().filter(|p| residual(&c, &dir, p) <= cfg.dist_thresh).count();
        segments.push(LineSegment2 { a, b, inlier_count: inliers, rms });
    }
    segments.sort_by(|x, y| {
        let bx = x.midpoint().y.atan2(x.midpoint().x);
        let by = y.midpoint().y.atan2(y.midpoint().x);
        bx.total_cmp(&by)
    });
    segments
}
