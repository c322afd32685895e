use super::{AlignmentConfig, AlignmentError, CameraModel, Hypothesis};
use crate::features::{ImageSegment, LineSegment2, SensorFrame};
use crate::geometry::{perp, project_topdown, rot2, wrap_angle, SimilarityTransform2, TopDownFrame, Vec2};
use nalgebra::{DMatrix, Matrix4, Vector4};

/// A LiDAR wall segment matched to an image ground-wall boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    pub frame: usize,
    /// Segment in the frame's LiDAR coordinates.
    pub segment: LineSegment2,
    pub line: ImageSegment,
    /// Mean pixel distance of the projected segment samples to the line.
    pub mean_dist_px: f64,
}

/// Projects each LiDAR segment into the image through the hypothesis and pairs
/// it with the closest horizontal line candidate within `assoc_thresh_px`.
///
/// Segments with fewer than two samples inside the image are skipped.
pub fn identify_boundaries(
    h: &SimilarityTransform2,
    frame: &SensorFrame,
    segments: &[LineSegment2],
    camera: &CameraModel,
    cfg: &AlignmentConfig,
) -> Vec<Association> {
    let Ok(td) = camera.topdown(frame, cfg.eps_v) else { return Vec::new() };
    let (w, ht) = (camera.width as f64, camera.height as f64);
    let mut out = Vec::new();
    for seg in segments {
        let px: Vec<Vec2> = seg
            .samples(cfg.segment_samples)
            .iter()
            .filter_map(|l| td.to_pixel(&h.apply_inverse(l), &camera.intrinsics))
            .filter(|p| p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < ht)
            .collect();
        if px.len() < 2 {
            continue;
        }
        let best = frame
            .lines
            .horizontal
            .iter()
            .filter(|line| line.length() > 0.0)
            .filter(|line| {
                // The projected samples must overlap the candidate's extent.
                let (lo, hi) = px.iter().map(|p| line.parameter(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| {
                    (a.min(t), b.max(t))
                });
                hi >= -0.05 && lo <= 1.05
            })
            .map(|line| (px.iter().map(|p| line.line_distance(p)).sum::<f64>() / px.len() as f64, line))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((d, line)) = best {
            if d < cfg.assoc_thresh_px {
                out.push(Association { frame: frame.index, segment: *seg, line: *line, mean_dist_px: d });
            }
        }
    }
    out
}

fn bearing_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    let mid = a.0 + 0.5 * wrap_angle(a.1 - a.0);
    let rel = |x: f64| wrap_angle(x - mid);
    let (a0, a1) = (rel(a.0).min(rel(a.1)), rel(a.0).max(rel(a.1)));
    let (b0, b1) = (rel(b.0).min(rel(b.1)), rel(b.0).max(rel(b.1)));
    b1 >= a0 && b0 <= a1
}

/// Scale implied by pairing each LiDAR segment with the nearest parallel
/// boundary candidate in the top-down view, as the median over segments.
///
/// Only the hypothesis' rotation and origin are used. Every other horizontal
/// line on a wall (stripes, furniture tops) rectifies farther away than the
/// wall's foot, so the nearest candidate is taken as the boundary.
pub fn estimate_scale(
    h: &SimilarityTransform2,
    frames: &[(&SensorFrame, Vec<LineSegment2>)],
    camera: &CameraModel,
    cfg: &AlignmentConfig,
) -> Option<f64> {
    let cos_tol = cfg.scale_parallel_deg.to_radians().cos();
    let r_inv = rot2(-h.phi);
    let mut ratios = Vec::new();
    for (frame, segments) in frames {
        let Ok(td) = camera.topdown(frame, cfg.eps_v) else { continue };
        let lines: Vec<(Vec2, f64, (f64, f64))> = frame
            .lines
            .horizontal
            .iter()
            .filter_map(|l| {
                let g1 = project_topdown(&l.a, &td).ok()?;
                let g2 = project_topdown(&l.b, &td).ok()?;
                let d = g2 - g1;
                if d.norm() < 1e-12 {
                    return None;
                }
                let mut n = perp(&d).normalize();
                let mut rho = n.dot(&g1);
                if rho < 0.0 {
                    n = -n;
                    rho = -rho;
                }
                (rho > 1e-9).then_some((n, rho, (g1.y.atan2(g1.x), g2.y.atan2(g2.x))))
            })
            .collect();
        for s in segments {
            let (a, b) = (r_inv * (s.a - h.origin), r_inv * (s.b - h.origin));
            let d = b - a;
            if d.norm() < 1e-9 {
                continue;
            }
            let mut n = perp(&d).normalize();
            let mut rho = n.dot(&a);
            if rho < 0.0 {
                n = -n;
                rho = -rho;
            }
            let span = (a.y.atan2(a.x), b.y.atan2(b.x));
            let nearest = lines
                .iter()
                .filter(|(m, _, bearings)| m.dot(&n) >= cos_tol && bearing_overlap(span, *bearings))
                .map(|(_, r, _)| *r)
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                ratios.push(rho / nearest);
            }
        }
    }
    if ratios.len() < cfg.scale_min_segments.max(1) {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    Some(ratios[ratios.len() / 2])
}

/// LiDAR points that should lie on a top-down line `normal . g = offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryObservation {
    pub points: Vec<Vec2>,
    pub normal: Vec2,
    pub offset: f64,
}

impl BoundaryObservation {
    pub fn from_association(a: &Association, frame: &TopDownFrame, samples: usize) -> Option<Self> {
        let g1 = project_topdown(&a.line.a, frame).ok()?;
        let g2 = project_topdown(&a.line.b, frame).ok()?;
        let d = g2 - g1;
        if d.norm() < 1e-12 {
            return None;
        }
        let normal = perp(&d).normalize();
        Some(Self { points: a.segment.samples(samples), normal, offset: normal.dot(&g1) })
    }
}

/// Point-to-line residuals in LiDAR units (m) and their Jacobian with respect
/// to `(delta, phi, origin.x, origin.y)`.
///
/// Each image line is mapped into the LiDAR frame, where it reads
/// `R(phi) n . (l - origin) = delta * offset`. Measuring in metres keeps the
/// cost from shrinking as `delta` grows.
pub fn residuals_and_jacobian(t: &SimilarityTransform2, obs: &[BoundaryObservation]) -> (Vec<f64>, DMatrix<f64>) {
    let n: usize = obs.iter().map(|o| o.points.len()).sum();
    let mut r = Vec::with_capacity(n);
    let mut jac = DMatrix::zeros(n, 4);
    let rot = rot2(t.phi);
    let mut row = 0;
    for o in obs {
        let nl = rot * o.normal;
        let dn = perp(&nl);
        for l in &o.points {
            let d = l - t.origin;
            r.push(nl.dot(&d) - t.delta * o.offset);
            jac[(row, 0)] = -o.offset;
            jac[(row, 1)] = dn.dot(&d);
            jac[(row, 2)] = -nl.x;
            jac[(row, 3)] = -nl.y;
            row += 1;
        }
    }
    (r, jac)
}

pub fn boundary_cost(t: &SimilarityTransform2, obs: &[BoundaryObservation]) -> f64 {
    let rot = rot2(t.phi);
    0.5 * obs
        .iter()
        .flat_map(|o| {
            let nl = rot * o.normal;
            o.points.iter().map(move |l| nl.dot(&(l - t.origin)) - t.delta * o.offset)
        })
        .map(|r| r * r)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOutcome {
    pub hypothesis: Hypothesis,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

fn distinct_directions(obs: &[BoundaryObservation], tol: f64) -> usize {
    let mut dirs: Vec<f64> = Vec::new();
    for o in obs {
        let a = o.normal.y.atan2(o.normal.x).rem_euclid(std::f64::consts::PI);
        let close = |b: &f64| {
            let d = (a - b).abs();
            d.min(std::f64::consts::PI - d) < tol
        };
        if !dirs.iter().any(close) {
            dirs.push(a);
        }
    }
    dirs.len()
}

fn apply_step(t: &SimilarityTransform2, dx: &Vector4<f64>) -> SimilarityTransform2 {
    SimilarityTransform2::new(t.delta + dx[0], t.phi + dx[1], t.origin + Vec2::new(dx[2], dx[3]))
}

/// Refines `(delta, phi, origin)` by damped Gauss-Newton on the summed squared
/// point-to-line distances. Only cost-decreasing steps are accepted.
pub fn optimize_hypothesis(h: &Hypothesis, obs: &[BoundaryObservation], max_iter: usize) -> Result<OptimizeOutcome, AlignmentError> {
    let directions = distinct_directions(obs, 5f64.to_radians());
    if directions < 2 {
        return Err(AlignmentError::RankDeficient { directions });
    }
    let mut t = h.transform;
    let initial_cost = boundary_cost(&t, obs);
    let mut cost = initial_cost;
    let mut lambda = 1e-4;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let (r, j) = residuals_and_jacobian(&t, obs);
        let jt = j.transpose();
        let jtj: Matrix4<f64> = (&jt * &j).fixed_view::<4, 4>(0, 0).into();
        let g: Vector4<f64> = (&jt * nalgebra::DVector::from_vec(r)).fixed_view::<4, 1>(0, 0).into();
        if it == 0 {
            let eig = jtj.symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            if hi <= 0.0 || lo <= 1e-12 * hi {
                return Err(AlignmentError::RankDeficient { directions });
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(dx) = a.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = apply_step(&t, &dx);
            let c = if cand.delta > 0.0 { boundary_cost(&cand, obs) } else { f64::INFINITY };
            if c < cost {
                let small = dx.norm() < 1e-14 * (1.0 + t.delta + t.origin.norm());
                t = cand;
                let rel = (cost - c) / cost.max(1e-300);
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if small || rel < 1e-15 {
                    return Ok(OptimizeOutcome { hypothesis: Hypothesis { transform: t, ..*h }, initial_cost, final_cost: cost, iterations });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(OptimizeOutcome { hypothesis: Hypothesis { transform: t, ..*h }, initial_cost, final_cost: cost, iterations })
}
