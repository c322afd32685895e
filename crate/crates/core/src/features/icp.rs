use super::LidarScan;
use crate::geometry::{perp, rot2, LidarMotion, Vec2};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Correspondences farther than this are rejected (m).
    pub max_corr_dist: f64,
    /// Minimum matched fraction of the source scan at convergence.
    pub overlap_frac: f64,
    /// Convergence threshold on the parameter update.
    pub converge_eps: f64,
    /// Half-width of the index window used to estimate target normals.
    pub normal_half_window: usize,
    /// Neighbours farther than this are excluded from normal estimation (m).
    pub normal_radius: f64,
    /// Maximum ratio of the small to the large covariance eigenvalue for a usable normal.
    pub max_planarity: f64,
    /// Huber threshold on point-to-line residuals (m).
    pub huber: f64,
    /// Eigen-directions of the normal matrix weaker than this fraction of the
    /// strongest are treated as unobservable and left at the initial value.
    pub degeneracy_ratio: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            max_corr_dist: 0.3,
            overlap_frac: 0.5,
            converge_eps: 1e-6,
            normal_half_window: 4,
            normal_radius: 0.25,
            max_planarity: 0.1,
            huber: 0.05,
            degeneracy_ratio: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IcpError {
    #[error("icp diverged: inlier fraction {fraction:.3} below {required:.3}")]
    Diverged { fraction: f64, required: f64 },
    #[error("icp needs at least 3 points in each scan")]
    TooFewPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub motion: LidarMotion,
    pub iterations: usize,
    pub inlier_fraction: f64,
    /// Number of parameter directions that were unobservable at the last iteration.
    pub degenerate_directions: usize,
}

struct Target {
    points: Vec<Vec2>,
    normals: Vec<Option<Vec2>>,
    grid: Grid,
}

/// Uniform bucket grid over the target scan.
struct Grid {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn new(points: &[Vec2], cell: f64) -> Self {
        let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).min(4096);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).min(4096);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut grid = Self { origin: lo, cell, nx, ny, buckets: Vec::new() };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = grid.cell_of(p);
            buckets[cy * nx + cx].push(i as u32);
        }
        grid.buckets = buckets;
        grid
    }

    fn cell_of(&self, p: &Vec2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64);
        let cy = ((p.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64);
        (cx as usize, cy as usize)
    }

    /// Nearest point within `radius` (ties to the lower index).
    fn nearest(&self, points: &[Vec2], q: &Vec2, radius: f64) -> Option<(usize, f64)> {
        let gx = (q.x - self.origin.x) / self.cell;
        let gy = (q.y - self.origin.y) / self.cell;
        if gx < -1.0 || gy < -1.0 || gx > self.nx as f64 || gy > self.ny as f64 {
            return None;
        }
        let (cx, cy) = self.cell_of(q);
        let mut best: Option<(usize, f64)> = None;
        for y in cy.saturating_sub(1)..=(cy + 1).min(self.ny - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(self.nx - 1) {
                for &i in &self.buckets[y * self.nx + x] {
                    let d = (points[i as usize] - q).norm_squared();
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && (i as usize) < bi),
                    };
                    if better {
                        best = Some((i as usize, d));
                    }
                }
            }
        }
        best.filter(|(_, d)| *d <= radius * radius).map(|(i, d)| (i, d.sqrt()))
    }
}

fn estimate_normals(points: &[Vec2], cfg: &IcpConfig) -> Vec<Option<Vec2>> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(cfg.normal_half_window);
            let hi = (i + cfg.normal_half_window + 1).min(n);
            let neigh: Vec<Vec2> = points[lo..hi]
                .iter()
                .copied()
                .filter(|p| (p - points[i]).norm() <= cfg.normal_radius)
                .collect();
            if neigh.len() < 3 {
                return None;
            }
            let c = neigh.iter().fold(Vec2::zeros(), |a, p| a + p) / neigh.len() as f64;
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for p in &neigh {
                let d = p - c;
                sxx += d.x * d.x;
                syy += d.y * d.y;
                sxy += d.x * d.y;
            }
            let tr = sxx + syy;
            let det = sxx * syy - sxy * sxy;
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            let (l_max, l_min) = (0.5 * tr + disc, 0.5 * tr - disc);
            if l_max <= 0.0 || l_min / l_max > cfg.max_planarity {
                return None;
            }
            let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
            Some(Vec2::new(-theta.sin(), theta.cos()))
        })
        .collect()
}

/// Point-to-line ICP estimating the motion `a -> b` (`l_b = R l_a + t`).
///
/// Directions of the normal matrix that the geometry does not constrain (for
/// example translation along a corridor of parallel walls) keep the value of
/// `init`.
pub fn icp_register(
    scan_a: &LidarScan,
    scan_b: &LidarScan,
    init: &LidarMotion,
    cfg: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    if scan_a.points.len() < 3 || scan_b.points.len() < 3 {
        return Err(IcpError::TooFewPoints);
    }
    let target = Target {
        points: scan_b.points.clone(),
        normals: estimate_normals(&scan_b.points, cfg),
        grid: Grid::new(&scan_b.points, cfg.max_corr_dist),
    };

    let mut angle = init.angle;
    let mut t = init.translation;
    let mut iterations = 0;
    let mut fraction = 0.0;
    let mut degenerate = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let r = rot2(angle);
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        let mut matched = 0usize;
        for p in &scan_a.points {
            let q = r * p + t;
            let Some((j, _)) = target.grid.nearest(&target.points, &q, cfg.max_corr_dist) else {
                continue;
            };
            let Some(n) = target.normals[j] else { continue };
            matched += 1;
            let res = n.dot(&(q - target.points[j]));
            let w = if res.abs() <= cfg.huber { 1.0 } else { cfg.huber / res.abs() };
            // Increment (tx, ty, angle) applied on the left of the current estimate.
            let jac = Vector3::new(n.x, n.y, n.dot(&perp(&q)));
            h += w * jac * jac.transpose();
            g += w * jac * res;
        }
        fraction = matched as f64 / scan_a.points.len() as f64;
        if matched < 3 {
            break;
        }
        let eig = SymmetricEigen::new(h);
        let l_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut delta = Vector3::zeros();
        degenerate = 0;
        for k in 0..3 {
            let lambda = eig.eigenvalues[k];
            if lambda <= cfg.degeneracy_ratio * l_max || lambda <= 0.0 {
                degenerate += 1;
                continue;
            }
            let v = eig.eigenvectors.column(k);
            delta -= v * (v.dot(&g) / lambda);
        }
        // Compose the increment on the left: q' = R_d q + t_d.
        let rd = rot2(delta.z);
        t = rd * t + Vec2::new(delta.x, delta.y);
        angle += delta.z;
        if delta.norm() < cfg.converge_eps {
            break;
        }
    }
    if fraction < cfg.overlap_frac {
        return Err(IcpError::Diverged { fraction, required: cfg.overlap_frac });
    }
    Ok(IcpResult {
        motion: LidarMotion::new(angle, t),
        iterations,
        inlier_fraction: fraction,
        degenerate_directions: degenerate,
    })
}
