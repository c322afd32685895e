use super::{FloorPlan, MappingConfig, Trajectory};
use crate::features::{extract_lines, LineExtractionConfig, LineSegment2, SensorFrame};
use crate::geometry::{wrap_angle, Mat2, Vec2};

/// Length-weighted second moments of a set of segments.
#[derive(Debug, Clone)]
struct Cluster {
    weight: f64,
    first: Vec2,
    second: Mat2,
    endpoints: Vec<Vec2>,
    inliers: usize,
}

impl Cluster {
    fn new(s: &LineSegment2) -> Self {
        let mut c = Self { weight: 0.0, first: Vec2::zeros(), second: Mat2::zeros(), endpoints: Vec::new(), inliers: 0 };
        c.add(s);
        c
    }

    fn add(&mut self, s: &LineSegment2) {
        let l = s.length();
        let m = s.midpoint();
        let d = s.direction();
        self.weight += l;
        self.first += m * l;
        self.second += (m * m.transpose() + d * d.transpose() * (l * l / 12.0)) * l;
        self.endpoints.extend([s.a, s.b]);
        self.inliers += s.inlier_count;
    }

    fn absorb(&mut self, o: Cluster) {
        self.weight += o.weight;
        self.first += o.first;
        self.second += o.second;
        self.endpoints.extend(o.endpoints);
        self.inliers += o.inliers;
    }

    /// `(centroid, unit direction, rms offset)` of the total-least-squares line.
    fn line(&self) -> (Vec2, Vec2, f64) {
        let c = self.first / self.weight;
        let s = self.second / self.weight - c * c.transpose();
        let theta = 0.5 * (2.0 * s[(0, 1)]).atan2(s[(0, 0)] - s[(1, 1)]);
        let d = Vec2::new(theta.cos(), theta.sin());
        let n = Vec2::new(-d.y, d.x);
        (c, d, n.dot(&(s * n)).max(0.0).sqrt())
    }

    fn extent(&self, c: &Vec2, d: &Vec2) -> (f64, f64) {
        self.endpoints
            .iter()
            .map(|p| d.dot(&(p - c)))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
    }

    fn segment(&self) -> LineSegment2 {
        let (c, d, rms) = self.line();
        let (lo, hi) = self.extent(&c, &d);
        LineSegment2 { a: c + d * lo, b: c + d * hi, inlier_count: self.inliers, rms }
    }
}

fn undirected_angle(a: &Vec2, b: &Vec2) -> f64 {
    let ta = a.y.atan2(a.x);
    let tb = b.y.atan2(b.x);
    wrap_angle(2.0 * (ta - tb)).abs() / 2.0
}

fn mergeable(c: &Cluster, pts: &[Vec2], dir: &Vec2, cfg: &MappingConfig) -> bool {
    let (centroid, d, _) = c.line();
    if undirected_angle(&d, dir) > cfg.merge_angle_deg.to_radians() {
        return false;
    }
    let n = Vec2::new(-d.y, d.x);
    if pts.iter().any(|p| n.dot(&(p - centroid)).abs() > cfg.merge_offset) {
        return false;
    }
    let (lo, hi) = c.extent(&centroid, &d);
    let (slo, shi) = pts
        .iter()
        .map(|p| d.dot(&(p - centroid)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
    (slo - hi).max(lo - shi) <= cfg.merge_gap
}

/// Merges world-frame segments into walls.
///
/// Segments are absorbed longest first into the first compatible cluster
/// (direction, offset of both endpoints, and gap along the line), then
/// clusters are merged pairwise until none are compatible.
pub fn merge_segments(segments: &[LineSegment2], cfg: &MappingConfig) -> Vec<LineSegment2> {
    let mut order: Vec<&LineSegment2> = segments.iter().filter(|s| s.length() > 0.0).collect();
    order.sort_by(|a, b| b.length().total_cmp(&a.length()));
    let mut clusters: Vec<Cluster> = Vec::new();
    for s in order {
        match clusters.iter_mut().find(|c| mergeable(c, &[s.a, s.b], &s.direction(), cfg)) {
            Some(c) => c.add(s),
            None => clusters.push(Cluster::new(s)),
        }
    }
    'outer: loop {
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (si, sj) = (clusters[i].segment(), clusters[j].segment());
                let fits = mergeable(&clusters[i], &[sj.a, sj.b], &sj.direction(), cfg)
                    && mergeable(&clusters[j], &[si.a, si.b], &si.direction(), cfg);
                if fits {
                    let c = clusters.remove(j);
                    clusters[i].absorb(c);
                    continue 'outer;
                }
            }
        }
        break;
    }
    clusters
        .iter()
        .map(Cluster::segment)
        .filter(|s| s.length() >= cfg.min_wall_len)
        .collect()
}

fn line_intersection(a: &LineSegment2, b: &LineSegment2) -> Option<Vec2> {
    let (da, db) = (a.b - a.a, b.b - b.a);
    let den = da.perp(&db);
    if den.abs() < 1e-12 {
        return None;
    }
    Some(a.a + da * ((b.a - a.a).perp(&db) / den))
}

fn segment_distance(s: &LineSegment2, p: &Vec2) -> f64 {
    let d = s.b - s.a;
    let t = (d.dot(&(p - s.a)) / d.norm_squared()).clamp(0.0, 1.0);
    (s.a + d * t - p).norm()
}

/// Corners from wall intersections plus free wall endpoints.
///
/// Two walls crossing at more than `corner_min_angle_deg` produce a corner
/// when the intersection lies within `corner_snap` of both; walls are
/// extended to reach their corners.
pub fn compute_corners(walls: &[LineSegment2], cfg: &MappingConfig) -> FloorPlan {
    let mut walls = walls.to_vec();
    let mut corners: Vec<Vec2> = Vec::new();
    let mut hits: Vec<Vec<Vec2>> = vec![Vec::new(); walls.len()];
    for i in 0..walls.len() {
        for j in i + 1..walls.len() {
            if undirected_angle(&walls[i].direction(), &walls[j].direction()) < cfg.corner_min_angle_deg.to_radians() {
                continue;
            }
            let Some(x) = line_intersection(&walls[i], &walls[j]) else { continue };
            if segment_distance(&walls[i], &x) <= cfg.corner_snap && segment_distance(&walls[j], &x) <= cfg.corner_snap {
                hits[i].push(x);
                hits[j].push(x);
                if !corners.iter().any(|c| (c - x).norm() < cfg.corner_dedup) {
                    corners.push(x);
                }
            }
        }
    }
    for (w, hs) in walls.iter_mut().zip(&hits) {
        let d = w.direction();
        let len = w.length();
        let (mut lo, mut hi) = (0.0f64, len);
        for x in hs {
            let t = d.dot(&(x - w.a));
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let a = w.a;
        w.a = a + d * lo;
        w.b = a + d * hi;
    }
    for (w, hs) in walls.iter().zip(&hits) {
        for e in [w.a, w.b] {
            if !hs.iter().any(|x| (x - e).norm() <= cfg.corner_snap) {
                corners.push(e);
            }
        }
    }
    FloorPlan { walls, corners }
}

/// Builds a floor plan from every frame's scan placed at its trajectory pose.
///
/// # Panics
///
/// If the trajectory has fewer poses than there are frames.
pub fn integrate_scans(
    frames: &[SensorFrame],
    trajectory: &Trajectory,
    lines: &LineExtractionConfig,
    cfg: &MappingConfig,
) -> FloorPlan {
    assert!(trajectory.len() >= frames.len(), "trajectory must cover all frames");
    let mut segments = Vec::new();
    for (f, pose) in frames.iter().zip(&trajectory.poses) {
        segments.extend(extract_lines(&f.scan, lines).iter().map(|s| s.transformed(|p| pose.to_world(p))));
    }
    compute_corners(&merge_segments(&segments, cfg), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::sim::{generate_sequence, NoiseConfig, World};

    fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> LineSegment2 {
        LineSegment2::new(Vec2::new(ax, ay), Vec2::new(bx, by))
    }

    fn nearest(p: &Vec2, set: &[Vec2]) -> f64 {
        set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn empty_input_gives_empty_plan() {
        let plan = integrate_scans(&[], &Trajectory::default(), &LineExtractionConfig::default(), &MappingConfig::default());
        assert!(plan.is_empty() && plan.corners.is_empty());
    }

    #[test]
    fn single_scan_of_square_room() {
        let mut world = World::preset("square", 0).unwrap();
        world.noise = NoiseConfig::none();
        let spec = world.trajectory.clone().with_max_frames(Some(1));
        let seq = generate_sequence(&world, &spec, 0).unwrap();
        let pose = seq.truth.poses.poses[0];
        let plan = integrate_scans(
            &seq.frames,
            &Trajectory::new(vec![pose]),
            &LineExtractionConfig::default(),
            &MappingConfig::default(),
        );
        assert_eq!(plan.walls.len(), 4);
        assert_eq!(plan.corners.len(), 4);
        for c in &world.room {
            assert!(nearest(c, &plan.corners) < 0.01, "{c:?} {:?}", plan.corners);
        }
    }

    #[test]
    fn overlapping_scans_merge_into_one_wall() {
        let world = World::preset("square", 0).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let poses = [Pose2::new(1.5, 2.0, 0.1), Pose2::new(2.2, 1.8, -0.2)];
        let frames: Vec<SensorFrame> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| SensorFrame {
                index: i,
                scan: world.simulate_scan(p, &mut rng).unwrap(),
                tracks: vec![],
                lines: Default::default(),
                vp: world.vanishing_point(),
                odometry: crate::geometry::LidarMotion::identity(),
            })
            .collect();
        let plan = integrate_scans(
            &frames,
            &Trajectory::new(poses.to_vec()),
            &LineExtractionConfig::default(),
            &MappingConfig::default(),
        );
        let on_bottom = plan.walls.iter().filter(|w| w.a.y.abs() < 0.05 && w.b.y.abs() < 0.05).count();
        assert_eq!(on_bottom, 1);
        assert_eq!(plan.walls.len(), 4);
    }

    #[test]
    fn collinear_pieces_far_apart_stay_separate() {
        let cfg = MappingConfig::default();
        let walls = merge_segments(&[seg(0.0, 0.0, 1.0, 0.0), seg(3.0, 0.02, 4.0, 0.02)], &cfg);
        assert_eq!(walls.len(), 2);
        let walls = merge_segments(&[seg(0.0, 0.0, 1.0, 0.0), seg(1.2, 0.02, 2.0, 0.02)], &cfg);
        assert_eq!(walls.len(), 1);
        assert!((walls[0].length() - 2.0).abs() < 0.01);
    }

    #[test]
    fn corners_extend_walls_and_keep_free_ends() {
        let cfg = MappingConfig::default();
        let plan = compute_corners(&[seg(0.0, 0.0, 1.8, 0.0), seg(2.0, 0.2, 2.0, 3.0)], &cfg);
        assert_eq!(plan.corners.len(), 3);
        assert!(nearest(&Vec2::new(2.0, 0.0), &plan.corners) < 1e-12);
        assert!(nearest(&Vec2::new(0.0, 0.0), &plan.corners) < 1e-12);
        assert!(nearest(&Vec2::new(2.0, 3.0), &plan.corners) < 1e-12);
        assert!((plan.walls[0].b - Vec2::new(2.0, 0.0)).norm() < 1e-12);
    }
}
