use super::{SimError, World};
use crate::dataset::DatasetMeta;
use crate::features::{group_lines, GroupingConfig, ImageSegment, SensorFrame};
use crate::geometry::{wrap_angle, LidarMotion, Pose2, SimilarityTransform2, Vec2};
use crate::mapping::{FloorPlan, Trajectory};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Geometric shape of a robot path in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathShape {
    /// Counter-clockwise ellipse starting at `center + (semi_axes.x, 0)`.
    Ellipse { center: Vec2, semi_axes: Vec2, laps: f64 },
    /// Sinusoidal weave about the straight line `start -> end`.
    Weave { start: Vec2, end: Vec2, amplitude: f64, period: f64 },
    Polyline { points: Vec<Vec2> },
    /// Explicit frame poses; spacing is not resampled.
    Poses { poses: Vec<Pose2> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub shape: PathShape,
    /// Frame spacing is drawn uniformly from `[min_spacing, max_spacing]` (m).
    pub min_spacing: f64,
    pub max_spacing: f64,
    pub max_frames: Option<usize>,
}

impl TrajectorySpec {
    pub fn new(shape: PathShape) -> Self {
        Self { shape, min_spacing: 0.10, max_spacing: 0.20, max_frames: None }
    }

    pub fn with_max_frames(mut self, n: Option<usize>) -> Self {
        self.max_frames = n;
        self
    }

    fn dense(&self) -> Vec<Vec2> {
        const STEP: f64 = 0.002;
        match &self.shape {
            PathShape::Ellipse { center, semi_axes, laps } => {
                let (a, b) = (semi_axes.x, semi_axes.y);
                // Ramanujan's perimeter approximation is ample for step sizing.
                let h = ((a - b) / (a + b)).powi(2);
                let perimeter = std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
                let n = ((perimeter * laps / STEP).ceil() as usize).max(1);
                (0..=n)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * laps * k as f64 / n as f64;
                        center + Vec2::new(a * t.cos(), b * t.sin())
                    })
                    .collect()
            }
            PathShape::Weave { start, end, amplitude, period } => {
                let len = (end - start).norm();
                if len == 0.0 {
                    return vec![*start];
                }
                let d = (end - start) / len;
                let n = Vec2::new(-d.y, d.x);
                let k = ((len / STEP).ceil() as usize).max(1);
                (0..=k)
                    .map(|i| {
                        let s = len * i as f64 / k as f64;
                        start + d * s + n * (amplitude * (2.0 * std::f64::consts::PI * s / period).sin())
                    })
                    .collect()
            }
            PathShape::Polyline { points } => {
                let mut out = Vec::new();
                for w in points.windows(2) {
                    let k = (((w[1] - w[0]).norm() / STEP).ceil() as usize).max(1);
                    for i in 0..k {
                        out.push(w[0] + (w[1] - w[0]) * (i as f64 / k as f64));
                    }
                }
                out.extend(points.last());
                out
            }
            PathShape::Poses { poses } => poses.iter().map(|p| p.position()).collect(),
        }
    }

    /// Frame poses along the path, with headings tangent to it.
    pub fn poses(&self, rng: &mut ChaCha8Rng) -> Vec<Pose2> {
        let limit = self.max_frames.unwrap_or(usize::MAX);
        if let PathShape::Poses { poses } = &self.shape {
            return poses.iter().copied().take(limit).collect();
        }
        let pts = self.dense();
        let mut arc = vec![0.0];
        for w in pts.windows(2) {
            arc.push(arc.last().expect("non-empty") + (w[1] - w[0]).norm());
        }
        let total = *arc.last().expect("non-empty");
        let at = |s: f64| -> Vec2 {
            let s = s.clamp(0.0, total);
            let i = arc.partition_point(|&a| a < s).max(1).min(pts.len() - 1);
            if i == 0 || arc[i] == arc[i - 1] {
                return pts[i];
            }
            let u = (s - arc[i - 1]) / (arc[i] - arc[i - 1]);
            pts[i - 1] + (pts[i] - pts[i - 1]) * u
        };
        if total <= 0.0 {
            return vec![Pose2::new(pts[0].x, pts[0].y, 0.0)].into_iter().take(limit).collect();
        }
        let half = 0.5 * self.min_spacing;
        let mut out = Vec::new();
        let mut s = 0.0;
        while s <= total + 1e-12 && out.len() < limit {
            let p = at(s);
            let d = at(s + half) - at(s - half);
            out.push(Pose2::new(p.x, p.y, wrap_angle(d.y.atan2(d.x))));
            s += rng.random_range(self.min_spacing..=self.max_spacing);
        }
        out
    }
}

/// Everything the simulator knows that the pipeline must recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub world: World,
    /// LiDAR poses in world coordinates.
    pub poses: Trajectory,
    /// Top-down to LiDAR similarity.
    pub alignment: SimilarityTransform2,
    /// Room walls and corners in world coordinates.
    pub plan: FloorPlan,
    pub ground_track_ids: Vec<u64>,
}

impl GroundTruth {
    /// Rigid transform taking world coordinates into the frame of the first pose.
    pub fn gauge(&self) -> (f64, Vec2) {
        let p0 = self.poses.poses.first().copied().unwrap_or_else(Pose2::identity);
        let angle = -p0.heading;
        (angle, -(crate::geometry::rot2(angle) * p0.position()))
    }

    /// Poses expressed relative to the first one (which becomes the identity).
    pub fn gauge_fixed_poses(&self) -> Trajectory {
        let (a, t) = self.gauge();
        Trajectory::new(self.poses.poses.iter().map(|p| p.transformed(a, &t)).collect())
    }

    /// Plan expressed in the frame of the first pose.
    pub fn gauge_fixed_plan(&self) -> FloorPlan {
        let (a, t) = self.gauge();
        let r = crate::geometry::rot2(a);
        let f = |p: &Vec2| r * p + t;
        FloorPlan {
            walls: self.plan.walls.iter().map(|w| w.transformed(f)).collect(),
            corners: self.plan.corners.iter().map(f).collect(),
        }
    }

    /// Room outline in the frame of the first pose.
    pub fn gauge_fixed_room(&self) -> Vec<Vec2> {
        let (a, t) = self.gauge();
        let r = crate::geometry::rot2(a);
        self.world.room.iter().map(|p| r * p + t).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSequence {
    pub meta: DatasetMeta,
    /// Frames carry identity odometry; the front end fills it by scan matching.
    pub frames: Vec<SensorFrame>,
    pub truth: GroundTruth,
}

/// Simulates scans, tracks, grouped lines and vanishing points along a path.
pub fn generate_sequence(world: &World, spec: &TrajectorySpec, seed: u64) -> Result<SimSequence, SimError> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses = spec.poses(&mut rng);
    for p in &poses {
        world.check_pose(p)?;
    }
    let grouping = GroupingConfig::default();
    let mut frames = Vec::with_capacity(poses.len());
    for (index, pose) in poses.iter().enumerate() {
        let mut scan = world.simulate_scan(pose, &mut rng)?;
        scan.timestamp = index as f64;
        let view = world.simulate_camera(pose, &mut rng)?;
        let raw: Vec<ImageSegment> = view.lines.iter().map(|(s, _)| *s).collect();
        let (lines, _) = group_lines(&raw, &view.vp, &world.intrinsics, 1e-6, &grouping);
        frames.push(SensorFrame {
            index,
            scan,
            tracks: view.tracks,
            lines,
            vp: view.vp,
            odometry: LidarMotion::identity(),
        });
    }
    let truth = GroundTruth {
        world: world.clone(),
        poses: Trajectory::new(poses),
        alignment: world.true_alignment(),
        plan: world.floor_plan(),
        ground_track_ids: world.landmarks.iter().filter(|l| l.on_ground).map(|l| l.id).collect(),
    };
    Ok(SimSequence { meta: DatasetMeta::from_world(world), frames, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{camera_motion_from_hypothesis, Vec3};

    #[test]
    fn l_shaped_path_gives_three_frames() {
        let world = World::preset("square", 0).unwrap();
        let spec = TrajectorySpec::new(PathShape::Poses {
            poses: vec![
                Pose2::new(1.0, 1.0, 0.0),
                Pose2::new(1.15, 1.0, 0.4),
                Pose2::new(1.15, 1.15, 1.2),
            ],
        });
        let seq = generate_sequence(&world, &spec, 1).unwrap();
        assert_eq!(seq.frames.len(), 3);
        let p = &seq.truth.poses.poses;
        assert!(p[0].motion_to(&p[1]).angle.abs() > 0.5f64.to_radians());
        assert!(p[1].motion_to(&p[2]).angle.abs() > 0.5f64.to_radians());
    }

    #[test]
    fn zero_length_path_gives_one_frame() {
        let world = World::preset("square", 0).unwrap();
        let spec = TrajectorySpec::new(PathShape::Polyline { points: vec![Vec2::new(2.0, 2.0)] });
        assert_eq!(generate_sequence(&world, &spec, 1).unwrap().frames.len(), 1);
    }

    #[test]
    fn spacing_within_protocol() {
        let world = World::preset("square", 0).unwrap();
        let seq = generate_sequence(&world, &world.trajectory, 4).unwrap();
        assert!(seq.frames.len() > 20);
        for w in seq.truth.poses.poses.windows(2) {
            let d = (w[1].position() - w[0].position()).norm();
            assert!((0.09..=0.20).contains(&d), "{d}");
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let world = World::preset("cluttered", 2).unwrap();
        let spec = world.trajectory.clone().with_max_frames(Some(5));
        let a = generate_sequence(&world, &spec, 11).unwrap();
        let b = generate_sequence(&world, &spec, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn camera_motion_matches_true_relative_pose() {
        let world = World::preset("square", 0).unwrap();
        let frame = world.topdown(1e-9);
        let h = world.true_alignment();
        let (pi, pj) = (Pose2::new(1.5, 2.0, 0.3), Pose2::new(1.7, 2.1, 0.55));
        let (r_c, t_c) = camera_motion_from_hypothesis(&h, &frame, &pi.motion_to(&pj));
        // X_j = R_cj^T (R_ci X_i + c_i - c_j), with t_c in camera heights.
        let (ri, rj) = (world.camera_rotation(&pi), world.camera_rotation(&pj));
        let (ci, cj) = (world.camera_center(&pi), world.camera_center(&pj));
        let r_true = rj.transpose() * ri;
        let t_true: Vec3 = rj.transpose() * (ci - cj) / world.camera_height();
        assert!((r_c - r_true).norm() < 1e-9);
        assert!((t_c - t_true).norm() < 1e-9);
    }
}
