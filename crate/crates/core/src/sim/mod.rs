//! Synthetic indoor worlds: polygonal rooms with vertical walls, a robot
//! carrying a horizontal 2D LiDAR and a rigidly mounted pitched camera.
//!
//! The world uses a downward third axis (floor at `z = 0`, camera at
//! `z = -height`), matching the top-down frame of [`crate::geometry`].

mod presets;
mod sequence;

pub use sequence::{generate_sequence, GroundTruth, PathShape, SimSequence, TrajectorySpec};

use crate::eval::{LabelImage, LABEL_GROUND, LABEL_UNKNOWN, LABEL_WALL_BASE};
use crate::features::{ImageSegment, LidarScan, TrackObservation};
use crate::geometry::{
    rot2, rot3_z, topdown_frame, CameraIntrinsics, Mat3, Pose2, SimilarityTransform2,
    TopDownFrame, VanishingPoint, Vec2, Vec3,
};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("pose ({x:.3}, {y:.3}) is outside the free space of world '{world}'")]
    PoseOutsideWorld { world: String, x: f64, y: f64 },
    #[error("unknown world '{0}' (expected square, cluttered or corridor)")]
    UnknownWorld(String),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// A vertical planar face standing on the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimWall {
    pub a: Vec2,
    pub b: Vec2,
    pub height: f64,
    /// Furniture faces are seen by the sensors but are not part of the floor plan.
    pub furniture: bool,
}

/// Rigid camera mount relative to the LiDAR body frame (x forward, y right, z down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    /// Camera height above the floor (m).
    pub height: f64,
    /// Downward tilt of the optical axis (deg).
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub yaw_deg: f64,
    /// Camera centre in the LiDAR XY plane (m).
    pub offset: Vec2,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self { height: 1.0, pitch_deg: 20.0, roll_deg: 3.0, yaw_deg: 4.0, offset: Vec2::new(0.12, -0.05) }
    }
}

impl CameraMount {
    /// Camera-to-body rotation.
    pub fn body_rotation(&self) -> Mat3 {
        // Level camera looking along body x: cam x -> body y, cam y -> body z, cam z -> body x.
        let level = Mat3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let (sp, cp) = (-self.pitch_deg.to_radians()).sin_cos();
        let pitch = Mat3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
        let (sr, cr) = self.roll_deg.to_radians().sin_cos();
        let roll = Mat3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
        rot3_z(self.yaw_deg.to_radians()) * level * pitch * roll
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// LiDAR range noise (m).
    pub range_sigma: f64,
    /// Image point and line endpoint noise (px).
    pub pixel_sigma: f64,
    /// Probability that a visible feature is not reported in a frame.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { range_sigma: 0.01, pixel_sigma: 0.5, dropout: 0.1 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { range_sigma: 0.0, pixel_sigma: 0.0, dropout: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub beams: usize,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self { beams: 720, min_range: 0.15, max_range: 12.0 }
    }
}

/// A textured point of the scene that the camera can track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: Vec3,
    pub on_ground: bool,
}

/// What a simulated image line is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    /// Wall meets floor.
    Boundary { wall: usize },
    /// Top edge of a wall or furniture face.
    Top { wall: usize },
    /// Horizontal texture line painted on a wall.
    Stripe { wall: usize },
    /// Vertical wall edge.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub tracks: Vec<TrackObservation>,
    /// Parallel to `tracks`: whether the feature lies on the floor.
    pub on_ground: Vec<bool>,
    pub lines: Vec<(ImageSegment, LineKind)>,
    pub vp: VanishingPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    /// Room outline (counter-clockwise).
    pub room: Vec<Vec2>,
    /// Furniture footprints (counter-clockwise).
    pub obstacles: Vec<Vec<Vec2>>,
    pub walls: Vec<SimWall>,
    pub landmarks: Vec<Landmark>,
    /// Heights of painted horizontal stripes on room walls (m).
    pub stripe_heights: Vec<f64>,
    pub mount: CameraMount,
    pub noise: NoiseConfig,
    pub lidar: LidarSpec,
    pub intrinsics: CameraIntrinsics,
    pub image_width: usize,
    pub image_height: usize,
    /// Default robot path for this world.
    pub trajectory: TrajectorySpec,
}

pub(crate) fn point_in_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Parameters `(s, u)` of the intersection `p + s d = a + u (b - a)`, if any.
pub(crate) fn ray_segment(p: &Vec2, d: &Vec2, a: &Vec2, b: &Vec2) -> Option<(f64, f64)> {
    let e = b - a;
    let den = d.x * e.y - d.y * e.x;
    if den.abs() < 1e-15 {
        return None;
    }
    let w = a - p;
    let s = (w.x * e.y - w.y * e.x) / den;
    let u = (w.x * d.y - w.y * d.x) / den;
    Some((s, u))
}

impl World {
    pub fn camera_height(&self) -> f64 {
        self.mount.height
    }

    /// Camera-to-world rotation at a LiDAR pose.
    pub fn camera_rotation(&self, pose: &Pose2) -> Mat3 {
        rot3_z(pose.heading) * self.mount.body_rotation()
    }

    pub fn camera_center(&self, pose: &Pose2) -> Vec3 {
        let c = pose.to_world(&self.mount.offset);
        Vec3::new(c.x, c.y, -self.mount.height)
    }

    /// Exact vertical vanishing point (independent of the pose on a flat floor).
    pub fn vanishing_point(&self) -> VanishingPoint {
        let down = self.mount.body_rotation().transpose() * Vec3::z();
        let k = &self.intrinsics;
        VanishingPoint::new(k.fx * down.x / down.z + k.cx, k.fy * down.y / down.z + k.cy)
    }

    pub fn topdown(&self, eps_v: f64) -> TopDownFrame {
        topdown_frame(&self.vanishing_point(), &self.intrinsics, eps_v)
            .expect("simulated mounts keep the vanishing point off the image axes")
    }

    /// The similarity mapping top-down coordinates to LiDAR coordinates.
    ///
    /// Scale is the camera height because top-down units are camera heights.
    pub fn true_alignment(&self) -> SimilarityTransform2 {
        let frame = self.topdown(1e-9);
        let e_x_body = self.mount.body_rotation() * frame.e_x();
        SimilarityTransform2::new(
            self.mount.height,
            e_x_body.y.atan2(e_x_body.x),
            self.mount.offset,
        )
    }

    pub fn check_pose(&self, pose: &Pose2) -> Result<(), SimError> {
        let p = pose.position();
        let free = point_in_polygon(&p, &self.room)
            && !self.obstacles.iter().any(|o| point_in_polygon(&p, o));
        if free {
            Ok(())
        } else {
            Err(SimError::PoseOutsideWorld { world: self.name.clone(), x: p.x, y: p.y })
        }
    }

    /// True if the sight line from `from` to `to` crosses a wall before `to`.
    pub fn occluded(&self, from: &Vec3, to: &Vec3) -> bool {
        let p = from.xy();
        let d = to.xy() - p;
        for w in &self.walls {
            if let Some((s, u)) = ray_segment(&p, &d, &w.a, &w.b) {
                if s > 1e-9 && s < 1.0 - 1e-7 && (-1e-12..=1.0 + 1e-12).contains(&u) {
                    let z = from.z + s * (to.z - from.z);
                    if z <= 1e-12 && z >= -w.height - 1e-12 {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Nearest wall hit along a horizontal ray: `(distance, wall index)`.
    pub fn cast(&self, origin: &Vec2, dir: &Vec2) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, w) in self.walls.iter().enumerate() {
            if let Some((s, u)) = ray_segment(origin, dir, &w.a, &w.b) {
                if s > 0.0 && (0.0..=1.0).contains(&u) && best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, i));
                }
            }
        }
        best
    }

    /// Ray-cast LiDAR scan at uniform bearings with Gaussian range noise.
    pub fn simulate_scan(&self, pose: &Pose2, rng: &mut ChaCha8Rng) -> Result<LidarScan, SimError> {
        self.check_pose(pose)?;
        let noise = Normal::new(0.0, self.noise.range_sigma.max(0.0)).expect("finite sigma");
        let n = self.lidar.beams;
        let mut points = Vec::with_capacity(n);
        for k in 0..n {
            let bearing = -std::f64::consts::PI + (k as f64 + 0.5) * 2.0 * std::f64::consts::PI / n as f64;
            let local = Vec2::new(bearing.cos(), bearing.sin());
            let dir = pose.rotation() * local;
            let Some((r, _)) = self.cast(&pose.position(), &dir) else { continue };
            let r = if self.noise.range_sigma > 0.0 { r + noise.sample(rng) } else { r };
            if r >= self.lidar.min_range && r <= self.lidar.max_range {
                points.push(local * r);
            }
        }
        Ok(LidarScan::new(0.0, points))
    }

    fn in_image(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.image_width as f64 && p.y < self.image_height as f64
    }

    /// Noise-free pixel of a world point, if it is in front of the camera and inside the image.
    pub fn project(&self, pose: &Pose2, point: &Vec3) -> Option<Vec2> {
        let x = self.camera_rotation(pose).transpose() * (point - self.camera_center(pose));
        if x.z < 0.05 {
            return None;
        }
        self.intrinsics.project(&x).filter(|p| self.in_image(p))
    }

    fn visible(&self, pose: &Pose2, point: &Vec3) -> Option<Vec2> {
        let px = self.project(pose, point)?;
        (!self.occluded(&self.camera_center(pose), point)).then_some(px)
    }

    /// Visible runs of a 3D segment, sampled every `step` metres, as pixel segments.
    fn visible_runs(&self, pose: &Pose2, a: &Vec3, b: &Vec3, step: f64) -> Vec<ImageSegment> {
        let len = (b - a).norm();
        let n = ((len / step).ceil() as usize).max(1);
        let mut runs = Vec::new();
        let mut current: Option<(Vec2, Vec2)> = None;
        for i in 0..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            match (self.visible(pose, &p), current.as_mut()) {
                (Some(px), Some(run)) => run.1 = px,
                (Some(px), None) => current = Some((px, px)),
                (None, Some(_)) => runs.push(current.take().expect("run")),
                (None, None) => {}
            }
        }
        runs.extend(current);
        runs.into_iter()
            .filter(|(s, e)| (e - s).norm() >= 15.0)
            .map(|(s, e)| ImageSegment::new(s, e))
            .collect()
    }

    /// Tracks, raw image lines and the vanishing point seen from `pose`.
    pub fn simulate_camera(&self, pose: &Pose2, rng: &mut ChaCha8Rng) -> Result<CameraView, SimError> {
        self.check_pose(pose)?;
        let noise = Normal::new(0.0, self.noise.pixel_sigma.max(0.0)).expect("finite sigma");
        let jitter = |p: Vec2, rng: &mut ChaCha8Rng| {
            if self.noise.pixel_sigma > 0.0 {
                p + Vec2::new(noise.sample(rng), noise.sample(rng))
            } else {
                p
            }
        };

        let mut tracks = Vec::new();
        let mut on_ground = Vec::new();
        for lm in &self.landmarks {
            let Some(px) = self.visible(pose, &lm.position) else { continue };
            if self.noise.dropout > 0.0 && rng.random_bool(self.noise.dropout.min(1.0)) {
                continue;
            }
            tracks.push(TrackObservation { id: lm.id, pixel: jitter(px, rng) });
            on_ground.push(lm.on_ground);
        }

        let mut lines = Vec::new();
        let lift = |p: &Vec2, h: f64| Vec3::new(p.x, p.y, -h);
        // Sample lines slightly inside the faces so that the wall's own
        // neighbours do not register as occluders at its ends.
        for (i, w) in self.walls.iter().enumerate() {
            let shrink = (w.b - w.a).normalize() * 1e-6;
            let (a, b) = (w.a + shrink, w.b - shrink);
            let mut push = |segs: Vec<ImageSegment>, kind: LineKind, rng: &mut ChaCha8Rng| {
                for s in segs {
                    lines.push((ImageSegment::new(jitter(s.a, rng), jitter(s.b, rng)), kind));
                }
            };
            push(self.visible_runs(pose, &lift(&a, 0.0), &lift(&b, 0.0), 0.02), LineKind::Boundary { wall: i }, rng);
            push(self.visible_runs(pose, &lift(&a, w.height), &lift(&b, w.height), 0.02), LineKind::Top { wall: i }, rng);
            if !w.furniture {
                for &h in &self.stripe_heights {
                    push(self.visible_runs(pose, &lift(&a, h), &lift(&b, h), 0.02), LineKind::Stripe { wall: i }, rng);
                }
            }
        }
        for (corner, height) in self.vertical_edges() {
            let segs = self.visible_runs(pose, &lift(&corner, 0.0), &lift(&corner, height), 0.02);
            for s in segs {
                lines.push((ImageSegment::new(jitter(s.a, rng), jitter(s.b, rng)), LineKind::Vertical));
            }
        }

        Ok(CameraView { tracks, on_ground, lines, vp: self.vanishing_point() })
    }

    /// Vertical edges at polygon corners with the height of their tallest face.
    fn vertical_edges(&self) -> Vec<(Vec2, f64)> {
        let mut out: Vec<(Vec2, f64)> = Vec::new();
        for w in &self.walls {
            for p in [w.a, w.b] {
                match out.iter_mut().find(|(q, _)| (q - p).norm() < 1e-9) {
                    Some(e) => e.1 = e.1.max(w.height),
                    None => out.push((p, w.height)),
                }
            }
        }
        out
    }

    /// Room walls only, as the reference floor plan.
    pub fn floor_plan(&self) -> crate::mapping::FloorPlan {
        use crate::features::LineSegment2;
        let n = self.room.len();
        crate::mapping::FloorPlan {
            walls: (0..n).map(|i| LineSegment2::new(self.room[i], self.room[(i + 1) % n])).collect(),
            corners: self.room.clone(),
        }
    }

    /// Reference labels rendered directly from the world and the true camera.
    ///
    /// Walls keep their finite heights; anything above them is left unknown
    /// and excluded from accuracy.
    pub fn truth_labels(&self, pose: &Pose2, stride: usize) -> LabelImage {
        let mut img = LabelImage::new(self.image_width, self.image_height, stride);
        let r_wc = self.camera_rotation(pose);
        let c = self.camera_center(pose);
        let k_inv = self.intrinsics.inverse_matrix();
        for j in 0..img.rows {
            for i in 0..img.cols {
                let px = img.pixel_center(i, j);
                let d = r_wc * (k_inv * Vec3::new(px.x, px.y, 1.0));
                let mut best = (f64::INFINITY, LABEL_UNKNOWN);
                if d.z > 1e-12 {
                    best = ((-c.z) / d.z, LABEL_GROUND);
                }
                let planar = d.xy();
                for (wi, w) in self.walls.iter().enumerate() {
                    if let Some((s, u)) = ray_segment(&c.xy(), &planar, &w.a, &w.b) {
                        if s > 0.0 && (0.0..=1.0).contains(&u) && s < best.0 {
                            let z = c.z + s * d.z;
                            // Rays passing over a low face keep looking beyond it.
                            if z <= 0.0 && z >= -w.height {
                                best = (s, LABEL_WALL_BASE + wi as u16);
                            }
                        }
                    }
                }
                img.set(i, j, best.1);
            }
        }
        img
    }

    /// Planar point of the camera's optical centre for a pose (for plots).
    pub fn camera_xy(&self, pose: &Pose2) -> Vec2 {
        pose.position() + rot2(pose.heading) * self.mount.offset
    }
}
