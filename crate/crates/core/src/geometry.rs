//! Closed-form geometry shared by every stage of the pipeline.
//!
//! Frames and conventions:
//! - Camera coordinates follow the usual vision convention (x right, y down,
//!   z forward); pixels are `K * X / X.z`.
//! - The 3D world and the top-down frame both use a *downward* third axis.
//!   Planar (x, y) coordinates of the LiDAR, the world and the top-down view
//!   therefore share one handedness and are related by proper similarities.
//! - A [`LidarMotion`] maps point coordinates of scan `i` into scan `j`:
//!   `l_j = R l_i + t`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: focal lengths must be positive (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("vanishing point is degenerate (normalized x={x_v}, y={y_v})")]
    DegenerateVanishingPoint { x_v: f64, y_v: f64 },
    #[error("point lies on the rectified horizon")]
    PointAtHorizon,
    #[error("point pair is coincident")]
    CoincidentPoints,
    #[error("lidar rotation {angle_deg:.4} deg is too small for a motion constraint")]
    DegenerateMotion { angle_deg: f64 },
    #[error("camera translation is zero; epipolar geometry undefined")]
    ZeroTranslation,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn rot2(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Planar rotation extended to 3D as a rotation about the (downward) third axis.
pub fn rot3_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `J v`, i.e. the derivative of `rot2(a) v` at `a = 0`.
pub(crate) fn perp(v: &Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        Self { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics { fx: self.fx, fy: self.fy })
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// `K^-1 [u, v, 1]^T`.
    pub fn normalize(&self, pixel: &Vec2) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        if p.z <= 1e-12 {
            return None;
        }
        Some(Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Pixel location of the vertical vanishing point (homogeneous third component 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoint {
    pub u: f64,
    pub v: f64,
}

impl VanishingPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn pixel(&self) -> Vec2 {
        Vec2::new(self.u, self.v)
    }

    /// `(x_v, y_v)` with `[x_v, y_v, 1]^T = K^-1 p_v`.
    pub fn normalized(&self, k: &CameraIntrinsics) -> (f64, f64) {
        let n = k.normalize(&self.pixel());
        (n.x, n.y)
    }
}

/// Unit vertical direction `n_v = K^-1 p_v / h_v` (sign not yet resolved).
pub fn vertical_direction(vp: &VanishingPoint, k: &CameraIntrinsics) -> Vec3 {
    k.normalize(&vp.pixel()).normalize()
}

/// Rotation-only rectification to a floor-parallel view.
///
/// Rows of `rotation` are `e_X`, `e_Y`, `e_Z` expressed in camera coordinates;
/// `e_Z` points toward the floor. `homography = rotation * K^-1` (the top-down
/// intrinsics are the identity, so top-down units are camera heights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopDownFrame {
    rotation: Mat3,
    homography: Mat3,
}

impl TopDownFrame {
    /// Builds a frame from an explicit camera-to-top-down rotation.
    pub fn from_rotation(rotation: Mat3, k: &CameraIntrinsics) -> Self {
        Self { rotation, homography: rotation * k.inverse_matrix() }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn homography(&self) -> &Mat3 {
        &self.homography
    }

    pub fn e_x(&self) -> Vec3 {
        self.rotation.row(0).transpose()
    }

    pub fn e_y(&self) -> Vec3 {
        self.rotation.row(1).transpose()
    }

    pub fn e_z(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Camera-frame ray through a top-down point on the unit-depth floor plane.
    pub fn camera_ray(&self, g: &Vec2) -> Vec3 {
        self.rotation.transpose() * Vec3::new(g.x, g.y, 1.0)
    }

    /// Pixel at which a top-down point appears, if it lies in front of the camera.
    pub fn to_pixel(&self, g: &Vec2, k: &CameraIntrinsics) -> Option<Vec2> {
        k.project(&self.camera_ray(g))
    }
}

/// Builds the top-down frame from the vertical vanishing point.
///
/// `eps_v` bounds `|x_v|` and `|y_v|` away from zero; below it the closed form
/// for `e_X` / `e_Y` is singular.
pub fn topdown_frame(
    vp: &VanishingPoint,
    k: &CameraIntrinsics,
    eps_v: f64,
) -> Result<TopDownFrame, GeometryError> {
    let (x_v, y_v) = vp.normalized(k);
    if x_v.abs() <= eps_v || y_v.abs() <= eps_v || !x_v.is_finite() || !y_v.is_finite() {
        return Err(GeometryError::DegenerateVanishingPoint { x_v, y_v });
    }
    let e_x = Vec3::new(-1.0 / x_v, 0.0, 1.0).normalize();
    let mut e_y = Vec3::new(x_v, -(x_v * x_v + 1.0) / y_v, 1.0).normalize();
    let mut e_z = vertical_direction(vp, k);
    // A vanishing point below the principal row is the image of the downward
    // vertical; above it, the image of the upward one.
    if y_v < 0.0 {
        e_z = -e_z;
    }
    if e_x.cross(&e_y).dot(&e_z) < 0.0 {
        e_y = -e_y;
    }
    let rotation = Mat3::from_rows(&[e_x.transpose(), e_y.transpose(), e_z.transpose()]);
    Ok(TopDownFrame::from_rotation(rotation, k))
}

pub const HORIZON_EPS: f64 = 1e-12;

/// Maps an image pixel into top-down coordinates through `H_g`.
pub fn project_topdown(p_img: &Vec2, frame: &TopDownFrame) -> Result<Vec2, GeometryError> {
    let r = frame.homography * Vec3::new(p_img.x, p_img.y, 1.0);
    if r.z.abs() < HORIZON_EPS {
        return Err(GeometryError::PointAtHorizon);
    }
    Ok(Vec2::new(r.x / r.z, r.y / r.z))
}

/// `p -> delta * R(phi) * p + origin`: top-down coordinates to LiDAR coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform2 {
    pub delta: f64,
    pub phi: f64,
    pub origin: Vec2,
}

impl SimilarityTransform2 {
    pub fn new(delta: f64, phi: f64, origin: Vec2) -> Self {
        Self { delta, phi: wrap_angle(phi), origin }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, Vec2::zeros())
    }

    pub fn rotation(&self) -> Mat2 {
        rot2(self.phi)
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        apply_similarity(self, p)
    }

    /// LiDAR coordinates back to top-down coordinates.
    pub fn apply_inverse(&self, l: &Vec2) -> Vec2 {
        self.rotation().transpose() * (l - self.origin) / self.delta
    }

    pub fn inverse(&self) -> Self {
        let r_t = self.rotation().transpose();
        Self::new(1.0 / self.delta, -self.phi, -(r_t * self.origin) / self.delta)
    }

    /// Relative scale error, absolute angle error (rad) and origin distance to `other`.
    pub fn error_to(&self, other: &Self) -> (f64, f64, f64) {
        (
            (self.delta / other.delta - 1.0).abs(),
            wrap_angle(self.phi - other.phi).abs(),
            (self.origin - other.origin).norm(),
        )
    }

    pub fn within(&self, other: &Self, scale_tol: f64, angle_tol: f64, origin_tol: f64) -> bool {
        let (s, a, o) = self.error_to(other);
        s <= scale_tol && a <= angle_tol && o <= origin_tol
    }
}

pub fn apply_similarity(s: &SimilarityTransform2, p: &Vec2) -> Vec2 {
    s.delta * (s.rotation() * p) + s.origin
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair2 {
    pub source: Vec2,
    pub destination: Vec2,
}

impl PointPair2 {
    pub fn new(source: Vec2, destination: Vec2) -> Self {
        Self { source, destination }
    }
}

pub const COINCIDENT_EPS: f64 = 1e-9;

/// Closed-form similarity from two correspondences.
///
/// Scale is the ratio of the segment lengths and rotation the difference of
/// their bearings, so the result is always a proper (reflection-free) similarity.
pub fn similarity_from_pairs(
    a: &PointPair2,
    b: &PointPair2,
) -> Result<SimilarityTransform2, GeometryError> {
    let ds = a.source - b.source;
    let dd = a.destination - b.destination;
    let (ns, nd) = (ds.norm(), dd.norm());
    if ns < COINCIDENT_EPS || nd < COINCIDENT_EPS {
        return Err(GeometryError::CoincidentPoints);
    }
    let delta = nd / ns;
    let phi = wrap_angle(dd.y.atan2(dd.x) - ds.y.atan2(ds.x));
    let mean_s = (a.source + b.source) * 0.5;
    let mean_d = (a.destination + b.destination) * 0.5;
    let origin = mean_d - delta * (rot2(phi) * mean_s);
    Ok(SimilarityTransform2 { delta, phi, origin })
}

/// Relative LiDAR pose between two scans: `l_j = R l_i + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarMotion {
    pub angle: f64,
    pub translation: Vec2,
}

impl LidarMotion {
    pub fn new(angle: f64, translation: Vec2) -> Self {
        Self { angle: wrap_angle(angle), translation }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vec2::zeros())
    }

    pub fn rotation(&self) -> Mat2 {
        rot2(self.angle)
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        self.rotation() * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_t = rot2(-self.angle);
        Self::new(-self.angle, -(r_t * self.translation))
    }

    /// `self` (i -> j) followed by `next` (j -> k).
    pub fn then(&self, next: &LidarMotion) -> Self {
        Self::new(self.angle + next.angle, next.rotation() * self.translation + next.translation)
    }

    /// Fixed point `(I - R)^-1 t` of the rigid motion.
    pub fn rotation_center(&self, eps_r: f64) -> Result<Vec2, GeometryError> {
        if self.angle.abs() <= eps_r {
            return Err(GeometryError::DegenerateMotion { angle_deg: self.angle.to_degrees() });
        }
        let m = Mat2::identity() - self.rotation();
        // det(I - R) = 2 - 2cos(angle) > 0 away from zero rotation.
        let inv = m.try_inverse().ok_or(GeometryError::DegenerateMotion {
            angle_deg: self.angle.to_degrees(),
        })?;
        Ok(inv * self.translation)
    }
}

/// Planar pose of the LiDAR in the world: `w = R(heading) l + (x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: wrap_angle(heading) }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Mat2 {
        rot2(self.heading)
    }

    pub fn to_world(&self, l: &Vec2) -> Vec2 {
        self.rotation() * l + self.position()
    }

    pub fn to_local(&self, w: &Vec2) -> Vec2 {
        self.rotation().transpose() * (w - self.position())
    }

    /// Motion mapping this pose's scan coordinates into `other`'s.
    pub fn motion_to(&self, other: &Pose2) -> LidarMotion {
        LidarMotion::new(
            self.heading - other.heading,
            rot2(-other.heading) * (self.position() - other.position()),
        )
    }

    /// Pose reached after `motion` (this scan -> next scan).
    pub fn advance(&self, motion: &LidarMotion) -> Pose2 {
        let heading = self.heading - motion.angle;
        let c = self.position() - rot2(heading) * motion.translation;
        Pose2::new(c.x, c.y, heading)
    }

    /// Applies a rigid world transform `w -> R(a) w + t` to the pose.
    pub fn transformed(&self, angle: f64, t: &Vec2) -> Pose2 {
        let c = rot2(angle) * self.position() + t;
        Pose2::new(c.x, c.y, self.heading + angle)
    }
}

/// Correspondence induced by one tracked floor feature seen across a LiDAR motion.
///
/// `destination = (I - R)^-1 t` depends only on the motion; `source =
/// (I - R)^-1 (p_j - R p_i)` on the feature's top-down positions in both scans.
/// The two are related by the sought similarity.
pub fn motion_constraint_pair(
    motion: &LidarMotion,
    pg_i: &Vec2,
    pg_j: &Vec2,
    eps_r: f64,
) -> Result<PointPair2, GeometryError> {
    if motion.angle.abs() <= eps_r {
        return Err(GeometryError::DegenerateMotion { angle_deg: motion.angle.to_degrees() });
    }
    let r = motion.rotation();
    let inv = (Mat2::identity() - r)
        .try_inverse()
        .ok_or(GeometryError::DegenerateMotion { angle_deg: motion.angle.to_degrees() })?;
    Ok(PointPair2 { source: inv * (pg_j - r * pg_i), destination: inv * motion.translation })
}

/// Relative camera pose `(R_c, t_c)` with `X_j = R_c X_i + t_c`, up to the
/// monocular scale (`t_c` is in camera-height units divided by `delta`).
pub fn camera_motion_from_hypothesis(
    h: &SimilarityTransform2,
    frame: &TopDownFrame,
    motion: &LidarMotion,
) -> (Mat3, Vec3) {
    let r_g = frame.rotation();
    let r_l = motion.rotation();
    let w = r_l * h.origin + motion.translation - h.origin;
    let w3 = Vec3::new(w.x, w.y, 0.0);
    let t_c = r_g.transpose() * rot3_z(-h.phi) * w3 / h.delta;
    let r_c = r_g.transpose() * rot3_z(motion.angle) * r_g;
    (r_c, t_c)
}

pub const ZERO_TRANSLATION_EPS: f64 = 1e-12;

/// `F = K2^-T [t]x R K^-1`, so that `p2^T F p = 0` for matching pixels.
pub fn fundamental_matrix(
    r_c: &Mat3,
    t_c: &Vec3,
    k: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<Mat3, GeometryError> {
    if t_c.norm() < ZERO_TRANSLATION_EPS {
        return Err(GeometryError::ZeroTranslation);
    }
    Ok(k2.inverse_matrix().transpose() * skew(t_c) * r_c * k.inverse_matrix())
}

/// Scale-free epipolar score `delta^2 (p2^T F p)^2`.
///
/// `F` is linear in `t_c`, which scales as `1 / delta`, so multiplying by
/// `delta^2` removes the dependence on the unobservable monocular scale.
pub fn epipolar_residual(h: &SimilarityTransform2, f: &Mat3, p: &Vec2, p2: &Vec2) -> f64 {
    let a = Vec3::new(p2.x, p2.y, 1.0).dot(&(f * Vec3::new(p.x, p.y, 1.0)));
    h.delta * h.delta * a * a
}
