//! Per-frame features: LiDAR line segments, ICP odometry, image line grouping
//! and feature-track weighting.

mod grouping;
mod icp;
mod lines;

pub use grouping::{group_lines, GroupingConfig};
pub use icp::{icp_register, IcpConfig, IcpError, IcpResult};
pub use lines::{extract_lines, LineExtractionConfig};

use crate::geometry::{LidarMotion, VanishingPoint, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One 2D scan in the sensor frame, ordered by bearing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LidarScan {
    pub timestamp: f64,
    pub points: Vec<Vec2>,
}

impl LidarScan {
    pub fn new(timestamp: f64, points: Vec<Vec2>) -> Self {
        Self { timestamp, points }
    }

    /// Drops non-finite points and points outside `[min_range, max_range]`,
    /// then orders the rest by bearing.
    pub fn sanitized(mut self, min_range: f64, max_range: f64) -> Self {
        self.points.retain(|p| {
            let r = p.norm();
            p.x.is_finite() && p.y.is_finite() && r >= min_range && r <= max_range
        });
        self.points.sort_by(|a, b| a.y.atan2(a.x).total_cmp(&b.y.atan2(b.x)));
        self
    }
}

/// A fitted LiDAR line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment2 {
    pub a: Vec2,
    pub b: Vec2,
    pub inlier_count: usize,
    pub rms: f64,
}

impl LineSegment2 {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b, inlier_count: 0, rms: 0.0 }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn direction(&self) -> Vec2 {
        (self.b - self.a).normalize()
    }

    pub fn normal(&self) -> Vec2 {
        let d = self.direction();
        Vec2::new(-d.y, d.x)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    /// Distance from `p` to the infinite supporting line.
    pub fn line_distance(&self, p: &Vec2) -> f64 {
        self.normal().dot(&(p - self.a)).abs()
    }

    pub fn transformed(&self, f: impl Fn(&Vec2) -> Vec2) -> Self {
        Self { a: f(&self.a), b: f(&self.b), ..*self }
    }

    /// Evenly spaced points along the segment, endpoints included.
    pub fn samples(&self, n: usize) -> Vec<Vec2> {
        let n = n.max(2);
        (0..n)
            .map(|i| self.a + (self.b - self.a) * (i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// An image line segment in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSegment {
    pub a: Vec2,
    pub b: Vec2,
}

impl ImageSegment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    /// Distance from `p` to the infinite supporting line.
    pub fn line_distance(&self, p: &Vec2) -> f64 {
        let d = (self.b - self.a).normalize();
        (d.x * (p.y - self.a.y) - d.y * (p.x - self.a.x)).abs()
    }

    /// Parameter of the orthogonal projection of `p` (0 at `a`, 1 at `b`).
    pub fn parameter(&self, p: &Vec2) -> f64 {
        let d = self.b - self.a;
        d.dot(&(p - self.a)) / d.norm_squared()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a.x, self.a.y, self.b.x, self.b.y]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }
}

/// Image lines split into ground-wall boundary candidates and vertical lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageLineSet {
    pub horizontal: Vec<ImageSegment>,
    pub vertical: Vec<ImageSegment>,
}

/// A tracked image feature observed in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackObservation {
    pub id: u64,
    pub pixel: Vec2,
}

/// All observations of one tracked feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub id: u64,
    /// `(frame index, pixel)`, frame indices strictly increasing.
    pub observations: Vec<(usize, Vec2)>,
}

impl FeatureTrack {
    pub fn mean_row(&self) -> Option<f64> {
        if self.observations.is_empty() {
            return None;
        }
        let sum: f64 = self.observations.iter().map(|(_, p)| p.y).sum();
        Some(sum / self.observations.len() as f64)
    }
}

/// Sampling weight favouring features low in the image, where floor points are.
///
/// `(mean_row / image_height)^gamma`, clamped to `[0, 1]`.
pub fn weight_track(track: &FeatureTrack, image_height: f64, gamma: f64) -> f64 {
    match track.mean_row() {
        Some(row) => (row / image_height).clamp(0.0, 1.0).powf(gamma),
        None => 0.0,
    }
}

/// Everything observed at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub index: usize,
    pub scan: LidarScan,
    pub tracks: Vec<TrackObservation>,
    pub lines: ImageLineSet,
    pub vp: VanishingPoint,
    /// Motion from the previous frame's scan to this one (identity for the first frame).
    pub odometry: LidarMotion,
}

impl SensorFrame {
    pub fn track(&self, id: u64) -> Option<&TrackObservation> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Pixel pairs `(self, other)` of the tracks observed in both frames, ordered by id.
    pub fn shared_tracks(&self, other: &SensorFrame) -> Vec<(u64, Vec2, Vec2)> {
        let theirs: BTreeMap<u64, Vec2> = other.tracks.iter().map(|t| (t.id, t.pixel)).collect();
        let mut out: Vec<_> = self
            .tracks
            .iter()
            .filter_map(|t| theirs.get(&t.id).map(|q| (t.id, t.pixel, *q)))
            .collect();
        out.sort_by_key(|(id, _, _)| *id);
        out
    }
}

/// Groups per-frame observations into tracks, ordered by track id.
pub fn collect_tracks(frames: &[SensorFrame]) -> Vec<FeatureTrack> {
    let mut map: BTreeMap<u64, Vec<(usize, Vec2)>> = BTreeMap::new();
    for f in frames {
        for t in &f.tracks {
            map.entry(t.id).or_default().push((f.index, t.pixel));
        }
    }
    map.into_iter()
        .map(|(id, mut observations)| {
            observations.sort_by_key(|(i, _)| *i);
            observations.dedup_by_key(|(i, _)| *i);
            FeatureTrack { id, observations }
        })
        .collect()
}
