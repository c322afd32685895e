//! On-disk dataset format shared by the simulator and real captures.
//!
//! A dataset is a directory holding `meta.json`, `frames.jsonl` (one frame per
//! line) and optionally `gt.json`.

use crate::features::{ImageLineSet, ImageSegment, LidarScan, SensorFrame, TrackObservation};
use crate::geometry::{CameraIntrinsics, LidarMotion, VanishingPoint, Vec2};
use crate::sim::{GroundTruth, World};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub image_width: usize,
    pub image_height: usize,
    pub lidar_min_range: f64,
    pub lidar_max_range: f64,
}

impl DatasetMeta {
    pub fn from_world(world: &World) -> Self {
        Self {
            name: world.name.clone(),
            intrinsics: world.intrinsics,
            image_width: world.image_width,
            image_height: world.image_height,
            lidar_min_range: world.lidar.min_range,
            lidar_max_range: world.lidar.max_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrackRecord {
    id: u64,
    px: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct LinesRecord {
    #[serde(default)]
    horizontal: Vec<[f64; 4]>,
    #[serde(default)]
    vertical: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    index: usize,
    scan: Vec<[f64; 2]>,
    #[serde(default)]
    tracks: Vec<TrackRecord>,
    #[serde(default)]
    lines: LinesRecord,
    vp: [f64; 2],
}

impl FrameRecord {
    fn from_frame(f: &SensorFrame) -> Self {
        Self {
            index: f.index,
            scan: f.scan.points.iter().map(|p| [p.x, p.y]).collect(),
            tracks: f.tracks.iter().map(|t| TrackRecord { id: t.id, px: [t.pixel.x, t.pixel.y] }).collect(),
            lines: LinesRecord {
                horizontal: f.lines.horizontal.iter().map(ImageSegment::to_array).collect(),
                vertical: f.lines.vertical.iter().map(ImageSegment::to_array).collect(),
            },
            vp: [f.vp.u, f.vp.v],
        }
    }

    fn into_frame(self, meta: &DatasetMeta) -> SensorFrame {
        let points = self.scan.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        SensorFrame {
            index: self.index,
            scan: LidarScan::new(self.index as f64, points).sanitized(meta.lidar_min_range, meta.lidar_max_range),
            tracks: self
                .tracks
                .into_iter()
                .map(|t| TrackObservation { id: t.id, pixel: Vec2::new(t.px[0], t.px[1]) })
                .collect(),
            lines: ImageLineSet {
                horizontal: self.lines.horizontal.into_iter().map(ImageSegment::from_array).collect(),
                vertical: self.lines.vertical.into_iter().map(ImageSegment::from_array).collect(),
            },
            vp: VanishingPoint::new(self.vp[0], self.vp[1]),
            odometry: LidarMotion::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<SensorFrame>,
    pub truth: Option<GroundTruth>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| DatasetError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_dataset(
    dir: &Path,
    meta: &DatasetMeta,
    frames: &[SensorFrame],
    truth: Option<&GroundTruth>,
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("meta.json"), meta)?;
    let path = dir.join("frames.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut out = std::io::BufWriter::new(file);
    for f in frames {
        let line = serde_json::to_string(&FrameRecord::from_frame(f))
            .map_err(|e| DatasetError::Invalid { path: path.clone(), message: e.to_string() })?;
        writeln!(out, "{line}").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;
    if let Some(t) = truth {
        write_json(&dir.join("gt.json"), t)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::Invalid { path: dir.to_path_buf(), message: "dataset directory not found".into() });
    }
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    meta.intrinsics.validate().map_err(|e| DatasetError::Invalid {
        path: dir.join("meta.json"),
        message: e.to_string(),
    })?;
    let path = dir.join("frames.jsonl");
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.clone(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.index != frames.len() {
            return Err(DatasetError::Parse {
                path: path.clone(),
                line: n + 1,
                message: format!("frame index {} out of order (expected {})", rec.index, frames.len()),
            });
        }
        frames.push(rec.into_frame(&meta));
    }
    let gt = dir.join("gt.json");
    let truth = if gt.exists() { Some(read_json(&gt)?) } else { None };
    Ok(Dataset { meta, frames, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_sequence;

    #[test]
    fn round_trip() {
        let world = World::preset("square", 0).unwrap();
        let spec = world.trajectory.clone().with_max_frames(Some(3));
        let seq = generate_sequence(&world, &spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &seq.meta, &seq.frames, Some(&seq.truth)).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.meta, seq.meta);
        assert_eq!(ds.frames.len(), 3);
        assert_eq!(ds.frames[1].tracks, seq.frames[1].tracks);
        assert_eq!(ds.frames[1].lines, seq.frames[1].lines);
        assert_eq!(ds.truth.as_ref().unwrap().alignment, seq.truth.alignment);
    }

    #[test]
    fn missing_directory_names_path() {
        let err = read_dataset(Path::new("no/such/dataset")).unwrap_err();
        assert!(err.to_string().contains("no/such/dataset"));
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let world = World::preset("square", 0).unwrap();
        write_json(&dir.path().join("meta.json"), &DatasetMeta::from_world(&world)).unwrap();
        fs::write(dir.path().join("frames.jsonl"), "{\"index\":0,\"scan\":[],\"vp\":[1,2]}\nnot json\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("frames.jsonl:2"), "{err}");
    }
}
