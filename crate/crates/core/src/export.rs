//! Run artifacts on disk.
//!
//! Every file is a pure function of the pipeline output and config, so two
//! runs with the same seed produce byte-identical directories.

use crate::config::PipelineConfig;
use crate::eval::LabelImage;
use crate::geometry::SimilarityTransform2;
use crate::mapping::{FloorPlan, Trajectory};
use crate::pipeline::PipelineOutput;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Serialize)]
struct TrajectoryFile<'a> {
    dataset: &'a str,
    selected: &'a SimilarityTransform2,
    alignment: &'a SimilarityTransform2,
    fused: &'a Trajectory,
    lidar_only: &'a Trajectory,
}

#[derive(Serialize)]
struct FloorPlanFile<'a> {
    dataset: &'a str,
    fused: &'a FloorPlan,
    lidar_only: &'a FloorPlan,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    std::fs::write(path, bytes).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| ExportError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Binary 16-bit PGM of the label grid (big-endian samples).
pub fn label_pgm(img: &LabelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols, img.rows).into_bytes();
    out.reserve(img.labels.len() * 2);
    for l in &img.labels {
        out.extend_from_slice(&l.to_be_bytes());
    }
    out
}

/// Top view of both plans: fused walls in black, LiDAR-only in grey, corners as dots.
pub fn floorplan_svg(fused: &FloorPlan, lidar_only: &FloorPlan) -> String {
    const PX_PER_M: f64 = 50.0;
    const MARGIN: f64 = 20.0;
    let pts = fused
        .walls
        .iter()
        .chain(&lidar_only.walls)
        .flat_map(|w| [w.a, w.b])
        .chain(fused.corners.iter().copied());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let width = (x1 - x0) * PX_PER_M + 2.0 * MARGIN;
    let height = (y1 - y0) * PX_PER_M + 2.0 * MARGIN;
    let sx = |x: f64| (x - x0) * PX_PER_M + MARGIN;
    let sy = |y: f64| (y1 - y) * PX_PER_M + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (plan, colour, w) in [(lidar_only, "#999999", 1.5), (fused, "#000000", 2.5)] {
        for wall in &plan.walls {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="{w}"/>"#,
                sx(wall.a.x),
                sy(wall.a.y),
                sx(wall.b.x),
                sy(wall.b.y)
            );
        }
    }
    for c in &fused.corners {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#d62728"/>"##, sx(c.x), sy(c.y));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes every artifact of `out` under `dir` and returns the paths written.
///
/// Layout: `trajectory.json`, `floorplan.json`, `floorplan.svg`,
/// `labels/frame_NNNN.pgm`, `metrics.json` (when ground truth exists),
/// `telemetry.jsonl` and the resolved `config.toml`.
pub fn export(out: &PipelineOutput, cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let labels_dir = dir.join("labels");
    std::fs::create_dir_all(&labels_dir).map_err(|source| ExportError::Io { path: labels_dir.clone(), source })?;
    let mut written = Vec::new();

    let p = dir.join("trajectory.json");
    json(
        &p,
        &TrajectoryFile {
            dataset: &out.dataset,
            selected: &out.selected,
            alignment: &out.alignment,
            fused: &out.trajectory,
            lidar_only: &out.lidar_trajectory,
        },
    )?;
    written.push(p);

    let p = dir.join("floorplan.json");
    json(&p, &FloorPlanFile { dataset: &out.dataset, fused: &out.plan, lidar_only: &out.lidar_plan })?;
    written.push(p);

    let p = dir.join("floorplan.svg");
    write(&p, floorplan_svg(&out.plan, &out.lidar_plan).as_bytes())?;
    written.push(p);

    for (frame, img) in &out.labels {
        let p = labels_dir.join(format!("frame_{frame:04}.pgm"));
        write(&p, &label_pgm(img))?;
        written.push(p);
    }

    if let Some(m) = &out.metrics {
        let p = dir.join("metrics.json");
        json(&p, m)?;
        written.push(p);
    }

    let p = dir.join("telemetry.jsonl");
    let mut lines = String::new();
    for t in &out.telemetry {
        let line = serde_json::to_string(t).map_err(|source| ExportError::Json { path: p.clone(), source })?;
        lines.push_str(&line);
        lines.push('\n');
    }
    write(&p, lines.as_bytes())?;
    written.push(p);

    let p = dir.join("config.toml");
    write(&p, cfg.to_toml().as_bytes())?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LineSegment2;
    use crate::geometry::Vec2;

    #[test]
    fn pgm_header_and_big_endian_samples() {
        let mut img = LabelImage::new(4, 2, 2);
        img.set(0, 0, 0x0102);
        img.set(1, 0, 1000);
        let bytes = label_pgm(&img);
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0x01, 0x02, 0x03, 0xe8]);
    }

    #[test]
    fn svg_lists_every_wall_and_corner() {
        let plan = FloorPlan {
            walls: vec![
                LineSegment2::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)),
                LineSegment2::new(Vec2::new(2.0, 0.0), Vec2::new(2.0, 1.0)),
            ],
            corners: vec![Vec2::new(2.0, 0.0)],
        };
        let svg = floorplan_svg(&plan, &FloorPlan::default());
        assert_eq!(svg.matches("<line").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_plan_still_renders() {
        let svg = floorplan_svg(&FloorPlan::default(), &FloorPlan::default());
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
