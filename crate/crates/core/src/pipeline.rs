//! End-to-end run: odometry, alignment tracking, boundary refinement, mapping,
//! fused refinement, segmentation and metrics.

use crate::alignment::{
    estimate_scale, identify_boundaries, optimize_hypothesis, ranked_mature, select_best, BoundaryObservation, CameraModel, Hypothesis,
    StepReport, TrackerState,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{Dataset, DatasetError, DatasetMeta};
use crate::eval::{
    corner_rmse, fscore, match_wall_labels, plan_polygon, render_segmentation, segmentation_accuracy, CornerRmse,
    LabelImage,
};
use crate::features::{extract_lines, icp_register, LineSegment2, SensorFrame};
use crate::geometry::{rot2, LidarMotion, Pose2, SimilarityTransform2};
use crate::mapping::{fused_refine, integrate_scans, FloorPlan, Trajectory};
use crate::sim::{generate_sequence, GroundTruth, SimError, World};
use serde::Serialize;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no alignment hypothesis matured after {frames} frames")]
    NoHypothesis { frames: usize },
    #[error("input has no frames")]
    NoFrames,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code: 2 for recoverable alignment failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::NoHypothesis { .. } => 2,
            _ => 1,
        }
    }
}

/// One structured log record.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Telemetry {
    Odometry { frame: usize, angle: f64, translation: [f64; 2], iterations: usize, degenerate_directions: usize, fallback: Option<String> },
    TrackerReset { frame: usize },
    Tracker(StepReport),
    Selected { id: u64, score: f64, frames_evaluated: usize, transform: SimilarityTransform2 },
    BoundaryRefinement {
        id: u64,
        scale_init: Option<f64>,
        associations: usize,
        initial_cost: Option<f64>,
        final_cost: Option<f64>,
        error: Option<String>,
    },
    Aligned { id: u64, associations: usize, transform: SimilarityTransform2 },
    Fusion { lidar_terms: usize, epipolar_terms: usize, initial_cost: f64, final_cost: f64, iterations: usize, error: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentErrorMetric {
    pub relative_scale: f64,
    pub angle_deg: f64,
    pub origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetric {
    pub dataset: String,
    pub frame: usize,
    pub segmentation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub dataset: String,
    pub frames: usize,
    pub alignment_error: AlignmentErrorMetric,
    pub selected_alignment_error: AlignmentErrorMetric,
    pub fscore: Option<f64>,
    pub corner_rmse: Option<CornerRmse>,
    pub corner_rmse_lidar_only: Option<CornerRmse>,
    pub trajectory_rmse: f64,
    pub trajectory_rmse_lidar_only: f64,
    pub mean_segmentation_accuracy: Option<f64>,
    pub per_frame: Vec<FrameMetric>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub dataset: String,
    /// Tracker winner before boundary refinement.
    pub selected: SimilarityTransform2,
    pub alignment: SimilarityTransform2,
    pub lidar_trajectory: Trajectory,
    pub lidar_plan: FloorPlan,
    pub trajectory: Trajectory,
    pub plan: FloorPlan,
    pub labels: Vec<(usize, LabelImage)>,
    pub telemetry: Vec<Telemetry>,
    pub metrics: Option<Metrics>,
}

/// Builds a simulated dataset from a preset world.
pub fn simulate(world: &str, cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let mut w = World::preset(world, cfg.seed)?;
    w.noise = cfg.sim.noise;
    let frames = (cfg.run.frames > 0).then_some(cfg.run.frames);
    let spec = w.trajectory.clone().with_max_frames(frames);
    let seq = generate_sequence(&w, &spec, cfg.seed)?;
    Ok(Dataset { meta: seq.meta, frames: seq.frames, truth: Some(seq.truth) })
}

fn camera_model(meta: &DatasetMeta) -> CameraModel {
    CameraModel { intrinsics: meta.intrinsics, width: meta.image_width, height: meta.image_height }
}

/// Scan-to-scan ICP seeded with the previous motion; fills each frame's odometry.
///
/// Also returns, per frame, whether the motion into it was fully observed
/// (no degenerate directions and no fallback).
pub fn estimate_odometry(
    frames: &mut [SensorFrame],
    cfg: &PipelineConfig,
    telemetry: &mut Vec<Telemetry>,
) -> (Trajectory, Vec<bool>) {
    let mut poses = vec![Pose2::identity(); frames.len().min(1)];
    let mut reliable = vec![true; frames.len()];
    let mut prev_motion = LidarMotion::identity();
    for i in 1..frames.len() {
        let (motion, iterations, degenerate, fallback) =
            match icp_register(&frames[i - 1].scan, &frames[i].scan, &prev_motion, &cfg.features.icp) {
                Ok(r) => (r.motion, r.iterations, r.degenerate_directions, None),
                Err(e) => (prev_motion, 0, 0, Some(e.to_string())),
            };
        reliable[i] = fallback.is_none() && degenerate == 0;
        telemetry.push(Telemetry::Odometry {
            frame: frames[i].index,
            angle: motion.angle,
            translation: [motion.translation.x, motion.translation.y],
            iterations,
            degenerate_directions: degenerate,
            fallback,
        });
        frames[i].odometry = motion;
        poses.push(poses[i - 1].advance(&motion));
        prev_motion = motion;
    }
    (Trajectory::new(poses), reliable)
}

fn alignment_error(est: &SimilarityTransform2, truth: &SimilarityTransform2) -> AlignmentErrorMetric {
    let (s, a, o) = est.error_to(truth);
    AlignmentErrorMetric { relative_scale: s, angle_deg: a.to_degrees(), origin: o }
}

fn position_rmse(a: &Trajectory, b: &Trajectory) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ss: f64 = a.poses.iter().zip(&b.poses).map(|(p, q)| (p.position() - q.position()).norm_squared()).sum();
    (ss / n as f64).sqrt()
}

/// Boundary-refined hypothesis, or the input if refinement is impossible,
/// with the number of boundary associations it explains.
///
/// The tracker cannot observe scale, so it is first re-estimated from the
/// nearest parallel boundary candidates; then associations and the
/// optimization alternate for a few rounds.
fn refine_alignment(
    best: &Hypothesis,
    inputs: &[(&SensorFrame, Vec<LineSegment2>)],
    camera: &CameraModel,
    cfg: &PipelineConfig,
    telemetry: &mut Vec<Telemetry>,
) -> (SimilarityTransform2, usize) {
    let a = &cfg.alignment;
    let start = best.transform;
    let scale = estimate_scale(&start, inputs, camera, a);
    let mut current = Hypothesis {
        transform: SimilarityTransform2::new(scale.unwrap_or(start.delta), start.phi, start.origin),
        ..*best
    };
    let (mut initial_cost, mut final_cost, mut error) = (None, None, None);
    for _ in 0..a.refine_rounds.max(1) {
        let obs = boundary_observations(&current.transform, inputs, camera, cfg).1;
        match optimize_hypothesis(&current, &obs, cfg.run.boundary_max_iter) {
            Ok(out) => {
                initial_cost.get_or_insert(out.initial_cost);
                final_cost = Some(out.final_cost);
                current = out.hypothesis;
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let (_, dphi, dorigin) = current.transform.error_to(&start);
    let refined_support = boundary_observations(&current.transform, inputs, camera, cfg).0;
    let start_support = boundary_observations(&start, inputs, camera, cfg).0;
    let plausible = dphi <= a.refine_max_angle_deg.to_radians()
        && dorigin <= a.refine_max_origin
        && refined_support >= start_support;
    if !plausible {
        error = Some(format!(
            "refinement moved {:.2} deg / {:.3} m with {refined_support} vs {start_support} associations; kept tracker estimate",
            dphi.to_degrees(),
            dorigin
        ));
    }
    let (transform, associations) =
        if plausible { (current.transform, refined_support) } else { (start, start_support) };
    telemetry.push(Telemetry::BoundaryRefinement {
        id: best.id,
        scale_init: scale,
        associations,
        initial_cost,
        final_cost,
        error,
    });
    (transform, associations)
}

/// Association count and sampled observations for `h` over all frames.
fn boundary_observations(
    h: &SimilarityTransform2,
    inputs: &[(&SensorFrame, Vec<LineSegment2>)],
    camera: &CameraModel,
    cfg: &PipelineConfig,
) -> (usize, Vec<BoundaryObservation>) {
    let a = &cfg.alignment;
    let (mut count, mut obs) = (0, Vec::new());
    for (f, segments) in inputs {
        let Ok(td) = camera.topdown(f, a.eps_v) else { continue };
        for assoc in identify_boundaries(h, f, segments, camera, a) {
            count += 1;
            obs.extend(BoundaryObservation::from_association(&assoc, &td, a.segment_samples));
        }
    }
    (count, obs)
}

fn gauge_walls(truth: &GroundTruth) -> Vec<LineSegment2> {
    let (a, t) = truth.gauge();
    let r = rot2(a);
    truth.world.walls.iter().map(|w| LineSegment2::new(r * w.a + t, r * w.b + t)).collect()
}

/// Runs every stage on `input`. Frames beyond `cfg.run.frames` (when non-zero) are ignored.
pub fn run_pipeline(input: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let mut frames: Vec<SensorFrame> = input.frames.clone();
    if cfg.run.frames > 0 {
        frames.truncate(cfg.run.frames);
    }
    if frames.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    for f in &mut frames {
        f.scan = std::mem::take(&mut f.scan).sanitized(input.meta.lidar_min_range, input.meta.lidar_max_range);
    }
    let camera = camera_model(&input.meta);
    let mut telemetry = Vec::new();
    let (lidar_trajectory, reliable) = estimate_odometry(&mut frames, cfg, &mut telemetry);

    let mut tracker = TrackerState::new(cfg.alignment, camera, cfg.seed);
    let mut tracked_from = 0;
    for (f, ok) in frames.iter().zip(&reliable) {
        if cfg.run.reset_frame() == Some(f.index) {
            tracker.reset();
            tracked_from = f.index;
            telemetry.push(Telemetry::TrackerReset { frame: f.index });
        } else if !ok {
            tracker.interrupt();
        }
        telemetry.push(Telemetry::Tracker(tracker.step(f.clone())));
    }
    let best = *select_best(&tracker).ok_or(PipelineError::NoHypothesis { frames: frames.len() })?;
    telemetry.push(Telemetry::Selected {
        id: best.id,
        score: best.score,
        frames_evaluated: best.frames_evaluated,
        transform: best.transform,
    });
    let alignment = if cfg.run.optimize_alignment {
        let inputs: Vec<(&SensorFrame, Vec<LineSegment2>)> = frames
            .iter()
            .filter(|f| f.index >= tracked_from)
            .map(|f| (f, extract_lines(&f.scan, &cfg.features.lines)))
            .collect();
        let mut chosen: Option<(u64, SimilarityTransform2, usize)> = None;
        for h in ranked_mature(&tracker).take(cfg.alignment.refine_candidates.max(1)) {
            let (t, n) = refine_alignment(h, &inputs, &camera, cfg, &mut telemetry);
            if chosen.is_none_or(|c| n > c.2) {
                chosen = Some((h.id, t, n));
            }
        }
        let (id, transform, associations) = chosen.unwrap_or((best.id, best.transform, 0));
        telemetry.push(Telemetry::Aligned { id, associations, transform });
        transform
    } else {
        best.transform
    };

    let lidar_plan = integrate_scans(&frames, &lidar_trajectory, &cfg.features.lines, &cfg.mapping);
    let (trajectory, plan) = if cfg.run.fused_refine && frames.len() >= 2 {
        match fused_refine(&frames, &lidar_trajectory, &alignment, &camera, &cfg.features.lines, &cfg.mapping) {
            Ok(out) => {
                telemetry.push(Telemetry::Fusion {
                    lidar_terms: out.lidar_terms,
                    epipolar_terms: out.epipolar_terms,
                    initial_cost: out.initial_cost,
                    final_cost: out.final_cost,
                    iterations: out.iterations,
                    error: None,
                });
                (out.trajectory, out.plan)
            }
            Err(e) => {
                telemetry.push(Telemetry::Fusion {
                    lidar_terms: 0,
                    epipolar_terms: 0,
                    initial_cost: f64::NAN,
                    final_cost: f64::NAN,
                    iterations: 0,
                    error: Some(e.to_string()),
                });
                (lidar_trajectory.clone(), lidar_plan.clone())
            }
        }
    } else {
        (lidar_trajectory.clone(), lidar_plan.clone())
    };

    let e = &cfg.eval;
    let mut labels = Vec::new();
    let mut per_frame = Vec::new();
    let truth_walls = input.truth.as_ref().map(gauge_walls);
    let relabel = truth_walls
        .as_ref()
        .map(|tw| match_wall_labels(&plan.walls, tw, e.wall_match_angle_deg.to_radians(), e.wall_match_dist));
    for (k, f) in frames.iter().enumerate().step_by(e.label_frame_stride.max(1)) {
        let Ok(td) = camera.topdown(f, cfg.alignment.eps_v) else { continue };
        let mut img = render_segmentation(
            &plan,
            &trajectory.poses[k],
            &alignment,
            &td,
            &camera.intrinsics,
            camera.width,
            camera.height,
            e.label_stride,
        );
        if let (Some(truth), Some(map)) = (&input.truth, &relabel) {
            img.relabel_walls(map);
            let reference = truth.world.truth_labels(&truth.poses.poses[k], e.label_stride);
            if let Ok(acc) = segmentation_accuracy(&img, &reference) {
                per_frame.push(FrameMetric { dataset: input.meta.name.clone(), frame: f.index, segmentation_accuracy: acc });
            }
        }
        labels.push((f.index, img));
    }

    let metrics = input.truth.as_ref().map(|truth| {
        let gt_plan = truth.gauge_fixed_plan();
        let gt_poses = truth.gauge_fixed_poses();
        let room = truth.gauge_fixed_room();
        let fs = plan_polygon(&plan, e.polygon_tol).ok().and_then(|p| fscore(&[p], &[room]).ok());
        let mean = (!per_frame.is_empty())
            .then(|| per_frame.iter().map(|m| m.segmentation_accuracy).sum::<f64>() / per_frame.len() as f64);
        Metrics {
            dataset: input.meta.name.clone(),
            frames: frames.len(),
            alignment_error: alignment_error(&alignment, &truth.alignment),
            selected_alignment_error: alignment_error(&best.transform, &truth.alignment),
            fscore: fs,
            corner_rmse: corner_rmse(&plan, &gt_plan, e.corner_radius).ok(),
            corner_rmse_lidar_only: corner_rmse(&lidar_plan, &gt_plan, e.corner_radius).ok(),
            trajectory_rmse: position_rmse(&trajectory, &gt_poses),
            trajectory_rmse_lidar_only: position_rmse(&lidar_trajectory, &gt_poses),
            mean_segmentation_accuracy: mean,
            per_frame,
        }
    });

    Ok(PipelineOutput {
        dataset: input.meta.name.clone(),
        selected: best.transform,
        alignment,
        lidar_trajectory,
        lidar_plan,
        trajectory,
        plan,
        labels,
        telemetry,
        metrics,
    })
}
