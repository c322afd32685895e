use super::{AlignmentConfig, AlignmentError, CameraModel, Hypothesis};
use crate::features::{collect_tracks, weight_track, SensorFrame};
use crate::geometry::{
    motion_constraint_pair, project_topdown, similarity_from_pairs, LidarMotion, Pose2, Vec2,
};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Poses of the window's scans relative to its first scan, chained from odometry.
pub fn window_poses(frames: &[SensorFrame]) -> Vec<Pose2> {
    let mut poses = Vec::with_capacity(frames.len());
    let mut p = Pose2::identity();
    for (i, f) in frames.iter().enumerate() {
        if i > 0 {
            p = p.advance(&f.odometry);
        }
        poses.push(p);
    }
    poses
}

struct ScanPair {
    a: usize,
    b: usize,
    motion: LidarMotion,
    center: Vec2,
    /// `(track id, pixel in a, pixel in b)`.
    shared: Vec<(u64, Vec2, Vec2)>,
}

fn candidate_pairs(frames: &[SensorFrame], cfg: &AlignmentConfig) -> Vec<ScanPair> {
    let poses = window_poses(frames);
    let mut out = Vec::new();
    for a in 0..frames.len() {
        for b in a + 1..frames.len() {
            let motion = poses[a].motion_to(&poses[b]);
            let Ok(center) = motion.rotation_center(cfg.eps_r()) else { continue };
            let shared = frames[a].shared_tracks(&frames[b]);
            if shared.len() >= cfg.min_pairs.max(1) {
                out.push(ScanPair { a, b, motion, center, shared });
            }
        }
    }
    out
}

/// Draws up to `budget` alignment hypotheses from the frames of a window.
///
/// The two scan pairs with the largest rotations whose rotation centres are
/// at least `icr_separation` apart supply one tracked feature each, sampled
/// with weights favouring the bottom of the image. Degenerate draws are
/// retried, up to `draw_cap_factor * budget` draws in total.
pub fn generate_hypotheses(
    frames: &[SensorFrame],
    camera: &CameraModel,
    budget: usize,
    cfg: &AlignmentConfig,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Result<Vec<Hypothesis>, AlignmentError> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let no_motion = AlignmentError::NoValidMotion { eps_deg: cfg.eps_r_deg };
    if frames.len() < 3 {
        return Err(no_motion);
    }
    let mut pairs = candidate_pairs(frames, cfg);
    pairs.sort_by(|x, y| {
        y.motion.angle.abs().total_cmp(&x.motion.angle.abs()).then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    let first = pairs.first().ok_or(no_motion.clone())?;
    let second = pairs[1..]
        .iter()
        .find(|p| (p.center - first.center).norm() >= cfg.icr_separation)
        .or_else(|| {
            pairs[1..]
                .iter()
                .filter(|p| (p.center - first.center).norm() > 1e-3)
                .max_by(|x, y| {
                    (x.center - first.center).norm().total_cmp(&(y.center - first.center).norm())
                })
        })
        .ok_or(no_motion)?;

    let weights: BTreeMap<u64, f64> = collect_tracks(frames)
        .iter()
        .map(|t| (t.id, weight_track(t, camera.height as f64, cfg.gamma)))
        .collect();
    let sampler = |pair: &ScanPair| {
        let w: Vec<f64> = pair.shared.iter().map(|(id, _, _)| weights[id] + 1e-12).collect();
        WeightedIndex::new(w).expect("positive weights")
    };
    let (s1, s2) = (sampler(first), sampler(second));
    let topdown: Vec<_> = frames.iter().map(|f| camera.topdown(f, cfg.eps_v)).collect();

    let constraint = |pair: &ScanPair, k: usize| -> Option<crate::geometry::PointPair2> {
        let (_, pa, pb) = pair.shared[k];
        let fa = topdown[pair.a].as_ref().ok()?;
        let fb = topdown[pair.b].as_ref().ok()?;
        let ga = project_topdown(&pa, fa).ok()?;
        let gb = project_topdown(&pb, fb).ok()?;
        motion_constraint_pair(&pair.motion, &ga, &gb, cfg.eps_r()).ok()
    };

    let created_at = frames.last().map(|f| f.index).unwrap_or(0);
    let mut out = Vec::new();
    for _ in 0..budget * cfg.draw_cap_factor.max(1) {
        if out.len() >= budget {
            break;
        }
        let (k1, k2) = (s1.sample(rng), s2.sample(rng));
        let (Some(c1), Some(c2)) = (constraint(first, k1), constraint(second, k2)) else { continue };
        let Ok(t) = similarity_from_pairs(&c1, &c2) else { continue };
        if !(t.delta.is_finite() && t.delta > 0.0 && t.origin.iter().all(|v| v.is_finite())) {
            continue;
        }
        out.push(Hypothesis::new(*next_id, t, created_at));
        *next_id += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{icp_register, IcpConfig};
    use crate::sim::{generate_sequence, NoiseConfig, World};
    use rand::SeedableRng;

    fn with_truth_odometry(frames: &mut [SensorFrame], poses: &[Pose2]) {
        for i in 1..frames.len() {
            frames[i].odometry = poses[i - 1].motion_to(&poses[i]);
        }
    }

    fn camera(w: &World) -> CameraModel {
        CameraModel { intrinsics: w.intrinsics, width: w.image_width, height: w.image_height }
    }

    #[test]
    fn exact_hypothesis_from_ground_features() {
        let mut world = World::preset("square", 0).unwrap();
        world.noise = NoiseConfig::none();
        let spec = world.trajectory.clone().with_max_frames(Some(8));
        let mut seq = generate_sequence(&world, &spec, 0).unwrap();
        with_truth_odometry(&mut seq.frames, &seq.truth.poses.poses);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut id = 0;
        let cfg = AlignmentConfig::default();
        let hyps = generate_hypotheses(&seq.frames, &camera(&world), 25, &cfg, &mut rng, &mut id).unwrap();
        assert_eq!(hyps.len(), 25);
        let gt = seq.truth.alignment;
        let best = hyps
            .iter()
            .map(|h| h.transform.error_to(&gt))
            .min_by(|a, b| (a.0 + a.1 + a.2).total_cmp(&(b.0 + b.1 + b.2)))
            .unwrap();
        assert!(best.0 < 1e-9 && best.1 < 1e-9 && best.2 < 1e-9, "{best:?}");
    }

    #[test]
    fn straight_path_has_no_valid_motion() {
        let world = World::preset("corridor", 0).unwrap();
        let spec = crate::sim::TrajectorySpec::new(crate::sim::PathShape::Polyline {
            points: vec![Vec2::new(2.0, 1.0), Vec2::new(4.0, 1.0)],
        });
        let mut seq = generate_sequence(&world, &spec, 0).unwrap();
        with_truth_odometry(&mut seq.frames, &seq.truth.poses.poses);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut id = 0;
        let cfg = AlignmentConfig::default();
        let cam = camera(&world);
        assert!(matches!(
            generate_hypotheses(&seq.frames[..8], &cam, 25, &cfg, &mut rng, &mut id),
            Err(AlignmentError::NoValidMotion { .. })
        ));
        assert!(generate_hypotheses(&seq.frames[..8], &cam, 0, &cfg, &mut rng, &mut id).unwrap().is_empty());
    }

    #[test]
    fn icp_odometry_window_generates() {
        let world = World::preset("square", 3).unwrap();
        let spec = world.trajectory.clone().with_max_frames(Some(8));
        let mut seq = generate_sequence(&world, &spec, 3).unwrap();
        for i in 1..seq.frames.len() {
            let init = seq.frames[i - 1].odometry;
            let r = icp_register(&seq.frames[i - 1].scan, &seq.frames[i].scan, &init, &IcpConfig::default()).unwrap();
            seq.frames[i].odometry = r.motion;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut id = 0;
        let hyps = generate_hypotheses(&seq.frames, &camera(&world), 25, &AlignmentConfig::default(), &mut rng, &mut id)
            .unwrap();
        assert!(!hyps.is_empty());
    }
}
