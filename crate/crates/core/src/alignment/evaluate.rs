use super::{AlignmentConfig, AlignmentError, CameraModel, Hypothesis};
use crate::features::SensorFrame;
use crate::geometry::{camera_motion_from_hypothesis, epipolar_residual, fundamental_matrix, LidarMotion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairEvaluation {
    pub inliers: usize,
    pub total: usize,
}

/// Scores a hypothesis on one frame pair and accumulates its counters.
///
/// `motion` maps `prev`'s scan into `next`'s. Every track shared by the two
/// frames is an inlier when its scale-free epipolar score is below `tau`.
pub fn evaluate_hypothesis(
    h: &mut Hypothesis,
    prev: &SensorFrame,
    next: &SensorFrame,
    motion: &LidarMotion,
    camera: &CameraModel,
    cfg: &AlignmentConfig,
) -> Result<PairEvaluation, AlignmentError> {
    let skip = |reason: String| AlignmentError::SkippedPair { prev: prev.index, next: next.index, reason };
    let shared = prev.shared_tracks(next);
    if shared.len() < cfg.min_pairs {
        return Err(skip(format!("{} shared tracks, need {}", shared.len(), cfg.min_pairs)));
    }
    let frame = camera.topdown(prev, cfg.eps_v).map_err(|e| skip(e.to_string()))?;
    let (r_c, t_c) = camera_motion_from_hypothesis(&h.transform, &frame, motion);
    let f = fundamental_matrix(&r_c, &t_c, &camera.intrinsics, &camera.intrinsics)
        .map_err(|e| skip(e.to_string()))?;
    let inliers = shared
        .iter()
        .filter(|(_, p, q)| epipolar_residual(&h.transform, &f, p, q) < cfg.tau)
        .count();
    let eval = PairEvaluation { inliers, total: shared.len() };
    h.inlier_count += inliers;
    h.pairs_evaluated += eval.total;
    h.frames_evaluated += 1;
    if inliers as f64 >= cfg.support_frac * eval.total as f64 {
        h.last_support_frame = h.last_support_frame.max(next.index);
        h.missed = 0;
    } else {
        h.missed += 1;
    }
    h.score = h.inlier_count as f64 / h.pairs_evaluated as f64;
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{wrap_angle, SimilarityTransform2};
    use crate::sim::{generate_sequence, NoiseConfig, World};

    fn pair(noise: NoiseConfig) -> (World, Vec<SensorFrame>, LidarMotion, SimilarityTransform2) {
        let mut world = World::preset("square", 0).unwrap();
        world.noise = noise;
        let spec = world.trajectory.clone().with_max_frames(Some(2));
        let seq = generate_sequence(&world, &spec, 7).unwrap();
        let p = &seq.truth.poses.poses;
        let m = p[0].motion_to(&p[1]);
        (world, seq.frames, m, seq.truth.alignment)
    }

    fn camera(w: &World) -> CameraModel {
        CameraModel { intrinsics: w.intrinsics, width: w.image_width, height: w.image_height }
    }

    #[test]
    fn truth_is_fully_consistent_without_noise() {
        let (world, frames, m, gt) = pair(NoiseConfig::none());
        let mut h = Hypothesis::new(0, gt, 0);
        let e = evaluate_hypothesis(&mut h, &frames[0], &frames[1], &m, &camera(&world), &AlignmentConfig::default())
            .unwrap();
        assert_eq!(e.inliers, e.total);
        assert_eq!(h.score, 1.0);
        assert_eq!((h.frames_evaluated, h.last_support_frame), (1, 1));
    }

    #[test]
    fn rotated_hypothesis_is_rejected() {
        let (world, frames, m, gt) = pair(NoiseConfig::default());
        let bad = SimilarityTransform2::new(gt.delta, wrap_angle(gt.phi + 30f64.to_radians()), gt.origin);
        let mut h = Hypothesis::new(0, bad, 0);
        let e = evaluate_hypothesis(&mut h, &frames[0], &frames[1], &m, &camera(&world), &AlignmentConfig::default())
            .unwrap();
        assert!((e.inliers as f64) < 0.3 * e.total as f64, "{e:?}");
    }

    #[test]
    fn stationary_pair_is_skipped() {
        let (world, frames, _, gt) = pair(NoiseConfig::none());
        let mut h = Hypothesis::new(0, gt, 0);
        let before = h;
        let r = evaluate_hypothesis(
            &mut h,
            &frames[0],
            &frames[0],
            &LidarMotion::identity(),
            &camera(&world),
            &AlignmentConfig::default(),
        );
        assert!(matches!(r, Err(AlignmentError::SkippedPair { .. })));
        assert_eq!(h, before);
    }
}
