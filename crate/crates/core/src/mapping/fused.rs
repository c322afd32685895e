use super::{integrate_scans, FloorPlan, FusionConfig, MappingConfig, MappingError, Trajectory};
use crate::alignment::CameraModel;
use crate::features::{LineExtractionConfig, SensorFrame};
use crate::geometry::{rot2, rot3_z, skew, Mat2, Mat3, Pose2, SimilarityTransform2, Vec2, Vec3};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

const PERP: Mat2 = Mat2::new(0.0, -1.0, 1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
struct LidarTerm {
    frame: usize,
    point: Vec2,
    wall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EpipolarTerm {
    from: usize,
    to: usize,
    ray: Vec3,
    ray2: Vec3,
    /// Camera-to-top-down rotation of the earlier frame.
    r_g: Mat3,
}

/// One robust residual: whitened value, Huber threshold, sparse Jacobian row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub value: f64,
    pub huber: f64,
    pub entries: Vec<(usize, f64)>,
}

/// Joint least-squares problem over poses 1.. and wall lines.
///
/// Parameters are `(x, y, heading)` for every pose after the first, then
/// `(angle, distance)` of each wall's normal form `n(angle) . p = distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedProblem {
    anchor: Pose2,
    frames: usize,
    walls: usize,
    lidar: Vec<LidarTerm>,
    epipolar: Vec<EpipolarTerm>,
    h: SimilarityTransform2,
    focal: f64,
    cfg: FusionConfig,
}

fn segment_distance(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    let d = b - a;
    let t = (d.dot(&(p - a)) / d.norm_squared()).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

impl FusedProblem {
    /// Builds residual terms from the initial trajectory and plan.
    ///
    /// LiDAR points are associated once to the nearest wall; feature pairs are
    /// formed between each frame and the next `pair_span` frames, skipping
    /// pairs whose camera barely moves.
    pub fn new(
        frames: &[SensorFrame],
        trajectory: &Trajectory,
        plan: &FloorPlan,
        h: &SimilarityTransform2,
        camera: &CameraModel,
        cfg: &FusionConfig,
    ) -> (Self, DVector<f64>) {
        let n = frames.len().min(trajectory.len());
        let mut lidar = Vec::new();
        for (k, f) in frames.iter().enumerate().take(n) {
            let pose = trajectory.poses[k];
            for p in f.scan.points.iter().step_by(cfg.lidar_stride.max(1)) {
                let q = pose.to_world(p);
                let best = plan
                    .walls
                    .iter()
                    .enumerate()
                    .map(|(j, w)| (segment_distance(&w.a, &w.b, &q), j))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((d, j)) = best {
                    if d <= cfg.assoc_dist {
                        lidar.push(LidarTerm { frame: k, point: *p, wall: j });
                    }
                }
            }
        }
        let k_inv = camera.intrinsics.inverse_matrix();
        let mut epipolar = Vec::new();
        for i in 0..n {
            let Ok(td) = camera.topdown(&frames[i], 1e-9) else { continue };
            for j in i + 1..n.min(i + 1 + cfg.pair_span) {
                let m = trajectory.poses[i].motion_to(&trajectory.poses[j]);
                let w = m.rotation() * h.origin + m.translation - h.origin;
                if w.norm() < cfg.min_baseline {
                    continue;
                }
                for (_, p, q) in frames[i].shared_tracks(&frames[j]) {
                    epipolar.push(EpipolarTerm {
                        from: i,
                        to: j,
                        ray: k_inv * Vec3::new(p.x, p.y, 1.0),
                        ray2: k_inv * Vec3::new(q.x, q.y, 1.0),
                        r_g: *td.rotation(),
                    });
                }
            }
        }
        let mut x = DVector::zeros(3 * n.saturating_sub(1) + 2 * plan.walls.len());
        for (k, p) in trajectory.poses.iter().enumerate().take(n).skip(1) {
            x[3 * (k - 1)] = p.x;
            x[3 * (k - 1) + 1] = p.y;
            x[3 * (k - 1) + 2] = p.heading;
        }
        let base = 3 * n.saturating_sub(1);
        for (j, w) in plan.walls.iter().enumerate() {
            let nrm = w.normal();
            x[base + 2 * j] = nrm.y.atan2(nrm.x);
            x[base + 2 * j + 1] = nrm.dot(&w.a);
        }
        let problem = Self {
            anchor: trajectory.poses.first().copied().unwrap_or_else(Pose2::identity),
            frames: n,
            walls: plan.walls.len(),
            lidar,
            epipolar,
            h: *h,
            focal: camera.intrinsics.fx,
            cfg: *cfg,
        };
        (problem, x)
    }

    /// Whether a solver step stays inside the per-iteration trust region.
    fn step_within(&self, step: &DVector<f64>, cfg: &FusionConfig) -> bool {
        let poses = 3 * self.frames.saturating_sub(1);
        let pose_ok = (0..poses / 3).all(|k| {
            Vec2::new(step[3 * k], step[3 * k + 1]).norm() <= cfg.max_step_translation
                && step[3 * k + 2].abs() <= cfg.max_step_rotation
        });
        let wall_ok = (0..self.walls).all(|j| {
            step[poses + 2 * j].abs() <= cfg.max_step_rotation && step[poses + 2 * j + 1].abs() <= cfg.max_step_translation
        });
        pose_ok && wall_ok
    }

    pub fn parameter_count(&self) -> usize {
        3 * self.frames.saturating_sub(1) + 2 * self.walls
    }

    pub fn lidar_terms(&self) -> usize {
        self.lidar.len()
    }

    pub fn epipolar_terms(&self) -> usize {
        self.epipolar.len()
    }

    /// `(position, heading, first parameter index)`; the anchor has no parameters.
    fn pose(&self, x: &DVector<f64>, k: usize) -> (Vec2, f64, Option<usize>) {
        if k == 0 {
            (self.anchor.position(), self.anchor.heading, None)
        } else {
            let i = 3 * (k - 1);
            (Vec2::new(x[i], x[i + 1]), x[i + 2], Some(i))
        }
    }

    fn wall_index(&self, j: usize) -> usize {
        3 * self.frames.saturating_sub(1) + 2 * j
    }

    fn lidar_row(&self, x: &DVector<f64>, t: &LidarTerm) -> ResidualRow {
        let s = self.cfg.lidar_sigma;
        let (c, theta, pi) = self.pose(x, t.frame);
        let wi = self.wall_index(t.wall);
        let (alpha, dist) = (x[wi], x[wi + 1]);
        let n = Vec2::new(alpha.cos(), alpha.sin());
        let r = rot2(theta);
        let q = r * t.point + c;
        let mut entries = vec![(wi, Vec2::new(-alpha.sin(), alpha.cos()).dot(&q) / s), (wi + 1, -1.0 / s)];
        if let Some(pi) = pi {
            entries.push((pi, n.x / s));
            entries.push((pi + 1, n.y / s));
            entries.push((pi + 2, n.dot(&(r * PERP * t.point)) / s));
        }
        ResidualRow { value: (n.dot(&q) - dist) / s, huber: self.cfg.lidar_huber / s, entries }
    }

    fn epipolar_row(&self, x: &DVector<f64>, t: &EpipolarTerm) -> ResidualRow {
        let (ci, ti, pi) = self.pose(x, t.from);
        let (cj, tj, pj) = self.pose(x, t.to);
        let o = self.h.origin;
        let a = ti - tj;
        let d = ci - cj;
        let r_inv_j = rot2(-tj);
        let w = rot2(a) * o + r_inv_j * d - o;
        let g = t.r_g.transpose() * rot3_z(-self.h.phi);
        let g2 = g.fixed_columns::<2>(0).into_owned();
        let u = g2 * w;
        let rz = rot3_z(a);
        let v = t.r_g.transpose() * rz * t.r_g * t.ray;
        let e = u.dot(&v.cross(&t.ray2));
        let un = u.norm();
        let k = self.focal / self.cfg.pixel_sigma;

        let dr_du = (v.cross(&t.ray2) / un - u * (e / (un * un * un))) * k;
        let dr_dv = t.ray2.cross(&u) * (k / un);
        let dv_da = t.r_g.transpose() * skew(&Vec3::z()) * rz * t.r_g * t.ray;
        let dr_dw = g2.transpose() * dr_du;
        let d_a = dr_dw.dot(&(rot2(a) * PERP * o)) + dr_dv.dot(&dv_da);
        let d_c = r_inv_j.transpose() * dr_dw;
        let d_tj = dr_dw.dot(&(-(r_inv_j * PERP * d)));

        let mut entries = Vec::with_capacity(6);
        if let Some(pi) = pi {
            entries.extend([(pi, d_c.x), (pi + 1, d_c.y), (pi + 2, d_a)]);
        }
        if let Some(pj) = pj {
            entries.extend([(pj, -d_c.x), (pj + 1, -d_c.y), (pj + 2, -d_a + d_tj)]);
        }
        ResidualRow { value: k * e / un, huber: self.cfg.pixel_huber / self.cfg.pixel_sigma, entries }
    }

    /// Every residual with its analytic Jacobian row, LiDAR terms first.
    pub fn rows(&self, x: &DVector<f64>) -> Vec<ResidualRow> {
        let mut out: Vec<ResidualRow> = self.lidar.iter().map(|t| self.lidar_row(x, t)).collect();
        out.extend(self.epipolar.iter().map(|t| self.epipolar_row(x, t)));
        out
    }

    pub fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.lidar.len() + self.epipolar.len(), self.rows(x).into_iter().map(|r| r.value))
    }

    /// Dense Jacobian, for inspection and testing.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let rows = self.rows(x);
        let mut j = DMatrix::zeros(rows.len(), self.parameter_count());
        for (i, r) in rows.iter().enumerate() {
            for &(c, v) in &r.entries {
                j[(i, c)] += v;
            }
        }
        j
    }

    /// Total Huber cost.
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.rows(x).iter().map(|r| huber(r.value, r.huber)).sum()
    }

    pub fn trajectory(&self, x: &DVector<f64>) -> Trajectory {
        Trajectory::new(
            (0..self.frames)
                .map(|k| {
                    let (c, t, _) = self.pose(x, k);
                    Pose2::new(c.x, c.y, t)
                })
                .collect(),
        )
    }
}

fn huber(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        0.5 * r * r
    } else {
        k * a - 0.5 * k * k
    }
}

fn irls_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        1.0
    } else {
        k / a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedOutcome {
    pub trajectory: Trajectory,
    pub plan: FloorPlan,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub lidar_terms: usize,
    pub epipolar_terms: usize,
}

/// Levenberg-Marquardt with iteratively reweighted Huber losses.
///
/// Returns the final parameters and the accepted cost sequence, or an error
/// when no step could be accepted despite a non-vanishing gradient.
pub fn solve(problem: &FusedProblem, x0: DVector<f64>, cfg: &FusionConfig) -> Result<(DVector<f64>, Vec<f64>, usize), MappingError> {
    let np = problem.parameter_count();
    let mut x = x0;
    let mut cost = problem.cost(&x);
    if !cost.is_finite() {
        return Err(MappingError::SolverDiverged { reason: "initial cost is not finite".into() });
    }
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    let mut accepted_any = false;
    let mut grad_norm = 0.0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut hmat = DMatrix::<f64>::zeros(np, np);
        let mut g = DVector::<f64>::zeros(np);
        for row in problem.rows(&x) {
            let w = irls_weight(row.value, row.huber);
            for &(a, va) in &row.entries {
                g[a] += w * va * row.value;
                for &(b, vb) in &row.entries {
                    hmat[(a, b)] += w * va * vb;
                }
            }
        }
        grad_norm = g.amax();
        if grad_norm <= cfg.gradient_tol * (1.0 + cost) {
            break;
        }
        let mut improved = false;
        while lambda <= cfg.max_damping {
            let mut damped = hmat.clone();
            for i in 0..np {
                damped[(i, i)] += lambda * hmat[(i, i)].max(1e-6);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            if !problem.step_within(&step, cfg) {
                lambda *= 10.0;
                continue;
            }
            let candidate = &x + &step;
            let c = problem.cost(&candidate);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                x = candidate;
                cost = c;
                history.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                accepted_any = true;
                if rel < cfg.cost_tol {
                    return Ok((x, history, iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !accepted_any && grad_norm > cfg.gradient_tol * (1.0 + cost) && iterations > 0 && lambda > cfg.max_damping {
        return Err(MappingError::SolverDiverged {
            reason: format!("no cost decrease up to damping {:.1e} (gradient {grad_norm:.3e})", cfg.max_damping),
        });
    }
    Ok((x, history, iterations))
}

/// Jointly refines poses and walls with LiDAR point-to-wall and epipolar
/// feature residuals, then rebuilds the floor plan from the refined poses.
///
/// Pose 0 is held fixed. Epipolar residuals are normalized by the camera
/// translation, so they constrain its direction and never the metric scale.
/// Refines poses window by window so that odometry drift never accumulates
/// beyond one window step before the camera constrains it. Poses past the
/// current window follow the last refined pose rigidly.
fn windowed_init(
    frames: &[SensorFrame],
    trajectory: &Trajectory,
    h: &SimilarityTransform2,
    camera: &CameraModel,
    lines: &LineExtractionConfig,
    cfg: &MappingConfig,
) -> Trajectory {
    let n = frames.len();
    let (w, step) = (cfg.fusion.window, cfg.fusion.window_step.max(1));
    let mut poses = trajectory.poses[..n].to_vec();
    if w < 2 || n <= w {
        return Trajectory::new(poses);
    }
    let mut end = w.min(n);
    loop {
        let start = end.saturating_sub(w);
        let sub = Trajectory::new(poses[start..end].to_vec());
        let plan = integrate_scans(&frames[start..end], &sub, lines, cfg);
        let (problem, x0) = FusedProblem::new(&frames[start..end], &sub, &plan, h, camera, &cfg.fusion);
        if let Ok((x, _, _)) = solve(&problem, x0, &cfg.fusion) {
            let refined = problem.trajectory(&x);
            let (old, new) = (poses[end - 1], refined.poses[end - 1 - start]);
            let angle = new.heading - old.heading;
            let t = new.position() - rot2(angle) * old.position();
            poses[start..end].copy_from_slice(&refined.poses);
            for p in &mut poses[end..] {
                *p = p.transformed(angle, &t);
            }
        }
        if end == n {
            break;
        }
        end = (end + step).min(n);
    }
    Trajectory::new(poses)
}

pub fn fused_refine(
    frames: &[SensorFrame],
    trajectory: &Trajectory,
    h: &SimilarityTransform2,
    camera: &CameraModel,
    lines: &LineExtractionConfig,
    cfg: &MappingConfig,
) -> Result<FusedOutcome, MappingError> {
    if frames.len() < 2 || trajectory.len() < frames.len() {
        return Err(MappingError::TooFewFrames { frames: frames.len().min(trajectory.len()) });
    }
    let trajectory = &windowed_init(frames, trajectory, h, camera, lines, cfg);
    let initial_plan = integrate_scans(frames, trajectory, lines, cfg);
    let (problem, x0) = FusedProblem::new(frames, trajectory, &initial_plan, h, camera, &cfg.fusion);
    let (x, history, iterations) = solve(&problem, x0, &cfg.fusion)?;
    let refined = problem.trajectory(&x);
    Ok(FusedOutcome {
        plan: integrate_scans(frames, &refined, lines, cfg),
        trajectory: refined,
        initial_cost: history[0],
        final_cost: *history.last().unwrap_or(&history[0]),
        cost_history: history,
        iterations,
        lidar_terms: problem.lidar_terms(),
        epipolar_terms: problem.epipolar_terms(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_sequence, NoiseConfig, SimSequence, World};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sequence(name: &str, noise: NoiseConfig, frames: usize, seed: u64) -> (World, SimSequence) {
        let mut world = World::preset(name, 0).unwrap();
        world.noise = noise;
        let spec = world.trajectory.clone().with_max_frames(Some(frames));
        let seq = generate_sequence(&world, &spec, seed).unwrap();
        (world, seq)
    }

    fn camera(w: &World) -> CameraModel {
        CameraModel { intrinsics: w.intrinsics, width: w.image_width, height: w.image_height }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (world, seq) = sequence("square", NoiseConfig::default(), 6, 2);
        let traj = Trajectory::new(seq.truth.poses.poses.clone());
        let cfg = MappingConfig::default();
        let plan = integrate_scans(&seq.frames, &traj, &LineExtractionConfig::default(), &cfg);
        let (problem, x0) = FusedProblem::new(&seq.frames, &traj, &plan, &seq.truth.alignment, &camera(&world), &cfg.fusion);
        assert!(problem.lidar_terms() > 0 && problem.epipolar_terms() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = x0.map(|v| v + rng.random_range(-0.02..0.02));
            let ja = problem.jacobian(&x);
            let eps = 1e-6;
            for c in 0..problem.parameter_count() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += eps;
                xm[c] -= eps;
                let fd = (problem.residuals(&xp) - problem.residuals(&xm)) / (2.0 * eps);
                for r in 0..fd.len() {
                    let (a, f) = (ja[(r, c)], fd[r]);
                    assert!((a - f).abs() <= 1e-5 * a.abs().max(f.abs()).max(1.0), "row {r} col {c}: {a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn noise_free_truth_has_zero_cost_and_stays_put() {
        let (world, seq) = sequence("square", NoiseConfig::none(), 8, 4);
        let traj = Trajectory::new(seq.truth.poses.poses.clone());
        let out = fused_refine(
            &seq.frames,
            &traj,
            &seq.truth.alignment,
            &camera(&world),
            &LineExtractionConfig::default(),
            &MappingConfig::default(),
        )
        .unwrap();
        assert!(out.initial_cost < 1e-12, "{}", out.initial_cost);
        for (a, b) in out.trajectory.poses.iter().zip(&traj.poses) {
            assert!((a.position() - b.position()).norm() < 1e-9 && (a.heading - b.heading).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_is_rejected() {
        let (world, seq) = sequence("square", NoiseConfig::none(), 1, 0);
        let r = fused_refine(
            &seq.frames,
            &Trajectory::new(seq.truth.poses.poses.clone()),
            &seq.truth.alignment,
            &camera(&world),
            &LineExtractionConfig::default(),
            &MappingConfig::default(),
        );
        assert!(matches!(r, Err(MappingError::TooFewFrames { frames: 1 })));
    }

    #[test]
    fn cost_is_monotone_and_pulls_toward_truth() {
        let (world, seq) = sequence("square", NoiseConfig::default(), 12, 8);
        let truth = seq.truth.poses.poses.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut poses = truth.clone();
        for p in poses.iter_mut().skip(1) {
            *p = Pose2::new(p.x + rng.random_range(-0.03..0.03), p.y + rng.random_range(-0.03..0.03), p.heading);
        }
        let out = fused_refine(
            &seq.frames,
            &Trajectory::new(poses.clone()),
            &seq.truth.alignment,
            &camera(&world),
            &LineExtractionConfig::default(),
            &MappingConfig::default(),
        )
        .unwrap();
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
        let err = |ps: &[Pose2]| ps.iter().zip(&truth).map(|(a, b)| (a.position() - b.position()).norm()).sum::<f64>();
        assert!(err(&out.trajectory.poses) < 0.5 * err(&poses), "{} {}", err(&out.trajectory.poses), err(&poses));
    }

    #[test]
    fn rigid_motion_of_inputs_moves_outputs_rigidly() {
        let (world, seq) = sequence("square", NoiseConfig::default(), 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses: Vec<Pose2> = seq
            .truth
            .poses
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| if i == 0 { *p } else { Pose2::new(p.x + rng.random_range(-0.02..0.02), p.y, p.heading) })
            .collect();
        let cam = camera(&world);
        let run = |ps: Vec<Pose2>| {
            fused_refine(&seq.frames, &Trajectory::new(ps), &seq.truth.alignment, &cam, &LineExtractionConfig::default(), &MappingConfig::default())
                .unwrap()
        };
        let (angle, t) = (0.7, Vec2::new(3.0, -1.0));
        let a = run(poses.clone());
        let b = run(poses.iter().map(|p| p.transformed(angle, &t)).collect());
        for (pa, pb) in a.trajectory.poses.iter().zip(&b.trajectory.poses) {
            let moved = pa.transformed(angle, &t);
            assert!((moved.position() - pb.position()).norm() < 1e-6, "{moved:?} {pb:?}");
        }
    }

    #[test]
    fn windowed_init_is_identity_on_short_sequences_and_truth() {
        let cfg = MappingConfig::default();
        let lines = LineExtractionConfig::default();
        for n in [cfg.fusion.window, 2 * cfg.fusion.window + 5] {
            let (world, seq) = sequence("square", NoiseConfig::none(), n, 6);
            let traj = Trajectory::new(seq.truth.poses.poses.clone());
            let out = windowed_init(&seq.frames, &traj, &seq.truth.alignment, &camera(&world), &lines, &cfg);
            for (a, b) in out.poses.iter().zip(&traj.poses) {
                assert!((a.position() - b.position()).norm() < 1e-9 && (a.heading - b.heading).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn windowed_init_removes_accumulated_drift() {
        let cfg = MappingConfig::default();
        let (world, seq) = sequence("square", NoiseConfig::none(), 2 * cfg.fusion.window + 5, 6);
        let truth = seq.truth.poses.poses.clone();
        let c = truth[0].position();
        let drifted: Vec<Pose2> = truth
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = 0.002 * i as f64;
                p.transformed(a, &(c - rot2(a) * c))
            })
            .collect();
        let err = |ps: &[Pose2]| ps.iter().zip(&truth).map(|(a, b)| (a.position() - b.position()).norm()).sum::<f64>();
        let out = windowed_init(
            &seq.frames,
            &Trajectory::new(drifted.clone()),
            &seq.truth.alignment,
            &camera(&world),
            &LineExtractionConfig::default(),
            &cfg,
        );
        assert!(err(&out.poses) < 0.5 * err(&drifted), "{} {}", err(&out.poses), err(&drifted));
    }
}
