use super::{evaluate_hypothesis, generate_hypotheses, AlignmentConfig, CameraModel, Hypothesis};
use crate::features::SensorFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::VecDeque;

/// Per-frame tracker telemetry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub frame: usize,
    pub generated: usize,
    pub inserted: usize,
    pub pruned: usize,
    /// Generation failure, if one was attempted and failed.
    pub generation_error: Option<String>,
    /// `(id, score, frames evaluated)` of every stored hypothesis after the step.
    pub hypotheses: Vec<(u64, f64, usize)>,
}

/// Bank of competing alignment hypotheses updated one frame at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub hypotheses: Vec<Hypothesis>,
    pub config: AlignmentConfig,
    pub camera: CameraModel,
    window: VecDeque<SensorFrame>,
    rng: ChaCha8Rng,
    next_id: u64,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.inlier_count.cmp(&a.inlier_count))
        .then(a.id.cmp(&b.id))
}

impl TrackerState {
    pub fn new(config: AlignmentConfig, camera: CameraModel, seed: u64) -> Self {
        Self {
            hypotheses: Vec::new(),
            config,
            camera,
            window: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
        }
    }

    /// Drops all hypotheses and buffered frames (re-alignment after a mount change).
    pub fn reset(&mut self) {
        self.hypotheses.clear();
        self.window.clear();
    }

    /// Drops buffered frames but keeps the hypotheses, so the next frame is not
    /// paired with the previous one (used when the odometry between them is unreliable).
    pub fn interrupt(&mut self) {
        self.window.clear();
    }

    /// Seeds the bank with an externally supplied hypothesis.
    pub fn insert(&mut self, transform: crate::geometry::SimilarityTransform2, frame: usize) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.hypotheses.push(Hypothesis::new(id, transform, frame));
        id
    }

    pub fn window(&self) -> impl Iterator<Item = &SensorFrame> {
        self.window.iter()
    }

    fn is_duplicate(&self, h: &Hypothesis) -> bool {
        let c = &self.config;
        self.hypotheses.iter().any(|o| {
            o.transform.within(&h.transform, c.duplicate_scale, c.duplicate_angle_deg.to_radians(), c.duplicate_origin)
        })
    }

    /// Processes one frame: updates stored hypotheses on the newest frame pair,
    /// generates new ones from a full window while no mature hypothesis is
    /// convincing, then prunes.
    ///
    /// `frame.odometry` must map the previous frame's scan into this one's.
    pub fn step(&mut self, frame: SensorFrame) -> StepReport {
        let cfg = self.config;
        let index = frame.index;
        if let Some(prev) = self.window.back() {
            for h in &mut self.hypotheses {
                let _ = evaluate_hypothesis(h, prev, &frame, &frame.odometry, &self.camera, &cfg);
            }
        }
        self.window.push_back(frame);
        while self.window.len() > cfg.window.max(3) {
            self.window.pop_front();
        }

        let best = self
            .hypotheses
            .iter()
            .filter(|h| h.frames_evaluated >= cfg.min_maturity)
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut generated, mut inserted, mut generation_error) = (0, 0, None);
        let window_full = self.window.len() >= cfg.window.max(3);
        if window_full && best < cfg.promote_thresh {
            let frames: Vec<SensorFrame> = self.window.iter().cloned().collect();
            match generate_hypotheses(&frames, &self.camera, cfg.budget, &cfg, &mut self.rng, &mut self.next_id) {
                Ok(candidates) => {
                    generated = candidates.len();
                    for mut h in candidates {
                        if self.is_duplicate(&h) {
                            continue;
                        }
                        for w in frames.windows(2) {
                            let _ = evaluate_hypothesis(&mut h, &w[0], &w[1], &w[1].odometry, &self.camera, &cfg);
                        }
                        self.hypotheses.push(h);
                        inserted += 1;
                    }
                }
                Err(e) => generation_error = Some(e.to_string()),
            }
        }

        let before = self.hypotheses.len();
        self.hypotheses.retain(|h| h.missed <= cfg.stale_age);
        self.hypotheses.sort_by(rank);
        self.hypotheses.truncate(cfg.capacity);
        StepReport {
            frame: index,
            generated,
            inserted,
            pruned: before - self.hypotheses.len(),
            generation_error,
            hypotheses: self.hypotheses.iter().map(|h| (h.id, h.score, h.frames_evaluated)).collect(),
        }
    }
}

/// Highest-scoring hypothesis among those evaluated on at least
/// `min_maturity` frame pairs; ties go to more inliers, then the lower id.
pub fn select_best(state: &TrackerState) -> Option<&Hypothesis> {
    ranked_mature(state).next()
}

/// Mature hypotheses, best first.
pub fn ranked_mature(state: &TrackerState) -> impl Iterator<Item = &Hypothesis> {
    let mut v: Vec<&Hypothesis> =
        state.hypotheses.iter().filter(|h| h.frames_evaluated >= state.config.min_maturity).collect();
    v.sort_by(|a, b| rank(a, b));
    v.into_iter()
}
