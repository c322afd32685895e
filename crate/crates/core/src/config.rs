//! Run configuration: every threshold in one TOML document.

use crate::alignment::AlignmentConfig;
use crate::features::{GroupingConfig, IcpConfig, LineExtractionConfig};
use crate::mapping::MappingConfig;
use crate::sim::NoiseConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub lines: LineExtractionConfig,
    pub icp: IcpConfig,
    pub grouping: GroupingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Corner matching radius (m).
    pub corner_radius: f64,
    /// Distance under which a corner counts as lying on a wall when tracing the outline (m).
    pub polygon_tol: f64,
    /// Label images sample one pixel per `label_stride` x `label_stride` block.
    pub label_stride: usize,
    /// Segmentation is evaluated on every n-th frame.
    pub label_frame_stride: usize,
    /// Predicted-to-reference wall matching tolerances.
    pub wall_match_angle_deg: f64,
    pub wall_match_dist: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            corner_radius: 1.0,
            polygon_tol: 0.05,
            label_stride: 8,
            label_frame_stride: 5,
            wall_match_angle_deg: 5.0,
            wall_match_dist: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Process only the first `frames` frames (0 keeps all).
    pub frames: usize,
    /// Clear the hypothesis bank when this frame arrives (negative disables).
    pub reset_tracker_at: i64,
    /// Run boundary optimization on the selected hypothesis.
    pub optimize_alignment: bool,
    pub boundary_max_iter: usize,
    /// Run fused pose / map refinement.
    pub fused_refine: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { frames: 0, reset_tracker_at: -1, optimize_alignment: true, boundary_max_iter: 50, fused_refine: true }
    }
}

impl RunConfig {
    pub fn reset_frame(&self) -> Option<usize> {
        usize::try_from(self.reset_tracker_at).ok()
    }
}

/// Simulator settings used by `--sim` runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Single source of randomness for simulation and hypothesis sampling.
    pub seed: u64,
    pub run: RunConfig,
    pub sim: SimConfig,
    pub features: FeatureConfig,
    pub alignment: AlignmentConfig,
    pub mapping: MappingConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[alignment]\nbudget = 50\n").unwrap();
        assert_eq!((cfg.seed, cfg.alignment.budget), (9, 50));
        assert_eq!(cfg.alignment.tau, AlignmentConfig::default().tau);
    }

    #[test]
    fn unknown_value_type_is_rejected() {
        assert!(PipelineConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let e = PipelineConfig::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/cfg.toml"));
    }
}
