//! Bundled configuration for the end-to-end pipeline.

use alloc::vec;
use alloc::vec::Vec;

use crate::detect::DetectConfig;
use crate::matching::MatchConfig;
use crate::planefit::PlaneFitConfig;
use crate::recon::{CostModel, ReconConfig};

/// Ablation switches; each disables one stage so its contribution can be
/// measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AblationFlags {
    /// Skip space-time plane fitting: detections keep their raw segments and
    /// associate the temporally nearest neighborhood events instead of the
    /// plane's inliers.
    pub no_planefit: bool,
    /// Drop the event terms from the optimization cost.
    pub no_events: bool,
    /// Replace the subspace cost with 2D endpoint reprojection.
    pub limap_cost: bool,
    /// Skip joint optimization entirely.
    pub no_opt: bool,
}

impl AblationFlags {
    /// Cost model implied by the flags; `limap_cost` takes precedence over
    /// `no_events`.
    pub fn cost_model(&self) -> CostModel {
        if self.limap_cost {
            CostModel::Reprojection
        } else if self.no_events {
            CostModel::LinesOnly
        } else {
            CostModel::Full
        }
    }
}

/// Every knob of the reconstruction pipeline in one place.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PipelineConfig {
    /// Frame tick interval in microseconds.
    pub frame_interval_us: i64,
    /// Accumulation window sizes, as fractions of the mean per-interval
    /// event count; each spawns one rendered window per frame.
    pub window_fracs: Vec<f64>,
    pub detect: DetectConfig,
    pub planefit: PlaneFitConfig,
    pub matching: MatchConfig,
    pub recon: ReconConfig,
    pub ablation: AblationFlags,
    /// Jointly refine camera poses with the lines.
    pub refine_poses: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_interval_us: 25_000,
            window_fracs: vec![1.0, 0.5, 0.25],
            detect: DetectConfig::default(),
            planefit: PlaneFitConfig::default(),
            matching: MatchConfig::default(),
            recon: ReconConfig::default(),
            ablation: AblationFlags::default(),
            refine_poses: false,
        }
    }
}
