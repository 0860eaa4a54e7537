//! 3D line map reconstruction: triangulation of line tracks, duplicate
//! clustering, joint refinement of lines and poses, endpoint trimming, and
//! the end-to-end pipeline tying every stage together.

mod dedup;
mod optimize;
mod pipeline;
mod triangulate;
mod trim;

pub use dedup::{dedup_lines, LineCandidate};
pub use optimize::{optimize, CostModel, LineObservations, ObsTerm, OptimizeOutcome};
pub use pipeline::{
    run_pipeline, DetectionRecord, LineRecord, PipelineError, PipelineReport, PlaneSummary,
};
pub use triangulate::{ransac_triangulate, triangulate_pair, view_inlier_cost};
pub use trim::trim_endpoints;

use alloc::vec::Vec;

use nalgebra::Point3;
use thiserror::Error;

use crate::geom::{GeomError, PluckerLine};

/// Reconstruction thresholds and budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReconConfig {
    /// Per-view subspace-residual cost above which a view is an outlier.
    pub graff_thresh: f64,
    /// Minimum inlier views for a triangulated line to survive.
    pub min_inliers: usize,
    /// Weight of the event terms against the line terms.
    pub lambda_event: f64,
    /// Events kept per observation during optimization.
    pub n_events_per_line: usize,
    /// Auxiliary inlier gate: line direction vs viewing plane (degrees).
    pub aux_angle_3d_deg: f64,
    /// Auxiliary inlier gate: projected line vs detected segment (degrees).
    pub aux_angle_2d_deg: f64,
    /// Auxiliary inlier gate: endpoint-to-projected-line distance (px).
    pub aux_perp_px: f64,
    /// Auxiliary inlier gate: ray-transfer reprojection distance (px).
    pub aux_perspective_px: f64,
    /// Tracks up to this many views try every view pair.
    pub exhaustive_pairs_below: usize,
    /// Random view pairs sampled for longer tracks.
    pub max_pairs: usize,
    /// Duplicate-cluster feature-space radius.
    pub dedup_eps: f64,
    /// Duplicate-cluster minimum neighbourhood size.
    pub dedup_min_pts: usize,
    /// Optimizer iteration cap.
    pub max_iterations: usize,
    /// A line whose cost grows past this multiple of its initial cost is
    /// discarded as diverged.
    pub divergence_factor: f64,
    /// Endpoint-candidate clustering bandwidth, as a fraction of spread.
    pub trim_bandwidth_frac: f64,
    /// Base seed for the randomized stages.
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            graff_thresh: 1.4,
            min_inliers: 10,
            lambda_event: 1e4,
            n_events_per_line: 50,
            aux_angle_3d_deg: 10.0,
            aux_angle_2d_deg: 5.0,
            aux_perp_px: 2.0,
            aux_perspective_px: 2.0,
            exhaustive_pairs_below: 15,
            max_pairs: 100,
            dedup_eps: 0.05,
            dedup_min_pts: 1,
            max_iterations: 25,
            divergence_factor: 10.0,
            trim_bandwidth_frac: 0.02,
            seed: 0,
        }
    }
}

/// A triangulated candidate line: which two views seeded it, which views
/// agree with it, and their total residual cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LineHypothesis {
    pub line: PluckerLine,
    /// Indices into the track's observation list of the seeding pair.
    pub source_views: (usize, usize),
    /// Indices into the track's observation list, ascending.
    pub inliers: Vec<usize>,
    /// Total subspace-residual cost over the inlier views.
    pub score: f64,
}

/// A reconstructed line with trimmed endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedLine {
    pub line_id: usize,
    pub endpoints: [Point3<f64>; 2],
    /// Views that supported the line through optimization.
    pub n_views: usize,
}

impl MappedLine {
    pub fn length(&self) -> f64 {
        (self.endpoints[1] - self.endpoints[0]).norm()
    }
}

/// The final map: reconstructed 3D segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineMap3D {
    pub lines: Vec<MappedLine>,
}

impl LineMap3D {
    pub fn segments(&self) -> Vec<[Point3<f64>; 2]> {
        self.lines.iter().map(|l| l.endpoints).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("back-projected planes are near-parallel (|n1 x n2| = {0:e})")]
    DegeneratePair(f64),
    #[error("track has {0} views, triangulation needs at least 2")]
    TooFewViews(usize),
    #[error("no view pair produced a valid hypothesis")]
    NoValidPair,
    #[error("best hypothesis has {got} inliers, {needed} required")]
    TooFewInliers { got: usize, needed: usize },
    #[error("geometry failure: {0}")]
    Geometry(#[from] GeomError),
    #[error("observation references missing frame or detection ({frame}, {det})")]
    BadObservation { frame: usize, det: usize },
    #[error("optimization cost became non-finite")]
    NonFiniteCost,
    #[error("no endpoint candidates (all perpendicular planes parallel to the line)")]
    NoEndpointCandidates,
}
