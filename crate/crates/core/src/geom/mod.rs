//! Geometry of 3D lines and affine subspaces.
//!
//! The central abstraction is the affine Grassmannian: a `k`-dimensional
//! affine subspace of R^3 embeds as a (k+1)-dimensional linear subspace of
//! R^4, where subspace distances reduce to principal angles between the
//! embedded bases. Lines are carried either as Plücker coordinates or as the
//! minimal orthonormal representation used during optimization; residuals
//! between lines and back-projected viewing planes (and their Jacobians)
//! live in [`residual`].

mod backproject;
mod graff;
mod line3d;
mod residual;
mod scalar;

pub use backproject::{backproject_point_ray, backproject_segment, ViewPlane};
pub use graff::{graff_distance, principal_angles, AffineSubspace};
pub use line3d::{image_line_distance, project_line, OrthonormalLine, PluckerLine};
pub use residual::{
    event_obs_residual, event_obs_residual_jacobian, event_term_degenerate, line_obs_residual,
    line_obs_residual_jacobian, line_plane_residual, reprojection_obs_residual,
    reprojection_obs_residual_jacobian, residual_cost, LineAnchor, PoseAnchor,
    EVENT_RESIDUAL_DIM, LINE_RESIDUAL_DIM, PARAMS_PER_LINE, PARAMS_PER_POSE,
};
pub use scalar::{Dual, Real};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("basis vectors are linearly dependent (rank < {expected})")]
    RankDeficient { expected: usize },
    #[error("affine subspace dimension {0} unsupported (expected 1 or 2)")]
    BadDimension(usize),
    #[error("direction vector has near-zero norm {0:e}")]
    ZeroDirection(f64),
    #[error("Plucker constraint violated: |d . m| = {0:e}")]
    PluckerViolation(f64),
    #[error("line at infinity: w1 = {0:e}")]
    LineAtInfinity(f64),
    #[error("segment endpoints back-project to parallel rays")]
    DegenerateSegment,
    #[error("line projects to a point (passes through the camera center)")]
    ProjectsToPoint,
}
