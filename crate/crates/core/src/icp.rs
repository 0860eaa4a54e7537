//! Rigid point-cloud registration: closed-form alignment of paired sets and
//! iterative closest point for unpaired ones.
//!
//! The paired solver is the classic cross-covariance / SVD construction with
//! the determinant sign fix, minimizing `sum ||R s + t - d||^2`. ICP
//! alternates exact nearest-neighbour correspondence (via [`crate::spatial`])
//! with that solver; each step can only reduce the residual, so the reported
//! RMS history is non-increasing.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::spatial::{PointGrid, SpatialError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcpError {
    #[error("point sets must be non-empty")]
    Empty,
    #[error("paired alignment needs equal-length sets, got {src} and {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("registration experiment needs at least one trial")]
    NoTrials,
    #[error("spatial index failed: {0}")]
    Spatial(#[from] SpatialError),
}

/// Least-squares rigid transform `(R, t)` with `dst ~ R * src + t` for
/// index-paired point sets.
pub fn rigid_align(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
) -> Result<(UnitQuaternion<f64>, Vector3<f64>), IcpError> {
    if src.len() != dst.len() {
        return Err(IcpError::LengthMismatch { src: src.len(), dst: dst.len() });
    }
    if src.is_empty() {
        return Err(IcpError::Empty);
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    // h = sum (s - cs)(d - cd)^T = U S V^T; R = V diag(1,1,det VU^T) U^T.
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let v = vt.transpose();
    let det = (v * u.transpose()).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let r = v * fix * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Ok((rot, t))
}

/// ICP settings: iteration cap and the RMS change that counts as converged.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-10 }
    }
}

/// Result of an ICP run: the accumulated transform mapping the original
/// source into the destination frame, plus the residual trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    /// RMS correspondence distance before each update, then the final RMS.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

impl IcpResult {
    pub fn final_rms(&self) -> f64 {
        *self.rms_history.last().expect("history never empty")
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Point-to-point ICP registering `src` onto `dst`.
pub fn icp_point_to_point(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    cfg: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    if src.is_empty() || dst.is_empty() {
        return Err(IcpError::Empty);
    }
    let grid = PointGrid::build_auto(dst)?;
    let mut rot = UnitQuaternion::identity();
    let mut trans = Vector3::zeros();
    let mut cur: Vec<Point3<f64>> = src.to_vec();
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        let matched: Vec<Point3<f64>> = cur
            .iter()
            .map(|p| {
                let (i, _) = grid.nearest(p).expect("dst non-empty");
                dst[i]
            })
            .collect();
        let rms = rms_paired(&cur, &matched);
        if let Some(&prev) = history.last() {
            if (prev - rms).abs() < cfg.tolerance {
                history.push(rms);
                break;
            }
        }
        history.push(rms);
        let (dr, dt) = rigid_align(&cur, &matched)?;
        for p in &mut cur {
            *p = Point3::from(dr * p.coords + dt);
        }
        rot = dr * rot;
        trans = dr * trans + dt;
        iterations += 1;
    }
    // Final residual after the last update (when the loop hit the cap).
    if history.len() == iterations {
        let final_rms = rms_paired_nn(&cur, &grid, dst);
        history.push(final_rms);
    }
    Ok(IcpResult { rotation: rot, translation: trans, rms_history: history, iterations })
}

fn rms_paired(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (ss / a.len() as f64).sqrt()
}

fn rms_paired_nn(a: &[Point3<f64>], grid: &PointGrid, dst: &[Point3<f64>]) -> f64 {
    let ss: f64 = a
        .iter()
        .map(|p| {
            let (i, _) = grid.nearest(p).expect("dst non-empty");
            (p - dst[i]).norm_squared()
        })
        .sum();
    (ss / a.len() as f64).sqrt()
}

/// One registration trial: the recovered-vs-applied transform errors.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegistrationTrial {
    pub final_rms: f64,
    pub rotation_error_deg: f64,
    pub translation_error: f64,
}

/// Summary over all trials.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegistrationReport {
    pub trials: Vec<RegistrationTrial>,
    pub mean_final_rms: f64,
    pub max_rotation_error_deg: f64,
    pub max_translation_error: f64,
}

/// Self-registration experiment: perturb a copy of the cloud by a rigid
/// transform of the given magnitudes (rotation in degrees about a random
/// axis, translation of the given norm in a random direction), register it
/// back with ICP, and report how well the transform was recovered.
pub fn registration_experiment(
    points: &[Point3<f64>],
    n_trials: usize,
    rot_deg: f64,
    translation: f64,
    seed: u64,
    cfg: &IcpConfig,
) -> Result<RegistrationReport, IcpError> {
    if n_trials == 0 {
        return Err(IcpError::NoTrials);
    }
    if points.is_empty() {
        return Err(IcpError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let axis = nalgebra::Unit::new_unchecked(unit(&mut rng));
        let r = UnitQuaternion::from_axis_angle(&axis, rot_deg.to_radians());
        let t = unit(&mut rng) * translation;
        let moved: Vec<Point3<f64>> =
            points.iter().map(|p| Point3::from(r * p.coords + t)).collect();
        let icp = icp_point_to_point(&moved, points, cfg)?;
        // Perfect recovery would invert the perturbation.
        let resid_rot = icp.rotation * r;
        let resid_t = icp.rotation * t + icp.translation;
        trials.push(RegistrationTrial {
            final_rms: icp.final_rms(),
            rotation_error_deg: resid_rot.angle().to_degrees(),
            translation_error: resid_t.norm(),
        });
    }
    let mean_final_rms = trials.iter().map(|t| t.final_rms).sum::<f64>() / n_trials as f64;
    let max_rotation_error_deg =
        trials.iter().map(|t| t.rotation_error_deg).fold(0.0f64, f64::max);
    let max_translation_error =
        trials.iter().map(|t| t.translation_error).fold(0.0f64, f64::max);
    Ok(RegistrationReport { trials, mean_final_rms, max_rotation_error_deg, max_translation_error })
}
