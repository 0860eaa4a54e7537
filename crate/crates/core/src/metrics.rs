//! Map and trajectory quality metrics.
//!
//! Cloud metrics compare a predicted point cloud against a reference cloud
//! through exact nearest-neighbour distances: `accuracy` is the mean
//! predicted-to-reference distance, `completion` the reverse, and `iou` an
//! intersection-over-union of the mutually-explained points at a distance
//! threshold. Trajectory error is the RMS of paired camera-center
//! differences, optionally after a closed-form rigid alignment.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::Point3;
use thiserror::Error;

use crate::camera::CameraPose;
use crate::icp::{rigid_align, IcpError};
use crate::spatial::{PointGrid, SpatialError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error("trajectories must pair up, got {gt} reference and {est} estimated poses")]
    TrajectoryMismatch { gt: usize, est: usize },
    #[error("trajectories are empty")]
    EmptyTrajectory,
    #[error("spatial index failed: {0}")]
    Spatial(#[from] SpatialError),
    #[error("alignment failed: {0}")]
    Align(#[from] IcpError),
}

/// Cached cross nearest-neighbour distances between two clouds, from which
/// all cloud metrics derive.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudComparison {
    pred_to_ref: Vec<f64>,
    ref_to_pred: Vec<f64>,
}

impl CloudComparison {
    pub fn new(pred: &[Point3<f64>], reference: &[Point3<f64>]) -> Result<Self, MetricsError> {
        if pred.is_empty() {
            return Err(MetricsError::EmptyCloud("predicted"));
        }
        if reference.is_empty() {
            return Err(MetricsError::EmptyCloud("reference"));
        }
        let ref_grid = PointGrid::build_auto(reference)?;
        let pred_grid = PointGrid::build_auto(pred)?;
        let pred_to_ref =
            pred.iter().map(|p| ref_grid.nearest(p).expect("non-empty").1).collect();
        let ref_to_pred =
            reference.iter().map(|p| pred_grid.nearest(p).expect("non-empty").1).collect();
        Ok(Self { pred_to_ref, ref_to_pred })
    }

    /// Mean distance from predicted points to the reference cloud.
    pub fn accuracy(&self) -> f64 {
        mean(&self.pred_to_ref)
    }

    /// Mean distance from reference points to the predicted cloud.
    pub fn completion(&self) -> f64 {
        mean(&self.ref_to_pred)
    }

    /// Intersection-over-union of mutually explained points at threshold
    /// `delta` (inclusive).
    pub fn iou(&self, delta: f64) -> f64 {
        let c_p = self.pred_to_ref.iter().filter(|&&d| d <= delta).count();
        let c_r = self.ref_to_pred.iter().filter(|&&d| d <= delta).count();
        let (np, nr) = (self.pred_to_ref.len(), self.ref_to_pred.len());
        c_p.min(c_r) as f64 / (np + nr - c_p.max(c_r)) as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean predicted-to-reference nearest-neighbour distance.
pub fn accuracy(pred: &[Point3<f64>], reference: &[Point3<f64>]) -> Result<f64, MetricsError> {
    Ok(CloudComparison::new(pred, reference)?.accuracy())
}

/// Mean reference-to-predicted nearest-neighbour distance.
pub fn completion(pred: &[Point3<f64>], reference: &[Point3<f64>]) -> Result<f64, MetricsError> {
    Ok(CloudComparison::new(pred, reference)?.completion())
}

/// Intersection-over-union at threshold `delta`.
pub fn iou(
    pred: &[Point3<f64>],
    reference: &[Point3<f64>],
    delta: f64,
) -> Result<f64, MetricsError> {
    Ok(CloudComparison::new(pred, reference)?.iou(delta))
}

/// RMS camera-center error between index-paired trajectories. With `align`
/// the estimate is first registered onto the reference by the closed-form
/// rigid solver (no scale).
pub fn ate_rmse(
    reference: &[CameraPose],
    estimate: &[CameraPose],
    align: bool,
) -> Result<f64, MetricsError> {
    if reference.len() != estimate.len() {
        return Err(MetricsError::TrajectoryMismatch {
            gt: reference.len(),
            est: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let ref_c: Vec<Point3<f64>> = reference.iter().map(|p| Point3::from(p.center())).collect();
    let est_c: Vec<Point3<f64>> = estimate.iter().map(|p| Point3::from(p.center())).collect();
    let mapped: Vec<Point3<f64>> = if align {
        let (r, t) = rigid_align(&est_c, &ref_c)?;
        est_c.iter().map(|p| Point3::from(r * p.coords + t)).collect()
    } else {
        est_c
    };
    let ss: f64 = ref_c.iter().zip(&mapped).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((ss / reference.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::nearest_brute;
    use crate::synth::look_at_pose;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_clouds_are_perfect() {
        let pts: Vec<Point3<f64>> =
            (0..50).map(|i| Point3::new(i as f64, (i * i % 7) as f64, 0.5 * i as f64)).collect();
        let c = CloudComparison::new(&pts, &pts).unwrap();
        assert_eq!(c.accuracy(), 0.0);
        assert_eq!(c.completion(), 0.0);
        assert_eq!(c.iou(0.0), 1.0);
        assert_eq!(c.iou(5.0), 1.0);
    }

    #[test]
    fn two_point_example_matches_hand_computation() {
        let pred = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let reference = [Point3::new(0.0, 0.5, 0.0)];
        let c = CloudComparison::new(&pred, &reference).unwrap();
        let d2 = 1.25f64.sqrt();
        assert!((c.accuracy() - (0.5 + d2) / 2.0).abs() < 1e-15);
        assert!((c.completion() - 0.5).abs() < 1e-15);
        // At 0.6: one predicted point explained, the reference point too:
        // min(1,1) / (2 + 1 - max(1,1)) = 1/2.
        assert!((c.iou(0.6) - 0.5).abs() < 1e-15);
        // At 1.2 everything is mutually explained: 2 / (3 - 2) = 1.
        assert!((c.iou(1.2) - 1.0).abs() < 1e-15);
        // Below 0.5 nothing is: 0.
        assert_eq!(c.iou(0.4), 0.0);
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = rng.gen_range(1..60);
            let m = rng.gen_range(1..60);
            let mut mk = |k: usize| -> Vec<Point3<f64>> {
                (0..k)
                    .map(|_| {
                        Point3::new(
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                        )
                    })
                    .collect()
            };
            let (pred, reference) = (mk(n), mk(m));
            let c = CloudComparison::new(&pred, &reference).unwrap();
            let acc_b: f64 = pred
                .iter()
                .map(|p| nearest_brute(&reference, p).unwrap().1)
                .sum::<f64>()
                / n as f64;
            let com_b: f64 = reference
                .iter()
                .map(|p| nearest_brute(&pred, p).unwrap().1)
                .sum::<f64>()
                / m as f64;
            assert!((c.accuracy() - acc_b).abs() < 1e-12);
            assert!((c.completion() - com_b).abs() < 1e-12);
            for delta in [0.1, 1.0, 3.0, 10.0] {
                let c_p = pred
                    .iter()
                    .filter(|p| nearest_brute(&reference, p).unwrap().1 <= delta)
                    .count();
                let c_r = reference
                    .iter()
                    .filter(|p| nearest_brute(&pred, p).unwrap().1 <= delta)
                    .count();
                let want = c_p.min(c_r) as f64 / (n + m - c_p.max(c_r)) as f64;
                assert!((c.iou(delta) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iou_is_monotone_in_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Point3<f64>> {
            (0..k)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                    )
                })
                .collect()
        };
        let pred = mk(&mut rng, 80);
        let reference = mk(&mut rng, 60);
        let c = CloudComparison::new(&pred, &reference).unwrap();
        let mut prev = 0.0;
        for k in 0..40 {
            let v = c.iou(0.2 * k as f64);
            assert!(v >= prev - 1e-15, "iou decreased at delta {}", 0.2 * k as f64);
            prev = v;
        }
        assert_eq!(c.iou(1e9), 1.0);
    }

    #[test]
    fn empty_clouds_error() {
        let pts = [Point3::origin()];
        assert_eq!(
            CloudComparison::new(&[], &pts).unwrap_err(),
            MetricsError::EmptyCloud("predicted")
        );
        assert_eq!(
            CloudComparison::new(&pts, &[]).unwrap_err(),
            MetricsError::EmptyCloud("reference")
        );
    }

    #[test]
    fn trajectory_error_with_and_without_alignment() {
        let mut reference = Vec::new();
        for i in 0..20 {
            let ang = 0.1 * i as f64;
            reference.push(look_at_pose(
                i,
                Point3::new(8.0 * ang.cos(), 8.0 * ang.sin(), 2.0),
                Point3::origin(),
            ));
        }
        assert_eq!(ate_rmse(&reference, &reference, false).unwrap(), 0.0);
        // Constant offset: plain RMS sees it, aligned RMS removes it.
        let offset = Vector3::new(0.5, -0.25, 0.1);
        let shifted: Vec<CameraPose> = reference
            .iter()
            .map(|p| CameraPose { translation: p.translation + offset, ..*p })
            .collect();
        let plain = ate_rmse(&reference, &shifted, false).unwrap();
        assert!((plain - offset.norm()).abs() < 1e-12);
        assert!(ate_rmse(&reference, &shifted, true).unwrap() < 1e-10);
        // Rigidly rotated copy: aligned error vanishes as well.
        let r = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.3);
        let rotated: Vec<CameraPose> = reference
            .iter()
            .map(|p| CameraPose { translation: r * p.translation, ..*p })
            .collect();
        assert!(ate_rmse(&reference, &rotated, false).unwrap() > 1.0);
        assert!(ate_rmse(&reference, &rotated, true).unwrap() < 1e-10);
        // Shape errors.
        assert_eq!(
            ate_rmse(&reference[..3], &reference[..2], false).unwrap_err(),
            MetricsError::TrajectoryMismatch { gt: 3, est: 2 }
        );
        assert_eq!(ate_rmse(&[], &[], false).unwrap_err(), MetricsError::EmptyTrajectory);
    }
}
