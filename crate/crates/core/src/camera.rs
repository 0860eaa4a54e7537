//! Pinhole camera model and timestamped poses.
//!
//! Conventions, fixed once for the whole crate:
//! * poses are **camera-to-world**: `rotation` maps camera-frame vectors to
//!   world-frame vectors and `translation` is the camera center in world
//!   coordinates;
//! * pixel coordinates follow the usual image convention (`x` right, `y`
//!   down, origin at the top-left pixel center);
//! * timestamps are microseconds (`i64`).

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::{Matrix3, Point2, Point3, Quaternion, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Pinhole intrinsics plus sensor geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u16,
    pub height: u16,
}

impl Intrinsics {
    /// Backproject a pixel to a unit ray in the camera frame (+z forward).
    pub fn ray(&self, px: Point2<f64>) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::new(
            (px.x - self.cx) / self.fx,
            (px.y - self.cy) / self.fy,
            1.0,
        ))
    }

    /// Project a camera-frame point; `None` when at or behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        if p.z <= 1e-12 {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Upper-triangular calibration matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// True when the pixel lies inside the sensor bounds.
    pub fn contains(&self, px: Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Camera-to-world pose sampled at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub t_us: i64,
    /// Camera-to-world rotation.
    pub rotation: UnitQuaternion<f64>,
    /// Camera center in world coordinates.
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(t_us: i64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { t_us, rotation, translation }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn world_to_cam(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.inverse() * (p.coords - self.translation))
    }

    pub fn cam_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotate a camera-frame direction into the world frame.
    pub fn dir_to_world(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// Project a world point through `intr`; `None` when behind the camera.
    pub fn project(&self, p: &Point3<f64>, intr: &Intrinsics) -> Option<Point2<f64>> {
        intr.project(&self.world_to_cam(p))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoseError {
    #[error("pose list is empty")]
    Empty,
    #[error("pose timestamps must be strictly increasing (index {0})")]
    NotSorted(usize),
    #[error("query time {t_us} outside pose range [{lo}, {hi}]")]
    OutOfRange { t_us: i64, lo: i64, hi: i64 },
}

/// Interpolate a pose at `t_us` by slerp (rotation) and lerp (translation)
/// between the two bracketing samples. Queries must fall inside the sampled
/// range; extrapolation is refused.
pub fn interpolate_pose(poses: &[CameraPose], t_us: i64) -> Result<CameraPose, PoseError> {
    if poses.is_empty() {
        return Err(PoseError::Empty);
    }
    for (i, w) in poses.windows(2).enumerate() {
        if w[1].t_us <= w[0].t_us {
            return Err(PoseError::NotSorted(i + 1));
        }
    }
    let (lo, hi) = (poses[0].t_us, poses[poses.len() - 1].t_us);
    if t_us < lo || t_us > hi {
        return Err(PoseError::OutOfRange { t_us, lo, hi });
    }
    let idx = poses.partition_point(|p| p.t_us <= t_us);
    if idx == 0 {
        return Ok(poses[0]);
    }
    if idx == poses.len() {
        return Ok(poses[poses.len() - 1]);
    }
    let (a, b) = (&poses[idx - 1], &poses[idx]);
    let s = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
    // Short-circuit identical endpoints: slerp/lerp round-trips can wobble by
    // an ulp as `s` varies, which is enough to flip pixel rounding downstream.
    let rotation = if a.rotation.coords == b.rotation.coords {
        a.rotation
    } else {
        a.rotation.try_slerp(&b.rotation, s, 1e-12).unwrap_or_else(|| {
            // Antipodal quaternions represent the same rotation; flip one side.
            let flipped = UnitQuaternion::new_unchecked(Quaternion::from(-b.rotation.coords));
            a.rotation.slerp(&flipped, s)
        })
    };
    let translation = a.translation + (b.translation - a.translation) * s;
    Ok(CameraPose::new(t_us, rotation, translation))
}

/// Interpolate one pose per requested timestamp.
pub fn interpolate_poses(
    poses: &[CameraPose],
    times_us: &[i64],
) -> Result<Vec<CameraPose>, PoseError> {
    times_us.iter().map(|&t| interpolate_pose(poses, t)).collect()
}
