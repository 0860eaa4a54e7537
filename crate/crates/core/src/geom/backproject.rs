//! Back-projection of 2D observations into viewing rays and planes.

use nalgebra::{Point2, Unit, Vector3};

use super::GeomError;
use crate::camera::{CameraPose, Intrinsics};
use crate::detect::LineSegment2D;

/// The viewing plane of a 2D segment: the plane through the camera center
/// containing both endpoint rays.
///
/// The orthonormal basis is stored in the *camera* frame so the plane can be
/// re-posed with updated extrinsics; convenience accessors place it in the
/// world using the pose captured at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPlane {
    /// Orthonormal basis of the plane, camera frame.
    pub basis_cam: [Vector3<f64>; 2],
    /// Pose used to place the plane in the world.
    pub pose: CameraPose,
}

impl ViewPlane {
    /// Plane basis rotated into the world frame.
    pub fn basis_world(&self) -> [Vector3<f64>; 2] {
        [self.pose.dir_to_world(&self.basis_cam[0]), self.pose.dir_to_world(&self.basis_cam[1])]
    }

    /// Camera center (a point of the plane).
    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    /// World-frame unit normal.
    pub fn normal_world(&self) -> Unit<Vector3<f64>> {
        let [b1, b2] = self.basis_world();
        Unit::new_normalize(b1.cross(&b2))
    }

    /// Plane coefficients `(n, d)` with the plane `{x : n . x + d = 0}`.
    pub fn coeffs_world(&self) -> (Unit<Vector3<f64>>, f64) {
        let n = self.normal_world();
        let d = -n.dot(&self.center());
        (n, d)
    }
}

/// Back-project a pixel to a world-frame unit ray through the camera center.
pub fn backproject_point_ray(
    px: Point2<f64>,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Unit<Vector3<f64>> {
    Unit::new_normalize(pose.dir_to_world(&intr.ray(px).into_inner()))
}

/// Back-project a 2D segment to its viewing plane. Fails when the endpoint
/// rays are (near) parallel, i.e. the segment is degenerate.
pub fn backproject_segment(
    seg: &LineSegment2D,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Result<ViewPlane, GeomError> {
    let r1 = intr.ray(seg.p1).into_inner();
    let r2 = intr.ray(seg.p2).into_inner();
    let b1 = r1;
    let mut b2 = r2 - b1 * b1.dot(&r2);
    let n = b2.norm();
    if n < 1e-12 {
        return Err(GeomError::DegenerateSegment);
    }
    b2 /= n;
    Ok(ViewPlane { basis_cam: [b1, b2], pose: *pose })
}
