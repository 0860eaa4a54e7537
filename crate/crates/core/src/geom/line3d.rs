//! 3D lines: Plücker coordinates, the minimal orthonormal representation,
//! rigid transforms, and projection to the image plane.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Unit, Vector3};

use super::{AffineSubspace, GeomError};
use crate::camera::{CameraPose, Intrinsics};

/// A 3D line in normalized Plücker form: unit direction `d` and moment
/// `m = p x d` for any point `p` on the line, with `d . m = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine {
    dir: Unit<Vector3<f64>>,
    moment: Vector3<f64>,
}

impl PluckerLine {
    /// Normalize raw homogeneous Plücker coordinates. Fails when the
    /// direction is (near) zero or the Plücker constraint is violated.
    pub fn from_raw(dir: Vector3<f64>, moment: Vector3<f64>) -> Result<Self, GeomError> {
        let n = dir.norm();
        if n < 1e-12 {
            return Err(GeomError::ZeroDirection(n));
        }
        let d = dir / n;
        let mut m = moment / n;
        let violation = d.dot(&m).abs() / (1.0 + m.norm());
        if violation > 1e-6 {
            return Err(GeomError::PluckerViolation(violation));
        }
        // Snap exactly onto the constraint manifold.
        m -= d * d.dot(&m);
        Ok(Self { dir: Unit::new_unchecked(d), moment: m })
    }

    pub fn from_point_dir(p: Point3<f64>, dir: Vector3<f64>) -> Result<Self, GeomError> {
        let n = dir.norm();
        if n < 1e-12 {
            return Err(GeomError::ZeroDirection(n));
        }
        let d = dir / n;
        let mut m = p.coords.cross(&d);
        m -= d * d.dot(&m);
        Ok(Self { dir: Unit::new_unchecked(d), moment: m })
    }

    pub fn from_two_points(p: Point3<f64>, q: Point3<f64>) -> Result<Self, GeomError> {
        Self::from_point_dir(p, q - p)
    }

    pub fn dir(&self) -> Unit<Vector3<f64>> {
        self.dir
    }

    pub fn moment(&self) -> Vector3<f64> {
        self.moment
    }

    /// The point on the line closest to the origin.
    pub fn closest_point_to_origin(&self) -> Vector3<f64> {
        self.dir.cross(&self.moment)
    }

    /// The point on the line closest to `p`.
    pub fn closest_point_to(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let c = self.closest_point_to_origin();
        c + *self.dir * self.dir.dot(&(p - c))
    }

    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        (p - self.closest_point_to(p)).norm()
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.closest_point_to_origin() + *self.dir * s
    }

    /// Signed parameter of the orthogonal projection of `p` onto the line
    /// (relative to the closest point to the origin).
    pub fn param_of(&self, p: &Vector3<f64>) -> f64 {
        self.dir.dot(&(p - self.closest_point_to_origin()))
    }

    /// Apply a rigid transform `x -> R x + t` to every point of the line.
    pub fn transformed(&self, rot: &Rotation3<f64>, t: &Vector3<f64>) -> Self {
        let d = rot * self.dir.into_inner();
        let m = rot * self.moment + t.cross(&d);
        Self { dir: Unit::new_unchecked(d), moment: m }
    }

    /// Express the line in the camera frame of `pose`.
    pub fn to_camera_frame(&self, pose: &CameraPose) -> Self {
        let rot = pose.rotation.inverse().to_rotation_matrix();
        let t = -(rot * pose.translation);
        self.transformed(&rot, &t)
    }

    /// View the line as a 1-dimensional affine subspace.
    pub fn as_subspace(&self) -> AffineSubspace {
        AffineSubspace::new(&[self.dir.into_inner()], self.closest_point_to_origin())
            .expect("unit direction spans a line")
    }
}

/// Minimal 4-DoF line representation: an SO(3) element `U` (stored as its
/// rotation-vector logarithm) whose columns are
/// `(d, m/|m|, d x m / |d x m|)`, plus the angle `phi` with
/// `(cos phi, sin phi) = (1, |m|) / sqrt(1 + |m|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalLine {
    /// Rotation vector (so(3) logarithm) of `U`.
    pub u: Vector3<f64>,
    /// Offset angle `phi = atan(|m|)`, in `[0, pi/2)`.
    pub w: f64,
}

impl OrthonormalLine {
    /// Convert from Plücker coordinates. When the line passes through the
    /// origin (`|m| = 0`) the second column is chosen deterministically as
    /// the normalized rejection of the least-aligned coordinate axis.
    pub fn from_plucker(line: &PluckerLine) -> Self {
        let d = line.dir.into_inner();
        let m = line.moment;
        let m_norm = m.norm();
        let u2 = if m_norm > 1e-12 {
            m / m_norm
        } else {
            let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
            let e = if ax <= ay && ax <= az {
                Vector3::x()
            } else if ay <= az {
                Vector3::y()
            } else {
                Vector3::z()
            };
            (e - d * d.dot(&e)).normalize()
        };
        let u3 = d.cross(&u2);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[d, u2, u3]));
        Self { u: rot.scaled_axis(), w: m_norm.atan2(1.0) }
    }

    /// Rotation matrix `U` with columns `(u1, u2, u3)`.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(self.u)
    }

    /// Convert back to Plücker coordinates. Fails for `w` at (or numerically
    /// past) `pi/2`, which encodes a line at infinity.
    pub fn to_plucker(&self) -> Result<PluckerLine, GeomError> {
        let (s, c) = self.w.sin_cos();
        if c <= 1e-9 {
            return Err(GeomError::LineAtInfinity(c));
        }
        let rot = self.rotation();
        let u = rot.matrix();
        let d = u.column(0).into_owned();
        let mut m = u.column(1).into_owned() * (s / c);
        m -= d * d.dot(&m);
        Ok(PluckerLine { dir: Unit::new_unchecked(d), moment: m })
    }

    /// Apply the tangent-space increment used by the optimizer:
    /// `U <- U exp([delta_u]x)`, `w <- w + delta_w`.
    pub fn retract(&self, delta_u: &Vector3<f64>, delta_w: f64) -> Self {
        let rot = self.rotation() * Rotation3::from_scaled_axis(*delta_u);
        Self { u: rot.scaled_axis(), w: self.w + delta_w }
    }
}

/// Project a 3D line to homogeneous image-line coefficients `(a, b, c)`
/// normalized so `(a, b)` is a unit vector (then `a x + b y + c` is the
/// signed pixel distance). Fails when the line passes (numerically) through
/// the camera center.
pub fn project_line(
    line: &PluckerLine,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Result<(f64, f64, f64), GeomError> {
    let cam = line.to_camera_frame(pose);
    // Every camera-frame point X on the line satisfies m_c . X = 0, so the
    // image line is K^{-T} m_c.
    let m = cam.moment;
    if m.norm() < 1e-12 {
        return Err(GeomError::ProjectsToPoint);
    }
    let l = Vector3::new(
        m.x / intr.fx,
        m.y / intr.fy,
        m.z - m.x * intr.cx / intr.fx - m.y * intr.cy / intr.fy,
    );
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n < 1e-15 {
        return Err(GeomError::ProjectsToPoint);
    }
    Ok((l.x / n, l.y / n, l.z / n))
}

/// Signed distance from a pixel to the homogeneous image line `(a, b, c)`.
pub fn image_line_distance(l: (f64, f64, f64), px: Point2<f64>) -> f64 {
    l.0 * px.x + l.1 * px.y + l.2
}
