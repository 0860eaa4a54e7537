//! Subspace residuals between 3D lines and viewing planes, with exact
//! Jacobians via forward-mode duals.
//!
//! Two residual kinds drive triangulation and refinement:
//!
//! * **line term** — a 3D line against the viewing plane of a detected 2D
//!   segment. Both primitives are shifted so the point of the line closest
//!   to the camera center moves to the origin (which keeps the value
//!   invariant to joint rigid motion), then embedded; the residual stacks
//!   the direction misfit `P_pi v - v` (3) and the affine misfit of the
//!   embedded offset (4).
//! * **event term** — the roles swap: the plane is spanned by the 3D line
//!   and the camera center, the "line" is the back-projected event ray.
//!   Both pass through the camera center, so only the 3-component direction
//!   misfit survives.
//!
//! Parameters enter through tangent-space increments around anchors: 4 per
//! line (`U exp([du]x)`, `phi + dphi`) and 6 per pose (`R exp([dr]x)`,
//! `C + dC`). Evaluating with [`Dual`] seeds one increment at a time, which
//! yields the exact Jacobian at the anchor.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use nalgebra::{Matrix3, Vector3, Vector4};

use super::line3d::{OrthonormalLine, PluckerLine};
use super::scalar::{Dual, Real};
use super::AffineSubspace;
use crate::camera::CameraPose;

pub const PARAMS_PER_LINE: usize = 4;
pub const PARAMS_PER_POSE: usize = 6;
pub const LINE_RESIDUAL_DIM: usize = 7;
pub const EVENT_RESIDUAL_DIM: usize = 3;

/// Linearization point of a line: `U` as a matrix plus the offset angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineAnchor {
    pub u: Matrix3<f64>,
    pub phi: f64,
}

impl LineAnchor {
    pub fn from_orthonormal(line: &OrthonormalLine) -> Self {
        Self { u: *line.rotation().matrix(), phi: line.w }
    }

    pub fn from_plucker(line: &PluckerLine) -> Self {
        Self::from_orthonormal(&OrthonormalLine::from_plucker(line))
    }

    /// Direction of the anchored line.
    pub fn dir(&self) -> Vector3<f64> {
        self.u.column(0).into_owned()
    }

    /// Point of the anchored line closest to the origin.
    pub fn closest_point(&self) -> Vector3<f64> {
        self.u.column(2).into_owned() * self.phi.tan()
    }
}

/// Linearization point of a camera pose (camera-to-world).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAnchor {
    pub r: Matrix3<f64>,
    pub c: Vector3<f64>,
}

impl PoseAnchor {
    pub fn from_pose(pose: &CameraPose) -> Self {
        Self { r: *pose.rotation.to_rotation_matrix().matrix(), c: pose.translation }
    }
}

// --- generic small-vector kernels ------------------------------------------------

#[inline]
fn c3<S: Real>(v: &Vector3<f64>) -> [S; 3] {
    [S::from_f64(v.x), S::from_f64(v.y), S::from_f64(v.z)]
}

#[inline]
fn dot3<S: Real>(a: &[S; 3], b: &[S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn sub3<S: Real>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn add3<S: Real>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn scale3<S: Real>(a: &[S; 3], s: S) -> [S; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Columns of `M0 * R(w)` where `M0` is a constant matrix and `R(w)` the
/// Rodrigues rotation of the (small) vector `w`.
fn rotate_columns<S: Real>(m0: &Matrix3<f64>, w: &[S; 3]) -> [[S; 3]; 3] {
    let one = S::from_f64(1.0);
    let t2 = dot3(w, w);
    // Near zero (always true at the linearization point) the Taylor forms
    // of sin(t)/t and (1 - cos(t))/t^2 are exact to rounding and smooth.
    let (a, b) = if t2.value() < 1e-12 {
        (
            one - t2 / S::from_f64(6.0),
            S::from_f64(0.5) - t2 / S::from_f64(24.0),
        )
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (one - t.cos()) / t2)
    };
    // R(w) column j = e_j + a * (w x e_j) + b * (w w_j - t2 e_j).
    let mut cols_r = [[S::from_f64(0.0); 3]; 3];
    for j in 0..3 {
        let mut e = [S::from_f64(0.0); 3];
        e[j] = one;
        let wxe = [
            w[1] * e[2] - w[2] * e[1],
            w[2] * e[0] - w[0] * e[2],
            w[0] * e[1] - w[1] * e[0],
        ];
        for i in 0..3 {
            cols_r[j][i] = e[i] + a * wxe[i] + b * (w[i] * w[j] - t2 * e[i]);
        }
    }
    // M0 * R: column j = M0 * cols_r[j].
    let m0c: [[S; 3]; 3] = [
        c3(&m0.column(0).into_owned()),
        c3(&m0.column(1).into_owned()),
        c3(&m0.column(2).into_owned()),
    ];
    let mut out = [[S::from_f64(0.0); 3]; 3];
    for j in 0..3 {
        let mut acc = scale3(&m0c[0], cols_r[j][0]);
        acc = add3(&acc, &scale3(&m0c[1], cols_r[j][1]));
        acc = add3(&acc, &scale3(&m0c[2], cols_r[j][2]));
        out[j] = acc;
    }
    out
}

/// Line direction `v` and closest-to-origin point of the incremented line.
fn line_geometry<S: Real>(line: &LineAnchor, dl: &[S; 4]) -> ([S; 3], [S; 3]) {
    let du = [dl[0], dl[1], dl[2]];
    let u = rotate_columns(&line.u, &du);
    let phi = S::from_f64(line.phi) + dl[3];
    let tan = phi.sin() / phi.cos();
    (u[0], scale3(&u[2], tan))
}

/// Rotation columns and center of the incremented pose.
fn pose_geometry<S: Real>(pose: &PoseAnchor, dp: &[S; 6]) -> ([[S; 3]; 3], [S; 3]) {
    let dr = [dp[0], dp[1], dp[2]];
    let r = rotate_columns(&pose.r, &dr);
    let c = add3(&c3(&pose.c), &[dp[3], dp[4], dp[5]]);
    (r, c)
}

/// Line term: residual of the (incremented) line against the viewing plane
/// of one observation, which is held in the camera frame and posed with the
/// (incremented) camera. Components: direction misfit (3), embedded affine
/// misfit (4).
pub fn line_obs_residual<S: Real>(
    line: &LineAnchor,
    dl: &[S; 4],
    pose: &PoseAnchor,
    dp: &[S; 6],
    basis_cam: &[Vector3<f64>; 2],
) -> [S; LINE_RESIDUAL_DIM] {
    let one = S::from_f64(1.0);
    let (v, cl) = line_geometry(line, dl);
    let (r, c) = pose_geometry(pose, dp);

    // World-frame plane basis: rotate each camera-frame basis vector.
    let world_basis = |b: &Vector3<f64>| -> [S; 3] {
        let bc = c3::<S>(b);
        add3(
            &add3(&scale3(&r[0], bc[0]), &scale3(&r[1], bc[1])),
            &scale3(&r[2], bc[2]),
        )
    };
    let b1 = world_basis(&basis_cam[0]);
    let b2 = world_basis(&basis_cam[1]);

    // Direction misfit r1 = B B^T v - v.
    let r1 = sub3(&add3(&scale3(&b1, dot3(&b1, &v)), &scale3(&b2, dot3(&b2, &v))), &v);

    // Shift both primitives by the point of the line closest to the camera
    // center; the line then passes through the origin and the plane offset
    // becomes the rejection of (C - p*) from the plane span.
    let p_star = add3(&cl, &scale3(&v, dot3(&v, &sub3(&c, &cl))));
    let u = sub3(&c, &p_star);
    let d0 = sub3(&u, &add3(&scale3(&b1, dot3(&b1, &u)), &scale3(&b2, dot3(&b2, &u))));
    let s2 = one + dot3(&d0, &d0);

    // r2 = P_z e4 - e4 with the embedded plane; closed form below.
    let r2a = scale3(&d0, one / s2);
    let r2b = one / s2 - one;
    [r1[0], r1[1], r1[2], r2a[0], r2a[1], r2a[2], r2b]
}

/// Event term: residual of a back-projected event ray (camera frame,
/// constant) against the plane spanned by the (incremented) line and the
/// camera center of the (incremented) pose, expressed in the camera frame.
pub fn event_obs_residual<S: Real>(
    line: &LineAnchor,
    dl: &[S; 4],
    pose: &PoseAnchor,
    dp: &[S; 6],
    ray_cam: &Vector3<f64>,
) -> [S; EVENT_RESIDUAL_DIM] {
    let (v, cl) = line_geometry(line, dl);
    let (r, c) = pose_geometry(pose, dp);

    // Into the camera frame: x_cam = R^T (x_world - C).
    let rt_mul = |x: &[S; 3]| -> [S; 3] { [dot3(&r[0], x), dot3(&r[1], x), dot3(&r[2], x)] };
    let v_c = rt_mul(&v);
    let p_c = rt_mul(&sub3(&cl, &c));

    // Plane through the origin spanned by the line: Gram-Schmidt of (v_c, p_c).
    let g1 = v_c;
    let rej = sub3(&p_c, &scale3(&g1, dot3(&g1, &p_c)));
    let g2 = scale3(&rej, S::from_f64(1.0) / dot3(&rej, &rej).sqrt());

    let ray = c3::<S>(ray_cam);
    sub3(&add3(&scale3(&g1, dot3(&g1, &ray)), &scale3(&g2, dot3(&g2, &ray))), &ray)
}

/// Reprojection term: signed pixel distances of two observed endpoints to
/// the image line of the (incremented) 3D line under the (incremented)
/// pose. This is the classic 2D geometric cost, kept as a baseline
/// alternative to the subspace terms.
pub fn reprojection_obs_residual<S: Real>(
    line: &LineAnchor,
    dl: &[S; 4],
    pose: &PoseAnchor,
    dp: &[S; 6],
    endpoints: &[[f64; 2]; 2],
    intr: &crate::camera::Intrinsics,
) -> [S; 2] {
    let (v, cl) = line_geometry(line, dl);
    let (r, c) = pose_geometry(pose, dp);
    // World moment, then the camera-frame moment m_c = R^T (m - C x v);
    // every camera-frame point X of the line satisfies m_c . X = 0.
    let m = [
        cl[1] * v[2] - cl[2] * v[1],
        cl[2] * v[0] - cl[0] * v[2],
        cl[0] * v[1] - cl[1] * v[0],
    ];
    let cxv = [
        c[1] * v[2] - c[2] * v[1],
        c[2] * v[0] - c[0] * v[2],
        c[0] * v[1] - c[1] * v[0],
    ];
    let mw = sub3(&m, &cxv);
    let m_c = [dot3(&r[0], &mw), dot3(&r[1], &mw), dot3(&r[2], &mw)];
    // Image line K^{-T} m_c, normalized to unit (a, b).
    let (fx, fy) = (S::from_f64(intr.fx), S::from_f64(intr.fy));
    let (cx, cy) = (S::from_f64(intr.cx), S::from_f64(intr.cy));
    let la = m_c[0] / fx;
    let lb = m_c[1] / fy;
    let lc = m_c[2] - la * cx - lb * cy;
    let scale = (la * la + lb * lb).sqrt();
    let mut out = [S::from_f64(0.0); 2];
    for (i, e) in endpoints.iter().enumerate() {
        out[i] = (la * S::from_f64(e[0]) + lb * S::from_f64(e[1]) + lc) / scale;
    }
    out
}

/// Jacobian of the reprojection term; layout as in
/// [`line_obs_residual_jacobian`].
pub fn reprojection_obs_residual_jacobian(
    line: &LineAnchor,
    pose: &PoseAnchor,
    endpoints: &[[f64; 2]; 2],
    intr: &crate::camera::Intrinsics,
) -> ([f64; 2], [[f64; PARAMS_PER_LINE + PARAMS_PER_POSE]; 2]) {
    let mut jac = [[0.0; PARAMS_PER_LINE + PARAMS_PER_POSE]; 2];
    let mut res = [0.0; 2];
    for k in 0..PARAMS_PER_LINE + PARAMS_PER_POSE {
        let mut dl = [Dual::constant(0.0); 4];
        let mut dp = [Dual::constant(0.0); 6];
        if k < PARAMS_PER_LINE {
            dl[k] = Dual::seeded(0.0);
        } else {
            dp[k - PARAMS_PER_LINE] = Dual::seeded(0.0);
        }
        let r = reprojection_obs_residual(line, &dl, pose, &dp, endpoints, intr);
        for i in 0..2 {
            jac[i][k] = r[i].d;
            res[i] = r[i].v;
        }
    }
    (res, jac)
}

/// True when the event term is undefined for this line/pose pair because
/// the line passes (numerically) through the camera center.
pub fn event_term_degenerate(line: &LineAnchor, pose: &PoseAnchor) -> bool {
    let v = line.dir();
    let cl = line.closest_point();
    let rel = cl - pose.c;
    (rel - v * v.dot(&rel)).norm() < 1e-9
}

/// Jacobian of the line term w.r.t. the 4 line + 6 pose increments,
/// evaluated at the anchors. Returns (residual, d residual / d params).
pub fn line_obs_residual_jacobian(
    line: &LineAnchor,
    pose: &PoseAnchor,
    basis_cam: &[Vector3<f64>; 2],
) -> ([f64; LINE_RESIDUAL_DIM], [[f64; PARAMS_PER_LINE + PARAMS_PER_POSE]; LINE_RESIDUAL_DIM]) {
    let mut jac = [[0.0; PARAMS_PER_LINE + PARAMS_PER_POSE]; LINE_RESIDUAL_DIM];
    let mut res = [0.0; LINE_RESIDUAL_DIM];
    for k in 0..PARAMS_PER_LINE + PARAMS_PER_POSE {
        let mut dl = [Dual::constant(0.0); 4];
        let mut dp = [Dual::constant(0.0); 6];
        if k < PARAMS_PER_LINE {
            dl[k] = Dual::seeded(0.0);
        } else {
            dp[k - PARAMS_PER_LINE] = Dual::seeded(0.0);
        }
        let r = line_obs_residual(line, &dl, pose, &dp, basis_cam);
        for i in 0..LINE_RESIDUAL_DIM {
            jac[i][k] = r[i].d;
            res[i] = r[i].v;
        }
    }
    (res, jac)
}

/// Jacobian of the event term; layout as in [`line_obs_residual_jacobian`].
pub fn event_obs_residual_jacobian(
    line: &LineAnchor,
    pose: &PoseAnchor,
    ray_cam: &Vector3<f64>,
) -> ([f64; EVENT_RESIDUAL_DIM], [[f64; PARAMS_PER_LINE + PARAMS_PER_POSE]; EVENT_RESIDUAL_DIM])
{
    let mut jac = [[0.0; PARAMS_PER_LINE + PARAMS_PER_POSE]; EVENT_RESIDUAL_DIM];
    let mut res = [0.0; EVENT_RESIDUAL_DIM];
    for k in 0..PARAMS_PER_LINE + PARAMS_PER_POSE {
        let mut dl = [Dual::constant(0.0); 4];
        let mut dp = [Dual::constant(0.0); 6];
        if k < PARAMS_PER_LINE {
            dl[k] = Dual::seeded(0.0);
        } else {
            dp[k - PARAMS_PER_LINE] = Dual::seeded(0.0);
        }
        let r = event_obs_residual(line, &dl, pose, &dp, ray_cam);
        for i in 0..EVENT_RESIDUAL_DIM {
            jac[i][k] = r[i].d;
            res[i] = r[i].v;
        }
    }
    (res, jac)
}

/// Sum of squared residual components.
pub fn residual_cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Literal subspace residual between a line and a plane, both given as
/// affine subspaces of R^3: `r1 = P_pi v - v` on the direction and
/// `r2 = P_z c~ - c~` on the embedded homogeneous offset. No shift is
/// applied; callers wanting rigid-motion invariance shift the pair first.
pub fn line_plane_residual(
    line: &AffineSubspace,
    plane: &AffineSubspace,
) -> (Vector3<f64>, Vector4<f64>) {
    debug_assert_eq!(line.dim(), 1);
    debug_assert_eq!(plane.dim(), 2);
    let v = line.basis()[0];
    let (b1, b2) = (plane.basis()[0], plane.basis()[1]);
    let r1 = b1 * b1.dot(&v) + b2 * b2.dot(&v) - v;

    let c0 = line.offset();
    let sc = (1.0 + c0.norm_squared()).sqrt();
    let ct = Vector4::new(c0.x / sc, c0.y / sc, c0.z / sc, 1.0 / sc);

    let d0 = plane.offset();
    let sp = (1.0 + d0.norm_squared()).sqrt();
    let y1 = Vector4::new(b1.x, b1.y, b1.z, 0.0);
    let y2 = Vector4::new(b2.x, b2.y, b2.z, 0.0);
    let y3 = Vector4::new(d0.x / sp, d0.y / sp, d0.z / sp, 1.0 / sp);
    let r2 = y1 * y1.dot(&ct) + y2 * y2.dot(&ct) + y3 * y3.dot(&ct) - ct;
    (r1, r2)
}
