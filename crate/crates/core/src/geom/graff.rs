//! Affine subspaces of R^3 and distances between them.
//!
//! A k-dimensional affine subspace `span(A) + b0` (orthonormal basis `A`,
//! displacement `b0` orthogonal to the span) embeds into the Grassmannian of
//! (k+1)-planes in R^4 as the column span of
//!
//! ```text
//!     Y = [ A   b0 / s ]          s = sqrt(1 + |b0|^2)
//!         [ 0    1 / s ]
//! ```
//!
//! Principal angles between two embedded subspaces come from the singular
//! values of `Y1^T Y2`, and the distance is the 2-norm of the angle vector.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::{DMatrix, Vector3};

use super::GeomError;

/// An affine subspace of R^3 of dimension 1 (line) or 2 (plane).
///
/// Stored in canonical form: orthonormal basis columns plus a displacement
/// orthogonal to the span. Any representative point works for construction;
/// canonicalization happens there.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    basis: Vec<Vector3<f64>>,
    offset: Vector3<f64>,
}

impl AffineSubspace {
    /// Build from spanning vectors (not necessarily orthonormal) and any
    /// point on the subspace.
    pub fn new(span: &[Vector3<f64>], point: Vector3<f64>) -> Result<Self, GeomError> {
        let k = span.len();
        if k == 0 || k > 2 {
            return Err(GeomError::BadDimension(k));
        }
        let mut basis: Vec<Vector3<f64>> = Vec::with_capacity(k);
        for v in span {
            let mut u = *v;
            for b in &basis {
                u -= b * b.dot(&u);
            }
            let n = u.norm();
            if n < 1e-12 {
                return Err(GeomError::RankDeficient { expected: k });
            }
            basis.push(u / n);
        }
        let mut offset = point;
        for b in &basis {
            offset -= b * b.dot(&offset);
        }
        Ok(Self { basis, offset })
    }

    /// Subspace dimension (1 or 2).
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vector3<f64>] {
        &self.basis
    }

    /// Displacement from the origin, orthogonal to the span.
    pub fn offset(&self) -> &Vector3<f64> {
        &self.offset
    }

    /// Translate the subspace by `t` (the offset is re-canonicalized).
    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        let mut offset = self.offset + t;
        for b in &self.basis {
            offset -= b * b.dot(&offset);
        }
        Self { basis: self.basis.clone(), offset }
    }

    /// Orthonormal embedding into R^4: a `4 x (k+1)` matrix with orthonormal
    /// columns whose span represents the affine subspace.
    pub fn embedding(&self) -> DMatrix<f64> {
        let k = self.dim();
        let s = (1.0 + self.offset.norm_squared()).sqrt();
        let mut y = DMatrix::zeros(4, k + 1);
        for (j, b) in self.basis.iter().enumerate() {
            for i in 0..3 {
                y[(i, j)] = b[i];
            }
        }
        for i in 0..3 {
            y[(i, k)] = self.offset[i] / s;
        }
        y[(3, k)] = 1.0 / s;
        y
    }
}

/// Principal angles between two embedded affine subspaces, ascending, in
/// radians. Returns `min(k1, k2) + 1` angles.
///
/// Small angles come from the sine formulation (singular values of the
/// residual of the smaller embedding against the other's projector), large
/// ones from the cosine formulation; `acos` alone would lose half the
/// significant digits near zero.
pub fn principal_angles(a: &AffineSubspace, b: &AffineSubspace) -> Vec<f64> {
    let ya = a.embedding();
    let yb = b.embedding();
    let m = ya.transpose() * &yb;
    let mut cosines: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    cosines.sort_by(|x, y| y.total_cmp(x));

    let (small, big) = if ya.ncols() <= yb.ncols() { (&ya, &yb) } else { (&yb, &ya) };
    let resid = small - big * (big.transpose() * small);
    let mut sines: Vec<f64> = resid.svd(false, false).singular_values.iter().copied().collect();
    sines.sort_by(f64::total_cmp);

    cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            if c * c > 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.clamp(0.0, 1.0).acos()
            }
        })
        .collect()
}

/// Distance on the affine Grassmannian: the 2-norm of the principal-angle
/// vector between the embeddings. A pseudometric: zero iff the subspaces
/// coincide (for equal dimensions).
pub fn graff_distance(a: &AffineSubspace, b: &AffineSubspace) -> f64 {
    principal_angles(a, b).iter().map(|t| t * t).sum::<f64>().sqrt()
}
