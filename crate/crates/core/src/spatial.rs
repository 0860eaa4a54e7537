//! Exact nearest-neighbour queries over 3D point sets via a uniform hash
//! grid.
//!
//! The grid buckets points into cubic cells and answers queries by scanning
//! Chebyshev shells of cells outward from the query. A shell at ring `r`
//! can only hold points at distance `(r - 1) * cell` or more, so once the
//! completed rings guarantee that bound exceeds the best candidate the
//! search is provably exact — results match a brute-force scan bit for bit,
//! including index tie-breaking.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::Point3;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("cell size must be positive and finite, got {0}")]
    BadCell(f64),
    #[error("point coordinates must be finite (index {0})")]
    BadPoint(usize),
}

/// Uniform grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    points: Vec<Point3<f64>>,
    buckets: BTreeMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl PointGrid {
    /// Build with an explicit cell size.
    pub fn build(points: &[Point3<f64>], cell: f64) -> Result<Self, SpatialError> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(SpatialError::BadCell(cell));
        }
        let mut buckets: BTreeMap<[i64; 3], Vec<u32>> = BTreeMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(SpatialError::BadPoint(i));
            }
            let key = cell_of(p, cell);
            for k in 0..3 {
                lo[k] = lo[k].min(key[k]);
                hi[k] = hi[k].max(key[k]);
            }
            buckets.entry(key).or_default().push(i as u32);
        }
        Ok(Self { cell, points: points.to_vec(), buckets, lo, hi })
    }

    /// Build with a cell size derived from the bounding box so that cells
    /// hold a handful of points on average.
    pub fn build_auto(points: &[Point3<f64>]) -> Result<Self, SpatialError> {
        if points.is_empty() {
            return Self::build(points, 1.0);
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let vol: f64 = (0..3).map(|k| (hi[k] - lo[k]).max(1e-9)).product();
        let cell = (vol / points.len() as f64).cbrt().max(1e-9);
        Self::build(points, cell)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Exact nearest neighbour: `(index, distance)`, ties by lowest index.
    /// `None` on an empty set.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let qc = cell_of(q, self.cell);
        // First ring that can intersect the occupied bounding box.
        let r_start: i64 = (0..3)
            .map(|k| (self.lo[k] - qc[k]).max(qc[k] - self.hi[k]).max(0))
            .max()
            .unwrap_or(0);
        let r_end: i64 = (0..3)
            .map(|k| (self.hi[k] - qc[k]).max(qc[k] - self.lo[k]).max(0))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        for r in r_start..=r_end {
            if let Some((_, d)) = best {
                // Everything in ring r sits at least (r - 1) * cell away.
                if (r - 1) as f64 * self.cell > d {
                    break;
                }
            }
            self.for_ring(qc, r, |idx| {
                let d = (self.points[idx] - q).norm();
                best = match best {
                    Some((bi, bd)) if bd.total_cmp(&d).then(bi.cmp(&idx)).is_le() => {
                        Some((bi, bd))
                    }
                    _ => Some((idx, d)),
                };
            });
        }
        best
    }

    /// Indices of all points within `radius` (inclusive), ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() || !(radius >= 0.0) {
            return out;
        }
        let lo = cell_of(&Point3::new(q.x - radius, q.y - radius, q.z - radius), self.cell);
        let hi = cell_of(&Point3::new(q.x + radius, q.y + radius, q.z + radius), self.cell);
        for cx in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for cy in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for cz in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    if let Some(b) = self.buckets.get(&[cx, cy, cz]) {
                        for &i in b {
                            if (self.points[i as usize] - q).norm() <= radius {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Visit every point bucketed in the Chebyshev ring at distance `r`
    /// from `center`, restricted to the occupied bounding box.
    fn for_ring(&self, center: [i64; 3], r: i64, mut visit: impl FnMut(usize)) {
        let lo = [center[0] - r, center[1] - r, center[2] - r];
        let hi = [center[0] + r, center[1] + r, center[2] + r];
        for cx in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for cy in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for cz in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    let on_ring = (cx - center[0]).abs() == r
                        || (cy - center[1]).abs() == r
                        || (cz - center[2]).abs() == r;
                    if !on_ring {
                        continue;
                    }
                    if let Some(b) = self.buckets.get(&[cx, cy, cz]) {
                        for &i in b {
                            visit(i as usize);
                        }
                    }
                }
            }
        }
    }
}

fn cell_of(p: &Point3<f64>, cell: f64) -> [i64; 3] {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

/// Brute-force nearest neighbour with the same tie-breaking as the grid.
pub fn nearest_brute(points: &[Point3<f64>], q: &Point3<f64>) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - q).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}
