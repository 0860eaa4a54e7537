//! Duplicate-line suppression by density clustering.
//!
//! Tracks broken by occlusion or detection gaps often triangulate to nearly
//! the same 3D line. Candidates are clustered in a scale-free feature space
//! (direction angle, center offset over the scene diameter, disparity
//! difference times the scene diameter) and each cluster keeps its longest
//! member.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Point2, Vector3};

use super::triangulate::ray_line_transfer;
use super::{LineHypothesis, ReconConfig};
use crate::camera::{CameraPose, Intrinsics};
use crate::detect::LineSegment2D;

/// A triangulated line dressed with the context clustering and trimming
/// need: its track, a rough support extent, and the clustering features.
#[derive(Debug, Clone, PartialEq)]
pub struct LineCandidate {
    pub track_idx: usize,
    pub hypothesis: LineHypothesis,
    /// Rough extent of the observed support, as parameters along the line.
    pub extent: (f64, f64),
    /// Point of the line closest to the trajectory centroid.
    pub center: Vector3<f64>,
    /// Inverse distance from the trajectory centroid to the line.
    pub disparity: f64,
}

impl LineCandidate {
    /// Derive features from the inlier views: the extent comes from
    /// transferring observed endpoints onto the line along their rays.
    pub fn new(
        track_idx: usize,
        hypothesis: LineHypothesis,
        views: &[(&LineSegment2D, &CameraPose)],
        intr: &Intrinsics,
        trajectory_centroid: &Vector3<f64>,
    ) -> Self {
        let line = &hypothesis.line;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &hypothesis.inliers {
            let Some(&(seg, pose)) = views.get(v) else { continue };
            for px in [seg.p1, seg.p2] {
                if let Some(p) = ray_line_transfer(Point2::new(px.x, px.y), pose, intr, line) {
                    let s = line.param_of(&p);
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 0.0);
        }
        let center = line.closest_point_to(trajectory_centroid);
        let dist = (center - trajectory_centroid).norm();
        Self {
            track_idx,
            hypothesis,
            extent: (lo, hi),
            center,
            disparity: 1.0 / dist.max(1e-9),
        }
    }

    pub fn extent_length(&self) -> f64 {
        self.extent.1 - self.extent.0
    }
}

/// Feature-space distance between two candidates.
fn feature_distance(a: &LineCandidate, b: &LineCandidate, scene_diameter: f64) -> f64 {
    let diam = scene_diameter.max(1e-9);
    let cosang = a
        .hypothesis
        .line
        .dir()
        .dot(&b.hypothesis.line.dir())
        .abs()
        .min(1.0);
    let d_dir = cosang.acos();
    let d_center = (a.center - b.center).norm() / diam;
    let d_disp = (a.disparity - b.disparity).abs() * diam;
    (d_dir * d_dir + d_center * d_center + d_disp * d_disp).sqrt()
}

/// Cluster candidates by density in the feature space and keep the longest
/// member of each cluster. Points in no dense neighbourhood survive as
/// their own cluster (a unique line is not a duplicate). Output keeps the
/// input's track order.
pub fn dedup_lines(
    candidates: Vec<LineCandidate>,
    scene_diameter: f64,
    cfg: &ReconConfig,
) -> Vec<LineCandidate> {
    let n = candidates.len();
    if n == 0 {
        return candidates;
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    feature_distance(&candidates[i], &candidates[j], scene_diameter)
                        <= cfg.dedup_eps
                })
                .collect()
        })
        .collect();
    // Density clustering: core points (dense neighbourhoods) chain through
    // shared neighbours; border points attach to the first cluster that
    // reaches them; everything else stays singleton.
    const UNSET: usize = usize::MAX;
    let mut label = vec![UNSET; n];
    let mut next = 0usize;
    for i in 0..n {
        if label[i] != UNSET || neighbours[i].len() < cfg.dedup_min_pts {
            continue;
        }
        let cluster = next;
        next += 1;
        label[i] = cluster;
        let mut queue = neighbours[i].clone();
        while let Some(j) = queue.pop() {
            if label[j] != UNSET {
                continue;
            }
            label[j] = cluster;
            if neighbours[j].len() >= cfg.dedup_min_pts {
                queue.extend(neighbours[j].iter().copied());
            }
        }
    }
    for l in label.iter_mut() {
        if *l == UNSET {
            *l = next;
            next += 1;
        }
    }
    // Longest extent wins per cluster; ties fall to the earlier candidate.
    let mut winner: Vec<Option<usize>> = vec![None; next];
    for (i, c) in candidates.iter().enumerate() {
        let slot = &mut winner[label[i]];
        match slot {
            Some(w) if candidates[*w].extent_length() >= c.extent_length() => {}
            _ => *slot = Some(i),
        }
    }
    let mut keep: Vec<usize> = winner.into_iter().flatten().collect();
    keep.sort_unstable();
    let mut out = Vec::with_capacity(keep.len());
    let mut cands = candidates;
    for &i in keep.iter().rev() {
        out.push(cands.swap_remove(i));
    }
    out.reverse();
    out
}
