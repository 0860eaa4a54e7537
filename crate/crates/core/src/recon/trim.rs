//! Endpoint trimming: reduce an infinite optimized line to a finite segment
//! supported by its 2D observations.
//!
//! Each observed endpoint is swept into a short perpendicular 2D segment,
//! back-projected to a plane, and intersected with the 3D line; the
//! intersection parameters of all observations are clustered along the line
//! and the two dominant clusters vote for the segment extent.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::{Point2, Point3};

use super::ReconError;
use crate::camera::{CameraPose, Intrinsics};
use crate::detect::LineSegment2D;
use crate::geom::{backproject_segment, PluckerLine};

/// Half-length, in pixels, of the synthetic perpendicular segment swept at
/// each observed endpoint.
const PERP_HALF_LEN_PX: f64 = 10.0;

/// Intersection parameter of `line` with the plane that back-projects the
/// perpendicular of `seg` at `endpoint`; `None` when the plane is parallel
/// to the line or degenerate.
fn endpoint_param(
    line: &PluckerLine,
    seg: &LineSegment2D,
    endpoint: Point2<f64>,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Option<f64> {
    let dir = seg.direction();
    let perp = nalgebra::Vector2::new(-dir.y, dir.x) * PERP_HALF_LEN_PX;
    let cross = LineSegment2D::new(endpoint - perp, endpoint + perp);
    let plane = backproject_segment(&cross, pose, intr).ok()?;
    let (n, d) = plane.coeffs_world();
    let denom = n.dot(&line.dir());
    if denom.abs() < 1e-9 {
        return None;
    }
    let p0 = line.closest_point_to_origin();
    Some(-(n.dot(&p0) + d) / denom)
}

/// Split sorted parameters into clusters at gaps wider than `bandwidth`.
/// Returns `(start, len)` index ranges into the sorted slice.
fn gap_clusters(sorted: &[f64], bandwidth: f64) -> Vec<(usize, usize)> {
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..sorted.len() {
        if sorted[i] - sorted[i - 1] > bandwidth {
            clusters.push((start, i - start));
            start = i;
        }
    }
    clusters.push((start, sorted.len() - start));
    clusters
}

/// Trim an infinite 3D line to the segment supported by its observations.
///
/// Every observed 2D endpoint contributes one candidate parameter along the
/// line (where the endpoint's perpendicular viewing plane cuts it).
/// Candidates are clustered with a gap threshold of `bandwidth_frac` times
/// their spread; the two most-populated clusters (ties broken toward the
/// extremes) bound the returned segment.
pub fn trim_endpoints(
    line: &PluckerLine,
    observations: &[(LineSegment2D, CameraPose)],
    intr: &Intrinsics,
    bandwidth_frac: f64,
) -> Result<[Point3<f64>; 2], ReconError> {
    let mut params: Vec<f64> = Vec::with_capacity(observations.len() * 2);
    for (seg, pose) in observations {
        for endpoint in [seg.p1, seg.p2] {
            if let Some(s) = endpoint_param(line, seg, endpoint, pose, intr) {
                params.push(s);
            }
        }
    }
    if params.is_empty() {
        return Err(ReconError::NoEndpointCandidates);
    }
    params.sort_unstable_by(f64::total_cmp);
    let spread = params[params.len() - 1] - params[0];
    let clusters = gap_clusters(&params, bandwidth_frac * spread);

    // Pick the two best-supported clusters; on ties prefer the outermost so
    // a uniformly observed line keeps its full extent.
    let mid = (clusters.len() - 1) as f64 / 2.0;
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        clusters[b]
            .1
            .cmp(&clusters[a].1)
            .then((b as f64 - mid).abs().total_cmp(&(a as f64 - mid).abs()))
            .then(a.cmp(&b))
    });
    let chosen = &order[..order.len().min(2)];
    let lo_cluster = clusters[*chosen.iter().min().unwrap()];
    let hi_cluster = clusters[*chosen.iter().max().unwrap()];
    let s_lo = params[lo_cluster.0];
    let s_hi = params[hi_cluster.0 + hi_cluster.1 - 1];
    Ok([Point3::from(line.point_at(s_lo)), Point3::from(line.point_at(s_hi))])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::look_at_pose;
    use alloc::vec;
    use nalgebra::Vector3;

    fn intr() -> Intrinsics {
        Intrinsics { fx: 400.0, fy: 400.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    fn orbit(i: usize) -> CameraPose {
        let ang = 0.3 * i as f64;
        look_at_pose(
            i as i64,
            Point3::new(8.0 * ang.cos(), 8.0 * ang.sin(), 3.0),
            Point3::origin(),
        )
    }

    fn observe(a: &Point3<f64>, b: &Point3<f64>, pose: &CameraPose) -> LineSegment2D {
        LineSegment2D::new(
            pose.project(a, &intr()).unwrap(),
            pose.project(b, &intr()).unwrap(),
        )
    }

    #[test]
    fn exact_observations_recover_exact_endpoints() {
        let a = Point3::new(-1.0, 0.4, -0.5);
        let b = Point3::new(1.2, -0.3, 0.8);
        let line = PluckerLine::from_two_points(a, b).unwrap();
        let obs: Vec<(LineSegment2D, CameraPose)> = (0..8)
            .map(|i| {
                let pose = orbit(i);
                (observe(&a, &b, &pose), pose)
            })
            .collect();
        let ends = trim_endpoints(&line, &obs, &intr(), 0.02).unwrap();
        let lo = if ends[0].x < ends[1].x { 0 } else { 1 };
        assert!((ends[lo] - a).norm() < 1e-6, "{:?}", ends);
        assert!((ends[1 - lo] - b).norm() < 1e-6);
    }

    #[test]
    fn truncated_views_do_not_shrink_the_majority_extent() {
        let a = Point3::new(-1.5, 0.0, 0.0);
        let b = Point3::new(1.5, 0.0, 0.0);
        let line = PluckerLine::from_two_points(a, b).unwrap();
        let mut obs = Vec::new();
        for i in 0..9 {
            let pose = orbit(i);
            if i % 4 == 3 {
                // A third of the views see only the middle half.
                let a2 = Point3::new(-0.75, 0.0, 0.0);
                let b2 = Point3::new(0.75, 0.0, 0.0);
                obs.push((observe(&a2, &b2, &pose), pose));
            } else {
                obs.push((observe(&a, &b, &pose), pose));
            }
        }
        let ends = trim_endpoints(&line, &obs, &intr(), 0.02).unwrap();
        let len = (ends[0] - ends[1]).norm();
        assert!((len - 3.0).abs() < 1e-6, "length {len}");
    }

    #[test]
    fn single_observation_uses_its_own_extent() {
        let a = Point3::new(0.0, -1.0, 0.2);
        let b = Point3::new(0.0, 1.0, 0.2);
        let line = PluckerLine::from_two_points(a, b).unwrap();
        let pose = orbit(0);
        let obs = vec![(observe(&a, &b, &pose), pose)];
        let ends = trim_endpoints(&line, &obs, &intr(), 0.02).unwrap();
        let len = (ends[0] - ends[1]).norm();
        assert!((len - 2.0).abs() < 1e-6, "length {len}");
    }

    #[test]
    fn line_parallel_to_all_planes_yields_error() {
        // A segment whose image is a single point gives no usable planes:
        // use a line through the camera center so every perpendicular plane
        // contains the line direction. Simpler: no observations at all.
        let line = PluckerLine::from_point_dir(
            Point3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(matches!(
            trim_endpoints(&line, &[], &intr(), 0.02),
            Err(ReconError::NoEndpointCandidates)
        ));
    }
}
