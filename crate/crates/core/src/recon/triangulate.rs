//! Two-view line triangulation and RANSAC consensus over a track.
//!
//! A pair of 2D detections back-projects to a pair of viewing planes whose
//! intersection is the candidate 3D line. Every view of the track scores the
//! candidate through the subspace residual plus four auxiliary geometric
//! gates; the best candidate is polished by Gauss-Newton over its inlier
//! views.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use nalgebra::{Matrix4, Point2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LineHypothesis, ReconConfig, ReconError};
use crate::camera::{CameraPose, Intrinsics};
use crate::detect::{Detection, LineSegment2D};
use crate::geom::{
    backproject_point_ray, backproject_segment, image_line_distance, line_obs_residual,
    line_obs_residual_jacobian, project_line, residual_cost, LineAnchor, PluckerLine, PoseAnchor,
    PARAMS_PER_LINE,
};
use crate::matching::LineTrack;

/// Intersect the viewing planes of two detections of the same line.
pub fn triangulate_pair(
    l_p: &LineSegment2D,
    pose_p: &CameraPose,
    l_q: &LineSegment2D,
    pose_q: &CameraPose,
    intr: &Intrinsics,
) -> Result<PluckerLine, ReconError> {
    let vp = backproject_segment(l_p, pose_p, intr)?;
    let vq = backproject_segment(l_q, pose_q, intr)?;
    let (n1, d1) = vp.coeffs_world();
    let (n2, d2) = vq.coeffs_world();
    // Planes n . x + d = 0 meet in the line with direction n1 x n2 and
    // moment d1 n2 - d2 n1 (both scale with the same factor).
    let dir = n1.cross(&n2);
    if dir.norm() < 1e-6 {
        return Err(ReconError::DegeneratePair(dir.norm()));
    }
    let moment = n2.into_inner() * d1 - n1.into_inner() * d2;
    Ok(PluckerLine::from_raw(dir, moment)?)
}

/// Subspace-residual cost of one view against a candidate line, or `None`
/// when the observation is degenerate.
pub fn view_inlier_cost(
    line: &PluckerLine,
    seg: &LineSegment2D,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Option<f64> {
    let vp = backproject_segment(seg, pose, intr).ok()?;
    let r = line_obs_residual(
        &LineAnchor::from_plucker(line),
        &[0.0; 4],
        &PoseAnchor::from_pose(pose),
        &[0.0; 6],
        &vp.basis_cam,
    );
    Some(residual_cost(&r))
}

/// The four auxiliary gates a view must pass besides the subspace cost:
/// direction-in-plane angle, projected-vs-detected angle, endpoint
/// perpendicular distance, and ray-transfer reprojection distance.
fn aux_gates_pass(
    line: &PluckerLine,
    seg: &LineSegment2D,
    pose: &CameraPose,
    intr: &Intrinsics,
    cfg: &ReconConfig,
) -> bool {
    let Ok(vp) = backproject_segment(seg, pose, intr) else {
        return false;
    };
    // 3D angle: the line direction must lie in the viewing plane.
    let n = vp.normal_world();
    let sin_out = line.dir().dot(&n).abs().min(1.0);
    if sin_out.asin().to_degrees() > cfg.aux_angle_3d_deg {
        return false;
    }
    // 2D angle and perpendicular distance against the projected line.
    let Ok(l) = project_line(line, pose, intr) else {
        return false;
    };
    // (a, b) is unit, so the in-image line direction (-b, a) is too.
    let seg_dir = seg.direction();
    let cosang = (-l.1 * seg_dir.x + l.0 * seg_dir.y).abs().min(1.0);
    if cosang.acos().to_degrees() > cfg.aux_angle_2d_deg {
        return false;
    }
    let perp = image_line_distance(l, seg.p1).abs().max(image_line_distance(l, seg.p2).abs());
    if perp > cfg.aux_perp_px {
        return false;
    }
    // Perspective: transfer each endpoint onto the 3D line along its viewing
    // ray and measure the reprojection displacement.
    for px in [seg.p1, seg.p2] {
        let Some(on_line) = ray_line_transfer(px, pose, intr, line) else {
            return false;
        };
        let Some(back) = pose.project(&on_line.into(), intr) else {
            return false;
        };
        if (back - px).norm() > cfg.aux_perspective_px {
            return false;
        }
    }
    true
}

/// Point of `line` closest to the viewing ray of `px`; `None` when the ray
/// runs parallel to the line.
pub(super) fn ray_line_transfer(
    px: Point2<f64>,
    pose: &CameraPose,
    intr: &Intrinsics,
    line: &PluckerLine,
) -> Option<Vector3<f64>> {
    let d1 = backproject_point_ray(px, pose, intr).into_inner();
    let p1 = pose.center();
    let d2 = line.dir().into_inner();
    let p2 = line.closest_point_to_origin();
    let w0 = p1 - p2;
    let b = d1.dot(&d2);
    let denom = 1.0 - b * b;
    if denom < 1e-12 {
        return None;
    }
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let t = (b * e - d) / denom;
    let s = e + t * b;
    Some(p2 + d2 * s)
}

/// Gather `(segment, pose)` observation views of a track.
pub(super) fn track_views<'a>(
    track: &LineTrack,
    frames: &'a [Vec<Detection>],
    poses: &'a [CameraPose],
) -> Result<Vec<(&'a LineSegment2D, &'a CameraPose)>, ReconError> {
    track
        .observations
        .iter()
        .map(|&(f, d)| {
            let seg = frames
                .get(f)
                .and_then(|dets| dets.get(d))
                .ok_or(ReconError::BadObservation { frame: f, det: d })?;
            let pose = poses.get(f).ok_or(ReconError::BadObservation { frame: f, det: d })?;
            Ok((&seg.segment, pose))
        })
        .collect()
}

/// TEMP DEBUG: per-view cost and gate values for the best candidate.
pub fn debug_view_costs(
    track: &LineTrack,
    frames: &[Vec<Detection>],
    poses: &[CameraPose],
    intr: &Intrinsics,
    cfg: &ReconConfig,
    seed: u64,
) {
    let views = track_views(track, frames, poses).unwrap();
    let n = views.len();
    let pairs: Vec<(usize, usize)> = if n <= cfg.exhaustive_pairs_below {
        (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.max_pairs)
            .map(|_| {
                let p = rng.gen_range(0..n);
                let mut q = rng.gen_range(0..n - 1);
                if q >= p {
                    q += 1;
                }
                (p.min(q), p.max(q))
            })
            .collect()
    };
    let mut best: Option<(usize, PluckerLine)> = None;
    for (p, q) in pairs {
        let Ok(cand) = triangulate_pair(views[p].0, views[p].1, views[q].0, views[q].1, intr)
        else {
            continue;
        };
        let mut count = 0;
        for &(seg, pose) in views.iter() {
            if let Some(cost) = view_inlier_cost(&cand, seg, pose, intr) {
                if cost <= cfg.graff_thresh && aux_gates_pass(&cand, seg, pose, intr, cfg) {
                    count += 1;
                }
            }
        }
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, cand));
        }
    }
    let Some((count, line)) = best else {
        std::eprintln!("  no valid pair");
        return;
    };
    std::eprintln!("  best candidate inliers {count}/{n}");
    for (v, &(seg, pose)) in views.iter().enumerate() {
        let (f, d) = track.observations[v];
        std::eprintln!(
            "  view {v} = frame {f} det {d}: p1 ({:.1},{:.1}) p2 ({:.1},{:.1})",
            seg.p1.x, seg.p1.y, seg.p2.x, seg.p2.y
        );
        let cost = view_inlier_cost(&line, seg, pose, intr);
        let vp = backproject_segment(seg, pose, intr).ok();
        let sin_out = vp
            .as_ref()
            .map(|vp| line.dir().dot(&vp.normal_world()).abs().min(1.0).asin().to_degrees());
        let (ang2d, perp) = match project_line(&line, pose, intr) {
            Ok(l) => {
                let sd = seg.direction();
                let cosang = (-l.1 * sd.x + l.0 * sd.y).abs().min(1.0);
                let perp = image_line_distance(l, seg.p1)
                    .abs()
                    .max(image_line_distance(l, seg.p2).abs());
                (Some(cosang.acos().to_degrees()), Some(perp))
            }
            Err(_) => (None, None),
        };
        let persp = [seg.p1, seg.p2]
            .iter()
            .map(|&px| {
                ray_line_transfer(px, pose, intr, &line)
                    .and_then(|ol| pose.project(&ol.into(), intr).map(|b| (b - px).norm()))
            })
            .collect::<Vec<_>>();
        std::eprintln!(
            "  view {v}: cost {cost:?} ang3d {sin_out:?} ang2d {ang2d:?} perp {perp:?} persp {persp:?}"
        );
    }
}

/// Triangulate a track by consensus over view pairs, then refine over the
/// inliers. The returned inliers index into the track's observations.
pub fn ransac_triangulate(
    track: &LineTrack,
    frames: &[Vec<Detection>],
    poses: &[CameraPose],
    intr: &Intrinsics,
    cfg: &ReconConfig,
    seed: u64,
) -> Result<LineHypothesis, ReconError> {
    let views = track_views(track, frames, poses)?;
    let n = views.len();
    if n < 2 {
        return Err(ReconError::TooFewViews(n));
    }

    let pairs: Vec<(usize, usize)> = if n <= cfg.exhaustive_pairs_below {
        (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.max_pairs)
            .map(|_| {
                let p = rng.gen_range(0..n);
                let mut q = rng.gen_range(0..n - 1);
                if q >= p {
                    q += 1;
                }
                (p.min(q), p.max(q))
            })
            .collect()
    };

    let mut best: Option<LineHypothesis> = None;
    for (p, q) in pairs {
        let Ok(cand) = triangulate_pair(views[p].0, views[p].1, views[q].0, views[q].1, intr)
        else {
            continue;
        };
        let mut inliers = Vec::new();
        let mut score = 0.0;
        for (v, &(seg, pose)) in views.iter().enumerate() {
            let Some(cost) = view_inlier_cost(&cand, seg, pose, intr) else {
                continue;
            };
            if cost <= cfg.graff_thresh && aux_gates_pass(&cand, seg, pose, intr, cfg) {
                inliers.push(v);
                score += cost;
            }
        }
        let better = match &best {
            None => true,
            Some(b) => {
                inliers.len() > b.inliers.len()
                    || (inliers.len() == b.inliers.len() && score < b.score)
            }
        };
        if better {
            best = Some(LineHypothesis { line: cand, source_views: (p, q), inliers, score });
        }
    }

    let mut hyp = best.ok_or(ReconError::NoValidPair)?;
    if hyp.inliers.len() < cfg.min_inliers {
        return Err(ReconError::TooFewInliers {
            got: hyp.inliers.len(),
            needed: cfg.min_inliers,
        });
    }

    // Polish over the inlier views (poses held fixed).
    let inlier_views: Vec<(&LineSegment2D, &CameraPose)> =
        hyp.inliers.iter().map(|&v| views[v]).collect();
    hyp.line = refine_line(&hyp.line, &inlier_views, intr)?;
    hyp.score = hyp
        .inliers
        .iter()
        .filter_map(|&v| view_inlier_cost(&hyp.line, views[v].0, views[v].1, intr))
        .sum();
    Ok(hyp)
}

/// Damped Gauss-Newton over the 4 line parameters for fixed poses.
fn refine_line(
    init: &PluckerLine,
    views: &[(&LineSegment2D, &CameraPose)],
    intr: &Intrinsics,
) -> Result<PluckerLine, ReconError> {
    let mut line = crate::geom::OrthonormalLine::from_plucker(init);
    let bases: Vec<([Vector3<f64>; 2], PoseAnchor)> = views
        .iter()
        .filter_map(|(seg, pose)| {
            backproject_segment(seg, pose, intr)
                .ok()
                .map(|vp| (vp.basis_cam, PoseAnchor::from_pose(pose)))
        })
        .collect();
    if bases.is_empty() {
        return Ok(*init);
    }
    let eval = |l: &crate::geom::OrthonormalLine| -> f64 {
        let anchor = LineAnchor::from_orthonormal(l);
        bases
            .iter()
            .map(|(b, pa)| residual_cost(&line_obs_residual(&anchor, &[0.0; 4], pa, &[0.0; 6], b)))
            .sum()
    };
    let mut cost = eval(&line);
    let mut mu = 1e-6;
    for _ in 0..20 {
        let anchor = LineAnchor::from_orthonormal(&line);
        let mut h = Matrix4::<f64>::zeros();
        let mut g = Vector4::<f64>::zeros();
        for (b, pa) in &bases {
            let (r, jac) = line_obs_residual_jacobian(&anchor, pa, b);
            for i in 0..r.len() {
                for a in 0..PARAMS_PER_LINE {
                    g[a] += jac[i][a] * r[i];
                    for c in 0..PARAMS_PER_LINE {
                        h[(a, c)] += jac[i][a] * jac[i][c];
                    }
                }
            }
        }
        let mut accepted = false;
        for _ in 0..8 {
            let mut damped = h;
            for a in 0..PARAMS_PER_LINE {
                damped[(a, a)] += mu * (1.0 + h[(a, a)]);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                mu *= 10.0;
                continue;
            };
            let trial = line.retract(&Vector3::new(step[0], step[1], step[2]), step[3]);
            let trial_cost = eval(&trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                line = trial;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < 1e-12 || step.norm() < 1e-12 {
                    return Ok(line.to_plucker()?);
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(line.to_plucker()?)
}
