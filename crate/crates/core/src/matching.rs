//! Cross-frame association of 2D line detections into tracks.
//!
//! Matching runs in two layers. `local_match` pairs detections between two
//! frames by mutual nearest neighbour under the symmetric perpendicular
//! distance, gated by distance and angle. Candidate pairs are then verified
//! against two-view epipolar geometry (`epipolar_score`), and verified pairs
//! are fused into frame-disjoint tracks with a union-find. A second pass
//! (`global_merge`) joins tracks of the same 3D line that were broken by
//! detection gaps, comparing sampled representative observations.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::camera::{CameraPose, Intrinsics};
use crate::detect::{perpendicular_distance, segment_angle_between, Detection, LineSegment2D};
use crate::geom::backproject_segment;

/// Matching thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchConfig {
    /// Perpendicular-distance gate for local matches (px).
    pub max_dist: f64,
    /// Angle gate for local matches (degrees).
    pub max_angle_deg: f64,
    /// Each frame is matched against this many nearest frames by camera
    /// center distance.
    pub neighbor_frames: usize,
    /// Points sampled along a segment for epipolar scoring.
    pub epipolar_samples: usize,
    /// A sample passes when its epipolar line comes within this distance of
    /// the other segment (px).
    pub epipolar_tol_px: f64,
    /// Minimum symmetrized epipolar score for a pair to be accepted.
    pub score_thresh: f64,
    /// Stride for sampling representative observations during track merging.
    pub merge_stride: usize,
    /// Representative pairs that must pass for two tracks to merge.
    pub min_pairs: usize,
    /// Tracks with fewer observations are rejected.
    pub min_track_len: usize,
    /// Coplanarity gate: observations join a track only while the track's
    /// viewing planes stay within this pencil ratio of a common 3D line.
    pub pencil_tol: f64,
    /// Minimum fractional overlap of the two segments' extents along the
    /// carrier (relative to the shorter one) for a local match.
    pub overlap_min: f64,
    /// Local matching only links frames at most this far apart in time;
    /// associating across longer detection gaps is `global_merge`'s job,
    /// where the verification has enough baseline to be meaningful.
    pub max_frame_gap: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_dist: 8.0,
            max_angle_deg: 10.0,
            neighbor_frames: 20,
            epipolar_samples: 10,
            epipolar_tol_px: 2.0,
            score_thresh: 0.3,
            merge_stride: 5,
            min_pairs: 2,
            min_track_len: 4,
            pencil_tol: 0.05,
            overlap_min: 0.3,
            max_frame_gap: 5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("got {frames} detection frames but {poses} poses")]
    FrameMismatch { frames: usize, poses: usize },
    #[error("epipolar geometry is undefined for a zero baseline")]
    ZeroBaseline,
}

/// Lifecycle of a track: growing, finished, or discarded as too short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TrackStatus {
    Active,
    Closed,
    Rejected,
}

/// A tracked 2D line: observations are `(frame index, detection index)`
/// pairs, at most one per frame, sorted by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineTrack {
    pub track_id: usize,
    pub observations: Vec<(usize, usize)>,
    pub status: TrackStatus,
}

impl LineTrack {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.observations.iter().map(|&(f, _)| f)
    }
}

/// Fraction of the shorter segment's extent shared with the other along the
/// first segment's carrier. Distinguishes co-carrier segments covering
/// different spans, which perpendicular distance cannot.
fn carrier_overlap(a: &LineSegment2D, b: &LineSegment2D) -> f64 {
    let d = a.direction();
    let (s1, s2) = ((b.p1 - a.p1).dot(&d), (b.p2 - a.p1).dot(&d));
    let (blo, bhi) = (s1.min(s2), s1.max(s2));
    let ov = (bhi.min(a.length()) - blo.max(0.0)).max(0.0);
    ov / a.length().min(b.length()).max(1e-12)
}

/// Mutual-nearest-neighbour matches between two detection lists, gated by
/// perpendicular distance, angle, and carrier overlap. Returns index pairs
/// `(i, j)`.
pub fn local_match(a: &[Detection], b: &[Detection], cfg: &MatchConfig) -> Vec<(usize, usize)> {
    let best = |from: &[Detection], to: &[Detection]| -> Vec<Option<usize>> {
        from.iter()
            .map(|da| {
                let mut arg = None;
                let mut min = f64::INFINITY;
                for (j, db) in to.iter().enumerate() {
                    let ang = segment_angle_between(&da.segment, &db.segment).to_degrees();
                    if ang > cfg.max_angle_deg {
                        continue;
                    }
                    if carrier_overlap(&da.segment, &db.segment) < cfg.overlap_min {
                        continue;
                    }
                    let Ok(d) = perpendicular_distance(&da.segment, &db.segment) else {
                        continue;
                    };
                    if d <= cfg.max_dist && d < min {
                        min = d;
                        arg = Some(j);
                    }
                }
                arg
            })
            .collect()
    };
    let fwd = best(a, b);
    let back = best(b, a);
    fwd.iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = (*j)?;
            (back[j] == Some(i)).then_some((i, j))
        })
        .collect()
}

/// Fundamental matrix mapping pixels of view `a` to epipolar lines in view
/// `b`, or `None` when the baseline vanishes. Frobenius-normalized.
pub fn fundamental_matrix(
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    intr: &Intrinsics,
) -> Option<Matrix3<f64>> {
    let r = pose_b.rotation.inverse().to_rotation_matrix() * pose_a.rotation.to_rotation_matrix();
    let t = pose_b.rotation.inverse() * (pose_a.center() - pose_b.center());
    if t.norm() < 1e-9 {
        return None;
    }
    let tx = Matrix3::new(
        0.0, -t.z, t.y, //
        t.z, 0.0, -t.x, //
        -t.y, t.x, 0.0,
    );
    let e = tx * r.matrix();
    let k_inv = intr.matrix().try_inverse()?;
    let f = k_inv.transpose() * e * k_inv;
    Some(f / f.norm())
}

/// Fraction of points sampled on `seg_a` whose epipolar lines in view `b`
/// pass within `epipolar_tol_px` of `seg_b`, symmetrized by taking the
/// minimum of both directions.
pub fn epipolar_score(
    seg_a: &LineSegment2D,
    seg_b: &LineSegment2D,
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    intr: &Intrinsics,
    cfg: &MatchConfig,
) -> Result<f64, MatchError> {
    let f_ab = fundamental_matrix(pose_a, pose_b, intr).ok_or(MatchError::ZeroBaseline)?;
    let one_way = |seg_from: &LineSegment2D, seg_to: &LineSegment2D, f: &Matrix3<f64>| -> f64 {
        let n = cfg.epipolar_samples.max(2);
        let mut pass = 0usize;
        for k in 0..n {
            let t = k as f64 / (n - 1) as f64;
            let p = seg_from.p1 + (seg_from.p2 - seg_from.p1) * t;
            let l = f * Vector3::new(p.x, p.y, 1.0);
            let scale = (l.x * l.x + l.y * l.y).sqrt();
            if scale < 1e-15 {
                continue;
            }
            let v1 = (l.x * seg_to.p1.x + l.y * seg_to.p1.y + l.z) / scale;
            let v2 = (l.x * seg_to.p2.x + l.y * seg_to.p2.y + l.z) / scale;
            let dist = if v1 * v2 <= 0.0 { 0.0 } else { v1.abs().min(v2.abs()) };
            if dist <= cfg.epipolar_tol_px {
                pass += 1;
            }
        }
        pass as f64 / n as f64
    };
    let s_ab = one_way(seg_a, seg_b, &f_ab);
    let s_ba = one_way(seg_b, seg_a, &f_ab.transpose());
    Ok(s_ab.min(s_ba))
}

/// Normalized world-plane vector `(n, -n·c)` of an observation's viewing
/// plane, or `None` for degenerate segments.
fn view_plane_vec(
    seg: &LineSegment2D,
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Option<Vector4<f64>> {
    let vp = backproject_segment(seg, pose, intr).ok()?;
    let n = vp.normal_world();
    let c = pose.center();
    let v = Vector4::new(n.x, n.y, n.z, -n.dot(&c));
    let norm = v.norm();
    (norm > 1e-12).then(|| v / norm)
}

/// Rank-2 violation of a set of normalized plane vectors. Viewing planes of
/// one 3D line form a pencil, so with noise-free observations the third
/// singular value vanishes; the ratio to the first is scale-free. Fewer than
/// three planes are vacuously a pencil.
fn pencil_ratio(planes: &[Vector4<f64>]) -> f64 {
    if planes.len() < 3 {
        return 0.0;
    }
    let mut gram = Matrix4::zeros();
    for v in planes {
        gram += v * v.transpose();
    }
    let eig = gram.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 {
        return 0.0;
    }
    (ev[2] / ev[0]).sqrt()
}

/// Up to `cap` evenly strided plane vectors from a member list.
fn strided_planes(
    members: &[usize],
    planes: &[Option<Vector4<f64>>],
    cap: usize,
    out: &mut Vec<Vector4<f64>>,
) {
    let take = cap.min(members.len());
    for k in 0..take {
        if let Some(v) = planes[members[k * members.len() / take]] {
            out.push(v);
        }
    }
}

/// Union-find whose components never contain two observations from the same
/// frame; a union that would violate that is refused.
struct FrameDisjointForest {
    parent: Vec<usize>,
    frames: Vec<Option<BTreeSet<usize>>>,
    members: Vec<Option<Vec<usize>>>,
}

impl FrameDisjointForest {
    fn new(node_frames: &[usize]) -> Self {
        Self {
            parent: (0..node_frames.len()).collect(),
            frames: node_frames.iter().map(|&f| Some(BTreeSet::from([f]))).collect(),
            members: (0..node_frames.len()).map(|i| Some(vec![i])).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Member nodes of a component; `root` must be a root.
    fn root_members(&self, root: usize) -> &[usize] {
        self.members[root].as_deref().expect("root has members")
    }

    /// Attempt a union; false when the components share a frame.
    fn try_union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        let fa = self.frames[ra].as_ref().expect("root has frames");
        let fb = self.frames[rb].as_ref().expect("root has frames");
        if !fa.is_disjoint(fb) {
            return false;
        }
        let (big, small) = if fa.len() >= fb.len() { (ra, rb) } else { (rb, ra) };
        let moved = self.frames[small].take().expect("root has frames");
        self.frames[big].as_mut().expect("root has frames").extend(moved);
        let moved_members = self.members[small].take().expect("root has members");
        self.members[big].as_mut().expect("root has members").extend(moved_members);
        self.parent[small] = big;
        true
    }

    /// Would uniting `a` and `b` keep the combined viewing planes within the
    /// pencil tolerance? Two-view components are unfalsifiable and pass.
    fn union_is_coplanar(
        &mut self,
        a: usize,
        b: usize,
        planes: &[Option<Vector4<f64>>],
        tol: f64,
    ) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        let mut vs: Vec<Vector4<f64>> = Vec::new();
        strided_planes(self.root_members(ra), planes, 6, &mut vs);
        strided_planes(self.root_members(rb), planes, 6, &mut vs);
        pencil_ratio(&vs) <= tol
    }
}

/// Indices of the `k` nearest other frames by camera-center distance, ties
/// broken by index.
fn nearest_frames(poses: &[CameraPose], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = poses
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| ((p.center() - poses[i].center()).norm(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.truncate(k);
    others.into_iter().map(|(_, j)| j).collect()
}

/// Associate per-frame detections into tracks. Each frame is locally matched
/// against its nearest neighbour frames, matches are verified epipolarly
/// (skipped for zero-baseline pairs), and verified pairs are fused with a
/// frame-disjoint union-find. Tracks shorter than `min_track_len` are
/// rejected; survivors come back `Closed`, ordered by first observation.
pub fn build_tracks(
    frames: &[Vec<Detection>],
    poses: &[CameraPose],
    intr: &Intrinsics,
    cfg: &MatchConfig,
) -> Result<Vec<LineTrack>, MatchError> {
    if frames.len() != poses.len() {
        return Err(MatchError::FrameMismatch { frames: frames.len(), poses: poses.len() });
    }
    // Flatten to nodes.
    let mut node_of = vec![Vec::new(); frames.len()];
    let mut node_frames = Vec::new();
    let mut node_refs: Vec<(usize, usize)> = Vec::new();
    for (fi, dets) in frames.iter().enumerate() {
        for di in 0..dets.len() {
            node_of[fi].push(node_frames.len());
            node_frames.push(fi);
            node_refs.push((fi, di));
        }
    }
    let mut forest = FrameDisjointForest::new(&node_frames);
    let node_planes: Vec<Option<Vector4<f64>>> = node_refs
        .iter()
        .map(|&(f, d)| view_plane_vec(&frames[f][d].segment, &poses[f], intr))
        .collect();

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..frames.len() {
        for j in nearest_frames(poses, i, cfg.neighbor_frames) {
            // Local matching tracks continuity; spatially near but temporally
            // distant frames (revisits, loop ends) can put a different line
            // at the same image location, so leave those to `global_merge`.
            if i.abs_diff(j) > cfg.max_frame_gap {
                continue;
            }
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    for (i, j) in pairs {
        let f = fundamental_matrix(&poses[i], &poses[j], intr);
        for (a, b) in local_match(&frames[i], &frames[j], cfg) {
            let verified = match f {
                Some(_) => {
                    epipolar_score(
                        &frames[i][a].segment,
                        &frames[j][b].segment,
                        &poses[i],
                        &poses[j],
                        intr,
                        cfg,
                    )? >= cfg.score_thresh
                }
                // A zero baseline carries no epipolar information; trust the
                // local gates.
                None => true,
            };
            // Pairwise gates cannot falsify a line correspondence (any two
            // viewing planes meet in some 3D line), so additionally demand
            // that the united components stay consistent with one line.
            let (na, nb) = (node_of[i][a], node_of[j][b]);
            if verified && forest.union_is_coplanar(na, nb, &node_planes, cfg.pencil_tol) {
                forest.try_union(na, nb);
            }
        }
    }

    Ok(collect_tracks(&mut forest, &node_refs, cfg.min_track_len))
}

fn collect_tracks(
    forest: &mut FrameDisjointForest,
    node_refs: &[(usize, usize)],
    min_len: usize,
) -> Vec<LineTrack> {
    let mut by_root: alloc::collections::BTreeMap<usize, Vec<(usize, usize)>> =
        alloc::collections::BTreeMap::new();
    for node in 0..node_refs.len() {
        let root = forest.find(node);
        by_root.entry(root).or_default().push(node_refs[node]);
    }
    let mut groups: Vec<Vec<(usize, usize)>> = by_root.into_values().collect();
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    groups
        .into_iter()
        .filter(|g| g.len() >= min_len)
        .enumerate()
        .map(|(track_id, observations)| LineTrack {
            track_id,
            observations,
            status: TrackStatus::Closed,
        })
        .collect()
}

/// Merge tracks that observe the same 3D line but were split by detection
/// gaps. Representative observations are sampled every `merge_stride`
/// entries; two frame-disjoint tracks merge when at least `min_pairs`
/// representative cross-pairs pass the epipolar score. Re-numbers ids.
pub fn global_merge(
    tracks: &[LineTrack],
    frames: &[Vec<Detection>],
    poses: &[CameraPose],
    intr: &Intrinsics,
    cfg: &MatchConfig,
) -> Result<Vec<LineTrack>, MatchError> {
    if frames.len() != poses.len() {
        return Err(MatchError::FrameMismatch { frames: frames.len(), poses: poses.len() });
    }
    let reps: Vec<Vec<(usize, usize)>> = tracks
        .iter()
        .map(|t| t.observations.iter().copied().step_by(cfg.merge_stride.max(1)).collect())
        .collect();
    // Frame-disjoint union-find over tracks, using one node per track.
    let track_frames: Vec<BTreeSet<usize>> =
        tracks.iter().map(|t| t.frames().collect()).collect();
    let mut parent: Vec<usize> = (0..tracks.len()).collect();
    let mut frame_sets: Vec<Option<BTreeSet<usize>>> =
        track_frames.iter().map(|s| Some(s.clone())).collect();
    // Representative planes per component root, extended on union so the
    // coplanarity check always sees the whole component.
    let mut root_planes: Vec<Vec<Vector4<f64>>> = reps
        .iter()
        .map(|r| {
            r.iter()
                .filter_map(|&(f, d)| view_plane_vec(&frames[f][d].segment, &poses[f], intr))
                .collect()
        })
        .collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            if !track_frames[i].is_disjoint(&track_frames[j]) {
                continue;
            }
            let mut passing = 0usize;
            'outer: for &(fa, da) in &reps[i] {
                for &(fb, db) in &reps[j] {
                    match epipolar_score(
                        &frames[fa][da].segment,
                        &frames[fb][db].segment,
                        &poses[fa],
                        &poses[fb],
                        intr,
                        cfg,
                    ) {
                        Ok(s) if s >= cfg.score_thresh => {
                            passing += 1;
                            if passing >= cfg.min_pairs {
                                break 'outer;
                            }
                        }
                        _ => {}
                    }
                }
            }
            if passing >= cfg.min_pairs {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri == rj {
                    continue;
                }
                // Epipolar agreement is necessary but not sufficient (a
                // segment crossing its epipolar lines always passes); the
                // united components must also span a single pencil.
                let mut vs: Vec<Vector4<f64>> = Vec::new();
                for r in [&root_planes[ri], &root_planes[rj]] {
                    let take = 8.min(r.len());
                    for k in 0..take {
                        vs.push(r[k * r.len() / take]);
                    }
                }
                if pencil_ratio(&vs) > cfg.pencil_tol {
                    continue;
                }
                let fi = frame_sets[ri].as_ref().expect("root");
                let fj = frame_sets[rj].as_ref().expect("root");
                if fi.is_disjoint(fj) {
                    let (big, small) = if fi.len() >= fj.len() { (ri, rj) } else { (rj, ri) };
                    let moved = frame_sets[small].take().expect("root");
                    frame_sets[big].as_mut().expect("root").extend(moved);
                    parent[small] = big;
                    let moved_planes = core::mem::take(&mut root_planes[small]);
                    root_planes[big].extend(moved_planes);
                }
            }
        }
    }
    let mut by_root: alloc::collections::BTreeMap<usize, Vec<(usize, usize)>> =
        alloc::collections::BTreeMap::new();
    for (i, t) in tracks.iter().enumerate() {
        let root = find(&mut parent, i);
        by_root.entry(root).or_default().extend(t.observations.iter().copied());
    }
    let mut groups: Vec<Vec<(usize, usize)>> = by_root.into_values().collect();
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(track_id, observations)| LineTrack {
            track_id,
            observations,
            status: TrackStatus::Closed,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;
    use crate::synth::look_at_pose;
    use nalgebra::Point3;

    fn intr() -> Intrinsics {
        Intrinsics { fx: 200.0, fy: 200.0, cx: 160.0, cy: 120.0, width: 320, height: 240 }
    }

    fn det(x1: f64, y1: f64, x2: f64, y2: f64) -> Detection {
        Detection::bare(LineSegment2D::new(Point2::new(x1, y1), Point2::new(x2, y2)))
    }

    /// Project a world segment; panics when either endpoint is behind.
    fn project_seg(
        pose: &CameraPose,
        a: Point3<f64>,
        b: Point3<f64>,
        intr: &Intrinsics,
    ) -> LineSegment2D {
        LineSegment2D::new(
            pose.project(&a, intr).expect("in front"),
            pose.project(&b, intr).expect("in front"),
        )
    }

    #[test]
    fn local_match_pairs_shifted_segments() {
        let cfg = MatchConfig::default();
        let a = vec![det(10.0, 10.0, 60.0, 10.0), det(100.0, 50.0, 100.0, 120.0)];
        let b = vec![
            det(101.5, 50.0, 101.5, 120.0),
            det(10.0, 12.0, 60.0, 12.0),
            det(200.0, 200.0, 250.0, 200.0), // distractor
        ];
        let mut m = local_match(&a, &b, &cfg);
        m.sort_unstable();
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn local_match_respects_gates() {
        let cfg = MatchConfig::default();
        // Same carrier but 15 degrees apart: angle gate rejects.
        let a = vec![det(0.0, 0.0, 100.0, 0.0)];
        let b = vec![det(0.0, 0.0, 100.0, 100.0 * 15f64.to_radians().tan())];
        assert!(local_match(&a, &b, &cfg).is_empty());
        // Parallel but 9 px away: distance gate rejects at 8 px.
        let c = vec![det(0.0, 9.0, 100.0, 9.0)];
        assert!(local_match(&a, &c, &cfg).is_empty());
        let d = vec![det(0.0, 7.5, 100.0, 7.5)];
        assert_eq!(local_match(&a, &d, &cfg), vec![(0, 0)]);
    }

    #[test]
    fn local_match_is_mutual() {
        let cfg = MatchConfig::default();
        // Both segments of `a` prefer b[0]; only the closer one keeps it.
        let a = vec![det(0.0, 0.0, 100.0, 0.0), det(0.0, 5.0, 100.0, 5.0)];
        let b = vec![det(0.0, 1.0, 100.0, 1.0)];
        assert_eq!(local_match(&a, &b, &cfg), vec![(0, 0)]);
    }

    #[test]
    fn fundamental_matrix_annihilates_correspondences() {
        let intr = intr();
        let pa = look_at_pose(0, Point3::new(10.0, 0.0, 2.0), Point3::origin());
        let pb = look_at_pose(1, Point3::new(9.0, 3.0, 1.5), Point3::origin());
        let f = fundamental_matrix(&pa, &pb, &intr).expect("nonzero baseline");
        for p in [
            Point3::new(0.5, -0.3, 0.8),
            Point3::new(-1.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.5),
            Point3::new(2.0, -1.0, -0.5),
        ] {
            let xa = pa.project(&p, &intr).unwrap();
            let xb = pb.project(&p, &intr).unwrap();
            let va = Vector3::new(xa.x, xa.y, 1.0);
            let vb = Vector3::new(xb.x, xb.y, 1.0);
            assert!((vb.dot(&(f * va))).abs() < 1e-9, "constraint violated for {p:?}");
        }
        // Pure rotation: no fundamental matrix.
        let pc = CameraPose { t_us: 2, rotation: pb.rotation, translation: pa.translation };
        assert_eq!(fundamental_matrix(&pa, &pc, &intr), None);
    }

    #[test]
    fn epipolar_score_separates_true_and_false_pairs() {
        let intr = intr();
        let cfg = MatchConfig::default();
        let pa = look_at_pose(0, Point3::new(10.0, 0.0, 2.0), Point3::origin());
        let pb = look_at_pose(1, Point3::new(8.0, 5.0, 3.0), Point3::origin());
        let (la, lb) = (Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 0.5, 1.0));
        let sa = project_seg(&pa, la, lb, &intr);
        let sb = project_seg(&pb, la, lb, &intr);
        let s_true = epipolar_score(&sa, &sb, &pa, &pb, &intr, &cfg).unwrap();
        assert!(s_true > 0.9, "true pair scored {s_true}");
        // A different line, well separated in space.
        let (ma, mb) = (Point3::new(-1.0, 1.5, -1.5), Point3::new(1.5, -1.5, -1.0));
        let sc = project_seg(&pb, ma, mb, &intr);
        let s_false = epipolar_score(&sa, &sc, &pa, &pb, &intr, &cfg).unwrap();
        assert!(s_false < cfg.score_thresh, "false pair scored {s_false}");
        // Zero baseline errors.
        let pc = CameraPose { t_us: 2, ..pa };
        assert_eq!(
            epipolar_score(&sa, &sb, &pa, &pc, &intr, &cfg),
            Err(MatchError::ZeroBaseline)
        );
    }

    /// Six orbit views of two 3D segments, one spurious detection: two
    /// tracks of length 6, the spur is dropped.
    #[test]
    fn build_tracks_follows_lines_across_frames() {
        let intr = intr();
        let cfg = MatchConfig::default();
        let lines = [
            (Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, -0.5, 1.2)),
            (Point3::new(0.5, 1.0, -1.0), Point3::new(-0.5, 1.0, 1.0)),
        ];
        let mut poses = Vec::new();
        let mut frames = Vec::new();
        for i in 0..6 {
            let ang = 0.06 * i as f64;
            let eye = Point3::new(10.0 * ang.cos(), 10.0 * ang.sin(), 2.0);
            let pose = look_at_pose(i as i64, eye, Point3::origin());
            let mut dets: Vec<Detection> = lines
                .iter()
                .map(|&(a, b)| Detection::bare(project_seg(&pose, a, b, &intr)))
                .collect();
            if i == 3 {
                dets.push(det(5.0, 230.0, 60.0, 231.0));
            }
            poses.push(pose);
            frames.push(dets);
        }
        let tracks = build_tracks(&frames, &poses, &intr, &cfg).unwrap();
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            assert_eq!(t.len(), 6);
            assert_eq!(t.status, TrackStatus::Closed);
            // One detection index throughout: observations follow one line.
            let di = t.observations[0].1;
            assert!(t.observations.iter().all(|&(_, d)| d == di));
        }
        assert_eq!(tracks[0].track_id, 0);
        assert_eq!(tracks[1].track_id, 1);
        // Determinism.
        let again = build_tracks(&frames, &poses, &intr, &cfg).unwrap();
        assert_eq!(tracks, again);
    }

    /// A duplicate detection of the same line in one frame cannot join the
    /// same track (frame-disjointness), so it stays a singleton and is
    /// rejected.
    #[test]
    fn tracks_never_contain_two_observations_of_one_frame() {
        let intr = intr();
        let cfg = MatchConfig::default();
        let (a, b) = (Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, -0.5, 1.2));
        let mut poses = Vec::new();
        let mut frames = Vec::new();
        for i in 0..5 {
            let ang = 0.06 * i as f64;
            let eye = Point3::new(10.0 * ang.cos(), 10.0 * ang.sin(), 2.0);
            let pose = look_at_pose(i as i64, eye, Point3::origin());
            let seg = project_seg(&pose, a, b, &intr);
            let mut dets = vec![Detection::bare(seg)];
            if i == 2 {
                // Near-exact duplicate half a pixel off.
                let dup = LineSegment2D::new(
                    Point2::new(seg.p1.x + 0.5, seg.p1.y),
                    Point2::new(seg.p2.x + 0.5, seg.p2.y),
                );
                dets.push(Detection::bare(dup));
            }
            poses.push(pose);
            frames.push(dets);
        }
        let tracks = build_tracks(&frames, &poses, &intr, &cfg).unwrap();
        assert_eq!(tracks.len(), 1);
        let seen: BTreeSet<usize> = tracks[0].frames().collect();
        assert_eq!(seen.len(), tracks[0].len(), "duplicate frame in track");
    }

    #[test]
    fn global_merge_joins_split_tracks() {
        let intr = intr();
        let cfg = MatchConfig { merge_stride: 2, ..MatchConfig::default() };
        let (a, b) = (Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, -0.5, 1.2));
        let (c, d) = (Point3::new(0.5, 1.0, -1.0), Point3::new(-0.5, 1.0, 1.0));
        let mut poses = Vec::new();
        let mut frames = Vec::new();
        for i in 0..10 {
            let ang = 0.1 * i as f64;
            let eye = Point3::new(10.0 * ang.cos(), 10.0 * ang.sin(), 2.0);
            let pose = look_at_pose(i as i64, eye, Point3::origin());
            poses.push(pose);
            frames.push(vec![
                Detection::bare(project_seg(&pose, a, b, &intr)),
                Detection::bare(project_seg(&pose, c, d, &intr)),
            ]);
        }
        // Same line split across disjoint frame ranges, plus a different
        // line's track that must stay separate.
        let split = vec![
            LineTrack {
                track_id: 0,
                observations: (0..5).map(|f| (f, 0)).collect(),
                status: TrackStatus::Closed,
            },
            LineTrack {
                track_id: 1,
                observations: (5..10).map(|f| (f, 0)).collect(),
                status: TrackStatus::Closed,
            },
            LineTrack {
                track_id: 2,
                observations: (0..10).map(|f| (f, 1)).collect(),
                status: TrackStatus::Closed,
            },
        ];
        let merged = global_merge(&split, &frames, &poses, &intr, &cfg).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].len(), 10);
        assert!(merged[0].observations.iter().all(|&(_, d)| d == 0));
        assert_eq!(merged[1].len(), 10);
        assert!(merged[1].observations.iter().all(|&(_, d)| d == 1));
    }
}
