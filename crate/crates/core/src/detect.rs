//! 2D line segment detection on rendered event images, plus the
//! multi-window / multi-representation detect-and-merge front end.
//!
//! The detector is deliberately classical: Sobel gradients, a threshold
//! relative to the strongest response (so results are invariant to scaling
//! the image by a positive constant), orientation-coherent region growing,
//! and a total-least-squares line fit per region with outlier rejection.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Point2;
use thiserror::Error;

use crate::frame::{EventFrame, ImageF32, ImageTag, Repr};

/// A 2D segment with endpoints in pixel coordinates.
///
/// Endpoints are kept in lexicographic order (`p1 <= p2` by `(x, y)`), which
/// makes detector output and merge tie-breaking deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineSegment2D {
    pub p1: Point2<f64>,
    pub p2: Point2<f64>,
}

impl LineSegment2D {
    pub fn new(a: Point2<f64>, b: Point2<f64>) -> Self {
        if (b.x, b.y) < (a.x, a.y) {
            Self { p1: b, p2: a }
        } else {
            Self { p1: a, p2: b }
        }
    }

    pub fn length(&self) -> f64 {
        (self.p2 - self.p1).norm()
    }

    pub fn midpoint(&self) -> Point2<f64> {
        Point2::new((self.p1.x + self.p2.x) / 2.0, (self.p1.y + self.p2.y) / 2.0)
    }

    /// Unit direction from `p1` to `p2`.
    pub fn direction(&self) -> nalgebra::Vector2<f64> {
        (self.p2 - self.p1).normalize()
    }

    /// Orientation of the carrying line, folded into `[0, pi)`.
    pub fn angle(&self) -> f64 {
        let d = self.p2 - self.p1;
        let a = d.y.atan2(d.x);
        if a < 0.0 {
            a + core::f64::consts::PI
        } else if a >= core::f64::consts::PI {
            a - core::f64::consts::PI
        } else {
            a
        }
    }

    /// Distance from a point to the infinite line carrying the segment.
    pub fn line_distance_to(&self, p: Point2<f64>) -> f64 {
        let d = self.direction();
        let r = p - self.p1;
        (r.x * d.y - r.y * d.x).abs()
    }

    /// Distance from a point to the segment itself.
    pub fn segment_distance_to(&self, p: Point2<f64>) -> f64 {
        let d = self.p2 - self.p1;
        let len2 = d.norm_squared();
        if len2 < 1e-24 {
            return (p - self.p1).norm();
        }
        let t = ((p - self.p1).dot(&d) / len2).clamp(0.0, 1.0);
        (p - (self.p1 + d * t)).norm()
    }

    /// Orthogonal projection of a point onto the carrying line.
    pub fn project_point(&self, p: Point2<f64>) -> Point2<f64> {
        let d = self.direction();
        self.p1 + d * (p - self.p1).dot(&d)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DetectError {
    /// A zero-length segment has no carrying line.
    #[error("degenerate zero-length segment")]
    DegenerateSegment,
}

/// Acute angle between the carrying lines of two segments, in `[0, pi/2]`.
pub fn segment_angle_between(a: &LineSegment2D, b: &LineSegment2D) -> f64 {
    let diff = (a.angle() - b.angle()).abs();
    diff.min(core::f64::consts::PI - diff)
}

/// Symmetric segment-to-line distance: the larger of the two directed
/// distances, where each directed distance is the maximum distance of one
/// segment's endpoints to the other segment's infinite line.
pub fn perpendicular_distance(a: &LineSegment2D, b: &LineSegment2D) -> Result<f64, DetectError> {
    if a.length() < 1e-12 || b.length() < 1e-12 {
        return Err(DetectError::DegenerateSegment);
    }
    let ab = b.line_distance_to(a.p1).max(b.line_distance_to(a.p2));
    let ba = a.line_distance_to(b.p1).max(a.line_distance_to(b.p2));
    Ok(ab.max(ba))
}

/// A detected segment with its provenance: which frame it was observed in,
/// at what time, and from which rendered image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub segment: LineSegment2D,
    pub frame_id: usize,
    pub t_obs_us: i64,
    pub source: ImageTag,
}

impl Detection {
    /// A detection with neutral provenance, for single-image use.
    pub fn bare(segment: LineSegment2D) -> Self {
        Self {
            segment,
            frame_id: 0,
            t_obs_us: 0,
            source: ImageTag { window: 0, repr: Repr::Binary },
        }
    }
}

/// Detector and merge parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectConfig {
    /// Gradient threshold as a fraction of the image's maximum gradient
    /// magnitude.
    pub grad_ratio: f64,
    /// Orientation coherence tolerance for region growing (degrees).
    pub region_angle_tol_deg: f64,
    /// Maximum perpendicular deviation of a supporting pixel (px).
    pub edge_tol: f64,
    /// Minimum number of supporting pixels per segment.
    pub min_support: usize,
    /// Minimum segment length (px).
    pub min_length: f64,
    /// Segments closer than this (perpendicular distance, px) are merge
    /// candidates.
    pub merge_dist: f64,
    /// Angular gate for merging (degrees).
    pub merge_angle_deg: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            grad_ratio: 0.2,
            region_angle_tol_deg: 22.5,
            edge_tol: 1.5,
            min_support: 10,
            min_length: 15.0,
            merge_dist: 3.0,
            merge_angle_deg: 5.0,
        }
    }
}

/// Detect line segments on a single image.
pub fn detect_segments(img: &ImageF32, cfg: &DetectConfig) -> Vec<LineSegment2D> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return Vec::new();
    }

    // Binomial 3x3 blur first: it tames staircase aliasing on near-diagonal
    // strokes so gradient orientation follows the carrying line instead of
    // the individual stair steps.
    let raw = |x: usize, y: usize| img.get(x as u16, y as u16) as f64;
    let mut sm = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (dy, wy) in [(-1i32, 1.0), (0, 2.0), (1, 1.0)] {
                let yy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                for (dx, wx) in [(-1i32, 1.0), (0, 2.0), (1, 1.0)] {
                    let xx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    acc += wy * wx * raw(xx, yy);
                }
            }
            sm[y * w + x] = acc / 16.0;
        }
    }

    // Sobel gradients on interior pixels; doubled-angle vectors make the
    // mod-pi line orientation averageable.
    let mut mag = vec![0.0f64; w * h];
    let mut d2 = vec![(0.0f64, 0.0f64); w * h]; // (cos 2a, sin 2a) of the line angle
    let mut grad = vec![(0.0f64, 0.0f64); w * h]; // unit gradient
    let px = |x: usize, y: usize| sm[y * w + x];
    let mut max_mag = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let m = (gx * gx + gy * gy).sqrt();
            mag[y * w + x] = m;
            if m > 0.0 {
                // Doubled gradient angle; the line angle is offset by pi/2,
                // i.e. its doubled vector is the negation.
                let c2 = (gx * gx - gy * gy) / (m * m);
                let s2 = 2.0 * gx * gy / (m * m);
                d2[y * w + x] = (-c2, -s2);
                grad[y * w + x] = (gx / m, gy / m);
            }
            max_mag = max_mag.max(m);
        }
    }
    if max_mag <= 0.0 {
        return Vec::new();
    }
    let thresh = cfg.grad_ratio * max_mag;

    // Seeds in decreasing gradient order (index as tie-break).
    let mut order: Vec<u32> = (0..(w * h) as u32).filter(|&i| mag[i as usize] > thresh).collect();
    order.sort_unstable_by(|&a, &b| {
        mag[b as usize].total_cmp(&mag[a as usize]).then(a.cmp(&b))
    });

    let cos_tol = (2.0 * cfg.region_angle_tol_deg.to_radians()).cos();
    let mut visited = vec![false; w * h];
    let mut segments = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut region: Vec<usize> = Vec::new();

    for &seed in &order {
        let seed = seed as usize;
        if visited[seed] {
            continue;
        }
        // Grow an orientation-coherent region from the seed.
        visited[seed] = true;
        stack.clear();
        region.clear();
        stack.push(seed);
        region.push(seed);
        let (mut sum_c, mut sum_s) = d2[seed];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                    if nx < 1 || ny < 1 || nx as usize >= w - 1 || ny as usize >= h - 1 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if visited[j] || mag[j] <= thresh {
                        continue;
                    }
                    let norm = (sum_c * sum_c + sum_s * sum_s).sqrt();
                    let aligned = if norm < 1e-12 {
                        true
                    } else {
                        let (c, s) = d2[j];
                        (c * sum_c + s * sum_s) / norm >= cos_tol
                    };
                    if aligned {
                        visited[j] = true;
                        sum_c += d2[j].0;
                        sum_s += d2[j].1;
                        stack.push(j);
                        region.push(j);
                    }
                }
            }
        }
        if region.len() < cfg.min_support {
            continue;
        }
        // Event images paint ridges, not step edges, so gradient support sits
        // on the dark flank one pixel off the bright centerline. Shift each
        // support pixel one step along its own gradient when that lands on a
        // strictly brighter pixel; flanks on both sides then vote for the same
        // centerline instead of two lines offset by a pixel.
        let pts: Vec<Point2<f64>> = region
            .iter()
            .map(|&i| {
                let (gx, gy) = grad[i];
                let (dx, dy) = (gx.round() as i32, gy.round() as i32);
                let mut p = ((i % w) as i32, (i / w) as i32);
                for _ in 0..2 {
                    let (sx, sy) = (p.0 + dx, p.1 + dy);
                    if sx < 0 || sy < 0 || sx as usize >= w || sy as usize >= h {
                        break;
                    }
                    if px(sx as usize, sy as usize) <= px(p.0 as usize, p.1 as usize) {
                        break;
                    }
                    p = (sx, sy);
                }
                Point2::new(p.0 as f64, p.1 as f64)
            })
            .collect();
        if let Some(seg) = fit_segment(&pts, cfg) {
            if seg.length() >= cfg.min_length {
                segments.push(seg);
            }
        }
    }
    sort_segments(&mut segments);
    segments
}

/// Total-least-squares segment fit with two rounds of deviation-based
/// outlier rejection. `None` when support collapses or the fit stays out of
/// tolerance.
fn fit_segment(points: &[Point2<f64>], cfg: &DetectConfig) -> Option<LineSegment2D> {
    let mut active: Vec<Point2<f64>> = points.to_vec();
    for _round in 0..2 {
        let (centroid, dir) = tls_line(&active)?;
        let keep: Vec<Point2<f64>> = active
            .iter()
            .copied()
            .filter(|p| {
                let r = p - centroid;
                (r.x * dir.1 - r.y * dir.0).abs() <= cfg.edge_tol
            })
            .collect();
        if keep.len() < cfg.min_support {
            return None;
        }
        let done = keep.len() == active.len();
        active = keep;
        if done {
            break;
        }
    }
    let (centroid, dir) = tls_line(&active)?;
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for p in &active {
        let r = p - centroid;
        if (r.x * dir.1 - r.y * dir.0).abs() > cfg.edge_tol {
            return None;
        }
        let t = r.x * dir.0 + r.y * dir.1;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
    }
    Some(LineSegment2D::new(
        Point2::new(centroid.x + t_min * dir.0, centroid.y + t_min * dir.1),
        Point2::new(centroid.x + t_max * dir.0, centroid.y + t_max * dir.1),
    ))
}

/// Centroid and principal direction of a 2D point set.
fn tls_line(points: &[Point2<f64>]) -> Option<(Point2<f64>, (f64, f64))> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx + syy < 1e-12 {
        return None;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some((Point2::new(cx, cy), (theta.cos(), theta.sin())))
}

fn sort_segments(segments: &mut [LineSegment2D]) {
    segments
        .sort_by(|a, b| seg_key(a).partial_cmp(&seg_key(b)).unwrap_or(core::cmp::Ordering::Equal));
}

fn seg_key(s: &LineSegment2D) -> (f64, f64, f64, f64) {
    (s.p1.x, s.p1.y, s.p2.x, s.p2.y)
}

fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        seg_key(&a.segment)
            .partial_cmp(&seg_key(&b.segment))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.source.cmp(&b.source))
    });
}

/// Collapse near-duplicate detections: segments within `merge_dist` px
/// (perpendicular distance) and `merge_angle_deg` of each other cluster
/// transitively, and each cluster keeps its longest member (provenance
/// included). Idempotent. Degenerate segments never merge with anything.
pub fn merge_detections(
    dets: Vec<Detection>,
    merge_dist: f64,
    merge_angle_deg: f64,
) -> Vec<Detection> {
    merge_detections_indexed(dets, merge_dist, merge_angle_deg).0
}

/// [`merge_detections`] that also reports each survivor's index into the
/// input list, so callers can carry parallel per-detection data across the
/// merge.
pub fn merge_detections_indexed(
    dets: Vec<Detection>,
    merge_dist: f64,
    merge_angle_deg: f64,
) -> (Vec<Detection>, Vec<usize>) {
    let det_cmp = |a: &Detection, b: &Detection| {
        seg_key(&a.segment)
            .partial_cmp(&seg_key(&b.segment))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.source.cmp(&b.source))
    };
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| det_cmp(&dets[i], &dets[j]));
    let n = dets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let angle_tol = merge_angle_deg.to_radians();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&dets[order[i]].segment, &dets[order[j]].segment);
            let close = segment_angle_between(a, b) <= angle_tol
                && perpendicular_distance(a, b).map_or(false, |d| d <= merge_dist);
            if close {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj.max(ri)] = rj.min(ri);
                }
            }
        }
    }
    let mut best: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match best[r] {
            Some(b) if dets[order[b]].segment.length() >= dets[order[i]].segment.length() => {}
            _ => best[r] = Some(i),
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().map(|i| order[i]).collect();
    keep.sort_by(|&i, &j| det_cmp(&dets[i], &dets[j]));
    let out = keep.iter().map(|&i| dets[i]).collect();
    (out, keep)
}

/// Result of running the detector on every representation of a frame.
#[derive(Debug, Clone)]
pub struct MwmrDetection {
    /// Merged detections for the frame, each tagged with its frame id,
    /// observation time, and winning source image.
    pub detections: Vec<Detection>,
    /// Total raw detections across all source images (before merging).
    pub raw_count: usize,
}

/// Detect on every rendered image of the frame (all windows, binary and
/// per-polarity timestamp representations) and merge near-duplicates.
pub fn mwmr_detect(frame: &EventFrame, cfg: &DetectConfig) -> MwmrDetection {
    let mut all = Vec::new();
    for (source, img) in frame.images_tagged() {
        all.extend(detect_segments(img, cfg).into_iter().map(|segment| Detection {
            segment,
            frame_id: frame.frame_id,
            t_obs_us: frame.t_center_us,
            source,
        }));
    }
    let raw_count = all.len();
    let detections = merge_detections(all, cfg.merge_dist, cfg.merge_angle_deg);
    MwmrDetection { detections, raw_count }
}
