//! Synthetic wireframe scenes, camera trajectories, and an exact event
//! simulator.
//!
//! Scenes are plain 3D segment lists (unit-less). The simulator steps a
//! slerp-interpolated trajectory at a fixed time step, rasterizes every
//! visible segment, and emits an event for each pixel newly covered since
//! the previous step; polarity is the side from which the projected line
//! swept over the pixel. Optional uniform noise events are appended and the
//! stream re-sorted. Everything is deterministic for a fixed seed.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Point2, Point3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::{interpolate_pose, CameraPose, Intrinsics, PoseError};
use crate::event::{Event, EventError, EventStream};

/// A wireframe scene: named list of 3D segments in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct WireScene {
    pub name: String,
    pub segments: Vec<[Point3<f64>; 2]>,
}

impl WireScene {
    /// Axis-aligned cube of the given side length centered at the origin:
    /// exactly the 12 edges.
    pub fn cube(side: f64) -> Self {
        let h = side / 2.0;
        let c = |i: usize| {
            Point3::new(
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            )
        };
        let mut segments = Vec::new();
        for i in 0..8 {
            for bit in [1usize, 2, 4] {
                if i & bit == 0 {
                    segments.push([c(i), c(i | bit)]);
                }
            }
        }
        Self { name: String::from("cube"), segments }
    }

    /// A room: 10 x 8 x 4 box shell plus furniture-like interior edges
    /// (a table and a door frame), 23 segments total.
    pub fn room() -> Self {
        let mut segments = Vec::new();
        // Box shell: 12 edges, floor z = 0, ceiling z = 4.
        let (hx, hy, hz) = (5.0, 4.0, 4.0);
        let corner = |i: usize| {
            Point3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { 0.0 } else { hz },
            )
        };
        for i in 0..8 {
            for bit in [1usize, 2, 4] {
                if i & bit == 0 {
                    segments.push([corner(i), corner(i | bit)]);
                }
            }
        }
        // Table: 1.5 x 1.0 top at height 1, four legs.
        let (x0, x1, y0, y1, zt) = (0.75, 2.25, 0.5, 1.5, 1.0);
        let top = [
            Point3::new(x0, y0, zt),
            Point3::new(x1, y0, zt),
            Point3::new(x1, y1, zt),
            Point3::new(x0, y1, zt),
        ];
        for k in 0..4 {
            segments.push([top[k], top[(k + 1) % 4]]);
            segments.push([Point3::new(top[k].x, top[k].y, 0.0), top[k]]);
        }
        // Door frame on the x = -5 wall: two jambs and a header.
        let (dy0, dy1, dz) = (-1.0, 0.2, 2.2);
        segments.push([Point3::new(-5.0, dy0, 0.0), Point3::new(-5.0, dy0, dz)]);
        segments.push([Point3::new(-5.0, dy1, 0.0), Point3::new(-5.0, dy1, dz)]);
        segments.push([Point3::new(-5.0, dy0, dz), Point3::new(-5.0, dy1, dz)]);
        Self { name: String::from("room"), segments }
    }

    /// Largest pairwise distance between segment endpoints.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<&Point3<f64>> = self.segments.iter().flatten().collect();
        let mut best = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.max((pts[i] - pts[j]).norm());
            }
        }
        best
    }

    /// Total wireframe edge length.
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|[a, b]| (b - a).norm()).sum()
    }
}

/// Points sampled along all segments at the given spacing, endpoints
/// included; coincident samples (shared corners) are deduplicated.
pub fn ground_truth_edge_points(scene: &WireScene, spacing: f64) -> Vec<Point3<f64>> {
    sample_segment_points(&scene.segments, spacing)
}

/// Same sampling for a bare segment list (predicted maps use this too).
pub fn sample_segment_points(segments: &[[Point3<f64>; 2]], spacing: f64) -> Vec<Point3<f64>> {
    let mut pts: Vec<Point3<f64>> = Vec::new();
    for [a, b] in segments {
        let len = (b - a).norm();
        let n = (len / spacing).floor() as usize + 1;
        if n == 1 {
            pts.push(Point3::from((a.coords + b.coords) / 2.0));
        } else {
            for k in 0..n {
                let t = k as f64 / (n - 1) as f64;
                pts.push(a + (b - a) * t);
            }
        }
    }
    pts.sort_by(|p, q| {
        (p.x, p.y, p.z).partial_cmp(&(q.x, q.y, q.z)).unwrap_or(core::cmp::Ordering::Equal)
    });
    pts.dedup_by(|p, q| (*p - *q).norm() < 1e-9);
    pts
}

/// Camera-to-world pose looking from `eye` toward `target`, camera x right,
/// y down, z forward, with world +z as "up".
pub fn look_at_pose(t_us: i64, eye: Point3<f64>, target: Point3<f64>) -> CameraPose {
    let forward = (target - eye).normalize();
    let mut up = Vector3::new(0.0, 0.0, 1.0);
    if forward.cross(&up).norm() < 1e-9 {
        up = Vector3::new(0.0, 1.0, 0.0);
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
        right, down, forward,
    ]));
    CameraPose {
        t_us,
        rotation: UnitQuaternion::from_rotation_matrix(&rot),
        translation: eye.coords,
    }
}

/// Key poses on a circular orbit of `radius` around `target` at constant
/// height offset, sweeping `sweep_rad` from `start_rad` over `duration_us`.
pub fn orbit_trajectory(
    target: Point3<f64>,
    radius: f64,
    height: f64,
    start_rad: f64,
    sweep_rad: f64,
    n_poses: usize,
    t0_us: i64,
    duration_us: i64,
) -> Vec<CameraPose> {
    bobbing_orbit_trajectory(
        target,
        radius,
        height,
        0.0,
        0.0,
        start_rad,
        sweep_rad,
        n_poses,
        t0_us,
        duration_us,
    )
}

/// Orbit with a sinusoidal height oscillation: `bob_cycles` full cycles of
/// amplitude `bob_amp` over the sweep. An event camera only sees contrast
/// moving across pixels, so structure parallel to the image motion is
/// invisible under a flat orbit; the vertical excitation makes horizontal
/// scene edges fire too, like the shake of any handheld or vehicle-borne
/// sequence.
#[allow(clippy::too_many_arguments)]
pub fn bobbing_orbit_trajectory(
    target: Point3<f64>,
    radius: f64,
    height: f64,
    bob_amp: f64,
    bob_cycles: f64,
    start_rad: f64,
    sweep_rad: f64,
    n_poses: usize,
    t0_us: i64,
    duration_us: i64,
) -> Vec<CameraPose> {
    let n = n_poses.max(2);
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let ang = start_rad + sweep_rad * s;
            let h = height + bob_amp * (core::f64::consts::TAU * bob_cycles * s).sin();
            let eye = target + Vector3::new(radius * ang.cos(), radius * ang.sin(), h);
            let t_us = t0_us + ((duration_us as f64) * s) as i64;
            look_at_pose(t_us, eye, target)
        })
        .collect()
}

/// Simulator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    /// Simulation step (µs).
    pub dt_us: i64,
    /// Noise events appended as a fraction of the clean count, in [0, 1).
    pub noise_frac: f64,
    /// RNG seed for the noise events.
    pub seed: u64,
    /// A pixel that fired within this many steps cannot fire again.
    pub refractory_steps: u32,
    /// Camera-frame near clip for segment visibility.
    pub near_clip: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt_us: 500, noise_frac: 0.0, seed: 0, refractory_steps: 1, near_clip: 0.1 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation step must be positive, got {0} us")]
    BadStep(i64),
    #[error("noise fraction must be in [0, 1), got {0}")]
    BadNoiseFrac(f64),
    #[error("trajectory needs at least 2 key poses")]
    TooFewPoses,
    #[error("pose interpolation failed: {0}")]
    Pose(#[from] PoseError),
    #[error("event assembly failed: {0}")]
    Stream(#[from] EventError),
}

/// Rasterize the scene at each trajectory step and emit an event per newly
/// covered pixel. See the module docs for the exact model.
pub fn generate_events(
    scene: &WireScene,
    keyposes: &[CameraPose],
    intr: &Intrinsics,
    cfg: &SimConfig,
) -> Result<EventStream, SimError> {
    if cfg.dt_us <= 0 {
        return Err(SimError::BadStep(cfg.dt_us));
    }
    if !(0.0..1.0).contains(&cfg.noise_frac) {
        return Err(SimError::BadNoiseFrac(cfg.noise_frac));
    }
    if keyposes.len() < 2 {
        return Err(SimError::TooFewPoses);
    }
    let (w, h) = (intr.width as usize, intr.height as usize);
    let (t0, t1) = (keyposes[0].t_us, keyposes[keyposes.len() - 1].t_us);
    let n_steps = ((t1 - t0) / cfg.dt_us) as usize;

    // Stamp buffer avoids clearing per step: a pixel was covered at step k
    // iff stamp[p] == k + 1, so at the first touch in step k the old value
    // still tells us whether it was covered at k - 1.
    let mut stamp = vec![0u32; w * h];
    let mut last_fire = vec![i64::MIN / 2; w * h];
    // Previous-step carrying line per segment, in stored endpoint order so
    // the normal direction is continuous over time.
    let mut prev_line: Vec<Option<(Point2<f64>, Vector2<f64>)>> = vec![None; scene.segments.len()];
    let mut events: Vec<Event> = Vec::new();

    for k in 0..=n_steps {
        let t_us = t0 + k as i64 * cfg.dt_us;
        let pose = interpolate_pose(keyposes, t_us)?;
        let mut cur_line: Vec<Option<(Point2<f64>, Vector2<f64>)>> =
            vec![None; scene.segments.len()];
        for (sid, [a, b]) in scene.segments.iter().enumerate() {
            let Some((pa, pb)) = project_clipped(&pose, intr, a, b, cfg.near_clip) else {
                continue;
            };
            let dir = pb - pa;
            let img_len = dir.norm();
            if img_len > 1e-9 {
                cur_line[sid] = Some((pa, dir / img_len));
            }
            // Oversample along the 3D parameter; perspective makes image
            // spacing non-uniform, so 3x the image length is a safe density.
            let steps = ((img_len * 3.0).ceil() as usize).clamp(1, 8192);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let p = a + (b - a) * t;
                let Some(px) = project_point(&pose, intr, &p, cfg.near_clip) else {
                    continue;
                };
                let (ix, iy) = (px.x.round(), px.y.round());
                if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
                    continue;
                }
                let idx = iy as usize * w + ix as usize;
                if stamp[idx] == k as u32 + 1 {
                    continue; // already touched this step
                }
                let was_on = stamp[idx] == k as u32 && k > 0;
                stamp[idx] = k as u32 + 1;
                if k == 0 || was_on {
                    continue;
                }
                if (k as i64) - last_fire[idx] <= cfg.refractory_steps as i64 {
                    continue;
                }
                last_fire[idx] = k as i64;
                let pc = Point2::new(ix, iy);
                let polarity = match prev_line[sid] {
                    Some((o, d)) => {
                        let n = Vector2::new(-d.y, d.x);
                        if n.dot(&(pc - o)) >= 0.0 {
                            1
                        } else {
                            -1
                        }
                    }
                    None => 1,
                };
                events.push(Event { t_us, x: ix as u16, y: iy as u16, polarity });
            }
        }
        prev_line = cur_line;
    }

    // Noise injection.
    let clean = events.len();
    let n_noise = (cfg.noise_frac * clean as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..n_noise {
        events.push(Event {
            t_us: rng.gen_range(t0..=t1),
            x: rng.gen_range(0..intr.width),
            y: rng.gen_range(0..intr.height),
            polarity: if rng.gen::<bool>() { 1 } else { -1 },
        });
    }
    events.sort_by_key(|e| (e.t_us, e.x, e.y, e.polarity));
    Ok(EventStream::new(intr.width, intr.height, events)?)
}

fn project_point(
    pose: &CameraPose,
    intr: &Intrinsics,
    p: &Point3<f64>,
    near: f64,
) -> Option<Point2<f64>> {
    let c = pose.world_to_cam(p);
    if c.z < near {
        return None;
    }
    Some(Point2::new(intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy))
}

/// Project a segment, clipping it to the near plane in the camera frame.
fn project_clipped(
    pose: &CameraPose,
    intr: &Intrinsics,
    a: &Point3<f64>,
    b: &Point3<f64>,
    near: f64,
) -> Option<(Point2<f64>, Point2<f64>)> {
    let mut ca = pose.world_to_cam(a);
    let mut cb = pose.world_to_cam(b);
    if ca.z < near && cb.z < near {
        return None;
    }
    if ca.z < near {
        let t = (near - ca.z) / (cb.z - ca.z);
        ca = ca + (cb - ca) * t;
    } else if cb.z < near {
        let t = (near - cb.z) / (ca.z - cb.z);
        cb = cb + (ca - cb) * t;
    }
    let pr = |c: Point3<f64>| Point2::new(intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy);
    Some((pr(ca), pr(cb)))
}

/// Perturb each pose independently: rotation by sequential yaw/pitch/roll
/// Gaussian angles (degrees) composed on the right, translation by
/// per-axis Gaussian offsets. Deterministic for a fixed seed.
pub fn perturb_poses(
    poses: &[CameraPose],
    rot_std_deg: f64,
    trans_std: f64,
    seed: u64,
) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = Normal::new(0.0, rot_std_deg.to_radians()).expect("valid std");
    let tr = Normal::new(0.0, trans_std).expect("valid std");
    poses
        .iter()
        .map(|p| {
            let (yaw, pitch, roll) =
                (rot.sample(&mut rng), rot.sample(&mut rng), rot.sample(&mut rng));
            let dq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(
                roll, pitch, yaw,
            ));
            let dt = Vector3::new(tr.sample(&mut rng), tr.sample(&mut rng), tr.sample(&mut rng));
            CameraPose {
                t_us: p.t_us,
                rotation: p.rotation * dq,
                translation: p.translation + dt,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics { fx: 100.0, fy: 100.0, cx: 64.0, cy: 48.0, width: 128, height: 96 }
    }

    #[test]
    fn cube_has_twelve_edges_of_side_length() {
        let c = WireScene::cube(10.0);
        assert_eq!(c.segments.len(), 12);
        for [a, b] in &c.segments {
            assert!(((b - a).norm() - 10.0).abs() < 1e-12);
        }
        assert!((c.diameter() - (300.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn room_has_expected_segment_count() {
        let r = WireScene::room();
        assert_eq!(r.segments.len(), 23);
        assert!(r.segments.iter().all(|[a, b]| (b - a).norm() > 1e-9));
    }

    #[test]
    fn edge_point_sampling_counts_and_dedup() {
        // Unit segment at spacing 0.1: 11 points.
        let one = WireScene {
            name: String::from("one"),
            segments: vec![[Point3::origin(), Point3::new(1.0, 0.0, 0.0)]],
        };
        assert_eq!(ground_truth_edge_points(&one, 0.1).len(), 11);
        // Cube side 10 at spacing 0.05: 12 * 201 samples, 8 corners each
        // counted 3x collapse to 1 -> 2412 - 16 = 2396.
        let cube = WireScene::cube(10.0);
        assert_eq!(ground_truth_edge_points(&cube, 0.05).len(), 2396);
        let empty = WireScene { name: String::from("empty"), segments: Vec::new() };
        assert!(ground_truth_edge_points(&empty, 0.1).is_empty());
    }

    #[test]
    fn static_trajectory_emits_no_events() {
        let scene = WireScene::cube(10.0);
        let eye = Point3::new(25.0, 0.0, 0.0);
        let poses =
            vec![look_at_pose(0, eye, Point3::origin()), look_at_pose(100_000, eye, Point3::origin())];
        let s = generate_events(&scene, &poses, &intr(), &SimConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn sweep_event_count_matches_swept_area() {
        // A vertical segment 2 units tall at depth 5 (image length 40 px),
        // camera translating so the projection sweeps 100 px: the event
        // count approximates the swept area, 100 x 41 pixels.
        let scene = WireScene {
            name: String::from("seg"),
            segments: vec![[Point3::new(0.0, 0.0, -1.0), Point3::new(0.0, 0.0, 1.0)]],
        };
        // The eye moves along world y with the target tracking it, so the
        // viewing direction stays fixed and the vertical segment sweeps
        // horizontally across the image.
        let mut poses = Vec::new();
        let n_key = 11;
        for i in 0..n_key {
            let s = i as f64 / (n_key - 1) as f64;
            let y = -2.5 + 5.0 * s; // 5 units of travel at fx=100, z=5 -> 100 px
            let eye = Point3::new(-5.0, y, 0.0);
            let target = Point3::new(0.0, y, 0.0);
            poses.push(look_at_pose((s * 1_000_000.0) as i64, eye, target));
        }
        let cfg = SimConfig { dt_us: 5_000, ..SimConfig::default() }; // 200 steps, 0.5 px/step
        let s = generate_events(&scene, &poses, &intr(), &cfg).unwrap();
        let expect = 100.0 * 41.0;
        let got = s.len() as f64;
        assert!(
            (got - expect).abs() < 0.1 * expect,
            "got {got} events, expected about {expect}"
        );
    }

    #[test]
    fn noise_fraction_adds_floor_of_requested_events() {
        let scene = WireScene::cube(10.0);
        let poses = orbit_trajectory(
            Point3::origin(),
            25.0,
            5.0,
            0.0,
            core::f64::consts::FRAC_PI_2,
            9,
            0,
            1_000_000,
        );
        let clean =
            generate_events(&scene, &poses, &intr(), &SimConfig::default()).unwrap().len();
        let noisy = generate_events(
            &scene,
            &poses,
            &intr(),
            &SimConfig { noise_frac: 0.15, ..SimConfig::default() },
        )
        .unwrap()
        .len();
        assert_eq!(noisy, clean + (0.15 * clean as f64).floor() as usize);
        assert!(clean > 1000, "clean stream unexpectedly sparse: {clean}");
    }

    #[test]
    fn simulator_is_deterministic() {
        let scene = WireScene::room();
        let poses = orbit_trajectory(
            Point3::new(0.0, 0.0, 2.0),
            18.0,
            4.0,
            0.3,
            0.8,
            7,
            0,
            400_000,
        );
        let cfg = SimConfig { noise_frac: 0.1, seed: 77, ..SimConfig::default() };
        let a = generate_events(&scene, &poses, &intr(), &cfg).unwrap();
        let b = generate_events(&scene, &poses, &intr(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clean_events_lie_near_projected_scene() {
        let scene = WireScene::cube(10.0);
        let poses = orbit_trajectory(
            Point3::origin(),
            25.0,
            3.0,
            0.1,
            0.5,
            7,
            0,
            500_000,
        );
        let s = generate_events(&scene, &poses, &intr(), &SimConfig::default()).unwrap();
        assert!(!s.is_empty());
        let intrv = intr();
        for e in s.events().iter().step_by(97) {
            let pose = interpolate_pose(&poses, e.t_us).unwrap();
            let p = Point2::new(e.x as f64, e.y as f64);
            let mut best = f64::INFINITY;
            for [a, b] in &scene.segments {
                if let Some((pa, pb)) = project_clipped(&pose, &intrv, a, b, 0.1) {
                    let seg = crate::detect::LineSegment2D::new(pa, pb);
                    best = best.min(seg.segment_distance_to(p));
                }
            }
            assert!(best <= 1.0, "event at {p:?} is {best} px from the nearest edge");
        }
    }

    #[test]
    fn perturbation_stats_match_requested_stds() {
        let base = vec![look_at_pose(0, Point3::new(10.0, 0.0, 0.0), Point3::origin()); 1000];
        let noisy = perturb_poses(&base, 10.0, 0.02, 123);
        let mut rots: Vec<(f64, f64, f64)> = Vec::new();
        let mut trans = Vec::new();
        for (p, q) in base.iter().zip(&noisy) {
            let dq = p.rotation.inverse() * q.rotation;
            rots.push(dq.to_rotation_matrix().euler_angles());
            trans.push(q.translation - p.translation);
        }
        let std = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
        };
        let roll: Vec<f64> = rots.iter().map(|r| r.0).collect();
        let pitch: Vec<f64> = rots.iter().map(|r| r.1).collect();
        let yaw: Vec<f64> = rots.iter().map(|r| r.2).collect();
        for ch in [roll, pitch, yaw] {
            let s = std(&ch).to_degrees();
            assert!((s - 10.0).abs() < 1.0, "rotation channel std {s}");
        }
        for k in 0..3 {
            let xs: Vec<f64> = trans.iter().map(|t| t[k]).collect();
            let s = std(&xs);
            assert!((s - 0.02).abs() < 0.002, "translation channel std {s}");
        }
        // Rotations stay valid.
        for q in &noisy {
            let det = q.rotation.to_rotation_matrix().matrix().determinant();
            assert!((det - 1.0).abs() < 1e-9);
        }
        // std = 0 keeps poses identical.
        let same = perturb_poses(&base[..3], 0.0, 0.0, 5);
        for (p, q) in base[..3].iter().zip(&same) {
            assert_eq!(p.translation, q.translation);
            assert!((p.rotation.angle_to(&q.rotation)).abs() < 1e-12);
        }
    }
}
