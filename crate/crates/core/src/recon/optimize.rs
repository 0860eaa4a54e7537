//! Joint refinement of 3D lines and camera poses over stacked subspace
//! residuals.
//!
//! The cost couples, per observation, a line term weighted by the observed
//! 2D segment length with a batch of event-ray terms scaled by a large
//! fixed factor (the event terms carry most of the signal). Minimization is
//! damped Gauss-Newton in the product tangent space: 4 parameters per line,
//! 6 per pose, first pose pinned to fix the gauge. Steps are accepted only
//! when the total cost does not increase. Lines whose own cost blows up or
//! turns non-finite are discarded rather than poisoning the rest.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Rotation3, UnitQuaternion, Vector3};

use super::{ReconConfig, ReconError};
use crate::camera::{CameraPose, Intrinsics};
use crate::geom::{
    event_obs_residual, event_obs_residual_jacobian, event_term_degenerate, line_obs_residual,
    line_obs_residual_jacobian, reprojection_obs_residual, reprojection_obs_residual_jacobian,
    residual_cost, LineAnchor, OrthonormalLine, PluckerLine, PoseAnchor, PARAMS_PER_LINE,
    PARAMS_PER_POSE,
};

/// Which residuals drive the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CostModel {
    /// Subspace line terms plus event-ray terms.
    #[default]
    Full,
    /// Subspace line terms only.
    LinesOnly,
    /// Classic 2D endpoint-to-projected-line distances (baseline).
    Reprojection,
}

/// One observation of a line: the viewing-plane basis (camera frame), the
/// observed endpoints, the term weight (2D segment length), and the
/// associated event rays (camera frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ObsTerm {
    pub frame: usize,
    pub basis_cam: [Vector3<f64>; 2],
    pub endpoints_px: [[f64; 2]; 2],
    pub weight: f64,
    pub event_rays_cam: Vec<Vector3<f64>>,
}

/// All observations of one line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineObservations {
    pub terms: Vec<ObsTerm>,
}

/// Optimization result; `lines[i] = None` marks a discarded line.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub lines: Vec<Option<PluckerLine>>,
    pub poses: Vec<CameraPose>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Indices of lines discarded for divergence or non-finite cost.
    pub discarded: Vec<usize>,
}

/// Weight of the scale-gauge prior. Any positive value pins the gauge (the
/// data cost is exactly flat along global rescaling about the first camera
/// center); this magnitude keeps the Hessian block comparable to the event
/// terms.
const GAUGE_WEIGHT: f64 = 1e5;

struct Problem<'a> {
    observations: &'a [LineObservations],
    intr: &'a Intrinsics,
    cfg: &'a ReconConfig,
    model: CostModel,
    refine_poses: bool,
    /// Target for the summed camera-center distances to the first camera.
    /// Monocular line observations say nothing about global scale, so joint
    /// pose refinement pins the input trajectory's scale with a prior on
    /// `sum_j |c_j - c_0|`.
    scale_gauge: Option<f64>,
    n_lines: usize,
    n_poses: usize,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        self.n_lines * PARAMS_PER_LINE
            + if self.refine_poses {
                (self.n_poses.max(1) - 1) * PARAMS_PER_POSE
            } else {
                0
            }
    }

    fn line_col(&self, i: usize) -> usize {
        i * PARAMS_PER_LINE
    }

    /// Column of the pose block, `None` for the pinned first pose or when
    /// poses are fixed.
    fn pose_col(&self, j: usize) -> Option<usize> {
        (self.refine_poses && j > 0)
            .then(|| self.n_lines * PARAMS_PER_LINE + (j - 1) * PARAMS_PER_POSE)
    }

    /// Scale-gauge residual `sum_j |c_j - c_0| - target`.
    fn gauge_residual(&self, poses: &[CameraPose]) -> Option<f64> {
        let target = self.scale_gauge?;
        let c0 = poses[0].center();
        let d: f64 = poses.iter().skip(1).map(|p| (p.center() - c0).norm()).sum();
        Some(d - target)
    }

    /// Total and per-line cost at a state. The total includes the gauge
    /// prior; the per-line entries do not.
    fn eval(&self, lines: &[Option<OrthonormalLine>], poses: &[CameraPose]) -> (f64, Vec<f64>) {
        let mut per_line = vec![0.0; self.n_lines];
        for (i, line) in lines.iter().enumerate() {
            let Some(line) = line else { continue };
            let anchor = LineAnchor::from_orthonormal(line);
            for term in &self.observations[i].terms {
                let pa = PoseAnchor::from_pose(&poses[term.frame]);
                per_line[i] += self.term_cost(&anchor, &pa, term);
            }
        }
        let gauge = self.gauge_residual(poses).map_or(0.0, |r| GAUGE_WEIGHT * r * r);
        (per_line.iter().sum::<f64>() + gauge, per_line)
    }

    fn term_cost(&self, anchor: &LineAnchor, pa: &PoseAnchor, term: &ObsTerm) -> f64 {
        match self.model {
            CostModel::Reprojection => {
                let r: [f64; 2] = reprojection_obs_residual(
                    anchor,
                    &[0.0; 4],
                    pa,
                    &[0.0; 6],
                    &term.endpoints_px,
                    self.intr,
                );
                term.weight * residual_cost(&r)
            }
            CostModel::LinesOnly | CostModel::Full => {
                let r = line_obs_residual(anchor, &[0.0; 4], pa, &[0.0; 6], &term.basis_cam);
                let mut c = term.weight * residual_cost(&r);
                if self.model == CostModel::Full && !event_term_degenerate(anchor, pa) {
                    for ray in &term.event_rays_cam {
                        let re =
                            event_obs_residual(anchor, &[0.0; 4], pa, &[0.0; 6], ray);
                        c += self.cfg.lambda_event * residual_cost(&re);
                    }
                }
                c
            }
        }
    }

    /// Accumulate the weighted normal equations at a state.
    fn assemble(
        &self,
        lines: &[Option<OrthonormalLine>],
        poses: &[CameraPose],
        h: &mut DMatrix<f64>,
        g: &mut DVector<f64>,
    ) {
        h.fill(0.0);
        g.fill(0.0);
        for (i, line) in lines.iter().enumerate() {
            let Some(line) = line else { continue };
            let anchor = LineAnchor::from_orthonormal(line);
            let lc = self.line_col(i);
            for term in &self.observations[i].terms {
                let pa = PoseAnchor::from_pose(&poses[term.frame]);
                let pc = self.pose_col(term.frame);
                match self.model {
                    CostModel::Reprojection => {
                        let (r, jac) = reprojection_obs_residual_jacobian(
                            &anchor,
                            &pa,
                            &term.endpoints_px,
                            self.intr,
                        );
                        scatter(h, g, &r, &jac, term.weight, lc, pc);
                    }
                    CostModel::LinesOnly | CostModel::Full => {
                        let (r, jac) = line_obs_residual_jacobian(&anchor, &pa, &term.basis_cam);
                        scatter(h, g, &r, &jac, term.weight, lc, pc);
                        if self.model == CostModel::Full && !event_term_degenerate(&anchor, &pa)
                        {
                            for ray in &term.event_rays_cam {
                                let (re, je) =
                                    event_obs_residual_jacobian(&anchor, &pa, ray);
                                scatter(h, g, &re, &je, self.cfg.lambda_event, lc, pc);
                            }
                        }
                    }
                }
            }
        }
        if let Some(r) = self.gauge_residual(poses) {
            // d(sum |c_j - c_0|)/dc_j is the unit radial vector; the first
            // pose is pinned, so its column never appears.
            let c0 = poses[0].center();
            let mut grads: Vec<(usize, Vector3<f64>)> = Vec::new();
            for (j, p) in poses.iter().enumerate().skip(1) {
                let d = p.center() - c0;
                let n = d.norm();
                if n > 1e-12 {
                    if let Some(pc) = self.pose_col(j) {
                        grads.push((pc + 3, d / n));
                    }
                }
            }
            for &(ca, ua) in &grads {
                for k in 0..3 {
                    g[ca + k] += GAUGE_WEIGHT * ua[k] * r;
                }
                for &(cb, ub) in &grads {
                    for a in 0..3 {
                        for b in 0..3 {
                            h[(ca + a, cb + b)] += GAUGE_WEIGHT * ua[a] * ub[b];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter one term's weighted `J^T J` / `J^T r` contribution. The term
/// Jacobian has 10 columns: 4 line then 6 pose.
fn scatter<const D: usize>(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    r: &[f64; D],
    jac: &[[f64; PARAMS_PER_LINE + PARAMS_PER_POSE]; D],
    weight: f64,
    line_col: usize,
    pose_col: Option<usize>,
) {
    let col_of = |k: usize| -> Option<usize> {
        if k < PARAMS_PER_LINE {
            Some(line_col + k)
        } else {
            pose_col.map(|p| p + k - PARAMS_PER_LINE)
        }
    };
    for i in 0..D {
        for a in 0..PARAMS_PER_LINE + PARAMS_PER_POSE {
            let Some(ca) = col_of(a) else { continue };
            g[ca] += weight * jac[i][a] * r[i];
            for b in a..PARAMS_PER_LINE + PARAMS_PER_POSE {
                let Some(cb) = col_of(b) else { continue };
                let v = weight * jac[i][a] * jac[i][b];
                h[(ca, cb)] += v;
                if ca != cb {
                    h[(cb, ca)] += v;
                }
            }
        }
    }
}

fn apply_step(
    lines: &[Option<OrthonormalLine>],
    poses: &[CameraPose],
    prob: &Problem<'_>,
    step: &DVector<f64>,
) -> (Vec<Option<OrthonormalLine>>, Vec<CameraPose>) {
    let new_lines = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.as_ref().map(|l| {
                let c = prob.line_col(i);
                l.retract(&Vector3::new(step[c], step[c + 1], step[c + 2]), step[c + 3])
            })
        })
        .collect();
    let new_poses = poses
        .iter()
        .enumerate()
        .map(|(j, p)| match prob.pose_col(j) {
            None => *p,
            Some(c) => {
                let dr = Vector3::new(step[c], step[c + 1], step[c + 2]);
                let dc = Vector3::new(step[c + 3], step[c + 4], step[c + 5]);
                CameraPose {
                    t_us: p.t_us,
                    rotation: p.rotation
                        * UnitQuaternion::from_rotation_matrix(&Rotation3::from_scaled_axis(dr)),
                    translation: p.translation + dc,
                }
            }
        })
        .collect();
    (new_lines, new_poses)
}

/// Jointly refine lines (and optionally poses, first pose fixed) by damped
/// Gauss-Newton. Lines with non-finite cost are discarded up front; lines
/// whose cost grew past `divergence_factor` times their initial cost are
/// discarded at the end.
pub fn optimize(
    lines: &[PluckerLine],
    observations: &[LineObservations],
    poses: &[CameraPose],
    intr: &Intrinsics,
    cfg: &ReconConfig,
    model: CostModel,
    refine_poses: bool,
) -> Result<OptimizeOutcome, ReconError> {
    assert_eq!(lines.len(), observations.len(), "one observation set per line");
    let scale_gauge = (refine_poses && poses.len() >= 2).then(|| {
        let c0 = poses[0].center();
        poses.iter().skip(1).map(|p| (p.center() - c0).norm()).sum()
    });
    let prob = Problem {
        observations,
        intr,
        cfg,
        model,
        refine_poses,
        scale_gauge,
        n_lines: lines.len(),
        n_poses: poses.len(),
    };
    let mut cur_lines: Vec<Option<OrthonormalLine>> =
        lines.iter().map(|l| Some(OrthonormalLine::from_plucker(l))).collect();
    let mut cur_poses: Vec<CameraPose> = poses.to_vec();
    let mut discarded = Vec::new();

    // Up-front health check: a line that is already non-finite is dropped.
    let (_, per0) = prob.eval(&cur_lines, &cur_poses);
    for (i, c) in per0.iter().enumerate() {
        if !c.is_finite() {
            cur_lines[i] = None;
            discarded.push(i);
        }
    }
    let (mut cost, initial_per_line) = prob.eval(&cur_lines, &cur_poses);
    let initial_cost = cost;
    if !cost.is_finite() {
        return Err(ReconError::NonFiniteCost);
    }

    let n = prob.n_params();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut mu = 1e-6;
    let mut iterations = 0;
    if n > 0 {
        for _ in 0..cfg.max_iterations {
            prob.assemble(&cur_lines, &cur_poses, &mut h, &mut g);
            let mut improved = false;
            for _ in 0..10 {
                let mut damped = h.clone();
                for k in 0..n {
                    damped[(k, k)] += mu * (1.0 + h[(k, k)]);
                }
                let Some(step) = damped.clone().cholesky().map(|ch| ch.solve(&(-&g))) else {
                    mu *= 10.0;
                    continue;
                };
                let (trial_lines, trial_poses) =
                    apply_step(&cur_lines, &cur_poses, &prob, &step);
                let (trial_cost, _) = prob.eval(&trial_lines, &trial_poses);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let rel = (cost - trial_cost) / cost.max(1e-300);
                    cur_lines = trial_lines;
                    cur_poses = trial_poses;
                    cost = trial_cost;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    iterations += 1;
                    if rel < 1e-12 {
                        improved = false; // converged
                    }
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
    }

    // Divergence sweep: absolute floor keeps numerically-zero initial costs
    // from flagging healthy lines.
    let (_, final_per_line) = prob.eval(&cur_lines, &cur_poses);
    for i in 0..cur_lines.len() {
        if cur_lines[i].is_none() {
            continue;
        }
        let fin = final_per_line[i];
        let grew = fin > cfg.divergence_factor * initial_per_line[i] && fin > 1e-6;
        if !fin.is_finite() || grew {
            cur_lines[i] = None;
            discarded.push(i);
        }
    }
    let (final_cost, _) = prob.eval(&cur_lines, &cur_poses);
    let out_lines: Vec<Option<PluckerLine>> = cur_lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let out = l.as_ref().and_then(|l| l.to_plucker().ok());
            if l.is_some() && out.is_none() {
                discarded.push(i);
            }
            out
        })
        .collect();
    discarded.sort_unstable();
    discarded.dedup();
    Ok(OptimizeOutcome {
        lines: out_lines,
        poses: cur_poses,
        initial_cost,
        final_cost,
        iterations,
        discarded,
    })
}
