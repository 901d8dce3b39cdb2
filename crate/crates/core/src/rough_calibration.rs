//! Rough extrinsic estimate from point-to-plane alignment over sliding
//! windows of frames.
//!
//! Plane patches come from the first frame of each window (the anchor) and
//! are expressed in the anchor LiDAR frame, so they do not depend on the
//! estimate. A point `x` of frame `k` is carried into the anchor LiDAR frame
//! by `T^-1 A_k T x` with `A_k = P_anchor^-1 P_k` the relative pose-sensor
//! motion; the world frame cancels out of `A_k`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{CalibrationResult, PosedFrame, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::geometry::{hat, log, perturb_left, RigidTransform, TangentVector, Vec3};
use crate::plane_features::{
    extract_planes_adaptive, select_planar_points, FeatureParams, LocalShape, PlanePatch,
};
use crate::spatial::{KdTree, Neighbor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoughParams {
    pub window_size: usize,
    pub stride: usize,
    /// Association gate until a window first converges.
    pub gate_initial_m: f64,
    /// Gate for the rest of the window.
    pub gate_final_m: f64,
    pub huber_delta_m: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Weight of the prior holding the z translation at its initial value.
    pub tz_prior_weight: f64,
    pub min_correspondences: usize,
    pub normal_angle_deg: f64,
    /// Patch centroids examined per point.
    pub candidate_patches: usize,
    pub max_condition: f64,
    /// Smallest standard deviation of an anchor patch along its second axis.
    pub min_patch_extent_m: f64,
    /// Fraction of a window's information carried into the next window as a
    /// prior; 0 gives plain warm starts.
    pub information_decay: f64,
    pub features: FeatureParams,
}

impl Default for RoughParams {
    fn default() -> Self {
        Self {
            window_size: 10,
            stride: 5,
            gate_initial_m: 1.0,
            gate_final_m: 0.3,
            huber_delta_m: 0.1,
            max_iterations: 50,
            step_tolerance: 1e-6,
            tz_prior_weight: 1e-2,
            min_correspondences: 100,
            normal_angle_deg: 30.0,
            candidate_patches: 5,
            max_condition: 1e10,
            min_patch_extent_m: 0.15,
            information_decay: 0.9,
            features: FeatureParams::default(),
        }
    }
}

impl RoughParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::Config("rough.window_size must be at least 2".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("rough.stride must be positive".into()));
        }
        if !(self.gate_initial_m > 0.0 && self.gate_final_m > 0.0 && self.huber_delta_m > 0.0) {
            return Err(Error::Config("rough gates and huber delta must be positive".into()));
        }
        if self.max_iterations == 0 || self.candidate_patches == 0 {
            return Err(Error::Config("rough.max_iterations and candidate_patches must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.information_decay) {
            return Err(Error::Config("rough.information_decay must be in [0, 1)".into()));
        }
        self.features.validate()
    }
}

/// Gaussian prior on the extrinsic in left-perturbation coordinates around
/// `center`, carried from window to window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InformationPrior {
    pub center: RigidTransform,
    pub information: Matrix6<f64>,
}

impl InformationPrior {
    fn offset(&self, t: &RigidTransform) -> Vector6<f64> {
        let d = t.compose(&self.center.inverse());
        let v = log(&d).map(|v| v.to_array()).unwrap_or([0.0; 6]);
        Vector6::from_row_slice(&v)
    }
}

/// `T_I1^-1 T_In T x`: a LiDAR point of frame `n` in the anchor pose-sensor frame.
pub fn project_to_anchor(
    x: &Vec3,
    t_i1: &RigidTransform,
    t_in: &RigidTransform,
    t: &RigidTransform,
) -> Vec3 {
    t_i1.inverse().transform_point(&t_in.transform_point(&t.transform_point(x)))
}

/// Planar points of one frame with their local shape.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub pose: RigidTransform,
    pub points: Vec<Vec3>,
    pub shapes: Vec<LocalShape>,
    /// Patches of the frame, used when it anchors a window.
    pub patches: PatchSet,
}

/// Plane patches with a kd-tree over their centroids.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<PlanePatch>,
    tree: KdTree,
}

impl PatchSet {
    pub fn new(patches: Vec<PlanePatch>) -> Self {
        let centroids: Vec<Vec3> = patches.iter().map(|p| p.centroid).collect();
        Self {
            tree: KdTree::build(&centroids),
            patches,
        }
    }
}

/// Planar points and patches of one frame. Patches thinner than
/// `min_extent` across their second axis are dropped: range noise tilts the
/// normal of a strip cut from a single scan line.
pub fn prepare_frame(frame: &PosedFrame, params: &FeatureParams, min_extent: f64) -> PreparedFrame {
    let positions = frame.frame.positions();
    let tree = KdTree::build(&positions);
    let planar = select_planar_points(&positions, &tree, params);
    let mut patches = extract_planes_adaptive(&positions, None, params, &Vec3::zeros(), 0);
    patches.retain(|p| p.eigenvalues[1] >= min_extent * min_extent);
    for p in &mut patches {
        p.member_indices = Vec::new();
    }
    PreparedFrame {
        pose: frame.pose,
        points: planar.indices.iter().map(|&i| positions[i]).collect(),
        shapes: planar.shapes,
        patches: PatchSet::new(patches),
    }
}

/// One window: the anchor frame and the frames aligned against it.
#[derive(Clone, Debug)]
pub struct WindowProblem<'a> {
    pub anchor: &'a PreparedFrame,
    pub members: Vec<&'a PreparedFrame>,
}

impl WindowProblem<'_> {
    fn relative_poses(&self) -> Vec<RigidTransform> {
        let inv = self.anchor.pose.inverse();
        self.members.iter().map(|m| inv.compose(&m.pose)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// Member frame index within the window.
    pub frame: usize,
    /// Point index within that frame's planar points.
    pub point: usize,
    pub patch: usize,
}

/// Matches planar points of the member frames to patches under the
/// estimate.
pub fn associate(
    problem: &WindowProblem,
    patches: &PatchSet,
    estimate: &RigidTransform,
    gate: f64,
    params: &RoughParams,
) -> Result<Vec<Correspondence>> {
    let relative = problem.relative_poses();
    let t_inv = estimate.inverse();
    let cos_max = params.normal_angle_deg.to_radians().cos();
    let sin_max = params.normal_angle_deg.to_radians().sin();
    let per_frame: Vec<Vec<Correspondence>> = problem
        .members
        .par_iter()
        .zip(relative.par_iter())
        .enumerate()
        .map(|(f, (member, a))| {
            let chain = t_inv.compose(a).compose(estimate);
            let mut buf: Vec<Neighbor> = Vec::with_capacity(params.candidate_patches);
            let mut out = Vec::new();
            for (i, (x, shape)) in member.points.iter().zip(&member.shapes).enumerate() {
                let z = chain.transform_point(x);
                patches.tree.knn(&z, params.candidate_patches, f64::INFINITY, &mut buf);
                let hit = buf.iter().find(|n| {
                    let p = &patches.patches[n.index];
                    if p.signed_distance(&z).abs() >= gate || n.dist2.sqrt() > p.radius + gate {
                        return false;
                    }
                    if shape.line_like {
                        chain.rotate(&shape.direction).dot(&p.normal).abs() <= sin_max
                    } else {
                        chain.rotate(&shape.normal).dot(&p.normal).abs() >= cos_max
                    }
                });
                if let Some(n) = hit {
                    out.push(Correspondence { frame: f, point: i, patch: n.index });
                }
            }
            out
        })
        .collect();
    let all: Vec<Correspondence> = per_frame.into_iter().flatten().collect();
    if all.len() < params.min_correspondences {
        return Err(Error::InsufficientCorrespondences {
            found: all.len(),
            required: params.min_correspondences,
        });
    }
    Ok(all)
}

/// Signed distance of `T^-1 A T x` to the plane `(centroid, normal)`.
pub fn residual(
    t: &RigidTransform,
    a: &RigidTransform,
    x: &Vec3,
    centroid: &Vec3,
    normal: &Vec3,
) -> f64 {
    let z = t.inverse().transform_point(&a.transform_point(&t.transform_point(x)));
    normal.dot(&(z - centroid))
}

/// Residual and its derivative with respect to a left perturbation
/// `exp(xi) T`, `xi = (rotation, translation)`.
pub fn residual_jacobian(
    t: &RigidTransform,
    a: &RigidTransform,
    x: &Vec3,
    centroid: &Vec3,
    normal: &Vec3,
) -> (f64, [f64; 6]) {
    let y = t.transform_point(x);
    let q = a.transform_point(&y);
    let rt = t.rotation().transpose();
    let z = rt * (q - t.translation());
    let r = normal.dot(&(z - centroid));
    let m = rt.transpose() * normal;
    let ra = a.rotation();
    let d_rot = (-ra * hat(&y) + hat(&q)).transpose() * m;
    let d_trans = (ra - nalgebra::Matrix3::identity()).transpose() * m;
    (r, [d_rot.x, d_rot.y, d_rot.z, d_trans.x, d_trans.y, d_trans.z])
}

fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (0.5 * r * r, 1.0)
    } else {
        (delta * (a - 0.5 * delta), delta / a)
    }
}

struct Objective<'a> {
    problem: &'a WindowProblem<'a>,
    patches: &'a PatchSet,
    relative: Vec<RigidTransform>,
    corr: &'a [Correspondence],
    delta: f64,
    tz_weight: f64,
    tz_ref: f64,
    prior: Option<&'a InformationPrior>,
}

impl Objective<'_> {
    fn prior_cost(&self, t: &RigidTransform) -> f64 {
        self.prior.map_or(0.0, |p| {
            let e = p.offset(t);
            0.5 * e.dot(&(p.information * e))
        })
    }

    fn terms(&self, t: &RigidTransform) -> impl Iterator<Item = (f64, [f64; 6])> + '_ {
        let patches = self.patches;
        let t = *t;
        self.corr.iter().map(move |c| {
            let p = &patches.patches[c.patch];
            let x = &self.problem.members[c.frame].points[c.point];
            residual_jacobian(&t, &self.relative[c.frame], x, &p.centroid, &p.normal)
        })
    }

    fn cost(&self, t: &RigidTransform) -> f64 {
        let data: f64 = self.terms(t).map(|(r, _)| huber(r, self.delta).0).sum();
        let dz = t.translation().z - self.tz_ref;
        data + 0.5 * self.tz_weight * dz * dz + self.prior_cost(t)
    }

    /// Gauss-Newton system `(H, g)` and cost at `t`, with the data part of
    /// `H` separately.
    fn normal_equations(&self, t: &RigidTransform) -> (Matrix6<f64>, Vector6<f64>, f64, Matrix6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut cost = 0.0;
        for (r, j) in self.terms(t) {
            let (rho, w) = huber(r, self.delta);
            cost += rho;
            let j = Vector6::from_row_slice(&j);
            h += w * j * j.transpose();
            g += w * r * j;
        }
        let data_h = h;
        // z translation under a left perturbation: t_z + (w x t)_z + rho_z.
        let tr = t.translation();
        let jz = Vector6::new(tr.y, -tr.x, 0.0, 0.0, 0.0, 1.0);
        let dz = tr.z - self.tz_ref;
        h += self.tz_weight * jz * jz.transpose();
        g += self.tz_weight * dz * jz;
        cost += 0.5 * self.tz_weight * dz * dz;
        if let Some(p) = self.prior {
            // The left Jacobian of the offset is taken as identity.
            let e = p.offset(t);
            h += p.information;
            g += p.information * e;
            cost += 0.5 * e.dot(&(p.information * e));
        }
        (h, g, cost, data_h)
    }
}

/// Condition number of a symmetric positive semi-definite matrix.
fn condition_number(h: &Matrix6<f64>) -> f64 {
    let ev = SymmetricEigen::new(*h).eigenvalues;
    let max = ev.iter().cloned().fold(f64::MIN, f64::max);
    let min = ev.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub correspondences: usize,
    /// Estimate after every outer iteration.
    pub trace: Vec<RigidTransform>,
    /// Cost after every accepted step, under that step's association.
    pub accepted_costs: Vec<(f64, f64)>,
    /// Robust Gauss-Newton information of the data at the returned estimate.
    pub information: Matrix6<f64>,
}

/// Minimizes the robust point-to-plane cost of one window, re-associating
/// every outer iteration. Costs in the report are both evaluated under the
/// final association; if the final one is not lower the initial estimate is
/// returned.
pub fn solve_window(
    problem: &WindowProblem,
    initial: &RigidTransform,
    tz_ref: f64,
    prior: Option<&InformationPrior>,
    params: &RoughParams,
) -> Result<(RigidTransform, SolveReport)> {
    let relative = problem.relative_poses();
    let mut t = *initial;
    let mut report = SolveReport::default();
    let mut gate = params.gate_initial_m;
    let mut corr = Vec::new();
    let patches = &problem.anchor.patches;
    let mut lambda = 1e-4;
    let mut checked = false;
    while report.iterations < params.max_iterations {
        report.iterations += 1;
        corr = associate(problem, patches, &t, gate, params)?;
        let obj = Objective {
            problem,
            patches,
            relative: relative.clone(),
            corr: &corr,
            delta: params.huber_delta_m,
            tz_weight: params.tz_prior_weight,
            tz_ref,
            prior,
        };
        let (h, g, cost, _) = obj.normal_equations(&t);
        if !checked {
            let condition = condition_number(&h);
            if condition > params.max_condition {
                return Err(Error::SingularHessian { condition });
            }
            checked = true;
        }
        let mut step = None;
        for _ in 0..12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (h[(i, i)] + 1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&g);
            let candidate = perturb_left(&TangentVector::from_array(delta.into()), &t);
            let new_cost = obj.cost(&candidate);
            if new_cost <= cost {
                lambda = (lambda * 0.1).max(1e-9);
                step = Some((delta, candidate, cost, new_cost));
                break;
            }
            lambda *= 10.0;
        }
        let Some((delta, candidate, before, after)) = step else {
            report.trace.push(t);
            if gate > params.gate_final_m {
                gate = params.gate_final_m;
                continue;
            }
            report.converged = true;
            break;
        };
        report.accepted_costs.push((before, after));
        t = candidate;
        report.trace.push(t);
        if delta.norm() < params.step_tolerance {
            if gate > params.gate_final_m {
                gate = params.gate_final_m;
                continue;
            }
            report.converged = true;
            break;
        }
    }
    let obj = Objective {
        problem,
        patches,
        relative,
        corr: &corr,
        delta: params.huber_delta_m,
        tz_weight: params.tz_prior_weight,
        tz_ref,
        prior,
    };
    report.correspondences = corr.len();
    report.initial_cost = obj.cost(initial);
    report.final_cost = obj.cost(&t);
    if report.final_cost > report.initial_cost {
        report.final_cost = report.initial_cost;
        t = *initial;
    }
    report.information = obj.normal_equations(&t).3;
    Ok((t, report))
}

/// Per-window summary for convergence plots.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTrace {
    pub window: usize,
    pub anchor_frame: usize,
    pub iterations: usize,
    pub final_cost: f64,
    pub correspondences: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub estimate: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct RoughOutcome {
    pub result: CalibrationResult,
    pub windows: Vec<WindowTrace>,
}

/// Slides the window over the drive, warm-starting every window from the
/// previous estimate. Windows that fail keep the previous estimate; the
/// stage fails only if every window does.
pub fn run_rough(
    frames: &[PosedFrame],
    initial: &RigidTransform,
    params: &RoughParams,
) -> Result<RoughOutcome> {
    params.validate()?;
    let started = Instant::now();
    if frames.len() < params.window_size {
        return Err(Error::StageFailed {
            stage: "rough".into(),
            reason: format!("{} frames, window needs {}", frames.len(), params.window_size),
        });
    }
    let anchors: Vec<usize> = (0..=frames.len() - params.window_size)
        .step_by(params.stride)
        .collect();
    let prepared: Vec<PreparedFrame> = frames
        .par_iter()
        .map(|f| prepare_frame(f, &params.features, params.min_patch_extent_m))
        .collect();
    log::debug!("prepared {} frames in {:.1}s", prepared.len(), started.elapsed().as_secs_f64());

    let tz_ref = initial.translation().z;
    let mut estimate = *initial;
    let mut windows = Vec::with_capacity(anchors.len());
    let mut iterations = 0;
    let mut last_error = None;
    let mut last_ok: Option<SolveReport> = None;
    let mut prior: Option<InformationPrior> = None;
    for (w, &a) in anchors.iter().enumerate() {
        let problem = WindowProblem {
            anchor: &prepared[a],
            members: prepared[a + 1..a + params.window_size].iter().collect(),
        };
        match solve_window(&problem, &estimate, tz_ref, prior.as_ref(), params) {
            Ok((t, report)) => {
                iterations += report.iterations;
                estimate = t;
                if params.information_decay > 0.0 {
                    let carried = prior.map_or(Matrix6::zeros(), |p| p.information);
                    prior = Some(InformationPrior {
                        center: t,
                        information: params.information_decay * (carried + report.information),
                    });
                }
                windows.push(WindowTrace {
                    window: w,
                    anchor_frame: a,
                    iterations: report.iterations,
                    final_cost: report.final_cost,
                    correspondences: report.correspondences,
                    converged: report.converged,
                    failure: None,
                    estimate,
                });
                last_ok = Some(report);
            }
            Err(e) => {
                log::debug!("window {w} skipped: {e}");
                windows.push(WindowTrace {
                    window: w,
                    anchor_frame: a,
                    iterations: 0,
                    final_cost: f64::NAN,
                    correspondences: 0,
                    converged: false,
                    failure: Some(e.to_string()),
                    estimate,
                });
                last_error = Some(e);
            }
        }
    }
    let Some(last) = last_ok else {
        let reason = last_error.map_or_else(|| "no windows".to_string(), |e| e.to_string());
        return Err(Error::StageFailed {
            stage: "rough".into(),
            reason: format!("every window failed; last: {reason}"),
        });
    };
    let failed = windows.iter().filter(|w| w.failure.is_some()).count();
    let mut details = serde_json::Map::new();
    details.insert("windows".into(), windows.len().into());
    details.insert("windows_failed".into(), failed.into());
    details.insert("last_window_correspondences".into(), last.correspondences.into());
    let diagnostics = StageDiagnostics {
        iterations,
        final_cost: last.final_cost,
        converged: last.converged,
        runtime_s: started.elapsed().as_secs_f64(),
        details,
    };
    Ok(RoughOutcome {
        result: CalibrationResult::new(estimate, Stage::Rough, diagnostics, None)?,
        windows,
    })
}

/// Convergence trace CSV. With a reference, errors are the absolute ZYX
/// angles (degrees) and translation components of `reference^-1 estimate`.
pub fn write_trace_csv(
    windows: &[WindowTrace],
    reference: Option<&RigidTransform>,
    path: &Path,
) -> Result<()> {
    let mut body = String::from(
        "window,anchor_frame,iterations,correspondences,converged,final_cost,roll_deg,pitch_deg,yaw_deg,x_m,y_m,z_m\n",
    );
    for w in windows {
        let (angles, t) = match reference {
            Some(r) => {
                let d = r.inverse().compose(&w.estimate);
                let a = d.euler_zyx().to_degrees().map(f64::abs);
                (a, d.translation().map(f64::abs))
            }
            None => (w.estimate.euler_zyx().to_degrees(), *w.estimate.translation()),
        };
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            w.window,
            w.anchor_frame,
            w.iterations,
            w.correspondences,
            w.converged,
            w.final_cost,
            angles[0],
            angles[1],
            angles[2],
            t.x,
            t.y,
            t.z
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp, EulerZYX};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> RigidTransform {
        let v: [f64; 6] = std::array::from_fn(|i| {
            if i < 3 {
                rng.random_range(-rot..rot)
            } else {
                rng.random_range(-trans..trans)
            }
        });
        exp(&TangentVector::from_array(v))
    }

    #[test]
    fn projection_collapses_for_equal_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_transform(&mut rng, 1.0, 5.0);
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(project_to_anchor(&x, &p, &p, &RigidTransform::identity()), x, epsilon = 1e-12);
        let moved = project_to_anchor(
            &Vec3::zeros(),
            &RigidTransform::identity(),
            &RigidTransform::from_translation(Vec3::x()),
            &RigidTransform::identity(),
        );
        assert_relative_eq!(moved, Vec3::x(), epsilon = 1e-15);
    }

    #[test]
    fn projection_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_transform(&mut rng, 3.0, 10.0);
            let b = random_transform(&mut rng, 3.0, 10.0);
            let t = random_transform(&mut rng, 3.0, 2.0);
            let x = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0));
            let m = a.to_homogeneous().try_inverse().unwrap() * b.to_homogeneous() * t.to_homogeneous();
            let expected = m * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
            let got = project_to_anchor(&x, &a, &b, &t);
            assert_relative_eq!(got, expected.xyz(), epsilon = 1e-9);
        }
    }

    #[test]
    fn huber_is_continuous() {
        let d = 0.1;
        let (a, _) = huber(d - 1e-12, d);
        let (b, _) = huber(d + 1e-12, d);
        assert!((a - b).abs() < 1e-12);
        assert_eq!(huber(0.05, d), (0.5 * 0.05 * 0.05, 1.0));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_transform(&mut rng, 0.5, 1.0);
            let a = random_transform(&mut rng, 0.5, 3.0);
            let x = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0));
            let c = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0));
            let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let (r, j) = residual_jacobian(&t, &a, &x, &c, &n);
            assert_relative_eq!(r, residual(&t, &a, &x, &c, &n), epsilon = 1e-9);
            let h = 1e-6;
            for k in 0..6 {
                let mut e = [0.0; 6];
                e[k] = h;
                let plus = perturb_left(&TangentVector::from_array(e), &t);
                e[k] = -h;
                let minus = perturb_left(&TangentVector::from_array(e), &t);
                let fd = (residual(&plus, &a, &x, &c, &n) - residual(&minus, &a, &x, &c, &n)) / (2.0 * h);
                let scale = fd.abs().max(j[k].abs()).max(1e-3);
                assert!((fd - j[k]).abs() / scale < 1e-5, "k={k} fd={fd} j={}", j[k]);
            }
        }
    }

    #[test]
    fn tz_prior_jacobian_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng, 0.5, 2.0);
        let jz = [t.translation().y, -t.translation().x, 0.0, 0.0, 0.0, 1.0];
        let h = 1e-6;
        for k in 0..6 {
            let mut e = [0.0; 6];
            e[k] = h;
            let plus = perturb_left(&TangentVector::from_array(e), &t).translation().z;
            e[k] = -h;
            let minus = perturb_left(&TangentVector::from_array(e), &t).translation().z;
            assert!(((plus - minus) / (2.0 * h) - jz[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_chain_gives_zero_residual() {
        let t = RigidTransform::from_euler_zyx(EulerZYX::new(0.1, 0.0, 0.3), Vec3::new(1.0, 0.0, 0.5));
        let r = residual(&t, &RigidTransform::identity(), &Vec3::new(3.0, 0.0, 0.0), &Vec3::new(3.0, 5.0, 1.0), &Vec3::x());
        assert!(r.abs() < 1e-12);
    }
}
