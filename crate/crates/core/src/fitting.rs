//! Two-stage parametric fitting.
//!
//! Stage 1 initializes the model locally: global transform, body pose and
//! shape against the triangulated 3D skeleton, with hand pose copied from the
//! best-scoring regression observation. Stage 2 optimizes the total energy,
//! adding the 2D hand and face keypoint terms across all views (each view
//! weighted by its association confidence) and the remaining regularizers.
//! Both stages run the same damped Gauss-Newton solver.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3};
use thiserror::Error;

use crate::association::Skeleton3D;
use crate::body_model::{
    self, jacobian as landmark_jacobian, param_count, BodyParams, ModelTopology, Side,
    EXPRESSION_MODES, HAND_DOF_GROUPS, SHAPE_MODES,
};
use crate::bootstrap::ScoredCandidate;
use crate::config::FitWeights;
use crate::geometry::{Camera, Point3D};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("skeleton has {0} joints; at least 4 are required")]
    TooFewJoints(usize),
    #[error("normal equations singular even at maximum damping")]
    SingularNormalEquations,
}

/// Result of one solver run: the best parameters found and the energy after
/// every accepted step (index 0 is the initial energy).
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub x: DVector<f64>,
    pub energies: Vec<f64>,
}

const DAMPING_INIT: f64 = 1e-3;
const DAMPING_MAX: f64 = 1e12;

/// Damped Gauss-Newton. The damping starts at 1e-3, is multiplied by 10 on
/// every rejected (non-decreasing) step and divided by 10 on acceptance.
/// After each accepted damped step the undamped step from the same
/// linearization is also tried and kept if it lowers the energy further, so
/// linear least-squares problems land on the exact optimum in one accepted
/// iteration.
pub fn gauss_newton<R, J>(
    residual: R,
    jac: J,
    init: DVector<f64>,
    iterations: usize,
) -> Result<SolveTrace, FitError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = init;
    let mut energy = residual(&x).norm_squared();
    let mut energies = vec![energy];
    let mut damping = DAMPING_INIT;

    for _ in 0..iterations {
        if energy == 0.0 {
            break;
        }
        let r = residual(&x);
        let jm = jac(&x);
        let jtj = jm.transpose() * &jm;
        let neg_jtr = -(jm.transpose() * &r);

        let mut accepted = false;
        let mut any_solvable = false;
        while damping <= DAMPING_MAX {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += damping;
            }
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            any_solvable = true;
            let step = chol.solve(&neg_jtr);
            let cand = &x + &step;
            let e_cand = residual(&cand).norm_squared();
            if e_cand.is_finite() && e_cand < energy {
                let (mut best_x, mut best_e) = (cand, e_cand);
                if let Some(pure) = jtj.clone().cholesky() {
                    let gx = &x + pure.solve(&neg_jtr);
                    let ge = residual(&gx).norm_squared();
                    if ge.is_finite() && ge < best_e {
                        best_x = gx;
                        best_e = ge;
                    }
                }
                x = best_x;
                energy = best_e;
                energies.push(energy);
                damping = (damping / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            if !any_solvable {
                return Err(FitError::SingularNormalEquations);
            }
            // Converged: no decreasing step exists at any damping.
            break;
        }
    }
    Ok(SolveTrace { x, energies })
}

/// Everything one person's fit needs.
#[derive(Debug, Clone)]
pub struct FitProblem<'a> {
    pub topology: &'a ModelTopology,
    pub skeleton: &'a Skeleton3D,
    pub cameras: &'a [Camera],
    /// Associated hand observation per (side, view).
    pub hand_obs: BTreeMap<(Side, usize), ScoredCandidate>,
    /// Detected 2D face landmarks per view, indexed like the topology's face
    /// landmark list; `None` marks an undetected landmark.
    pub face_obs: BTreeMap<usize, Vec<Option<[f64; 2]>>>,
    pub weights: FitWeights,
    pub iterations: usize,
}

impl<'a> FitProblem<'a> {
    fn camera(&self, view_id: usize) -> Option<&'a Camera> {
        self.cameras.iter().find(|c| c.id == view_id)
    }
}

/// Pick the regressed gesture with the highest association score across
/// views; with no observations the rest gesture is used.
pub fn select_initial_gesture<'a, I>(obs: I) -> Vec<[f64; 3]>
where
    I: IntoIterator<Item = &'a ScoredCandidate>,
{
    let best = obs.into_iter().max_by(|a, b| {
        a.score()
            .partial_cmp(&b.score())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    match best {
        Some(c) => c.candidate.observation.gesture_params.clone(),
        None => vec![[0.0; 3]; HAND_DOF_GROUPS],
    }
}

/// One squared-residual block of the assembled problem.
enum Block {
    /// 3D body landmark vs. triangulated joint, meters. (landmark, target, sqrt-weight)
    Point3 { lm: usize, target: Point3D, w: f64 },
    /// 2D landmark reprojection, pixels. (landmark, view, target, sqrt-weight)
    Point2 { lm: usize, view: usize, target: [f64; 2], w: f64 },
    /// L2 pull of one parameter toward zero. (column, sqrt-weight)
    Param { col: usize, w: f64 },
}

struct Assembly<'a> {
    topology: &'a ModelTopology,
    cameras: BTreeMap<usize, &'a Camera>,
    blocks: Vec<Block>,
    /// Distinct model joints referenced by Point3/Point2 blocks.
    landmarks: Vec<usize>,
    /// landmark joint -> index into `landmarks`.
    lm_index: BTreeMap<usize, usize>,
}

impl<'a> Assembly<'a> {
    fn new(problem: &FitProblem<'a>, blocks: Vec<Block>) -> Self {
        let mut lm_index = BTreeMap::new();
        let mut landmarks = Vec::new();
        for b in &blocks {
            let lm = match b {
                Block::Point3 { lm, .. } | Block::Point2 { lm, .. } => *lm,
                Block::Param { .. } => continue,
            };
            lm_index.entry(lm).or_insert_with(|| {
                landmarks.push(lm);
                landmarks.len() - 1
            });
        }
        let cameras = problem.cameras.iter().map(|c| (c.id, c)).collect();
        Assembly { topology: problem.topology, cameras, blocks, landmarks, lm_index }
    }

    fn residual_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Point3 { .. } => 3,
                Block::Point2 { .. } => 2,
                Block::Param { .. } => 1,
            })
            .sum()
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let params = BodyParams::from_vector(x.as_slice(), self.topology.dof_groups);
        let pos = body_model::forward_kinematics(self.topology, &params);
        let mut r = DVector::zeros(self.residual_len());
        let mut row = 0;
        for b in &self.blocks {
            match b {
                Block::Point3 { lm, target, w } => {
                    let d = pos[*lm].as_vec() - target.as_vec();
                    for k in 0..3 {
                        r[row + k] = w * d[k];
                    }
                    row += 3;
                }
                Block::Point2 { lm, view, target, w } => {
                    let cam = self.cameras[view];
                    if let Ok(px) = crate::geometry::project(cam, &pos[*lm]) {
                        r[row] = w * (px.x - target[0]);
                        r[row + 1] = w * (px.y - target[1]);
                    }
                    row += 2;
                }
                Block::Param { col, w } => {
                    r[row] = w * x[*col];
                    row += 1;
                }
            }
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let params = BodyParams::from_vector(x.as_slice(), self.topology.dof_groups);
        let pos = body_model::forward_kinematics(self.topology, &params);
        let jl = landmark_jacobian(self.topology, &params, &self.landmarks);
        let n_params = param_count(self.topology.dof_groups);
        let mut jac = DMatrix::zeros(self.residual_len(), n_params);
        let mut row = 0;
        for b in &self.blocks {
            match b {
                Block::Point3 { lm, w, .. } => {
                    let lr = 3 * self.lm_index[lm];
                    for k in 0..3 {
                        for c in 0..n_params {
                            jac[(row + k, c)] = w * jl[(lr + k, c)];
                        }
                    }
                    row += 3;
                }
                Block::Point2 { lm, view, w, .. } => {
                    let cam = self.cameras[view];
                    let pc = cam.to_camera_frame(&pos[*lm]);
                    if pc.z > 0.0 {
                        let f = cam.focal;
                        let dpix = Matrix2x3::new(
                            f / pc.z,
                            0.0,
                            -f * pc.x / (pc.z * pc.z),
                            0.0,
                            f / pc.z,
                            -f * pc.y / (pc.z * pc.z),
                        ) * cam.rotation;
                        let lr = 3 * self.lm_index[lm];
                        for c in 0..n_params {
                            for k in 0..2 {
                                let mut v = 0.0;
                                for m in 0..3 {
                                    v += dpix[(k, m)] * jl[(lr + m, c)];
                                }
                                jac[(row + k, c)] = w * v;
                            }
                        }
                    }
                    row += 2;
                }
                Block::Param { col, w } => {
                    jac[(row, *col)] = *w;
                    row += 1;
                }
            }
        }
        jac
    }
}

fn body_3d_blocks(problem: &FitProblem) -> Result<Vec<Block>, FitError> {
    let w = problem.weights.lambda_b3d.sqrt();
    let mut blocks = Vec::new();
    for (j, joint) in problem.skeleton.joints.iter().enumerate() {
        if let Some(p) = joint {
            blocks.push(Block::Point3 {
                lm: problem.topology.body_landmarks[j],
                target: *p,
                w,
            });
        }
    }
    if blocks.len() < 4 {
        return Err(FitError::TooFewJoints(blocks.len()));
    }
    Ok(blocks)
}

fn regularizer_blocks(problem: &FitProblem, hands: bool) -> Vec<Block> {
    let t = problem.topology;
    let mut blocks = Vec::new();
    let theta_col = |group: usize, k: usize| 6 + 3 * group + k;
    let w_pri = problem.weights.lambda_pri.sqrt();
    for &d in t.body_dofs.iter().chain(std::iter::once(&t.jaw_dof)) {
        for k in 0..3 {
            blocks.push(Block::Param { col: theta_col(d, k), w: w_pri });
        }
    }
    if hands {
        let w_h = problem.weights.lambda_theta_h.sqrt();
        for &d in t.left_hand_dofs.iter().chain(&t.right_hand_dofs) {
            for k in 0..3 {
                blocks.push(Block::Param { col: theta_col(d, k), w: w_h });
            }
        }
    }
    let beta_col = 6 + 3 * t.dof_groups;
    let w_b = problem.weights.lambda_beta.sqrt();
    for m in 0..SHAPE_MODES {
        blocks.push(Block::Param { col: beta_col + m, w: w_b });
    }
    if hands {
        let w_e = problem.weights.lambda_eps.sqrt();
        for m in 0..EXPRESSION_MODES {
            blocks.push(Block::Param { col: beta_col + SHAPE_MODES + m, w: w_e });
        }
    }
    blocks
}

fn keypoint_2d_blocks(problem: &FitProblem) -> Vec<Block> {
    let mut blocks = Vec::new();
    for ((side, view), obs) in &problem.hand_obs {
        if problem.camera(*view).is_none() {
            continue;
        }
        // Each view's hand term carries the association confidence (ζ+ξ)/2.
        let view_weight = (obs.zeta + obs.xi) / 2.0;
        let w = (problem.weights.lambda_h2d * view_weight).sqrt();
        if w == 0.0 {
            continue;
        }
        let landmarks = problem.topology.hand_landmarks(*side);
        for (j, kp) in obs.candidate.observation.keypoints_detected.iter().enumerate() {
            blocks.push(Block::Point2 {
                lm: landmarks[j],
                view: *view,
                target: kp.position,
                w,
            });
        }
    }
    let w_f = problem.weights.lambda_f2d.sqrt();
    for (view, lms) in &problem.face_obs {
        if problem.camera(*view).is_none() || w_f == 0.0 {
            continue;
        }
        for (j, lm2d) in lms.iter().enumerate() {
            if let Some(p) = lm2d {
                blocks.push(Block::Point2 {
                    lm: problem.topology.face_landmarks[j],
                    view: *view,
                    target: *p,
                    w: w_f,
                });
            }
        }
    }
    blocks
}

fn solve_assembly(
    problem: &FitProblem,
    blocks: Vec<Block>,
    init: &BodyParams,
) -> Result<FitOutcome, FitError> {
    let asm = Assembly::new(problem, blocks);
    let x0 = DVector::from_vec(init.to_vector());
    let trace = gauss_newton(
        |x| asm.residual(x),
        |x| asm.jacobian(x),
        x0,
        problem.iterations,
    )?;
    Ok(FitOutcome {
        params: BodyParams::from_vector(trace.x.as_slice(), problem.topology.dof_groups),
        energies: trace.energies,
    })
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: BodyParams,
    /// Accepted-step energies of the solve, initial value first.
    pub energies: Vec<f64>,
}

/// Stage 1: fit global transform, body pose and shape to the triangulated
/// skeleton; hand pose is copied from the highest-scoring regression.
pub fn stage1_fit(problem: &FitProblem, init: &BodyParams) -> Result<FitOutcome, FitError> {
    let mut blocks = body_3d_blocks(problem)?;
    blocks.extend(regularizer_blocks(problem, false));

    let mut start = init.clone();
    for side in [Side::Left, Side::Right] {
        let gesture = select_initial_gesture(
            problem.hand_obs.iter().filter(|((s, _), _)| *s == side).map(|(_, o)| o),
        );
        for (g, &d) in gesture.iter().zip(problem.topology.hand_dofs(side)) {
            start.theta[d] = *g;
        }
    }
    solve_assembly(problem, blocks, &start)
}

/// Stage 2: total optimization, adding the 2D hand/face data terms and the
/// hand-pose and expression regularizers.
pub fn stage2_fit(problem: &FitProblem, init: &BodyParams) -> Result<FitOutcome, FitError> {
    let mut blocks = body_3d_blocks(problem)?;
    blocks.extend(keypoint_2d_blocks(problem));
    blocks.extend(regularizer_blocks(problem, true));
    solve_assembly(problem, blocks, init)
}

/// Unweighted per-term energies plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyReport {
    pub e_b3d: f64,
    pub e_h2d: f64,
    pub e_f2d: f64,
    pub e_pri: f64,
    pub e_beta: f64,
    pub e_theta_h: f64,
    pub e_eps: f64,
    pub e_total: f64,
}

pub fn energy_report(problem: &FitProblem, params: &BodyParams) -> EnergyReport {
    let t = problem.topology;
    let pos = body_model::forward_kinematics(t, params);

    let mut e_b3d = 0.0;
    for (j, joint) in problem.skeleton.joints.iter().enumerate() {
        if let Some(p) = joint {
            e_b3d += (pos[t.body_landmarks[j]].as_vec() - p.as_vec()).norm_squared();
        }
    }

    let mut e_h2d = 0.0;
    for ((side, view), obs) in &problem.hand_obs {
        let Some(cam) = problem.camera(*view) else { continue };
        let view_weight = (obs.zeta + obs.xi) / 2.0;
        let mut e_view = 0.0;
        for (j, kp) in obs.candidate.observation.keypoints_detected.iter().enumerate() {
            let lm = t.hand_landmarks(*side)[j];
            if let Ok(px) = crate::geometry::project(cam, &pos[lm]) {
                e_view += (px - crate::geometry::Vec2::new(kp.position[0], kp.position[1]))
                    .norm_squared();
            }
        }
        e_h2d += view_weight * e_view;
    }

    let mut e_f2d = 0.0;
    for (view, lms) in &problem.face_obs {
        let Some(cam) = problem.camera(*view) else { continue };
        for (j, lm2d) in lms.iter().enumerate() {
            if let Some(p) = lm2d {
                if let Ok(px) = crate::geometry::project(cam, &pos[t.face_landmarks[j]]) {
                    e_f2d +=
                        (px - crate::geometry::Vec2::new(p[0], p[1])).norm_squared();
                }
            }
        }
    }

    let sq = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>();
    let mut e_pri = 0.0;
    for &d in t.body_dofs.iter().chain(std::iter::once(&t.jaw_dof)) {
        e_pri += sq(&params.theta[d]);
    }
    let mut e_theta_h = 0.0;
    for &d in t.left_hand_dofs.iter().chain(&t.right_hand_dofs) {
        e_theta_h += sq(&params.theta[d]);
    }
    let e_beta = params.beta.iter().map(|x| x * x).sum::<f64>();
    let e_eps = params.epsilon.iter().map(|x| x * x).sum::<f64>();

    let w = &problem.weights;
    let e_total = w.lambda_b3d * e_b3d
        + w.lambda_h2d * e_h2d
        + w.lambda_f2d * e_f2d
        + w.lambda_pri * e_pri
        + w.lambda_beta * e_beta
        + w.lambda_theta_h * e_theta_h
        + w.lambda_eps * e_eps;

    EnergyReport { e_b3d, e_h2d, e_f2d, e_pri, e_beta, e_theta_h, e_eps, e_total }
}

/// Mean 2D reprojection error (px) of the associated hand keypoints under
/// `params`, across all hand observations. `None` when there are none.
pub fn hand_reprojection_error(problem: &FitProblem, params: &BodyParams) -> Option<f64> {
    let pos = body_model::forward_kinematics(problem.topology, params);
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((side, view), obs) in &problem.hand_obs {
        let Some(cam) = problem.camera(*view) else { continue };
        for (j, kp) in obs.candidate.observation.keypoints_detected.iter().enumerate() {
            let lm = problem.topology.hand_landmarks(*side)[j];
            if let Ok(px) = crate::geometry::project(cam, &pos[lm]) {
                sum += (px - crate::geometry::Vec2::new(kp.position[0], kp.position[1])).norm();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}
