//! Simplified parametric total-body model: a landmark-only kinematic tree
//! over body, hand and face joints with pose theta (axis-angle per
//! articulated joint group), shape beta (linear bone-length basis) and
//! expression epsilon (jaw + facial offset modes), plus forward kinematics
//! and analytic Jacobians for the fitting solver.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3D, Vec3};

pub const SHAPE_MODES: usize = 8;
pub const EXPRESSION_MODES: usize = 4;
/// Landmarks per hand (wrist + 5 fingers x 4 segments).
pub const HAND_LANDMARKS: usize = 21;
/// Articulated rotation groups per hand (3 per finger; tips are leaves).
pub const HAND_DOF_GROUPS: usize = 15;
pub const BODY_JOINTS: usize = 15;

pub type ShapeBasis = SMatrix<f64, 3, SHAPE_MODES>;
pub type ExpressionBasis = SMatrix<f64, 3, EXPRESSION_MODES>;

/// Body joint order shared by the association topology, the detections file
/// and the model's body landmark set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyJoint {
    MidHip = 0,
    Neck = 1,
    Nose = 2,
    LShoulder = 3,
    LElbow = 4,
    LWrist = 5,
    RShoulder = 6,
    RElbow = 7,
    RWrist = 8,
    LHip = 9,
    LKnee = 10,
    LAnkle = 11,
    RHip = 12,
    RKnee = 13,
    RAnkle = 14,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn wrist_joint(&self) -> usize {
        match self {
            Side::Left => BodyJoint::LWrist as usize,
            Side::Right => BodyJoint::RWrist as usize,
        }
    }

    pub fn elbow_joint(&self) -> usize {
        match self {
            Side::Left => BodyJoint::LElbow as usize,
            Side::Right => BodyJoint::RElbow as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJoint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent, meters.
    pub offset: [f64; 3],
    /// Index into the theta vector for articulated joints.
    pub dof: Option<usize>,
    /// Linear shape offset, meters per unit beta.
    pub shape_basis: ShapeBasis,
    /// Expression offset for face landmarks, meters per unit epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression_basis: Option<ExpressionBasis>,
}

impl ModelJoint {
    fn offset_vec(&self) -> Vec3 {
        Vec3::new(self.offset[0], self.offset[1], self.offset[2])
    }
}

/// The full kinematic tree plus landmark index sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelTopology {
    pub joints: Vec<ModelJoint>,
    pub dof_groups: usize,
    /// Indices of the 15 body joints, in [`BodyJoint`] order.
    pub body_landmarks: Vec<usize>,
    /// 21 left-hand landmarks, wrist first, then per finger MCP/PIP/DIP/TIP.
    pub left_hand_landmarks: Vec<usize>,
    pub right_hand_landmarks: Vec<usize>,
    pub face_landmarks: Vec<usize>,
    /// Theta group indices of each hand's articulated joints.
    pub left_hand_dofs: Vec<usize>,
    pub right_hand_dofs: Vec<usize>,
    /// Theta group indices of body joints (prior support).
    pub body_dofs: Vec<usize>,
    pub jaw_dof: usize,
}

impl ModelTopology {
    pub fn hand_landmarks(&self, side: Side) -> &[usize] {
        match side {
            Side::Left => &self.left_hand_landmarks,
            Side::Right => &self.right_hand_landmarks,
        }
    }

    pub fn hand_dofs(&self, side: Side) -> &[usize] {
        match side {
            Side::Left => &self.left_hand_dofs,
            Side::Right => &self.right_hand_dofs,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, j) in self.joints.iter().enumerate() {
            match j.parent {
                None if i != 0 => return Err(format!("joint {i} has no parent but is not root")),
                Some(p) if p >= i => {
                    return Err(format!("joint {i} parent {p} is not topologically earlier"))
                }
                _ => {}
            }
            if let Some(p) = j.parent {
                let _ = p;
                if j.offset_vec().norm() <= 0.0 {
                    return Err(format!("joint {i} ({}) has zero rest bone length", j.name));
                }
            }
        }
        if self.left_hand_landmarks.len() != HAND_LANDMARKS
            || self.right_hand_landmarks.len() != HAND_LANDMARKS
        {
            return Err("hands must carry exactly 21 landmarks".into());
        }
        Ok(())
    }

    /// Rest-pose world positions (identity global transform, zero params).
    pub fn rest_positions(&self) -> Vec<Point3D> {
        forward_kinematics(self, &BodyParams::rest(self))
    }

    /// Rest length of the bone above `joint` (0 for the root).
    pub fn rest_bone_length(&self, joint: usize) -> f64 {
        self.joints[joint].offset_vec().norm()
    }
}

/// The optimization variable of both fitting stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Axis-angle, radians.
    pub global_rotation: [f64; 3],
    /// Meters.
    pub global_translation: [f64; 3],
    /// One axis-angle per articulated joint group.
    pub theta: Vec<[f64; 3]>,
    pub beta: [f64; SHAPE_MODES],
    pub epsilon: [f64; EXPRESSION_MODES],
}

impl BodyParams {
    pub fn rest(topology: &ModelTopology) -> Self {
        BodyParams {
            global_rotation: [0.0; 3],
            global_translation: [0.0; 3],
            theta: vec![[0.0; 3]; topology.dof_groups],
            beta: [0.0; SHAPE_MODES],
            epsilon: [0.0; EXPRESSION_MODES],
        }
    }

    pub fn is_finite(&self) -> bool {
        let ok = |s: &[f64]| s.iter().all(|v| v.is_finite());
        ok(&self.global_rotation)
            && ok(&self.global_translation)
            && self.theta.iter().all(|t| ok(t))
            && ok(&self.beta)
            && ok(&self.epsilon)
    }

    /// Flat parameter vector: [g_rot, g_trans, theta.., beta, epsilon].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(param_count(self.theta.len()));
        v.extend_from_slice(&self.global_rotation);
        v.extend_from_slice(&self.global_translation);
        for t in &self.theta {
            v.extend_from_slice(t);
        }
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.epsilon);
        v
    }

    pub fn from_vector(v: &[f64], dof_groups: usize) -> Self {
        assert_eq!(v.len(), param_count(dof_groups));
        let mut theta = Vec::with_capacity(dof_groups);
        for g in 0..dof_groups {
            let o = 6 + 3 * g;
            theta.push([v[o], v[o + 1], v[o + 2]]);
        }
        let bo = 6 + 3 * dof_groups;
        BodyParams {
            global_rotation: [v[0], v[1], v[2]],
            global_translation: [v[3], v[4], v[5]],
            theta,
            beta: std::array::from_fn(|i| v[bo + i]),
            epsilon: std::array::from_fn(|i| v[bo + SHAPE_MODES + i]),
        }
    }
}

pub fn param_count(dof_groups: usize) -> usize {
    6 + 3 * dof_groups + SHAPE_MODES + EXPRESSION_MODES
}

/// Rodrigues rotation from an axis-angle vector.
pub fn rodrigues(v: &Vec3) -> Matrix3<f64> {
    let angle = v.norm();
    if angle < 1e-12 {
        return Matrix3::identity() + skew(v);
    }
    let axis = v / angle;
    let k = skew(&axis);
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Partial derivatives of the Rodrigues rotation with respect to each
/// axis-angle component (Gallego & Yezzi closed form).
pub fn rodrigues_derivatives(v: &Vec3) -> [Matrix3<f64>; 3] {
    let r = rodrigues(v);
    let n2 = v.norm_squared();
    std::array::from_fn(|i| {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        if n2 < 1e-16 {
            skew(&e)
        } else {
            let term = v[i] * skew(v) + skew(&v.cross(&((Matrix3::identity() - r) * e)));
            term * r / n2
        }
    })
}

struct FkState {
    /// World rotation per joint.
    rot: Vec<Matrix3<f64>>,
    /// World position per joint.
    pos: Vec<Vec3>,
    /// d position / d beta per joint, 3 x SHAPE_MODES.
    dbeta: Vec<SMatrix<f64, 3, SHAPE_MODES>>,
    /// d position / d epsilon per joint.
    deps: Vec<SMatrix<f64, 3, EXPRESSION_MODES>>,
}

fn run_fk(topology: &ModelTopology, params: &BodyParams) -> FkState {
    let n = topology.joints.len();
    let g_rot = rodrigues(&Vec3::from(params.global_rotation));
    let g_trans = Vec3::from(params.global_translation);
    let beta = SVector::<f64, SHAPE_MODES>::from(params.beta);
    let eps = SVector::<f64, EXPRESSION_MODES>::from(params.epsilon);

    let mut st = FkState {
        rot: Vec::with_capacity(n),
        pos: Vec::with_capacity(n),
        dbeta: Vec::with_capacity(n),
        deps: Vec::with_capacity(n),
    };
    for (i, joint) in topology.joints.iter().enumerate() {
        let (parent_rot, parent_pos, parent_db, parent_de) = match joint.parent {
            Some(p) => (st.rot[p], st.pos[p], st.dbeta[p], st.deps[p]),
            None => (
                g_rot,
                g_trans,
                SMatrix::zeros(),
                SMatrix::zeros(),
            ),
        };
        debug_assert!(joint.parent.is_some() || i == 0);
        let mut offset = joint.offset_vec() + joint.shape_basis * beta;
        let mut de = parent_de;
        if let Some(eb) = &joint.expression_basis {
            offset += eb * eps;
            de += parent_rot * eb;
        }
        let pos = parent_pos + parent_rot * offset;
        let local = match joint.dof {
            Some(d) => rodrigues(&Vec3::from(params.theta[d])),
            None => Matrix3::identity(),
        };
        st.rot.push(parent_rot * local);
        st.pos.push(pos);
        st.dbeta.push(parent_db + parent_rot * joint.shape_basis);
        st.deps.push(de);
    }
    st
}

/// World positions of every landmark (= every joint) under `params`.
pub fn forward_kinematics(topology: &ModelTopology, params: &BodyParams) -> Vec<Point3D> {
    run_fk(topology, params)
        .pos
        .into_iter()
        .map(Point3D::from_vec)
        .collect()
}

/// Analytic Jacobian of the selected landmarks' world positions with respect
/// to the flat parameter vector. Rows: 3 per landmark, in the given order.
pub fn jacobian(
    topology: &ModelTopology,
    params: &BodyParams,
    landmarks: &[usize],
) -> DMatrix<f64> {
    let st = run_fk(topology, params);
    let n_params = param_count(topology.dof_groups);
    let mut jac = DMatrix::zeros(3 * landmarks.len(), n_params);

    let g_rot_v = Vec3::from(params.global_rotation);
    let g_rot = rodrigues(&g_rot_v);
    let g_trans = Vec3::from(params.global_translation);
    let d_grot = rodrigues_derivatives(&g_rot_v);

    let beta_col = 6 + 3 * topology.dof_groups;
    let eps_col = beta_col + SHAPE_MODES;

    for (li, &lm) in landmarks.iter().enumerate() {
        let row = 3 * li;
        let p_l = st.pos[lm];

        // Global translation: identity block.
        for k in 0..3 {
            jac[(row + k, 3 + k)] = 1.0;
        }
        // Global rotation: p_l = t + R_g u, u fixed.
        let u = g_rot.transpose() * (p_l - g_trans);
        for i in 0..3 {
            let col = d_grot[i] * u;
            for k in 0..3 {
                jac[(row + k, i)] = col[k];
            }
        }
        // Shape and expression.
        for m in 0..SHAPE_MODES {
            for k in 0..3 {
                jac[(row + k, beta_col + m)] = st.dbeta[lm][(k, m)];
            }
        }
        for m in 0..EXPRESSION_MODES {
            for k in 0..3 {
                jac[(row + k, eps_col + m)] = st.deps[lm][(k, m)];
            }
        }
        // Articulated joints: walk ancestors of the landmark.
        let mut cur = Some(lm);
        while let Some(j) = cur {
            let joint = &topology.joints[j];
            if let Some(d) = joint.dof {
                // theta_d rotates everything strictly below joint j.
                // p_l = p_j + R_par R(theta) u with u constant wrt theta.
                if j != lm {
                    let parent_rot = match joint.parent {
                        Some(p) => st.rot[p],
                        None => g_rot,
                    };
                    let u = st.rot[j].transpose() * (p_l - st.pos[j]);
                    let dr = rodrigues_derivatives(&Vec3::from(params.theta[d]));
                    for i in 0..3 {
                        let col = parent_rot * dr[i] * u;
                        for k in 0..3 {
                            jac[(row + k, 6 + 3 * d + i)] = col[k];
                        }
                    }
                }
            }
            cur = joint.parent;
        }
    }
    jac
}

fn hand_finger_offsets() -> Vec<(&'static str, Vec3, [Vec3; 3])> {
    // Per finger: MCP offset from the wrist, then three segment offsets
    // (PIP, DIP, TIP directions), meters, for a left hand with fingers
    // along +x and thumb toward +z.
    let seg = |l: f64| Vec3::new(l, 0.0, 0.0);
    vec![
        (
            "thumb",
            Vec3::new(0.025, -0.01, 0.025),
            [Vec3::new(0.03, 0.0, 0.015), Vec3::new(0.028, 0.0, 0.008), Vec3::new(0.024, 0.0, 0.004)],
        ),
        ("index", Vec3::new(0.09, 0.0, 0.025), [seg(0.035), seg(0.022), seg(0.019)]),
        ("middle", Vec3::new(0.092, 0.0, 0.0), [seg(0.04), seg(0.025), seg(0.02)]),
        ("ring", Vec3::new(0.088, 0.0, -0.022), [seg(0.035), seg(0.023), seg(0.019)]),
        ("pinky", Vec3::new(0.082, 0.0, -0.042), [seg(0.028), seg(0.018), seg(0.016)]),
    ]
}

/// The default human topology shipped with the library: 15 body joints,
/// 2 x 21 hand landmarks, a jaw joint and 8 face landmarks.
pub fn default_topology() -> ModelTopology {
    let mut joints: Vec<ModelJoint> = Vec::new();
    let mut dof = 0usize;
    let mut body_dofs = Vec::new();

    // part ids feeding the shape basis: 0 torso, 1 head, 2 arms, 3 legs,
    // 4 hands, 5 shoulders, 6 hips
    let shape_basis = |offset: Vec3, part: usize| -> ShapeBasis {
        let mut b = ShapeBasis::zeros();
        b.set_column(0, &offset); // uniform scale
        if part + 1 < SHAPE_MODES {
            b.set_column(part + 1, &offset);
        }
        b
    };

    let mut add = |joints: &mut Vec<ModelJoint>,
                   name: &str,
                   parent: Option<usize>,
                   offset: Vec3,
                   part: usize,
                   articulated: bool,
                   body: bool|
     -> usize {
        let d = if articulated {
            let g = dof;
            dof += 1;
            if body {
                body_dofs.push(g);
            }
            Some(g)
        } else {
            None
        };
        joints.push(ModelJoint {
            name: name.to_string(),
            parent,
            offset: [offset.x, offset.y, offset.z],
            dof: d,
            shape_basis: shape_basis(offset, part),
            expression_basis: None,
        });
        joints.len() - 1
    };

    let o = Vec3::zeros;
    // Body, in BodyJoint order so body landmark i == joint i.
    let mid_hip = add(&mut joints, "mid_hip", None, o(), 0, true, true);
    let neck = add(&mut joints, "neck", Some(mid_hip), Vec3::new(0.0, 0.50, 0.0), 0, true, true);
    let nose = add(&mut joints, "nose", Some(neck), Vec3::new(0.0, 0.15, 0.08), 1, true, true);
    let l_shoulder = add(&mut joints, "l_shoulder", Some(neck), Vec3::new(0.18, -0.02, 0.0), 5, true, true);
    let l_elbow = add(&mut joints, "l_elbow", Some(l_shoulder), Vec3::new(0.28, 0.0, 0.0), 2, true, true);
    let l_wrist = add(&mut joints, "l_wrist", Some(l_elbow), Vec3::new(0.25, 0.0, 0.0), 2, true, true);
    let r_shoulder = add(&mut joints, "r_shoulder", Some(neck), Vec3::new(-0.18, -0.02, 0.0), 5, true, true);
    let r_elbow = add(&mut joints, "r_elbow", Some(r_shoulder), Vec3::new(-0.28, 0.0, 0.0), 2, true, true);
    let r_wrist = add(&mut joints, "r_wrist", Some(r_elbow), Vec3::new(-0.25, 0.0, 0.0), 2, true, true);
    let l_hip = add(&mut joints, "l_hip", Some(mid_hip), Vec3::new(0.09, -0.05, 0.0), 6, true, true);
    let l_knee = add(&mut joints, "l_knee", Some(l_hip), Vec3::new(0.0, -0.42, 0.0), 3, true, true);
    let _l_ankle = add(&mut joints, "l_ankle", Some(l_knee), Vec3::new(0.0, -0.40, 0.0), 3, true, true);
    let r_hip = add(&mut joints, "r_hip", Some(mid_hip), Vec3::new(-0.09, -0.05, 0.0), 6, true, true);
    let r_knee = add(&mut joints, "r_knee", Some(r_hip), Vec3::new(0.0, -0.42, 0.0), 3, true, true);
    let _r_ankle = add(&mut joints, "r_ankle", Some(r_knee), Vec3::new(0.0, -0.40, 0.0), 3, true, true);

    let body_landmarks: Vec<usize> = (0..BODY_JOINTS).collect();

    // Hands. The body wrist doubles as hand landmark 0.
    let mut build_hand = |joints: &mut Vec<ModelJoint>, wrist: usize, mirror: f64| {
        let mut landmarks = vec![wrist];
        let mut dofs = Vec::new();
        for (fname, mcp_off, segs) in hand_finger_offsets() {
            let m = Vec3::new(mirror * mcp_off.x, mcp_off.y, mcp_off.z);
            let mcp = add(joints, &format!("{fname}_mcp"), Some(wrist), m, 4, true, false);
            dofs.push(joints[mcp].dof.unwrap());
            let pip_off = Vec3::new(mirror * segs[0].x, segs[0].y, segs[0].z);
            let pip = add(joints, &format!("{fname}_pip"), Some(mcp), pip_off, 4, true, false);
            dofs.push(joints[pip].dof.unwrap());
            let dip_off = Vec3::new(mirror * segs[1].x, segs[1].y, segs[1].z);
            let dip = add(joints, &format!("{fname}_dip"), Some(pip), dip_off, 4, true, false);
            dofs.push(joints[dip].dof.unwrap());
            let tip_off = Vec3::new(mirror * segs[2].x, segs[2].y, segs[2].z);
            let tip = add(joints, &format!("{fname}_tip"), Some(dip), tip_off, 4, false, false);
            landmarks.push(mcp);
            landmarks.push(pip);
            landmarks.push(dip);
            landmarks.push(tip);
        }
        (landmarks, dofs)
    };
    let (left_hand_landmarks, left_hand_dofs) = build_hand(&mut joints, l_wrist, 1.0);
    let (right_hand_landmarks, right_hand_dofs) = build_hand(&mut joints, r_wrist, -1.0);

    // Jaw and face landmarks.
    let jaw = add(&mut joints, "jaw", Some(nose), Vec3::new(0.0, -0.05, 0.02), 1, true, false);
    let jaw_dof = joints[jaw].dof.unwrap();
    let mut face_landmarks = Vec::new();
    let face_points: [(&str, usize, Vec3); 8] = [
        ("l_eye", nose, Vec3::new(0.03, 0.04, 0.02)),
        ("r_eye", nose, Vec3::new(-0.03, 0.04, 0.02)),
        ("l_brow", nose, Vec3::new(0.035, 0.065, 0.015)),
        ("r_brow", nose, Vec3::new(-0.035, 0.065, 0.015)),
        ("nose_tip", nose, Vec3::new(0.0, -0.005, 0.045)),
        ("mouth_l", jaw, Vec3::new(0.022, 0.01, 0.02)),
        ("mouth_r", jaw, Vec3::new(-0.022, 0.01, 0.02)),
        ("chin", jaw, Vec3::new(0.0, -0.025, 0.015)),
    ];
    for (mi, (name, parent, offset)) in face_points.iter().enumerate() {
        let idx = add(&mut joints, name, Some(*parent), *offset, 1, false, false);
        // Small per-landmark expression modes: mouth stretch, brow raise,
        // smile asymmetry, chin drop.
        let mut eb = ExpressionBasis::zeros();
        let s = if name.starts_with("mouth") || *name == "chin" { 1.0 } else { 0.2 };
        eb[(0, 0)] = 0.01 * s * if mi % 2 == 0 { 1.0 } else { -1.0 };
        eb[(1, 1)] = 0.012 * s;
        eb[(1, 2)] = if name.starts_with("mouth") { 0.008 } else { 0.0 };
        eb[(2, 3)] = 0.006 * s;
        joints[idx].expression_basis = Some(eb);
        face_landmarks.push(idx);
    }

    let topo = ModelTopology {
        joints,
        dof_groups: dof,
        body_landmarks,
        left_hand_landmarks,
        right_hand_landmarks,
        face_landmarks,
        left_hand_dofs,
        right_hand_dofs,
        body_dofs,
        jaw_dof,
    };
    topo.validate().expect("default topology is valid");
    topo
}
