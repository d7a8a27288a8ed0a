//! Deterministic synthetic scenes with ground truth.
//!
//! A scene spec describes persons (trajectory + articulation amplitudes), a
//! camera rig, pixel noise and occlusion scripts. Generation produces, per
//! frame, the ground-truth model parameters and landmarks plus simulated
//! detector output: noisy body keypoints per view and hand observations that
//! behave like a real two-network hand localizer — in particular, requesting
//! the wrong chirality for a crop yields mirrored regressed keypoints.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::{
    self, default_topology, BodyParams, ModelTopology, Side,
};
use crate::bootstrap::{
    HandDetector, HandKeypoint, HandObservation, Roi, RoiStage,
};
use crate::geometry::{look_at_camera, project, Camera, Detection2D, Point3D, Vec3};

/// Camera rig description: a horizontal ring around the capture volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingSpec {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub focal: f64,
    pub width: f64,
    pub height_px: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            count: 6,
            radius: 4.0,
            height: 1.6,
            focal: 1200.0,
            width: 1600.0,
            height_px: 1200.0,
        }
    }
}

impl RingSpec {
    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.count)
            .map(|i| {
                let a = i as f64 / self.count as f64 * std::f64::consts::TAU;
                look_at_camera(
                    i,
                    Vec3::new(self.radius * a.cos(), self.height, self.radius * a.sin()),
                    Vec3::new(0.0, 1.0, 0.0),
                    self.focal,
                    self.width,
                    self.height_px,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonSpec {
    pub start: [f64; 3],
    /// Meters per frame.
    pub velocity: [f64; 3],
    pub pose_seed: u64,
    /// Body joint sway amplitude, radians.
    pub pose_amplitude: f64,
    /// Finger flexion amplitude, radians.
    pub hand_amplitude: f64,
}

impl Default for PersonSpec {
    fn default() -> Self {
        PersonSpec {
            start: [0.0, 0.95, 0.0],
            velocity: [0.0; 3],
            pose_seed: 0,
            pose_amplitude: 0.25,
            hand_amplitude: 0.6,
        }
    }
}

/// Hide `joints` of `person` in `view` at `frame`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionEvent {
    pub frame: usize,
    pub view: usize,
    pub person: usize,
    pub joints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    /// Gaussian pixel noise std applied to all 2D detections.
    pub noise_px: f64,
    pub ring: RingSpec,
    pub persons: Vec<PersonSpec>,
    pub occlusions: Vec<OcclusionEvent>,
    pub with_faces: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            frames: 30,
            noise_px: 0.0,
            ring: RingSpec::default(),
            persons: vec![
                PersonSpec {
                    start: [-0.8, 0.93, 0.0],
                    velocity: [0.004, 0.0, 0.002],
                    pose_seed: 1,
                    ..Default::default()
                },
                PersonSpec {
                    start: [0.8, 1.0, 0.1],
                    velocity: [-0.003, 0.0, 0.003],
                    pose_seed: 2,
                    ..Default::default()
                },
            ],
            occlusions: Vec::new(),
            with_faces: false,
        }
    }
}

/// One simulated hand-detector output plus its ground-truth attribution
/// (used only for evaluation, never by the pipeline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthHandObs {
    pub observation: HandObservation,
    pub truth_person: usize,
    pub truth_side: Side,
    /// Exact (noise-free) detected keypoint positions.
    pub exact_keypoints: Vec<[f64; 2]>,
}

/// Everything known about one generated frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTruth {
    pub params: Vec<BodyParams>,
    /// Per person, the 15 ground-truth body joint positions.
    pub body_joints: Vec<Vec<Point3D>>,
    /// Per person, all model landmark positions.
    pub landmarks: Vec<Vec<Point3D>>,
    /// Noisy body detections across all views.
    pub detections: Vec<Detection2D>,
    /// Per view, the simulated hand observations.
    pub hands: Vec<Vec<SynthHandObs>>,
    /// Per person per view, noisy 2D face landmarks (empty when faces are
    /// disabled or the face is outside the view).
    pub faces: Vec<Vec<Option<Vec<[f64; 2]>>>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cameras: Vec<Camera>,
    pub topology: ModelTopology,
    pub frames: Vec<FrameTruth>,
}

/// Per-dof sinusoid parameters drawn once per person.
struct Sway {
    freq: f64,
    phase: f64,
}

fn person_params(
    topology: &ModelTopology,
    spec: &PersonSpec,
    frame: usize,
) -> BodyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.pose_seed);
    let mut params = BodyParams::rest(topology);
    let t = frame as f64;
    params.global_translation = [
        spec.start[0] + spec.velocity[0] * t,
        spec.start[1] + spec.velocity[1] * t,
        spec.start[2] + spec.velocity[2] * t,
    ];
    params.global_rotation = [0.0, rng.gen_range(-0.5..0.5), 0.0];
    let mut sway = |amp: f64| -> ([f64; 3], [Sway; 3]) {
        let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-amp..amp));
        let s: [Sway; 3] = std::array::from_fn(|_| Sway {
            freq: rng.gen_range(0.01..0.06),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        });
        (base, s)
    };
    for &d in &topology.body_dofs {
        let (base, s) = sway(spec.pose_amplitude);
        for k in 0..3 {
            params.theta[d][k] = base[k] * 0.6
                + spec.pose_amplitude
                    * 0.4
                    * (std::f64::consts::TAU * s[k].freq * t + s[k].phase).sin();
        }
    }
    for &d in topology
        .left_hand_dofs
        .iter()
        .chain(&topology.right_hand_dofs)
    {
        let f = rng.gen_range(0.02..0.08);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        params.theta[d][0] = spec.hand_amplitude
            * 0.5
            * (1.0 + (std::f64::consts::TAU * f * t + phase).sin())
            * 0.5;
    }
    for b in params.beta.iter_mut() {
        *b = rng.gen_range(-0.3..0.3);
    }
    params
}

/// Mirror keypoints horizontally about the box center — what a chirality-blind
/// pose-regression network produces for an opposite-hand crop.
pub fn mirror_keypoints(points: &[[f64; 2]], center_x: f64) -> Vec<[f64; 2]> {
    points.iter().map(|p| [2.0 * center_x - p[0], p[1]]).collect()
}

fn tight_square(points: &[[f64; 2]], view_id: usize) -> Roi {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let half = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0).max(4.0);
    Roi {
        center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
        half_width: half,
        half_height: half,
        view_id,
        stage: RoiStage::Beta,
    }
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, String> {
    if spec.ring.count < 2 {
        return Err("a scene needs at least 2 cameras".into());
    }
    if spec.persons.is_empty() {
        return Err("a scene needs at least 1 person".into());
    }
    let topology = default_topology();
    let cameras = spec.ring.cameras();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let mut frames = Vec::with_capacity(spec.frames);

    for frame in 0..spec.frames {
        let params: Vec<BodyParams> = spec
            .persons
            .iter()
            .map(|p| person_params(&topology, p, frame))
            .collect();
        let landmarks: Vec<Vec<Point3D>> = params
            .iter()
            .map(|p| body_model::forward_kinematics(&topology, p))
            .collect();
        let body_joints: Vec<Vec<Point3D>> = landmarks
            .iter()
            .map(|lms| topology.body_landmarks.iter().map(|&i| lms[i]).collect())
            .collect();

        let hidden = |view: usize, person: usize, joint: usize| {
            spec.occlusions.iter().any(|o| {
                o.frame == frame && o.view == view && o.person == person
                    && o.joints.contains(&joint)
            })
        };

        let mut detections = Vec::new();
        for cam in &cameras {
            for (pi, joints) in body_joints.iter().enumerate() {
                for (j, p) in joints.iter().enumerate() {
                    if hidden(cam.id, pi, j) {
                        continue;
                    }
                    let Ok(px) = project(cam, p) else { continue };
                    let noisy = crate::geometry::Vec2::new(
                        px.x + spec.noise_px * noise(&mut rng),
                        px.y + spec.noise_px * noise(&mut rng),
                    );
                    if !cam.contains_pixel(&noisy) {
                        continue;
                    }
                    detections.push(Detection2D {
                        position: [noisy.x, noisy.y],
                        confidence: 1.0,
                        joint_id: j,
                        view_id: cam.id,
                    });
                }
            }
        }

        let mut hands: Vec<Vec<SynthHandObs>> = vec![Vec::new(); cameras.len()];
        for cam in &cameras {
            for (pi, lms) in landmarks.iter().enumerate() {
                for side in [Side::Left, Side::Right] {
                    let mut exact = Vec::new();
                    let mut ok = true;
                    for &lm in topology.hand_landmarks(side) {
                        match project(cam, &lms[lm]) {
                            Ok(px) if cam.contains_pixel(&px) => exact.push([px.x, px.y]),
                            _ => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let detected: Vec<HandKeypoint> = exact
                        .iter()
                        .map(|p| HandKeypoint {
                            position: [
                                p[0] + spec.noise_px * noise(&mut rng),
                                p[1] + spec.noise_px * noise(&mut rng),
                            ],
                            confidence: 1.0,
                        })
                        .collect();
                    let roi = tight_square(&exact, cam.id);
                    let gesture: Vec<[f64; 3]> = topology
                        .hand_dofs(side)
                        .iter()
                        .map(|&d| params[pi].theta[d])
                        .collect();
                    hands[cam.id].push(SynthHandObs {
                        observation: HandObservation {
                            roi,
                            keypoints_regressed: detected
                                .iter()
                                .map(|k| k.position)
                                .collect(),
                            keypoints_detected: detected,
                            gesture_params: gesture,
                            chirality: side,
                        },
                        truth_person: pi,
                        truth_side: side,
                        exact_keypoints: exact,
                    });
                }
            }
        }

        let mut faces: Vec<Vec<Option<Vec<[f64; 2]>>>> =
            vec![vec![None; cameras.len()]; spec.persons.len()];
        if spec.with_faces {
            for cam in &cameras {
                for (pi, lms) in landmarks.iter().enumerate() {
                    let mut pts = Vec::new();
                    let mut ok = true;
                    for &lm in &topology.face_landmarks {
                        match project(cam, &lms[lm]) {
                            Ok(px) if cam.contains_pixel(&px) => pts.push([
                                px.x + spec.noise_px * noise(&mut rng),
                                px.y + spec.noise_px * noise(&mut rng),
                            ]),
                            _ => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        faces[pi][cam.id] = Some(pts);
                    }
                }
            }
        }

        frames.push(FrameTruth {
            params,
            body_joints,
            landmarks,
            detections,
            hands,
            faces,
        });
    }

    Ok(SyntheticScene { spec: spec.clone(), cameras, topology, frames })
}

/// Standard-normal sample (Box–Muller).
fn noise(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Hand detector backed by one frame's simulated observations: returns every
/// observation whose box center lies inside the queried α region. Crops of
/// the opposite hand come back with mirrored regressed keypoints and a
/// neutral gesture, mimicking a chirality-blind regression network.
pub struct FrameHandDetector<'a> {
    pub hands: &'a [Vec<SynthHandObs>],
}

impl HandDetector for FrameHandDetector<'_> {
    fn detect(
        &self,
        view_id: usize,
        alpha: &Roi,
        side: Side,
    ) -> Result<Vec<HandObservation>, String> {
        let Some(view_obs) = self.hands.get(view_id) else {
            return Err(format!("view {view_id} out of range"));
        };
        let mut out = Vec::new();
        for obs in view_obs {
            let c = obs.observation.roi.center;
            let inside = (c[0] - alpha.center[0]).abs() <= alpha.half_width
                && (c[1] - alpha.center[1]).abs() <= alpha.half_height;
            if !inside {
                continue;
            }
            let mut o = obs.observation.clone();
            if obs.truth_side != side {
                o.keypoints_regressed =
                    mirror_keypoints(&o.keypoints_regressed, o.roi.center[0]);
                o.gesture_params =
                    vec![[0.0; 3]; crate::body_model::HAND_DOF_GROUPS];
            }
            o.chirality = side;
            out.push(o);
        }
        Ok(out)
    }
}
