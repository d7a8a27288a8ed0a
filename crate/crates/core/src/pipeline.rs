//! Frame-by-frame orchestration: association → triangulation → hand/face
//! bootstrapping → two-stage fitting → feedback mask rendering.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    self, AssociationError, PersonAssignment, Skeleton3D, SkeletonTopology,
};
use crate::body_model::{default_topology, BodyParams, BodyJoint, ModelTopology, Side};
use crate::bootstrap::{self, HandDetector, ScoredCandidate, WristAnchor};
use crate::config::PipelineConfig;
use crate::feedback::{self, SoftMask};
use crate::fitting::{self, EnergyReport, FitProblem};
use crate::geometry::{project, Camera, Detection2D, Point3D, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("association failed: {0}")]
    Association(#[from] AssociationError),
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),
}

/// A group of detected 2D face landmarks in one view, not yet attributed to
/// a person; attribution is by projected-nose proximity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceGroup {
    pub view_id: usize,
    /// Indexed like the model's face landmark list.
    pub landmarks: Vec<[f64; 2]>,
}

impl FaceGroup {
    fn center(&self) -> Vec2 {
        let n = self.landmarks.len().max(1) as f64;
        let (sx, sy) = self
            .landmarks
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        Vec2::new(sx / n, sy / n)
    }
}

/// One fitted person of one frame.
#[derive(Debug, Clone)]
pub struct PersonFit {
    pub person_id: usize,
    pub params: BodyParams,
    pub energy: EnergyReport,
    pub stage1_energies: Vec<f64>,
    pub stage2_energies: Vec<f64>,
    pub hand_reprojection_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub association_ms: f64,
    pub bootstrap_ms: f64,
    pub fitting_ms: f64,
    pub feedback_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub assignments: Vec<PersonAssignment>,
    pub skeletons: Vec<Skeleton3D>,
    /// Aligned with `skeletons`; `None` when the fit failed for that person.
    pub fits: Vec<Option<PersonFit>>,
    pub timings: StageTimings,
}

impl FrameResult {
    pub fn to_json(&self) -> serde_json::Value {
        let persons: Vec<serde_json::Value> = self
            .skeletons
            .iter()
            .zip(&self.fits)
            .zip(&self.assignments)
            .map(|((skel, fit), assign)| {
                let slots: BTreeMap<String, usize> = assign
                    .slots
                    .iter()
                    .map(|(&(v, j), &d)| (format!("{v}:{j}"), d))
                    .collect();
                serde_json::json!({
                    "person_id": skel.person_id,
                    "joints": skel.joints,
                    "slots": slots,
                    "fit": fit.as_ref().map(|f| serde_json::json!({
                        "params": f.params,
                        "energy": f.energy,
                        "stage1_energies": f.stage1_energies,
                        "stage2_energies": f.stage2_energies,
                        "hand_reprojection_px": f.hand_reprojection_px,
                    })),
                })
            })
            .collect();
        serde_json::json!({ "persons": persons })
    }
}

/// Sequential pipeline state: previous skeletons for tracking edges, previous
/// fitted params as the next fit's init, previous soft masks for feedback.
pub struct Pipeline<'a> {
    pub cameras: &'a [Camera],
    pub model: ModelTopology,
    pub skeleton_topology: SkeletonTopology,
    pub config: PipelineConfig,
    prev_skeletons: Vec<Skeleton3D>,
    prev_params: HashMap<usize, BodyParams>,
    /// (person_id, view_id) -> soft mask from the previous frame.
    prev_masks: HashMap<(usize, usize), SoftMask>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cameras: &'a [Camera], config: PipelineConfig) -> Self {
        Pipeline {
            cameras,
            model: default_topology(),
            skeleton_topology: SkeletonTopology::body_default(),
            config,
            prev_skeletons: Vec::new(),
            prev_params: HashMap::new(),
            prev_masks: HashMap::new(),
        }
    }

    /// Occupancy of each previous person at each detection, for tracking-edge
    /// reweighting. Rows align with `prev_skeletons`.
    fn occupancies(&self, detections: &[Detection2D]) -> Vec<Vec<f64>> {
        self.prev_skeletons
            .iter()
            .map(|skel| {
                detections
                    .iter()
                    .map(|d| {
                        self.prev_masks
                            .get(&(skel.person_id, d.view_id))
                            .map_or(0.0, |m| {
                                feedback::occupancy(
                                    m,
                                    &Vec2::new(d.position[0], d.position[1]),
                                )
                            })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn step(
        &mut self,
        detections: &[Detection2D],
        hand_detector: &dyn HandDetector,
        faces: &[FaceGroup],
    ) -> Result<FrameResult, PipelineError> {
        let t0 = Instant::now();
        let mut graph = association::build_graph(
            detections,
            &self.prev_skeletons,
            self.cameras,
            &self.skeleton_topology,
            &self.config.association,
        )?;
        if self.config.feedback.enabled && !self.prev_masks.is_empty() {
            let tau = self.occupancies(detections);
            graph = association::apply_feedback(&graph, &tau)?;
        }
        let solved = association::solve(
            &graph,
            self.cameras,
            &self.skeleton_topology,
            &self.config.association,
        );
        let t1 = Instant::now();

        // Hand bootstrapping across all persons, then one global double-check
        // NMS per the per-view-global grouping.
        let mut candidates: Vec<ScoredCandidate> = Vec::new();
        for (pi, (skel, assign)) in
            solved.skeletons.iter().zip(&solved.assignments).enumerate()
        {
            for side in [Side::Left, Side::Right] {
                let (wj, ej) = (side.wrist_joint(), side.elbow_joint());
                let (Some(Some(wrist)), Some(Some(elbow))) =
                    (skel.joints.get(wj), skel.joints.get(ej))
                else {
                    continue;
                };
                let anchors: Vec<Option<WristAnchor>> = self
                    .cameras
                    .iter()
                    .map(|cam| {
                        assign.slots.get(&(cam.id, wj)).map(|&di| WristAnchor {
                            position_2d: detections[di].position,
                            person: pi,
                            side,
                            view_id: cam.id,
                        })
                    })
                    .collect();
                let got = bootstrap::bootstrap_hand(
                    hand_detector,
                    self.cameras,
                    wrist,
                    elbow,
                    pi,
                    side,
                    &anchors,
                    &self.config.bootstrap,
                )
                .map_err(|e| PipelineError::Bootstrap(e.to_string()))?;
                candidates.extend(got);
            }
        }
        let hand_assignments =
            bootstrap::nms_associate(&candidates, self.config.bootstrap.nms_iou_threshold);
        let t2 = Instant::now();

        let face_obs = self.attribute_faces(&solved.skeletons, faces);

        let mut fits: Vec<Option<PersonFit>> = Vec::new();
        for (pi, skel) in solved.skeletons.iter().enumerate() {
            let hand_obs: BTreeMap<(Side, usize), ScoredCandidate> = hand_assignments
                .iter()
                .filter(|((p, _, _), _)| *p == pi)
                .map(|((_, s, v), c)| ((*s, *v), c.clone()))
                .collect();
            let problem = FitProblem {
                topology: &self.model,
                skeleton: skel,
                cameras: self.cameras,
                hand_obs,
                face_obs: face_obs.get(&pi).cloned().unwrap_or_default(),
                weights: self.config.fitting.weights,
                iterations: self.config.fitting.iterations,
            };
            let init = self.prev_params.get(&skel.person_id).cloned().unwrap_or_else(|| {
                let mut p = BodyParams::rest(&self.model);
                if let Some(root) = skel.root() {
                    p.global_translation = [root.x, root.y, root.z];
                }
                p
            });
            let fit = fitting::stage1_fit(&problem, &init).ok().and_then(|s1| {
                fitting::stage2_fit(&problem, &s1.params).ok().map(|s2| PersonFit {
                    person_id: skel.person_id,
                    energy: fitting::energy_report(&problem, &s2.params),
                    hand_reprojection_px: fitting::hand_reprojection_error(
                        &problem, &s2.params,
                    ),
                    params: s2.params,
                    stage1_energies: s1.energies,
                    stage2_energies: s2.energies,
                })
            });
            fits.push(fit);
        }
        let t3 = Instant::now();

        self.prev_masks.clear();
        if self.config.feedback.enabled {
            for fit in fits.iter().flatten() {
                for cam in self.cameras {
                    let mask = feedback::render_mask(
                        &self.model,
                        &fit.params,
                        cam,
                        &self.config.feedback,
                    );
                    if mask.any() {
                        self.prev_masks.insert(
                            (fit.person_id, cam.id),
                            feedback::soften(
                                &mask,
                                self.config.feedback.falloff_px,
                                cam.id,
                                fit.person_id,
                            ),
                        );
                    }
                }
            }
        }
        let t4 = Instant::now();

        self.prev_skeletons = solved.skeletons.clone();
        for fit in fits.iter().flatten() {
            self.prev_params.insert(fit.person_id, fit.params.clone());
        }

        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        Ok(FrameResult {
            assignments: solved.assignments,
            skeletons: solved.skeletons,
            fits,
            timings: StageTimings {
                association_ms: ms(t0, t1),
                bootstrap_ms: ms(t1, t2),
                fitting_ms: ms(t2, t3),
                feedback_ms: ms(t3, t4),
            },
        })
    }

    /// Soft masks rendered after the most recent frame, keyed by
    /// (person_id, view_id).
    pub fn masks(&self) -> &HashMap<(usize, usize), SoftMask> {
        &self.prev_masks
    }

    /// Attach face groups to skeletons by projected-nose proximity (60 px).
    fn attribute_faces(
        &self,
        skeletons: &[Skeleton3D],
        faces: &[FaceGroup],
    ) -> HashMap<usize, BTreeMap<usize, Vec<Option<[f64; 2]>>>> {
        let mut out: HashMap<usize, BTreeMap<usize, Vec<Option<[f64; 2]>>>> = HashMap::new();
        for group in faces {
            let Some(cam) = self.cameras.iter().find(|c| c.id == group.view_id) else {
                continue;
            };
            let center = group.center();
            let mut best: Option<(f64, usize)> = None;
            for (pi, skel) in skeletons.iter().enumerate() {
                let Some(Some(nose)) = skel.joints.get(BodyJoint::Nose as usize) else {
                    continue;
                };
                let Ok(px) = project(cam, nose) else { continue };
                let d = (px - center).norm();
                if d < 60.0 && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, pi));
                }
            }
            if let Some((_, pi)) = best {
                out.entry(pi).or_default().insert(
                    group.view_id,
                    group.landmarks.iter().map(|&p| Some(p)).collect(),
                );
            }
        }
        out
    }
}

/// Run a generated synthetic scene end to end.
pub fn run_scene(
    scene: &crate::synth::SyntheticScene,
    config: &PipelineConfig,
) -> Result<Vec<FrameResult>, PipelineError> {
    let mut pipeline = Pipeline::new(&scene.cameras, config.clone());
    let mut results = Vec::with_capacity(scene.frames.len());
    for frame in &scene.frames {
        let detector = crate::synth::FrameHandDetector { hands: &frame.hands };
        let faces: Vec<FaceGroup> = frame
            .faces
            .iter()
            .flat_map(|per_view| {
                per_view.iter().enumerate().filter_map(|(v, f)| {
                    f.as_ref().map(|landmarks| FaceGroup {
                        view_id: v,
                        landmarks: landmarks.clone(),
                    })
                })
            })
            .collect();
        results.push(pipeline.step(&frame.detections, &detector, &faces)?);
    }
    Ok(results)
}

/// Body landmarks of one fitted or triangulated person, for metrics.
pub fn skeleton_landmarks(skel: &Skeleton3D) -> crate::metrics::PersonLandmarks {
    crate::metrics::PersonLandmarks {
        root: skel.root().unwrap_or(Point3D::new(0.0, 0.0, 0.0)),
        points: skel.joints.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::synth::{generate, SceneSpec};

    #[test]
    fn noise_free_scene_reconstructs() {
        let spec = SceneSpec { frames: 2, ..Default::default() };
        let scene = generate(&spec).unwrap();
        let results = run_scene(&scene, &PipelineConfig::default()).unwrap();
        for (frame, truth) in results.iter().zip(&scene.frames) {
            assert_eq!(frame.skeletons.len(), 2);
            let est: Vec<_> = frame.skeletons.iter().map(skeleton_landmarks).collect();
            let gt: Vec<_> = truth
                .body_joints
                .iter()
                .map(|joints| metrics::PersonLandmarks {
                    root: joints[0],
                    points: joints.iter().map(|&p| Some(p)).collect(),
                })
                .collect();
            let subset: Vec<usize> = (0..15).collect();
            let err = metrics::mpjpe(&est, &gt, &subset).unwrap();
            assert!(err < 1e-3, "triangulated MPJPE {err} mm");
            for fit in &frame.fits {
                let fit = fit.as_ref().expect("fit succeeded");
                if let Some(px) = fit.hand_reprojection_px {
                    assert!(px < 0.5, "hand reprojection {px}");
                }
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let spec = SceneSpec { frames: 2, noise_px: 1.0, ..Default::default() };
        let scene = generate(&spec).unwrap();
        let a = run_scene(&scene, &PipelineConfig::default()).unwrap();
        let b = run_scene(&scene, &PipelineConfig::default()).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.to_json(), fb.to_json());
        }
    }

    #[test]
    fn uniqueness_invariant_holds() {
        let spec = SceneSpec { frames: 3, noise_px: 1.0, ..Default::default() };
        let scene = generate(&spec).unwrap();
        let results = run_scene(&scene, &PipelineConfig::default()).unwrap();
        for frame in &results {
            let mut seen_det = std::collections::HashSet::new();
            for a in &frame.assignments {
                let mut seen_slot = std::collections::HashSet::new();
                for (&slot, &det) in &a.slots {
                    assert!(seen_slot.insert(slot), "slot {slot:?} assigned twice");
                    assert!(seen_det.insert(det), "detection {det} assigned twice");
                }
            }
        }
    }
}
