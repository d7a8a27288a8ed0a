//! Skeleton-guided hand and face localization.
//!
//! The triangulated body skeleton gives a coarse prior on where each hand is:
//! a bounding sphere of radius `R` around an extrapolated hand center. That
//! sphere projects into every view as a square region of interest (the α
//! stage), which a pluggable detector refines into tight boxes plus 2D hand
//! keypoints (the β stage). Candidate observations are then associated back to
//! (person, side) slots with a double-check NMS that scores each candidate by
//! cross-modality (ζ) and cross-scale (ξ) consistency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{Side, HAND_LANDMARKS};
use crate::config::BootstrapConfig;
use crate::geometry::{depth, project, Camera, Point3D, Vec2};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BootstrapError {
    #[error("wrist and elbow coincide; hand direction undefined")]
    CoincidentJoints,
    #[error("candidate view {candidate} does not match anchor view {anchor}")]
    ViewMismatch { candidate: usize, anchor: usize },
    #[error("hand detector failed: {0}")]
    DetectorFailure(String),
}

/// Which localization stage produced an RoI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoiStage {
    /// Coarse box from the projected bounding sphere.
    Alpha,
    /// Tight box from the refinement detector.
    Beta,
}

/// Axis-aligned region of interest in one view, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub center: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
    pub view_id: usize,
    pub stage: RoiStage,
}

impl Roi {
    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn height(&self) -> f64 {
        2.0 * self.half_height
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Half the diagonal length, the normalizer of ζ and ξ.
    pub fn half_diagonal(&self) -> f64 {
        (self.width().powi(2) + self.height().powi(2)).sqrt() / 2.0
    }

    pub fn min_corner(&self) -> [f64; 2] {
        [self.center[0] - self.half_width, self.center[1] - self.half_height]
    }

    pub fn max_corner(&self) -> [f64; 2] {
        [self.center[0] + self.half_width, self.center[1] + self.half_height]
    }

    /// The largest RoI contained in both `self` and `outer`, or `None` if they
    /// are disjoint. The stage of `self` is kept.
    pub fn clipped_to(&self, outer: &Roi) -> Option<Roi> {
        let lo = [
            self.min_corner()[0].max(outer.min_corner()[0]),
            self.min_corner()[1].max(outer.min_corner()[1]),
        ];
        let hi = [
            self.max_corner()[0].min(outer.max_corner()[0]),
            self.max_corner()[1].min(outer.max_corner()[1]),
        ];
        if hi[0] <= lo[0] || hi[1] <= lo[1] {
            return None;
        }
        Some(Roi {
            center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
            half_width: (hi[0] - lo[0]) / 2.0,
            half_height: (hi[1] - lo[1]) / 2.0,
            view_id: self.view_id,
            stage: self.stage,
        })
    }
}

/// Intersection over union of two boxes in the same view.
pub fn iou(a: &Roi, b: &Roi) -> f64 {
    let ix = (a.max_corner()[0].min(b.max_corner()[0])
        - a.min_corner()[0].max(b.min_corner()[0]))
    .max(0.0);
    let iy = (a.max_corner()[1].min(b.max_corner()[1])
        - a.min_corner()[1].max(b.min_corner()[1]))
    .max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One detected 2D hand keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandKeypoint {
    pub position: [f64; 2],
    pub confidence: f64,
}

/// A refined hand observation in one view: the tight box, the keypoint
/// detector's 21 joints, the pose-regression branch's 21 reprojected joints,
/// and the regressed 3D gesture (per-dof-group axis-angle) consumed as the
/// stage-1 hand initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    pub roi: Roi,
    pub keypoints_detected: Vec<HandKeypoint>,
    pub keypoints_regressed: Vec<[f64; 2]>,
    pub gesture_params: Vec<[f64; 3]>,
    pub chirality: Side,
}

/// A hand observation attributed to the (person, side) whose α RoI produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandCandidate {
    pub observation: HandObservation,
    pub source_person: usize,
    pub source_side: Side,
}

impl HandCandidate {
    pub fn validate(&self) -> Result<(), String> {
        let o = &self.observation;
        if o.keypoints_detected.len() != HAND_LANDMARKS {
            return Err(format!(
                "expected {} detected keypoints, got {}",
                HAND_LANDMARKS,
                o.keypoints_detected.len()
            ));
        }
        if o.keypoints_regressed.len() != HAND_LANDMARKS {
            return Err(format!(
                "expected {} regressed keypoints, got {}",
                HAND_LANDMARKS,
                o.keypoints_regressed.len()
            ));
        }
        if o.keypoints_detected.iter().any(|k| !(0.0..=1.0).contains(&k.confidence)) {
            return Err("keypoint confidence outside [0,1]".into());
        }
        Ok(())
    }
}

/// The associated 2D wrist position of a person in one view, taken from the
/// full-body detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristAnchor {
    pub position_2d: [f64; 2],
    pub person: usize,
    pub side: Side,
    pub view_id: usize,
}

/// Extrapolate the hand center past the wrist along the elbow→wrist direction:
/// `O = wrist + gamma * (wrist - elbow)`.
pub fn extrapolate_hand_center(
    wrist: &Point3D,
    elbow: &Point3D,
    gamma: f64,
) -> Result<Point3D, BootstrapError> {
    let dir = wrist.as_vec() - elbow.as_vec();
    if dir.norm() == 0.0 {
        return Err(BootstrapError::CoincidentJoints);
    }
    Ok(Point3D::from_vec(wrist.as_vec() + gamma * dir))
}

/// The face sphere is anchored at the midpoint of nose and neck.
pub fn face_center(nose: &Point3D, neck: &Point3D) -> Point3D {
    Point3D::from_vec((nose.as_vec() + neck.as_vec()) / 2.0)
}

/// Project the bounding sphere `(center, radius)` into a view as a square α
/// RoI with half-width `r = f * radius / depth`. Returns `None` when the
/// center is behind the camera or the projection misses the image by more
/// than `r`.
pub fn initial_roi(
    camera: &Camera,
    center: &Point3D,
    radius: f64,
    margin: f64,
) -> Option<Roi> {
    assert!(radius > 0.0, "sphere radius must be positive");
    let d = depth(camera, center);
    if d <= 0.0 {
        return None;
    }
    let px = project(camera, center).ok()?;
    let r = camera.focal * radius / d;
    if px.x < -r
        || px.y < -r
        || px.x > camera.width + r
        || px.y > camera.height + r
    {
        return None;
    }
    let half = r * (1.0 + margin);
    Some(Roi {
        center: [px.x, px.y],
        half_width: half,
        half_height: half,
        view_id: camera.id,
        stage: RoiStage::Alpha,
    })
}

/// A refinement detector: given a coarse α RoI, return every tight hand
/// observation inside it. Implementations wrap either real-network output
/// loaded from disk or the synthetic scene oracle.
pub trait HandDetector {
    /// `side` is the chirality the caller assumes for the crop; regression
    /// output for a crop of the opposite hand diverges from the keypoint
    /// detector (mirrored joints), which double-check NMS later exploits.
    fn detect(&self, view_id: usize, alpha: &Roi, side: Side)
        -> Result<Vec<HandObservation>, String>;
}

/// Run the detector on an α RoI and clip the returned β boxes into it.
/// Observations whose box falls entirely outside the α region are dropped.
pub fn refine_roi(
    detector: &dyn HandDetector,
    alpha: &Roi,
    source_person: usize,
    source_side: Side,
) -> Result<Vec<HandCandidate>, BootstrapError> {
    let obs = detector
        .detect(alpha.view_id, alpha, source_side)
        .map_err(BootstrapError::DetectorFailure)?;
    let mut out = Vec::new();
    for mut o in obs {
        let Some(clipped) = o.roi.clipped_to(alpha) else {
            continue;
        };
        o.roi = Roi { stage: RoiStage::Beta, ..clipped };
        let cand = HandCandidate { observation: o, source_person, source_side };
        if let Err(e) = cand.validate() {
            return Err(BootstrapError::DetectorFailure(e));
        }
        out.push(cand);
    }
    Ok(out)
}

/// Cross-modality consistency: mean per-joint agreement between the keypoint
/// detector and the reprojected pose regression, normalized by the RoI
/// half-diagonal and clamped at zero.
pub fn cross_modality_score(cand: &HandCandidate) -> f64 {
    let o = &cand.observation;
    let half_diag = o.roi.half_diagonal();
    let mut sum = 0.0;
    for (d, r) in o.keypoints_detected.iter().zip(&o.keypoints_regressed) {
        let dist = Vec2::new(d.position[0] - r[0], d.position[1] - r[1]).norm();
        sum += (1.0 - dist / half_diag).max(0.0);
    }
    sum / HAND_LANDMARKS as f64
}

/// Cross-scale consistency: agreement between the local detector's wrist and
/// the global body estimate of the same wrist, with the same normalization as
/// [`cross_modality_score`].
pub fn cross_scale_score(
    cand: &HandCandidate,
    anchor: &WristAnchor,
) -> Result<f64, BootstrapError> {
    let o = &cand.observation;
    if o.roi.view_id != anchor.view_id {
        return Err(BootstrapError::ViewMismatch {
            candidate: o.roi.view_id,
            anchor: anchor.view_id,
        });
    }
    let wrist = &o.keypoints_detected[0];
    let dist = Vec2::new(
        wrist.position[0] - anchor.position_2d[0],
        wrist.position[1] - anchor.position_2d[1],
    )
    .norm();
    Ok((1.0 - dist / o.roi.half_diagonal()).max(0.0))
}

/// A candidate with its precomputed consistency scores and the depth of the
/// source person's wrist in this view (the NMS tie-breaker).
#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub candidate: HandCandidate,
    pub zeta: f64,
    pub xi: f64,
    pub wrist_depth: f64,
}

impl ScoredCandidate {
    pub fn score(&self) -> f64 {
        self.zeta + self.xi
    }
}

/// Double-check NMS. Within each view, candidates are visited in descending
/// ζ+ξ order (ties go to the nearer source wrist); a candidate is kept only
/// if its box overlaps no already-kept box with IoU above the threshold.
/// Survivors are assigned to their source slot; if two survivors claim the
/// same (person, side, view), the higher-scoring one wins.
pub fn nms_associate(
    candidates: &[ScoredCandidate],
    iou_threshold: f64,
) -> BTreeMap<(usize, Side, usize), ScoredCandidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.score()
            .partial_cmp(&ca.score())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                ca.wrist_depth
                    .partial_cmp(&cb.wrist_depth)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    'outer: for i in order {
        let roi = &candidates[i].candidate.observation.roi;
        for &k in &kept {
            let other = &candidates[k].candidate.observation.roi;
            if other.view_id == roi.view_id && iou(roi, other) > iou_threshold {
                continue 'outer;
            }
        }
        kept.push(i);
    }

    let mut out: BTreeMap<(usize, Side, usize), (usize, f64)> = BTreeMap::new();
    for i in kept {
        let c = &candidates[i];
        let key = (
            c.candidate.source_person,
            c.candidate.source_side,
            c.candidate.observation.roi.view_id,
        );
        match out.get(&key) {
            Some(&(_, s)) if s >= c.score() => {}
            _ => {
                out.insert(key, (i, c.score()));
            }
        }
    }
    out.into_iter()
        .map(|(k, (i, _))| (k, candidates[i].clone()))
        .collect()
}

/// Localize one hand of one person in every view: extrapolate the center,
/// project the sphere, refine, and score. Views where the wrist has no
/// assigned 2D detection (`wrist_anchor` absent) are skipped, as are views
/// the sphere does not project into.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_hand(
    detector: &dyn HandDetector,
    cameras: &[Camera],
    wrist: &Point3D,
    elbow: &Point3D,
    person: usize,
    side: Side,
    anchors: &[Option<WristAnchor>],
    cfg: &BootstrapConfig,
) -> Result<Vec<ScoredCandidate>, BootstrapError> {
    let center = extrapolate_hand_center(wrist, elbow, cfg.gamma)?;
    let mut out = Vec::new();
    for (cam, anchor) in cameras.iter().zip(anchors) {
        let Some(anchor) = anchor else { continue };
        let Some(alpha) = initial_roi(cam, &center, cfg.hand_radius, cfg.roi_margin) else {
            continue;
        };
        for candidate in refine_roi(detector, &alpha, person, side)? {
            let zeta = cross_modality_score(&candidate);
            let xi = cross_scale_score(&candidate, anchor)?;
            out.push(ScoredCandidate {
                candidate,
                zeta,
                xi,
                wrist_depth: depth(cam, wrist),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at_camera, Vec3};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn square(cx: f64, cy: f64, half: f64, view: usize) -> Roi {
        Roi {
            center: [cx, cy],
            half_width: half,
            half_height: half,
            view_id: view,
            stage: RoiStage::Beta,
        }
    }

    fn candidate_with_offset(roi: Roi, offset: [f64; 2]) -> HandCandidate {
        let detected: Vec<HandKeypoint> = (0..HAND_LANDMARKS)
            .map(|i| HandKeypoint {
                position: [roi.center[0] + i as f64, roi.center[1]],
                confidence: 1.0,
            })
            .collect();
        let regressed = detected
            .iter()
            .map(|k| [k.position[0] + offset[0], k.position[1] + offset[1]])
            .collect();
        HandCandidate {
            observation: HandObservation {
                roi,
                keypoints_detected: detected,
                keypoints_regressed: regressed,
                gesture_params: vec![[0.0; 3]; crate::body_model::HAND_DOF_GROUPS],
                chirality: Side::Left,
            },
            source_person: 0,
            source_side: Side::Left,
        }
    }

    #[test]
    fn extrapolation_quarter_past_wrist() {
        let o = extrapolate_hand_center(
            &Point3D::new(0.0, 0.0, 1.0),
            &Point3D::new(0.0, 0.0, 0.0),
            0.25,
        )
        .unwrap();
        assert_relative_eq!(o.z, 1.25, epsilon = 1e-12);
        assert_eq!((o.x, o.y), (0.0, 0.0));
    }

    #[test]
    fn extrapolation_zero_gamma_returns_wrist() {
        let o = extrapolate_hand_center(
            &Point3D::new(1.0, 0.0, 0.0),
            &Point3D::new(0.0, 0.0, 0.0),
            0.0,
        )
        .unwrap();
        assert_eq!((o.x, o.y, o.z), (1.0, 0.0, 0.0));
    }

    #[test]
    fn coincident_joints_rejected() {
        let p = Point3D::new(0.3, 0.2, 0.1);
        assert_eq!(
            extrapolate_hand_center(&p, &p, 0.25),
            Err(BootstrapError::CoincidentJoints)
        );
    }

    fn test_camera(focal: f64) -> Camera {
        look_at_camera(
            0,
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::new(0.0, 0.0, 0.0),
            focal,
            1920.0,
            1080.0,
        )
    }

    #[test]
    fn roi_radius_fifty_px_at_reference_config() {
        let cam = test_camera(1000.0);
        let roi = initial_roi(&cam, &Point3D::new(0.0, 0.0, 0.0), 0.15, 0.0).unwrap();
        assert_relative_eq!(roi.half_width, 50.0, epsilon = 1e-9);
        assert_relative_eq!(roi.half_height, 50.0, epsilon = 1e-9);
        assert_eq!(roi.stage, RoiStage::Alpha);
    }

    #[test]
    fn roi_behind_camera_absent() {
        let cam = test_camera(1000.0);
        assert!(initial_roi(&cam, &Point3D::new(0.0, 0.0, -4.0), 0.15, 0.0).is_none());
    }

    #[test]
    fn roi_doubling_depth_halves_radius() {
        let cam = test_camera(1000.0);
        let near = initial_roi(&cam, &Point3D::new(0.0, 0.0, -1.0), 0.15, 0.0).unwrap();
        let far = initial_roi(&cam, &Point3D::new(0.0, 0.0, 1.0), 0.15, 0.0).unwrap();
        assert_relative_eq!(near.half_width, 2.0 * far.half_width, epsilon = 1e-12);
    }

    #[test]
    fn roi_far_outside_image_absent() {
        let cam = test_camera(1000.0);
        // Lateral offset projecting far beyond the right edge at depth 3.
        assert!(initial_roi(&cam, &Point3D::new(50.0, 0.0, 0.0), 0.15, 0.0).is_none());
    }

    #[test]
    fn zeta_identity_is_one() {
        let c = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [0.0, 0.0]);
        assert_relative_eq!(cross_modality_score(&c), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zeta_worked_value() {
        // w = h = 100, every joint displaced by (30, 40): 1 - 2*50/sqrt(20000).
        let c = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [30.0, 40.0]);
        assert_relative_eq!(cross_modality_score(&c), 0.292_893_218_8, epsilon = 1e-5);
    }

    #[test]
    fn zeta_clamps_at_zero() {
        let c = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [300.0, 0.0]);
        assert_eq!(cross_modality_score(&c), 0.0);
    }

    #[test]
    fn xi_matches_zeta_arithmetic() {
        let c = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [0.0, 0.0]);
        let wrist = c.observation.keypoints_detected[0].position;
        let exact = WristAnchor { position_2d: wrist, person: 0, side: Side::Left, view_id: 0 };
        assert_relative_eq!(cross_scale_score(&c, &exact).unwrap(), 1.0, epsilon = 1e-12);

        let shifted = WristAnchor {
            position_2d: [wrist[0] + 30.0, wrist[1] + 40.0],
            ..exact
        };
        assert_relative_eq!(
            cross_scale_score(&c, &shifted).unwrap(),
            0.292_893_218_8,
            epsilon = 1e-5
        );

        let far = WristAnchor { position_2d: [wrist[0] + 500.0, wrist[1]], ..exact };
        assert_eq!(cross_scale_score(&c, &far).unwrap(), 0.0);
    }

    #[test]
    fn xi_view_mismatch_rejected() {
        let c = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [0.0, 0.0]);
        let anchor =
            WristAnchor { position_2d: [0.0, 0.0], person: 0, side: Side::Left, view_id: 3 };
        assert_eq!(
            cross_scale_score(&c, &anchor),
            Err(BootstrapError::ViewMismatch { candidate: 0, anchor: 3 })
        );
    }

    #[test]
    fn iou_basics() {
        let a = square(0.0, 0.0, 5.0, 0);
        assert_relative_eq!(iou(&a, &a), 1.0);
        let far = square(100.0, 0.0, 5.0, 0);
        assert_eq!(iou(&a, &far), 0.0);
        // Two 10x10 squares overlapping in a 5x10 strip: 50 / 150.
        let half = square(5.0, 0.0, 5.0, 0);
        assert_relative_eq!(iou(&a, &half), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn nms_keeps_higher_scoring_overlap() {
        let good = ScoredCandidate {
            candidate: candidate_with_offset(square(100.0, 100.0, 40.0, 0), [0.0, 0.0]),
            zeta: 0.9,
            xi: 0.9,
            wrist_depth: 3.0,
        };
        let mut bad = ScoredCandidate {
            candidate: candidate_with_offset(square(110.0, 100.0, 40.0, 0), [50.0, 0.0]),
            zeta: 0.3,
            xi: 0.3,
            wrist_depth: 3.0,
        };
        bad.candidate.source_person = 1;
        let out = nms_associate(&[bad.clone(), good.clone()], 0.5);
        assert_eq!(out.len(), 1);
        assert!(out.contains_key(&(0, Side::Left, 0)));
    }

    #[test]
    fn nms_keeps_disjoint_candidates() {
        let a = ScoredCandidate {
            candidate: candidate_with_offset(square(100.0, 100.0, 40.0, 0), [0.0, 0.0]),
            zeta: 1.0,
            xi: 1.0,
            wrist_depth: 3.0,
        };
        let mut b = ScoredCandidate {
            candidate: candidate_with_offset(square(400.0, 100.0, 40.0, 0), [0.0, 0.0]),
            zeta: 0.5,
            xi: 0.5,
            wrist_depth: 3.0,
        };
        b.candidate.source_person = 1;
        let out = nms_associate(&[a, b], 0.5);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn nms_tie_breaks_by_nearer_wrist() {
        let near = ScoredCandidate {
            candidate: candidate_with_offset(square(100.0, 100.0, 40.0, 0), [0.0, 0.0]),
            zeta: 0.8,
            xi: 0.8,
            wrist_depth: 2.0,
        };
        let mut far = near.clone();
        far.wrist_depth = 4.0;
        far.candidate.source_person = 1;
        let out = nms_associate(&[far, near], 0.5);
        assert_eq!(out.len(), 1);
        assert!(out.contains_key(&(0, Side::Left, 0)));
    }

    #[test]
    fn clipping_beta_into_alpha() {
        let alpha = Roi { stage: RoiStage::Alpha, ..square(0.0, 0.0, 10.0, 0) };
        let beta = square(8.0, 0.0, 5.0, 0);
        let clipped = beta.clipped_to(&alpha).unwrap();
        assert_relative_eq!(clipped.max_corner()[0], 10.0);
        assert_relative_eq!(clipped.min_corner()[0], 3.0);
        assert!(square(30.0, 0.0, 5.0, 0).clipped_to(&alpha).is_none());
    }

    #[test]
    fn face_center_is_midpoint() {
        let c = face_center(&Point3D::new(0.0, 2.0, 0.0), &Point3D::new(0.0, 1.0, 0.0));
        assert_relative_eq!(c.y, 1.5);
    }

    proptest! {
        #[test]
        fn roi_law_holds_everywhere(
            focal in 200.0..4000.0f64,
            radius in 0.01..1.0f64,
            x in -1.0..1.0f64,
            y in -1.0..1.0f64,
            z in -2.0..2.0f64,
        ) {
            let cam = test_camera(focal);
            let p = Point3D::new(x, y, z);
            if let Some(roi) = initial_roi(&cam, &p, radius, 0.0) {
                let d = depth(&cam, &p);
                prop_assert!((roi.half_width * d - focal * radius).abs()
                    <= 1e-9 * (focal * radius));
            }
        }

        #[test]
        fn zeta_in_range_and_scale_invariant(
            half in 10.0..200.0f64,
            dx in -300.0..300.0f64,
            dy in -300.0..300.0f64,
            scale in 0.1..10.0f64,
        ) {
            let c = candidate_with_offset(square(500.0, 500.0, half, 0), [dx, dy]);
            let z = cross_modality_score(&c);
            prop_assert!((0.0..=1.0).contains(&z));

            // Scale the RoI and every coordinate about the origin.
            let mut scaled = c.clone();
            {
                let o = &mut scaled.observation;
                o.roi.center = [o.roi.center[0] * scale, o.roi.center[1] * scale];
                o.roi.half_width *= scale;
                o.roi.half_height *= scale;
                for k in &mut o.keypoints_detected {
                    k.position = [k.position[0] * scale, k.position[1] * scale];
                }
                for r in &mut o.keypoints_regressed {
                    *r = [r[0] * scale, r[1] * scale];
                }
            }
            prop_assert!((cross_modality_score(&scaled) - z).abs() < 1e-9);
        }

        #[test]
        fn zeta_monotone_under_inflation(
            dx in 0.0..100.0f64,
            dy in 0.0..100.0f64,
            inflate in 1.0..5.0f64,
        ) {
            let base = candidate_with_offset(square(500.0, 500.0, 50.0, 0), [dx, dy]);
            let worse =
                candidate_with_offset(square(500.0, 500.0, 50.0, 0), [dx * inflate, dy * inflate]);
            prop_assert!(cross_modality_score(&worse) <= cross_modality_score(&base) + 1e-12);
        }

        #[test]
        fn nms_never_keeps_overlapping_pair(
            centers in proptest::collection::vec((0.0..500.0f64, 0.0..500.0f64), 2..10),
            halves in proptest::collection::vec(20.0..60.0f64, 10),
        ) {
            let cands: Vec<ScoredCandidate> = centers
                .iter()
                .zip(&halves)
                .enumerate()
                .map(|(i, (&(cx, cy), &h))| {
                    let mut c = candidate_with_offset(square(cx, cy, h, 0), [i as f64, 0.0]);
                    c.source_person = i;
                    ScoredCandidate {
                        zeta: cross_modality_score(&c),
                        xi: 0.5,
                        wrist_depth: 2.0 + i as f64,
                        candidate: c,
                    }
                })
                .collect();
            let out = nms_associate(&cands, 0.5);
            let rois: Vec<&Roi> = out.values().map(|c| &c.candidate.observation.roi).collect();
            for i in 0..rois.len() {
                for j in (i + 1)..rois.len() {
                    prop_assert!(iou(rois[i], rois[j]) <= 0.5);
                }
            }
        }
    }
}
