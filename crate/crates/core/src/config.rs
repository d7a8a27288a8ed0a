//! Pipeline configuration. Every tunable named by the method has a default
//! here and round-trips through the config JSON file.

use serde::{Deserialize, Serialize};

/// Energy-term weights for the two-stage fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitWeights {
    pub lambda_b3d: f64,
    pub lambda_h2d: f64,
    pub lambda_f2d: f64,
    pub lambda_pri: f64,
    pub lambda_theta_h: f64,
    pub lambda_beta: f64,
    pub lambda_eps: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        FitWeights {
            lambda_b3d: 10.0,
            lambda_h2d: 0.0001,
            lambda_f2d: 0.0003,
            lambda_pri: 0.01,
            lambda_theta_h: 0.01,
            lambda_beta: 0.01,
            lambda_eps: 0.01,
        }
    }
}

impl FitWeights {
    pub fn all_nonnegative(&self) -> bool {
        [
            self.lambda_b3d,
            self.lambda_h2d,
            self.lambda_f2d,
            self.lambda_pri,
            self.lambda_theta_h,
            self.lambda_beta,
            self.lambda_eps,
        ]
        .iter()
        .all(|w| *w >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Bandwidth of the cross-view matching score exp(-epipolar/sigma_e), px.
    pub sigma_e: f64,
    /// Bandwidth of the temporal tracking score exp(-reproj/sigma_t), px.
    pub sigma_t: f64,
    /// Bone-length plausibility window as multiples of the rest length.
    pub bone_window: [f64; 2],
    /// Minimum edge score considered by the greedy solver.
    pub score_floor: f64,
    /// Mean matching score a parsing-connected component needs to spawn a
    /// new person (also requires >= 2 views).
    pub spawn_min_matching: f64,
    /// Distinct joints a cluster needs to spawn a new person. Guards against
    /// promoting isolated cross-view coincidences to people.
    pub spawn_min_joints: usize,
    /// Depth used to scale bone plausibility when no previous skeleton gives
    /// a better estimate, meters.
    pub nominal_depth: f64,
    /// Ceiling of parsing-edge scores. Parsing edges glue joints within a
    /// person; keeping them below typical matching scores lets cross-view
    /// correspondence evidence accumulate before same-view merges.
    pub parsing_weight: f64,
    /// Hard epipolar gate for cross-view consistency of a merged joint
    /// group, px. Pairs above this can never end up in one person.
    pub epipolar_gate: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            sigma_e: 10.0,
            sigma_t: 25.0,
            bone_window: [0.5, 1.8],
            score_floor: 0.2,
            spawn_min_matching: 0.5,
            spawn_min_joints: 3,
            nominal_depth: 3.0,
            parsing_weight: 0.5,
            epipolar_gate: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    /// Hand bounding-sphere radius, meters.
    pub hand_radius: f64,
    /// Face bounding-sphere radius, meters.
    pub face_radius: f64,
    /// Extrapolation coefficient for the hand center along elbow→wrist.
    pub gamma: f64,
    /// IoU threshold of the double-check NMS.
    pub nms_iou_threshold: f64,
    /// Extra margin on RoI half-widths as a fraction of r (0 = circumscribing
    /// square exactly).
    pub roi_margin: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            hand_radius: 0.15,
            face_radius: 0.12,
            gamma: 0.25,
            nms_iou_threshold: 0.5,
            roi_margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub weights: FitWeights,
    /// Gauss-Newton iterations per stage.
    pub iterations: usize,
    /// Huber threshold in pixels for 2D terms; None = plain squared.
    pub huber_delta_px: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            weights: FitWeights::default(),
            iterations: 20,
            huber_delta_px: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    pub enabled: bool,
    /// Soft-mask decay distance outside the silhouette, px.
    pub falloff_px: f64,
    /// Capsule radii per body part, meters.
    pub torso_radius: f64,
    pub limb_radius: f64,
    pub head_radius: f64,
    pub finger_radius: f64,
    /// Integer downscale factor of the mask grid relative to the camera grid.
    pub mask_downscale: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            enabled: true,
            falloff_px: 20.0,
            torso_radius: 0.12,
            limb_radius: 0.05,
            head_radius: 0.10,
            finger_radius: 0.01,
            mask_downscale: 1,
        }
    }
}

/// Top-level pipeline configuration, serialized as the config JSON file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub association: AssociationConfig,
    pub bootstrap: BootstrapConfig,
    pub fitting: FitConfig,
    pub feedback: FeedbackConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_values() {
        let w = FitWeights::default();
        assert_eq!(w.lambda_b3d, 10.0);
        assert_eq!(w.lambda_h2d, 0.0001);
        assert_eq!(w.lambda_f2d, 0.0003);
        assert_eq!(w.lambda_pri, 0.01);
        assert_eq!(w.lambda_theta_h, 0.01);
        assert_eq!(w.lambda_beta, 0.01);
        assert_eq!(w.lambda_eps, 0.01);
        let b = BootstrapConfig::default();
        assert_eq!(b.hand_radius, 0.15);
        assert_eq!(b.nms_iou_threshold, 0.5);
        assert_eq!(FitConfig::default().iterations, 20);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"fitting": {"iterations": 5}}"#).unwrap();
        assert_eq!(cfg.fitting.iterations, 5);
        assert_eq!(cfg.association.sigma_e, 10.0);
        assert!(cfg.fitting.weights.all_nonnegative());
    }
}
