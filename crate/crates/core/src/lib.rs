//! Sparse multi-view, multi-person total motion capture from 2D keypoint
//! detections: body association and triangulation, skeleton-guided hand/face
//! bootstrapping with double-check NMS, two-stage Gauss-Newton parametric
//! fitting, and occupancy-mask feedback for next-frame association.
//!
//! Neural detectors are abstracted behind the [`bootstrap::HandDetector`]
//! trait; [`synth`] provides a scripted synthetic scene oracle for
//! verification.

pub mod association;
pub mod body_model;
pub mod bootstrap;
pub mod config;
pub mod feedback;
pub mod fitting;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod synth;
