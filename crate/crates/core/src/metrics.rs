//! Evaluation metrics: MPJPE over landmark subsets and PCP over limbs.
//!
//! Estimated and ground-truth persons are paired by greedy root-distance
//! matching (nearest first, 0.5 m cutoff); metrics are then averaged over the
//! matched pairs' present joints.

use thiserror::Error;

use crate::geometry::Point3D;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no matched persons / no joints in the requested subset")]
    NoCorrespondence,
}

/// One person's 3D landmarks for evaluation; `root` drives person matching.
#[derive(Debug, Clone)]
pub struct PersonLandmarks {
    pub root: Point3D,
    pub points: Vec<Option<Point3D>>,
}

pub const MATCH_RADIUS_M: f64 = 0.5;

/// Greedy nearest-root matching: repeatedly pair the globally closest
/// (estimate, truth) roots within `max_dist`, removing both.
pub fn match_persons(
    est: &[PersonLandmarks],
    truth: &[PersonLandmarks],
    max_dist: f64,
) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in est.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = e.root.distance(&t.root);
            if d <= max_dist {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut used_e = vec![false; est.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_e[i] && !used_t[j] {
            used_e[i] = true;
            used_t[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Mean per-joint position error in millimeters over `subset` (indices into
/// the landmark arrays), across all matched persons. Joints absent on either
/// side are skipped.
pub fn mpjpe(
    est: &[PersonLandmarks],
    truth: &[PersonLandmarks],
    subset: &[usize],
) -> Result<f64, MetricsError> {
    let matches = match_persons(est, truth, MATCH_RADIUS_M);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, j) in matches {
        for &lm in subset {
            if let (Some(a), Some(b)) = (
                est[i].points.get(lm).copied().flatten(),
                truth[j].points.get(lm).copied().flatten(),
            ) {
                sum += a.distance(&b);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::NoCorrespondence);
    }
    Ok(sum / n as f64 * 1000.0)
}

/// Running PCP tally over frames. A limb is correct when both endpoints lie
/// within half the ground-truth limb length of their true positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcpTally {
    pub correct: usize,
    pub total: usize,
}

impl PcpTally {
    pub fn add_frame(
        &mut self,
        est: &[PersonLandmarks],
        truth: &[PersonLandmarks],
        limbs: &[(usize, usize)],
    ) {
        for (i, j) in match_persons(est, truth, MATCH_RADIUS_M) {
            for &(a, b) in limbs {
                let (Some(ta), Some(tb)) = (
                    truth[j].points.get(a).copied().flatten(),
                    truth[j].points.get(b).copied().flatten(),
                ) else {
                    continue;
                };
                self.total += 1;
                let (Some(ea), Some(eb)) = (
                    est[i].points.get(a).copied().flatten(),
                    est[i].points.get(b).copied().flatten(),
                ) else {
                    continue;
                };
                let half = ta.distance(&tb) / 2.0;
                if ea.distance(&ta) <= half && eb.distance(&tb) <= half {
                    self.correct += 1;
                }
            }
        }
    }

    pub fn percent(&self) -> Result<f64, MetricsError> {
        if self.total == 0 {
            return Err(MetricsError::NoCorrespondence);
        }
        Ok(self.correct as f64 / self.total as f64 * 100.0)
    }
}

/// One-shot PCP over a single frame.
pub fn pcp(
    est: &[PersonLandmarks],
    truth: &[PersonLandmarks],
    limbs: &[(usize, usize)],
) -> Result<f64, MetricsError> {
    let mut tally = PcpTally::default();
    tally.add_frame(est, truth, limbs);
    tally.percent()
}
