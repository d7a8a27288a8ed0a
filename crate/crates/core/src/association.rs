//! Per-frame association graph over 2D detections and previous-frame 3D
//! skeletons: parsing / matching / tracking edge scoring, occupancy
//! feedback reweighting, and a greedy score-descending solver producing
//! per-person 2D assignments and triangulated skeletons.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{self, BodyJoint};
use crate::config::AssociationConfig;
use crate::geometry::{self, Camera, Detection2D, Point3D};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AssociationError {
    #[error("detection references view {0} with no camera")]
    UnknownView(usize),
    #[error("occupancy value {0} outside [0,1]")]
    OccupancyOutOfRange(f64),
}

/// Body topology: joint count plus the bone tree with rest lengths (meters).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_count: usize,
    /// (parent joint, child joint) pairs forming a tree rooted at mid-hip.
    pub bones: Vec<(usize, usize)>,
    pub rest_lengths: Vec<f64>,
}

impl SkeletonTopology {
    /// The 15-joint body topology matching [`BodyJoint`] ordering, with rest
    /// lengths taken from the default parametric model.
    pub fn body_default() -> Self {
        let model = body_model::default_topology();
        let rest = model.rest_positions();
        use BodyJoint::*;
        let bones_j = [
            (MidHip, Neck),
            (Neck, Nose),
            (Neck, LShoulder),
            (LShoulder, LElbow),
            (LElbow, LWrist),
            (Neck, RShoulder),
            (RShoulder, RElbow),
            (RElbow, RWrist),
            (MidHip, LHip),
            (LHip, LKnee),
            (LKnee, LAnkle),
            (MidHip, RHip),
            (RHip, RKnee),
            (RKnee, RAnkle),
        ];
        let bones: Vec<(usize, usize)> =
            bones_j.iter().map(|(a, b)| (*a as usize, *b as usize)).collect();
        let rest_lengths = bones
            .iter()
            .map(|&(a, b)| rest[a].distance(&rest[b]))
            .collect();
        SkeletonTopology {
            joint_count: body_model::BODY_JOINTS,
            bones,
            rest_lengths,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut child_seen = vec![false; self.joint_count];
        for &(a, b) in &self.bones {
            if a >= self.joint_count || b >= self.joint_count {
                return Err("bone references joint out of range".into());
            }
            if child_seen[b] {
                return Err(format!("joint {b} has two parents"));
            }
            child_seen[b] = true;
        }
        if self.bones.len() + 1 != self.joint_count {
            return Err("bones do not form a spanning tree".into());
        }
        Ok(())
    }

    fn adjacent_joints(&self) -> Vec<(usize, usize, f64)> {
        self.bones
            .iter()
            .zip(&self.rest_lengths)
            .map(|(&(a, b), &l)| (a, b, l))
            .collect()
    }
}

/// Triangulated per-person joints; a joint is absent when it could not be
/// triangulated from at least two views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub person_id: usize,
    pub joints: Vec<Option<Point3D>>,
    pub per_joint_confidence: Vec<f64>,
}

impl Skeleton3D {
    pub fn empty(person_id: usize, joint_count: usize) -> Self {
        Skeleton3D {
            person_id,
            joints: vec![None; joint_count],
            per_joint_confidence: vec![0.0; joint_count],
        }
    }

    pub fn present_joints(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }

    /// Root position used for person matching in metrics; falls back to the
    /// centroid of present joints when the mid-hip is absent.
    pub fn root(&self) -> Option<Point3D> {
        if let Some(Some(p)) = self.joints.get(BodyJoint::MidHip as usize) {
            return Some(*p);
        }
        let present: Vec<&Point3D> = self.joints.iter().flatten().collect();
        if present.is_empty() {
            return None;
        }
        let mut acc = crate::geometry::Vec3::zeros();
        for p in &present {
            acc += p.as_vec();
        }
        Some(Point3D::from_vec(acc / present.len() as f64))
    }
}

/// An undirected scored edge between two detections (by flat index).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEdge {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// A scored temporal edge between a detection and a previous-frame person
/// (by index into the graph's `prev` list).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingEdge {
    pub detection: usize,
    pub person: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct AssociationGraph {
    pub detections: Vec<Detection2D>,
    pub prev: Vec<Skeleton3D>,
    pub parsing_edges: Vec<DetectionEdge>,
    pub matching_edges: Vec<DetectionEdge>,
    pub tracking_edges: Vec<TrackingEdge>,
}

impl AssociationGraph {
    pub fn edge_count(&self) -> usize {
        self.parsing_edges.len() + self.matching_edges.len() + self.tracking_edges.len()
    }

    pub fn scores_in_range(&self) -> bool {
        self.parsing_edges
            .iter()
            .chain(&self.matching_edges)
            .all(|e| (0.0..=1.0).contains(&e.score))
            && self
                .tracking_edges
                .iter()
                .all(|e| (0.0..=1.0).contains(&e.score))
    }
}

fn camera_by_view<'a>(
    cameras: &'a [Camera],
    view_id: usize,
) -> Result<&'a Camera, AssociationError> {
    cameras
        .iter()
        .find(|c| c.id == view_id)
        .ok_or(AssociationError::UnknownView(view_id))
}

/// Mean depth of a previous skeleton in a view, used to scale the metric
/// bone window into pixels.
fn skeleton_depth(skel: &Skeleton3D, camera: &Camera) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for p in skel.joints.iter().flatten() {
        let d = geometry::depth(camera, p);
        if d > 0.0 {
            acc += d;
            n += 1;
        }
    }
    (n > 0).then(|| acc / n as f64)
}

/// Bone-length plausibility of a same-view detection pair: 1 inside the
/// configured window (multiples of the projected rest length), decaying
/// exponentially outside.
fn bone_plausibility(len_px: f64, rest_len_m: f64, depth_m: f64, focal: f64, cfg: &AssociationConfig) -> f64 {
    let expected = rest_len_m * focal / depth_m;
    if expected <= 0.0 {
        return 0.0;
    }
    let ratio = len_px / expected;
    let [lo, hi] = cfg.bone_window;
    if ratio < lo {
        ((ratio - lo) / 0.25).exp()
    } else if ratio > hi {
        ((hi - ratio) / 0.25).exp()
    } else {
        1.0
    }
}

/// Build the per-frame association graph.
///
/// Parsing edges connect bone-adjacent joints in the same view scored by
/// bone-length plausibility; matching edges connect same-joint detections
/// across views scored by `exp(-epipolar/sigma_e)`; tracking edges connect
/// detections to previous persons scored by `exp(-reprojection/sigma_t)`.
pub fn build_graph(
    detections: &[Detection2D],
    prev: &[Skeleton3D],
    cameras: &[Camera],
    topology: &SkeletonTopology,
    cfg: &AssociationConfig,
) -> Result<AssociationGraph, AssociationError> {
    for d in detections {
        camera_by_view(cameras, d.view_id)?;
    }

    // Per-view depth estimate: mean previous-skeleton depth, else nominal.
    let mut view_depth: HashMap<usize, f64> = HashMap::new();
    for cam in cameras {
        let depths: Vec<f64> = prev.iter().filter_map(|s| skeleton_depth(s, cam)).collect();
        let d = if depths.is_empty() {
            cfg.nominal_depth
        } else {
            depths.iter().sum::<f64>() / depths.len() as f64
        };
        view_depth.insert(cam.id, d);
    }

    let mut parsing_edges = Vec::new();
    let mut matching_edges = Vec::new();
    let mut tracking_edges = Vec::new();

    let adjacency = topology.adjacent_joints();
    for (i, da) in detections.iter().enumerate() {
        let cam_a = camera_by_view(cameras, da.view_id)?;
        for (j, db) in detections.iter().enumerate().skip(i + 1) {
            if da.view_id == db.view_id {
                // Parsing edge for bone-adjacent joint pairs.
                let bone = adjacency.iter().find(|&&(a, b, _)| {
                    (a == da.joint_id && b == db.joint_id)
                        || (a == db.joint_id && b == da.joint_id)
                });
                if let Some(&(_, _, rest_len)) = bone {
                    let len_px = (da.pos() - db.pos()).norm();
                    let depth = view_depth[&da.view_id];
                    let score =
                        cfg.parsing_weight * bone_plausibility(len_px, rest_len, depth, cam_a.focal, cfg);
                    parsing_edges.push(DetectionEdge { a: i, b: j, score });
                }
            } else if da.joint_id == db.joint_id {
                let cam_b = camera_by_view(cameras, db.view_id)?;
                if let Ok(dist) = geometry::epipolar_distance(cam_a, &da.pos(), cam_b, &db.pos()) {
                    let score = (-dist / cfg.sigma_e).exp();
                    matching_edges.push(DetectionEdge { a: i, b: j, score });
                }
            }
        }
        // Tracking edges against every previous person with this joint.
        for (k, skel) in prev.iter().enumerate() {
            if let Some(Some(p)) = skel.joints.get(da.joint_id) {
                if let Ok(proj) = geometry::project(cam_a, p) {
                    let dist = (da.pos() - proj).norm();
                    let score = (-dist / cfg.sigma_t).exp();
                    tracking_edges.push(TrackingEdge {
                        detection: i,
                        person: k,
                        score,
                    });
                }
            }
        }
    }

    Ok(AssociationGraph {
        detections: detections.to_vec(),
        prev: prev.to_vec(),
        parsing_edges,
        matching_edges,
        tracking_edges,
    })
}

/// Reweight tracking edges by normalized continuous occupancy:
/// `z_hat^k(c) = tau^k(c) / sum_i tau^i(c) * z^k(c)`.
///
/// `tau[person][detection]` must be in [0,1]. Where the occupancy sum over
/// persons is zero the edge score is left unchanged.
pub fn apply_feedback(
    graph: &AssociationGraph,
    tau: &[Vec<f64>],
) -> Result<AssociationGraph, AssociationError> {
    for row in tau {
        for &v in row {
            if !(0.0..=1.0).contains(&v) {
                return Err(AssociationError::OccupancyOutOfRange(v));
            }
        }
    }
    let mut out = graph.clone();
    for edge in &mut out.tracking_edges {
        let c = edge.detection;
        let denom: f64 = tau.iter().map(|row| row[c]).sum();
        if denom > 0.0 {
            edge.score *= tau[edge.person][c] / denom;
        }
    }
    Ok(out)
}

/// Per-person frame output of the solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonAssignment {
    pub person_id: usize,
    /// (view, joint) -> index into the frame's detection list.
    pub slots: BTreeMap<(usize, usize), usize>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub assignments: Vec<PersonAssignment>,
    pub skeletons: Vec<Skeleton3D>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EdgeRef {
    Parsing(usize),
    Matching(usize),
    Tracking(usize),
}

struct Cluster {
    members: Vec<usize>,
    /// (view, joint) -> detection index; at most one per slot.
    slots: BTreeMap<(usize, usize), usize>,
    anchor: Option<usize>,
    matching_scores: Vec<f64>,
    views: HashSet<usize>,
}

struct ClusterSet {
    /// detection index -> cluster id; person index -> cluster id (offset).
    owner: Vec<usize>,
    clusters: Vec<Option<Cluster>>,
    n_det: usize,
}

impl ClusterSet {
    fn new(n_det: usize, detections: &[Detection2D], n_persons: usize) -> Self {
        let mut clusters = Vec::with_capacity(n_det + n_persons);
        let mut owner = Vec::with_capacity(n_det + n_persons);
        for (i, d) in detections.iter().enumerate() {
            let mut slots = BTreeMap::new();
            slots.insert((d.view_id, d.joint_id), i);
            clusters.push(Some(Cluster {
                members: vec![i],
                slots,
                anchor: None,
                matching_scores: Vec::new(),
                views: HashSet::from([d.view_id]),
            }));
            owner.push(i);
        }
        for k in 0..n_persons {
            clusters.push(Some(Cluster {
                members: Vec::new(),
                slots: BTreeMap::new(),
                anchor: Some(k),
                matching_scores: Vec::new(),
                views: HashSet::new(),
            }));
            owner.push(n_det + k);
        }
        ClusterSet {
            owner,
            clusters,
            n_det,
        }
    }

    fn cluster_of(&self, node: usize) -> usize {
        self.owner[node]
    }

    /// Merge compatibility: slot uniqueness, single anchor, and same-view
    /// bone plausibility between the two sides.
    fn can_merge(
        &self,
        ca: usize,
        cb: usize,
        detections: &[Detection2D],
        adjacency: &[(usize, usize, f64)],
        view_depth: &HashMap<usize, f64>,
        cameras: &[Camera],
        cfg: &AssociationConfig,
    ) -> bool {
        let (a, b) = (
            self.clusters[ca].as_ref().unwrap(),
            self.clusters[cb].as_ref().unwrap(),
        );
        if a.anchor.is_some() && b.anchor.is_some() {
            return false;
        }
        for key in a.slots.keys() {
            if let Some(&other) = b.slots.get(key) {
                // Same slot occupied by distinct detections.
                if a.slots[key] != other {
                    return false;
                }
            }
        }
        // Bone-length and epipolar-consensus constraints across the merge
        // boundary.
        for &i in &a.members {
            let di = &detections[i];
            for &j in &b.members {
                let dj = &detections[j];
                if di.view_id != dj.view_id {
                    // Same joint seen from two views must agree epipolar-wise
                    // with every member, not just the edge being accepted.
                    if di.joint_id == dj.joint_id {
                        let cam_i = cameras.iter().find(|c| c.id == di.view_id).unwrap();
                        let cam_j = cameras.iter().find(|c| c.id == dj.view_id).unwrap();
                        if let Ok(dist) =
                            geometry::epipolar_distance(cam_i, &di.pos(), cam_j, &dj.pos())
                        {
                            if dist > cfg.epipolar_gate {
                                return false;
                            }
                        }
                    }
                    continue;
                }
                let bone = adjacency.iter().find(|&&(x, y, _)| {
                    (x == di.joint_id && y == dj.joint_id)
                        || (x == dj.joint_id && y == di.joint_id)
                });
                if let Some(&(_, _, rest_len)) = bone {
                    // Only over-length bones are fatal: a short projected
                    // bone can be legitimate foreshortening.
                    let cam = cameras.iter().find(|c| c.id == di.view_id).unwrap();
                    let len_px = (di.pos() - dj.pos()).norm();
                    let expected = rest_len * cam.focal / view_depth[&di.view_id];
                    let ratio = len_px / expected.max(1e-12);
                    if ratio > cfg.bone_window[1] {
                        let score = ((cfg.bone_window[1] - ratio) / 0.25).exp();
                        if score < cfg.score_floor {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn merge(&mut self, ca: usize, cb: usize, matching_score: Option<f64>) {
        let (keep, drop) = if ca < cb { (ca, cb) } else { (cb, ca) };
        let dropped = self.clusters[drop].take().unwrap();
        let kept = self.clusters[keep].as_mut().unwrap();
        for m in &dropped.members {
            self.owner[*m] = keep;
        }
        if let Some(k) = dropped.anchor {
            self.owner[self.n_det + k] = keep;
            kept.anchor = Some(k);
        }
        kept.members.extend(dropped.members);
        kept.slots.extend(dropped.slots);
        kept.views.extend(dropped.views);
        kept.matching_scores.extend(dropped.matching_scores);
        if let Some(s) = matching_score {
            kept.matching_scores.push(s);
        }
    }
}

/// Greedy score-descending solve of the association graph.
///
/// All edges are sorted by score; an edge is accepted iff merging the two
/// clusters it connects violates no uniqueness constraint (a detection
/// belongs to at most one person; at most one detection per (view, joint)
/// per person) and no bone-length constraint. Anchored clusters keep their
/// previous person identity; unanchored clusters spanning at least two views
/// with sufficient mean matching score spawn new persons. Each person's
/// joints seen in at least two views are triangulated.
pub fn solve(
    graph: &AssociationGraph,
    cameras: &[Camera],
    topology: &SkeletonTopology,
    cfg: &AssociationConfig,
) -> SolveResult {
    let n_det = graph.detections.len();
    let n_prev = graph.prev.len();

    let mut edges: Vec<(f64, EdgeRef)> = Vec::with_capacity(graph.edge_count());
    for (i, e) in graph.tracking_edges.iter().enumerate() {
        edges.push((e.score, EdgeRef::Tracking(i)));
    }
    for (i, e) in graph.matching_edges.iter().enumerate() {
        edges.push((e.score, EdgeRef::Matching(i)));
    }
    for (i, e) in graph.parsing_edges.iter().enumerate() {
        edges.push((e.score, EdgeRef::Parsing(i)));
    }
    // Deterministic order: score descending, stable by insertion order.
    edges.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut view_depth: HashMap<usize, f64> = HashMap::new();
    for cam in cameras {
        let depths: Vec<f64> =
            graph.prev.iter().filter_map(|s| skeleton_depth(s, cam)).collect();
        let d = if depths.is_empty() {
            cfg.nominal_depth
        } else {
            depths.iter().sum::<f64>() / depths.len() as f64
        };
        view_depth.insert(cam.id, d);
    }

    let adjacency = topology.adjacent_joints();
    let mut set = ClusterSet::new(n_det, &graph.detections, n_prev);

    for (score, edge) in edges {
        if score < cfg.score_floor {
            break;
        }
        let (na, nb, matching) = match edge {
            EdgeRef::Tracking(i) => {
                let e = &graph.tracking_edges[i];
                (e.detection, n_det + e.person, None)
            }
            EdgeRef::Matching(i) => {
                let e = &graph.matching_edges[i];
                (e.a, e.b, Some(e.score))
            }
            EdgeRef::Parsing(i) => {
                let e = &graph.parsing_edges[i];
                (e.a, e.b, None)
            }
        };
        let (ca, cb) = (set.cluster_of(na), set.cluster_of(nb));
        if ca == cb {
            if let Some(s) = matching {
                if let Some(c) = set.clusters[ca].as_mut() {
                    c.matching_scores.push(s);
                }
            }
            continue;
        }
        if set.can_merge(ca, cb, &graph.detections, &adjacency, &view_depth, cameras, cfg) {
            set.merge(ca, cb, matching);
        }
    }

    // Collect persons: anchored clusters keep their identity, spawned ones
    // get fresh ids after the previous maximum.
    let mut next_id = graph.prev.iter().map(|s| s.person_id + 1).max().unwrap_or(0);
    let mut assignments = Vec::new();
    let mut skeletons = Vec::new();

    let mut final_clusters: Vec<&Cluster> = set.clusters.iter().flatten().collect();
    final_clusters.sort_by_key(|c| c.members.iter().min().copied().unwrap_or(usize::MAX));

    for cluster in final_clusters {
        let person_id = match cluster.anchor {
            Some(k) => graph.prev[k].person_id,
            None => {
                if cluster.views.len() < 2 {
                    continue;
                }
                let joints: BTreeSet<usize> =
                    cluster.slots.keys().map(|&(_, joint)| joint).collect();
                if joints.len() < cfg.spawn_min_joints {
                    continue;
                }
                let mean_match = if cluster.matching_scores.is_empty() {
                    0.0
                } else {
                    cluster.matching_scores.iter().sum::<f64>()
                        / cluster.matching_scores.len() as f64
                };
                if mean_match < cfg.spawn_min_matching {
                    continue;
                }
                let id = next_id;
                next_id += 1;
                id
            }
        };
        if cluster.anchor.is_some() && cluster.members.is_empty() {
            // A previous person with no detections this frame: emit an empty
            // skeleton so identity persists.
            assignments.push(PersonAssignment {
                person_id,
                slots: BTreeMap::new(),
            });
            skeletons.push(Skeleton3D::empty(person_id, topology.joint_count));
            continue;
        }

        let mut skel = Skeleton3D::empty(person_id, topology.joint_count);
        for joint in 0..topology.joint_count {
            let obs: Vec<(&Camera, geometry::Vec2, f64)> = cluster
                .slots
                .iter()
                .filter(|((_, j), _)| *j == joint)
                .map(|((view, _), &det)| {
                    let d = &graph.detections[det];
                    let cam = cameras.iter().find(|c| c.id == *view).unwrap();
                    (cam, d.pos(), d.confidence)
                })
                .collect();
            if obs.len() >= 2 {
                if let Ok(p) = geometry::triangulate(&obs) {
                    skel.joints[joint] = Some(p);
                    skel.per_joint_confidence[joint] =
                        obs.iter().map(|(_, _, c)| c).sum::<f64>() / obs.len() as f64;
                }
            }
        }
        assignments.push(PersonAssignment {
            person_id,
            slots: cluster.slots.iter().map(|(&k, &v)| (k, v)).collect(),
        });
        skeletons.push(skel);
    }

    SolveResult {
        assignments,
        skeletons,
    }
}

/// Check the uniqueness constraints on a solution: every detection assigned
/// to at most one person, at most one detection per (view, joint) per person.
pub fn assignments_satisfy_uniqueness(result: &SolveResult) -> bool {
    let mut seen_det = HashSet::new();
    for pa in &result.assignments {
        let mut seen_slot = HashSet::new();
        for (&slot, &det) in &pa.slots {
            if !seen_det.insert(det) {
                return false;
            }
            if !seen_slot.insert(slot) {
                return false;
            }
        }
    }
    true
}

/// Detections file for one frame: `{view_id: [{joint_id, x, y, conf}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub joint_id: usize,
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

pub fn detections_from_json(json: &str) -> Result<Vec<Detection2D>, String> {
    let per_view: BTreeMap<String, Vec<DetectionRecord>> =
        serde_json::from_str(json).map_err(|e| format!("detections parse error: {e}"))?;
    let mut out = Vec::new();
    for (view, list) in per_view {
        let view_id: usize = view
            .parse()
            .map_err(|_| format!("bad view id key {view:?}"))?;
        for r in list {
            out.push(Detection2D {
                position: [r.x, r.y],
                confidence: r.conf,
                joint_id: r.joint_id,
                view_id,
            });
        }
    }
    Ok(out)
}

pub fn detections_to_json(detections: &[Detection2D]) -> String {
    let mut per_view: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for d in detections {
        per_view.entry(d.view_id.to_string()).or_default().push(DetectionRecord {
            joint_id: d.joint_id,
            x: d.position[0],
            y: d.position[1],
            conf: d.confidence,
        });
    }
    serde_json::to_string_pretty(&per_view).unwrap()
}

/// Assignment output: person_id -> view -> joint -> detection index.
pub fn assignments_to_json(assignments: &[PersonAssignment]) -> String {
    let mut root: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>> = BTreeMap::new();
    for pa in assignments {
        let person = root.entry(pa.person_id.to_string()).or_default();
        for (&(view, joint), &det) in &pa.slots {
            person
                .entry(view.to_string())
                .or_default()
                .insert(joint.to_string(), det);
        }
    }
    serde_json::to_string_pretty(&root).unwrap()
}
