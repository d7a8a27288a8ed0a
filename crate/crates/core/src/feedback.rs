//! Visibility feedback: soft occupancy masks rendered from fitted bodies.
//!
//! Each fitted person is rendered into each view as a union of capsules (one
//! per bone, radius by body part), the binary silhouette is softened with an
//! exact Euclidean distance transform, and the resulting field is sampled at
//! detection positions to produce the continuous occupancy τ that reweights
//! the next frame's tracking edges.

use serde::{Deserialize, Serialize};

use crate::body_model::{self, BodyParams, ModelTopology};
use crate::config::FeedbackConfig;
use crate::geometry::{project, Camera, Point3D, Vec2};

/// Binary silhouette on a (possibly downscaled) camera grid. Grid point
/// `(gx, gy)` samples pixel `(gx * downscale, gy * downscale)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub downscale: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize, downscale: usize) -> Self {
        BinaryMask { width, height, downscale, data: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.data[y * self.width + x] = true;
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }
}

/// Softened silhouette with values in [0,1]: 1 inside the binary mask,
/// decaying linearly with Euclidean distance outside until `falloff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub view_id: usize,
    pub person_id: usize,
    pub width: usize,
    pub height: usize,
    pub downscale: usize,
    pub falloff: f64,
    pub data: Vec<f64>,
}

/// Part-dependent capsule radius of the bone above `child`.
fn bone_radius(topology: &ModelTopology, child: usize, cfg: &FeedbackConfig) -> f64 {
    let b = &topology.body_landmarks;
    let torso: [usize; 6] = [b[0], b[1], b[3], b[6], b[9], b[12]];
    let in_hands = |j: usize| {
        topology.left_hand_landmarks[1..].contains(&j)
            || topology.right_hand_landmarks[1..].contains(&j)
    };
    let jaw_joint = topology
        .joints
        .iter()
        .position(|j| j.dof == Some(topology.jaw_dof));
    if in_hands(child) {
        cfg.finger_radius
    } else if child == b[2]
        || Some(child) == jaw_joint
        || topology.face_landmarks.contains(&child)
    {
        cfg.head_radius
    } else if torso.contains(&child)
        && topology.joints[child].parent.map_or(false, |p| torso.contains(&p))
    {
        cfg.torso_radius
    } else {
        cfg.limb_radius
    }
}

/// Stamp one 3D capsule into the mask by sweeping circles along the segment;
/// the pixel radius at each sample follows r_px = f * radius / depth.
pub fn rasterize_capsule(
    mask: &mut BinaryMask,
    camera: &Camera,
    p0: &Point3D,
    p1: &Point3D,
    radius: f64,
) {
    let (d0, d1) = (crate::geometry::depth(camera, p0), crate::geometry::depth(camera, p1));
    if d0 <= 0.0 && d1 <= 0.0 {
        return;
    }
    let approx_px = match (project(camera, p0), project(camera, p1)) {
        (Ok(a), Ok(b)) => (a - b).norm(),
        _ => camera.width.max(camera.height),
    };
    let steps = (approx_px * 2.0).ceil().clamp(1.0, 4096.0) as usize;
    let s = mask.downscale as f64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let p = Point3D::from_vec(p0.as_vec().lerp(&p1.as_vec(), t));
        let d = crate::geometry::depth(camera, &p);
        if d <= 0.0 {
            continue;
        }
        let Ok(c) = project(camera, &p) else { continue };
        let r = camera.focal * radius / d;
        let gx0 = (((c.x - r) / s).floor().max(0.0)) as usize;
        let gx1 = (((c.x + r) / s).ceil().min((mask.width - 1) as f64)) as usize;
        let gy0 = (((c.y - r) / s).floor().max(0.0)) as usize;
        let gy1 = (((c.y + r) / s).ceil().min((mask.height - 1) as f64)) as usize;
        for gy in gy0..=gy1 {
            for gx in gx0..=gx1 {
                let px = gx as f64 * s;
                let py = gy as f64 * s;
                if (px - c.x).powi(2) + (py - c.y).powi(2) <= r * r {
                    mask.set(gx, gy);
                }
            }
        }
    }
}

/// Render a person's binary silhouette: the union of one capsule per bone.
pub fn render_mask(
    topology: &ModelTopology,
    params: &BodyParams,
    camera: &Camera,
    cfg: &FeedbackConfig,
) -> BinaryMask {
    let s = cfg.mask_downscale.max(1);
    let mut mask = BinaryMask::empty(
        (camera.width as usize).div_ceil(s),
        (camera.height as usize).div_ceil(s),
        s,
    );
    let pos = body_model::forward_kinematics(topology, params);
    for (child, joint) in topology.joints.iter().enumerate() {
        let Some(parent) = joint.parent else { continue };
        rasterize_capsule(
            &mut mask,
            camera,
            &pos[parent],
            &pos[child],
            bone_radius(topology, child, cfg),
        );
    }
    mask
}

/// One pass of Felzenszwalb & Huttenlocher's 1D squared-distance transform.
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let diff = q as f64 - v[k] as f64;
        d[q] = diff * diff + f[v[k]];
    }
}

/// Exact Euclidean distance (in grid units) from every cell to the nearest
/// `true` cell. Cells inside the mask get 0; an all-false grid gets infinity.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    if !mask.any() {
        return vec![f64::INFINITY; w * h];
    }
    // A finite stand-in for "no seed in this line", larger than any real
    // squared distance on the grid so it never wins the lower envelope.
    let far = 4.0 * ((w * w + h * h) as f64);
    let mut sq = vec![0.0f64; w * h];
    for (i, &inside) in mask.data.iter().enumerate() {
        sq[i] = if inside { 0.0 } else { far };
    }
    // Columns.
    let mut col = vec![0.0f64; h];
    let mut out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = sq[y * w + x];
        }
        edt_1d(&col, &mut out);
        for y in 0..h {
            sq[y * w + x] = out[y].min(far);
        }
    }
    // Rows.
    let mut row_out = vec![0.0f64; w];
    for y in 0..h {
        edt_1d(&sq[y * w..(y + 1) * w], &mut row_out);
        sq[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Soften a binary silhouette: inside stays 1, outside decays linearly to 0
/// over `falloff` pixels of Euclidean distance.
pub fn soften(mask: &BinaryMask, falloff: f64, view_id: usize, person_id: usize) -> SoftMask {
    assert!(falloff > 0.0, "falloff must be positive");
    let dist = distance_transform(mask);
    let s = mask.downscale as f64;
    let data = dist
        .into_iter()
        .map(|d| (1.0 - d * s / falloff).clamp(0.0, 1.0))
        .collect();
    SoftMask {
        view_id,
        person_id,
        width: mask.width,
        height: mask.height,
        downscale: mask.downscale,
        falloff,
        data,
    }
}

/// Continuous occupancy τ at a pixel position: bilinear sample of the soft
/// mask, 0 outside the grid.
pub fn occupancy(mask: &SoftMask, point: &Vec2) -> f64 {
    let s = mask.downscale as f64;
    let gx = point.x / s;
    let gy = point.y / s;
    if gx < 0.0 || gy < 0.0 || gx > (mask.width - 1) as f64 || gy > (mask.height - 1) as f64 {
        return 0.0;
    }
    let x0 = gx.floor() as usize;
    let y0 = gy.floor() as usize;
    let x1 = (x0 + 1).min(mask.width - 1);
    let y1 = (y0 + 1).min(mask.height - 1);
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    let at = |x: usize, y: usize| mask.data[y * mask.width + x];
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x1, y0)
        + (1.0 - fx) * fy * at(x0, y1)
        + fx * fy * at(x1, y1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::default_topology;
    use crate::geometry::{look_at_camera, Vec3};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn front_camera() -> Camera {
        look_at_camera(
            0,
            Vec3::new(0.0, 1.0, 5.0),
            Vec3::new(0.0, 1.0, 0.0),
            1000.0,
            1280.0,
            720.0,
        )
    }

    #[test]
    fn person_behind_camera_renders_empty() {
        let topo = default_topology();
        let mut params = BodyParams::rest(&topo);
        params.global_translation = [0.0, 1.0, 10.0];
        let mask = render_mask(&topo, &params, &front_camera(), &FeedbackConfig::default());
        assert!(!mask.any());
    }

    #[test]
    fn capsule_width_follows_projection_law() {
        // Vertical bone at depth 2 in front of a camera at the origin looking
        // down +z; radius 0.1 m, f = 1000 → 50 px half-width.
        let cam = look_at_camera(
            0,
            Vec3::new(0.0, 0.0, -2.0),
            Vec3::new(0.0, 0.0, 0.0),
            1000.0,
            640.0,
            480.0,
        );
        let mut mask = BinaryMask::empty(640, 480, 1);
        rasterize_capsule(
            &mut mask,
            &cam,
            &Point3D::new(0.0, -0.05, 0.0),
            &Point3D::new(0.0, 0.05, 0.0),
            0.1,
        );
        let (cx, cy) = (320usize, 240usize);
        assert!(mask.get(cx - 50, cy) && mask.get(cx + 50, cy));
        assert!(!mask.get(cx - 51, cy) && !mask.get(cx + 51, cy));
    }

    #[test]
    fn disjoint_persons_disjoint_masks() {
        let topo = default_topology();
        let cam = front_camera();
        let cfg = FeedbackConfig::default();
        let mut a = BodyParams::rest(&topo);
        a.global_translation = [-1.0, 1.0, 0.0];
        let mut b = BodyParams::rest(&topo);
        b.global_translation = [1.0, 1.0, 0.0];
        let ma = render_mask(&topo, &a, &cam, &cfg);
        let mb = render_mask(&topo, &b, &cam, &cfg);
        assert!(ma.any() && mb.any());
        assert!(ma.data.iter().zip(&mb.data).all(|(&x, &y)| !(x && y)));
    }

    #[test]
    fn soften_linear_ramp() {
        // Single seed pixel; ramp along the row is exactly linear.
        let mut mask = BinaryMask::empty(64, 64, 1);
        mask.set(10, 32);
        let soft = soften(&mask, 20.0, 0, 0);
        let at = |x: usize, y: usize| soft.data[y * 64 + x];
        assert_eq!(at(10, 32), 1.0);
        assert_relative_eq!(at(20, 32), 0.5, epsilon = 1e-12);
        assert_eq!(at(30, 32), 0.0);
        assert_eq!(at(63, 63), 0.0);
    }

    fn brute_force_dt(mask: &BinaryMask) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; mask.width * mask.height];
        let seeds: Vec<(f64, f64)> = (0..mask.height)
            .flat_map(|y| (0..mask.width).filter_map(move |x| Some((x as f64, y as f64))))
            .filter(|&(x, y)| mask.get(x as usize, y as usize))
            .collect();
        for y in 0..mask.height {
            for x in 0..mask.width {
                let mut best = f64::INFINITY;
                for &(sx, sy) in &seeds {
                    let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
                    best = best.min(d2);
                }
                out[y * mask.width + x] = best.sqrt();
            }
        }
        out
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let mut mask = BinaryMask::empty(64, 64, 1);
            for _ in 0..rng.gen_range(1..40) {
                let x = rng.gen_range(0..64);
                let y = rng.gen_range(0..64);
                mask.set(x, y);
            }
            let fast = distance_transform(&mask);
            let slow = brute_force_dt(&mask);
            for (f, s) in fast.iter().zip(&slow) {
                assert_eq!(f, s);
            }
        }
    }

    #[test]
    fn occupancy_sampling() {
        let mut mask = BinaryMask::empty(100, 100, 1);
        for y in 40..=60 {
            for x in 40..=60 {
                mask.set(x, y);
            }
        }
        let soft = soften(&mask, 10.0, 0, 0);
        assert_eq!(occupancy(&soft, &Vec2::new(50.0, 50.0)), 1.0);
        assert_eq!(occupancy(&soft, &Vec2::new(95.0, 50.0)), 0.0);
        assert_eq!(occupancy(&soft, &Vec2::new(-1.0, 50.0)), 0.0);
        assert_eq!(occupancy(&soft, &Vec2::new(50.0, 1e4)), 0.0);
        // Non-increasing along a ray leaving the mask.
        let mut prev = f64::INFINITY;
        let mut x = 50.0;
        while x < 90.0 {
            let v = occupancy(&soft, &Vec2::new(x, 50.0));
            assert!(v <= prev + 1e-12);
            prev = v;
            x += 0.5;
        }
    }

    #[test]
    fn downscaled_mask_occupancy_consistent() {
        let topo = default_topology();
        let mut params = BodyParams::rest(&topo);
        params.global_translation = [0.0, 1.0, 0.0];
        let cam = front_camera();
        let mut cfg = FeedbackConfig::default();
        cfg.mask_downscale = 2;
        let mask = render_mask(&topo, &params, &cam, &cfg);
        let soft = soften(&mask, cfg.falloff_px, cam.id, 0);
        // The torso center projects near the image center and must be inside.
        let px = project(&cam, &Point3D::new(0.0, 1.25, 0.0)).unwrap();
        assert_eq!(occupancy(&soft, &px), 1.0);
    }
}
