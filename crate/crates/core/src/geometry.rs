//! Pinhole camera model, projection, depth, epipolar distance and
//! confidence-weighted multi-view triangulation.
//!
//! All world-space quantities are in meters, all image-space quantities in
//! pixels. Cameras are rectified; no distortion model.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth in camera frame (z = {0})")]
    DepthNonPositive(f64),
    #[error("triangulation needs at least 2 observations, got {0}")]
    InsufficientViews(usize),
    #[error("degenerate rays: normal system condition number {0:.3e} exceeds 1e12")]
    DegenerateRays(f64),
    #[error("epipolar distance undefined for identical camera centers")]
    IdenticalCameras,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// A 3D point in world coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3D { x, y, z }
    }

    pub fn from_vec(v: Vec3) -> Self {
        Point3D::new(v.x, v.y, v.z)
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3D) -> f64 {
        (self.as_vec() - other.as_vec()).norm()
    }
}

/// A single 2D keypoint observation: one graph node of the association graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub position: [f64; 2],
    pub confidence: f64,
    pub joint_id: usize,
    pub view_id: usize,
}

impl Detection2D {
    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.position[0], self.position[1])
    }
}

/// Calibrated pinhole camera: intrinsics, world→camera pose and resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: usize,
    /// Focal length in pixels (square pixels assumed).
    pub focal: f64,
    pub principal_point: [f64; 2],
    /// World→camera rotation, orthonormal.
    pub rotation: Matrix3<f64>,
    /// World→camera translation, meters.
    pub translation: Vec3,
    pub width: f64,
    pub height: f64,
}

impl Camera {
    pub fn new(
        id: usize,
        focal: f64,
        principal_point: [f64; 2],
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        if !(focal > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("focal {focal} <= 0")));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidCamera("non-positive resolution".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho_err > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation not orthonormal (|RᵀR - I| = {ortho_err:.3e})"
            )));
        }
        Ok(Camera {
            id,
            focal,
            principal_point,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera center in world coordinates, C = -Rᵀt.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose() * self.translation
    }

    /// World point into the camera frame.
    pub fn to_camera_frame(&self, p: &Point3D) -> Vec3 {
        self.rotation * p.as_vec() + self.translation
    }

    pub fn contains_pixel(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.x < self.width && px.y >= 0.0 && px.y < self.height
    }
}

/// Perspective projection of a world point, in pixels. The result may lie
/// outside the image bounds; callers clip.
pub fn project(camera: &Camera, p: &Point3D) -> Result<Vec2, GeometryError> {
    let pc = camera.to_camera_frame(p);
    if pc.z <= 0.0 {
        return Err(GeometryError::DepthNonPositive(pc.z));
    }
    Ok(Vec2::new(
        camera.focal * pc.x / pc.z + camera.principal_point[0],
        camera.focal * pc.y / pc.z + camera.principal_point[1],
    ))
}

/// Signed distance to the camera's image plane: the camera-frame z coordinate.
pub fn depth(camera: &Camera, p: &Point3D) -> f64 {
    camera.to_camera_frame(p).z
}

/// Confidence-weighted linear (DLT) triangulation.
///
/// Each observation contributes two rows, linear in the unknown world point,
/// scaled by its confidence. Solved through the 3×3 normal equations; a
/// condition number above 1e12 is reported as parallel-ray degeneracy.
pub fn triangulate(
    observations: &[(&Camera, Vec2, f64)],
) -> Result<Point3D, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientViews(observations.len()));
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vec3::zeros();
    for (cam, px, conf) in observations {
        let r = &cam.rotation;
        let t = &cam.translation;
        let u = (px.x - cam.principal_point[0]) / cam.focal;
        let v = (px.y - cam.principal_point[1]) / cam.focal;
        // u*(r3·X + t3) = r1·X + t1, similarly for v
        let row_u = r.row(0) - u * r.row(2);
        let row_v = r.row(1) - v * r.row(2);
        let b_u = u * t.z - t.x;
        let b_v = v * t.z - t.y;
        let w = conf.max(0.0);
        for (row, b) in [(row_u, b_u), (row_v, b_v)] {
            let a = Vec3::new(row[0], row[1], row[2]) * w;
            ata += a * a.transpose();
            atb += a * (b * w);
        }
    }
    let svd = ata.svd(false, false);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[2];
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > 1e12 {
        return Err(GeometryError::DegenerateRays(cond));
    }
    let x = ata
        .lu()
        .solve(&atb)
        .ok_or(GeometryError::DegenerateRays(cond))?;
    Ok(Point3D::from_vec(x))
}

fn fundamental_matrix(cam_a: &Camera, cam_b: &Camera) -> Matrix3<f64> {
    // F maps a pixel in view a to its epipolar line in view b.
    let ka = intrinsic_matrix(cam_a);
    let kb = intrinsic_matrix(cam_b);
    let r_rel = cam_b.rotation * cam_a.rotation.transpose();
    let t_rel = cam_b.translation - r_rel * cam_a.translation;
    let tx = skew(&t_rel);
    kb.transpose()
        .try_inverse()
        .unwrap()
        * tx
        * r_rel
        * ka.try_inverse().unwrap()
}

fn intrinsic_matrix(cam: &Camera) -> Matrix3<f64> {
    Matrix3::new(
        cam.focal,
        0.0,
        cam.principal_point[0],
        0.0,
        cam.focal,
        cam.principal_point[1],
        0.0,
        0.0,
        1.0,
    )
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn point_line_distance(line: &Vec3, p: &Vec2) -> f64 {
    let denom = (line.x * line.x + line.y * line.y).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (line.x * p.x + line.y * p.y + line.z).abs() / denom
}

/// Symmetric point-to-epipolar-line distance, averaged over both directions.
pub fn epipolar_distance(
    cam_a: &Camera,
    p_a: &Vec2,
    cam_b: &Camera,
    p_b: &Vec2,
) -> Result<f64, GeometryError> {
    if (cam_a.center() - cam_b.center()).norm() < 1e-12 {
        return Err(GeometryError::IdenticalCameras);
    }
    let f_ab = fundamental_matrix(cam_a, cam_b);
    let line_in_b = f_ab * Vec3::new(p_a.x, p_a.y, 1.0);
    let line_in_a = f_ab.transpose() * Vec3::new(p_b.x, p_b.y, 1.0);
    let d_b = point_line_distance(&line_in_b, p_b);
    let d_a = point_line_distance(&line_in_a, p_a);
    Ok(0.5 * (d_a + d_b))
}

/// Calibration file entry (`id, f, cx, cy, R (row-major 9), t (3), width,
/// height`; `distortion` reserved, must be absent or empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: usize,
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<Vec<f64>>,
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera, GeometryError> {
        Camera::new(
            self.id,
            self.f,
            [self.cx, self.cy],
            Matrix3::from_row_slice(&self.r),
            Vec3::new(self.t[0], self.t[1], self.t[2]),
            self.width,
            self.height,
        )
    }

    pub fn from_camera(cam: &Camera) -> Self {
        CameraRecord {
            id: cam.id,
            f: cam.focal,
            cx: cam.principal_point[0],
            cy: cam.principal_point[1],
            r: {
                let mut r = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        r[i * 3 + j] = cam.rotation[(i, j)];
                    }
                }
                r
            },
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
            width: cam.width,
            height: cam.height,
            distortion: None,
        }
    }
}

/// Parse a calibration file: a JSON array of [`CameraRecord`]s.
pub fn load_calibration(json: &str) -> Result<Vec<Camera>, String> {
    let records: Vec<CameraRecord> =
        serde_json::from_str(json).map_err(|e| format!("calibration parse error: {e}"))?;
    records
        .iter()
        .map(|r| r.to_camera().map_err(|e| e.to_string()))
        .collect()
}

/// A camera at `position` looking at `target`, y-down image convention.
pub fn look_at_camera(
    id: usize,
    position: Vec3,
    target: Vec3,
    focal: f64,
    width: f64,
    height: f64,
) -> Camera {
    let forward = (target - position).normalize();
    let mut world_up = Vec3::new(0.0, 1.0, 0.0);
    if forward.cross(&world_up).norm() < 1e-6 {
        world_up = Vec3::new(0.0, 0.0, 1.0);
    }
    let cam_x = forward.cross(&world_up).normalize();
    let cam_y = forward.cross(&cam_x); // image y points down in a y-up world
    let rotation = Matrix3::from_rows(&[
        cam_x.transpose(),
        cam_y.transpose(),
        forward.transpose(),
    ]);
    let translation = -rotation * position;
    Camera::new(
        id,
        focal,
        [width / 2.0, height / 2.0],
        rotation,
        translation,
        width,
        height,
    )
    .expect("look_at constructs a valid camera")
}
