//! Pinhole camera model and EWA projection of 3D Gaussians.
//!
//! Camera space follows the OpenCV convention: `+x` right, `+y` down and
//! `+z` along the viewing direction. `orientation` rotates camera-space
//! vectors into world space.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frustum::{Frustum, Plane};
use crate::gaussian::GaussianAttributes;

/// Added to the diagonal of every projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    1.0e4
}

/// JSON form: `principal_point`, `near` and `far` may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CameraRecord")]
pub struct Camera {
    pub position: [f64; 3],
    /// Camera-to-world rotation, `[w, x, y, z]`.
    pub orientation: [f64; 4],
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub resolution: [u32; 2],
    pub near: f64,
    pub far: f64,
}

#[derive(Deserialize)]
struct CameraRecord {
    position: [f64; 3],
    orientation: [f64; 4],
    focal: [f64; 2],
    principal_point: Option<[f64; 2]>,
    resolution: [u32; 2],
    #[serde(default = "default_near")]
    near: f64,
    #[serde(default = "default_far")]
    far: f64,
}

impl From<CameraRecord> for Camera {
    fn from(r: CameraRecord) -> Self {
        let mut c = Camera::new(r.position, r.orientation, r.focal, r.resolution).with_clip(r.near, r.far);
        if let Some(pp) = r.principal_point {
            c.principal_point = pp;
        }
        c
    }
}

/// Screen-space footprint of a projected Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

impl Camera {
    /// Camera with the principal point at the image center.
    pub fn new(position: [f64; 3], orientation: [f64; 4], focal: [f64; 2], resolution: [u32; 2]) -> Self {
        Self {
            position,
            orientation,
            focal,
            principal_point: [resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0],
            resolution,
            near: default_near(),
            far: default_far(),
        }
    }

    /// Camera at `eye` looking at `target`; `fov_x` is the horizontal field
    /// of view in radians.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fov_x: f64, resolution: [u32; 2]) -> Self {
        let eye_v = Vector3::from(eye);
        let mut forward = Vector3::from(target) - eye_v;
        if forward.norm() == 0.0 {
            forward = Vector3::z();
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::x());
            if right.norm() < 1e-9 {
                right = forward.cross(&Vector3::y());
            }
        }
        let right = right.normalize();
        // +y points down in camera space.
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        let q = UnitQuaternion::from_matrix(&m);
        let f = resolution[0] as f64 / 2.0 / (fov_x / 2.0).tan();
        Self::new(eye, [q.w, q.i, q.j, q.k], [f, f], resolution)
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// World-to-camera rotation (`W` in the projection).
    pub fn view_rotation(&self) -> Matrix3<f64> {
        self.rotation().transpose()
    }

    /// Viewing direction in world space.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation().column(2).into_owned()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.view_rotation() * (p - self.position_vec())
    }

    /// Pinhole projection of a camera-space point (no depth check).
    pub fn project_camera_point(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.focal[0] * t.x / t.z + self.principal_point[0],
            self.focal[1] * t.y / t.z + self.principal_point[1],
        )
    }

    /// Projection Jacobian at camera-space point `t`.
    pub fn projection_jacobian(&self, t: &Vector3<f64>) -> Matrix2x3<f64> {
        let [fx, fy] = self.focal;
        let iz = 1.0 / t.z;
        let iz2 = iz * iz;
        Matrix2x3::new(fx * iz, 0.0, -fx * t.x * iz2, 0.0, fy * iz, -fy * t.y * iz2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidParameter(format!(
                "camera clip range must satisfy 0 < near < far (near {}, far {})",
                self.near, self.far
            )));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(Error::InvalidParameter("camera resolution must be at least 1x1".into()));
        }
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        let all = self
            .position
            .iter()
            .chain(&self.orientation)
            .chain(&self.focal)
            .chain(&self.principal_point);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite camera parameter".into()));
        }
        Ok(())
    }

    /// The six culling planes in world space with outward normals.
    ///
    /// The near plane passes through the camera center, so anything in the
    /// half space in front of the camera and before `far` that projects into
    /// the image is inside.
    pub fn frustum(&self) -> Frustum {
        let [fx, fy] = self.focal;
        let [cx, cy] = self.principal_point;
        let w = self.resolution[0] as f64;
        let h = self.resolution[1] as f64;
        let r = self.rotation();
        let p = self.position_vec();
        let make = |n_cam: Vector3<f64>, d_cam: f64| {
            let len = n_cam.norm();
            let n = r * (n_cam / len);
            Plane {
                normal: n,
                offset: d_cam / len - n.dot(&p),
            }
        };
        Frustum {
            planes: [
                make(Vector3::new(0.0, 0.0, -1.0), 0.0),
                make(Vector3::new(0.0, 0.0, 1.0), -self.far),
                make(Vector3::new(-fx, 0.0, -cx), 0.0),
                make(Vector3::new(fx, 0.0, cx - w), 0.0),
                make(Vector3::new(0.0, -fy, -cy), 0.0),
                make(Vector3::new(0.0, fy, cy - h), 0.0),
            ],
        }
    }
}

/// Projects a Gaussian to screen space: pinhole mean and `J W Σ Wᵀ Jᵀ`
/// covariance plus the [`LOW_PASS`] floor.
pub fn project_gaussian(g: &GaussianAttributes, cam: &Camera) -> Result<Projection> {
    let t = cam.to_camera(&g.mean_vec());
    if !(t.z > cam.near) {
        return Err(Error::BehindCamera { depth: t.z, near: cam.near });
    }
    let cov3 = crate::gaussian::covariance_from(&g.scale_vec(), &g.quaternion())?;
    let jw = cam.projection_jacobian(&t) * cam.view_rotation();
    let cov2d = jw * cov3 * jw.transpose() + Matrix2::identity() * LOW_PASS;
    Ok(Projection {
        mean2d: cam.project_camera_point(&t),
        cov2d,
        depth: t.z,
    })
}
