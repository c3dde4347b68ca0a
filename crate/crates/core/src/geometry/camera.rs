//! Pinhole cameras with a world-to-camera rigid pose.
//!
//! Camera frame follows the computer-vision convention: +x right, +y down,
//! +z along the optical axis. Pixel coordinates are continuous, with pixel
//! `(i, j)` covering `[i, i+1) x [j, j+1)` and the principal point at
//! `(width/2, height/2)`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::ray::Ray;
use super::Vec3;
use crate::error::{Error, Result};

/// Field of view used throughout the pipeline, in degrees.
pub const DEFAULT_FOV_X_DEG: f64 = 63.4;

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// z-coordinate of the point in the camera frame.
    pub depth: f64,
    pub in_frustum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fov_x: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fov_x,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up axis.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_x: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at target coincides with eye"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at direction parallel to up"))?;
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(width, height, fov_x, rotation, translation, near, far)
    }

    /// Camera with identity pose at the world origin looking down +z.
    pub fn canonical(width: usize, height: usize, near: f64, far: f64) -> Self {
        Camera {
            width,
            height,
            fov_x: DEFAULT_FOV_X_DEG,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be positive"));
        }
        if !(self.fov_x > 0.0 && self.fov_x < 180.0) {
            return Err(Error::invalid(format!("fov_x {} outside (0, 180)", self.fov_x)));
        }
        if !(self.near >= 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "near/far must satisfy 0 <= near < far (got {}, {})",
                self.near, self.far
            )));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(err < 1e-9) || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation is not a proper rotation"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera translation is not finite"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_x.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera_frame(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_world_frame(&self, xc: &Vec3) -> Vec3 {
        self.rotation.transpose() * (xc - self.translation)
    }

    pub fn project(&self, x: &Vec3) -> Projection {
        let xc = self.to_camera_frame(x);
        let depth = xc.z;
        if depth <= 0.0 {
            return Projection {
                pixel: [-1.0, -1.0],
                depth,
                in_frustum: false,
            };
        }
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        let u = f * xc.x / depth + cx;
        let v = f * xc.y / depth + cy;
        let in_frustum = depth >= self.near
            && depth <= self.far
            && u >= 0.0
            && u < self.width as f64
            && v >= 0.0
            && v < self.height as f64;
        Projection {
            pixel: [u, v],
            depth,
            in_frustum,
        }
    }

    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::invalid(format!("unproject depth must be positive, got {depth}")));
        }
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        let xc = Vector3::new((pixel[0] - cx) * depth / f, (pixel[1] - cy) * depth / f, depth);
        Ok(self.to_world_frame(&xc))
    }

    /// Normalized device coordinates: pixel axes mapped to [-1, 1] and depth
    /// mapped linearly from [near, far] to [-1, 1].
    pub fn ndc(&self, x: &Vec3) -> Vec3 {
        let xc = self.to_camera_frame(x);
        let depth = xc.z;
        let z_ndc = 2.0 * (depth - self.near) / (self.far - self.near) - 1.0;
        if depth <= 0.0 {
            // Behind the camera: lateral coordinates are meaningless, push them out of range.
            return Vector3::new(-2.0, -2.0, z_ndc);
        }
        let p = self.project(x);
        Vector3::new(
            2.0 * p.pixel[0] / self.width as f64 - 1.0,
            2.0 * p.pixel[1] / self.height as f64 - 1.0,
            z_ndc,
        )
    }

    /// Unit-direction ray from the camera center through a (sub-)pixel.
    pub fn ray_for_pixel(&self, pixel: [f64; 2], source_camera: usize) -> Ray {
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        let dir_cam = Vector3::new((pixel[0] - cx) / f, (pixel[1] - cy) / f, 1.0);
        let direction = (self.rotation.transpose() * dir_cam).normalize();
        Ray {
            origin: self.center(),
            direction,
            source_camera,
            pixel,
        }
    }

    pub fn in_frustum(&self, x: &Vec3, z_max: f64) -> bool {
        let p = self.project(x);
        p.in_frustum && p.depth <= z_max
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Same intrinsics, new pose.
    pub fn with_pose(&self, rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Camera {
            rotation,
            translation,
            ..self.clone()
        }
    }

    /// Apply a world-space rigid motion `x -> R x + t` to the camera, so that
    /// moved points project exactly as before.
    pub fn transformed(&self, motion_r: &Rotation3<f64>, motion_t: &Vec3) -> Self {
        let r = self.rotation * motion_r.matrix().transpose();
        let t = self.translation - r * motion_t;
        self.with_pose(r, t)
    }
}
