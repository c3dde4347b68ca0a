use super::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    /// Index of the camera the ray was cast from.
    pub source_camera: usize,
    /// Continuous pixel coordinates in the source camera.
    pub pixel: [f64; 2],
}

impl Ray {
    /// Free ray not tied to any camera pixel. `direction` is normalized.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray {
            origin,
            direction: direction.normalize(),
            source_camera: 0,
            pixel: [0.0, 0.0],
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}
