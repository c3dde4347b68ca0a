//! Per-pixel ray-cast rendering of depth, normal and headlight shading.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Scene, Vec3};
use crate::model::ImageTensor;

/// Depth tolerance for calling a reprojected pixel co-visible.
pub const OVERLAP_DEPTH_TOLERANCE: f64 = 0.05;
/// Input-tensor channels: scaled depth, camera-frame normal (3), shading.
pub const CHANNELS: usize = 5;
const DEPTH_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub camera: Camera,
    /// Along-ray distance to the first hit through each pixel center; 0 on a miss.
    pub depth: Vec<f64>,
    /// World-frame unit normal facing the camera; zero on a miss.
    pub normal: Vec<Vec3>,
    /// Lambertian response to a light at the camera center, in `[0, 1]`.
    pub shading: Vec<f64>,
}

impl RenderedView {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn hit_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn pixel_center(&self, index: usize) -> [f64; 2] {
        let w = self.width();
        [(index % w) as f64 + 0.5, (index / w) as f64 + 0.5]
    }

    /// Channel-major network input.
    pub fn to_tensor(&self) -> ImageTensor {
        let (w, h) = (self.width(), self.height());
        let mut t = ImageTensor::zeros(CHANNELS, h, w);
        let rot = &self.camera.rotation;
        for i in 0..w * h {
            let (y, x) = (i / w, i % w);
            t.set(0, y, x, self.depth[i] * DEPTH_SCALE);
            let n = rot * self.normal[i];
            t.set(1, y, x, n.x);
            t.set(2, y, x, n.y);
            t.set(3, y, x, n.z);
            t.set(4, y, x, self.shading[i]);
        }
        t
    }
}

pub fn render_view(scene: &Scene, camera: &Camera) -> RenderedView {
    let n = camera.width * camera.height;
    let w = camera.width;
    let pixels: Vec<(f64, Vec3, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pixel = [(i % w) as f64 + 0.5, (i / w) as f64 + 0.5];
            let ray = camera.ray_for_pixel(pixel, 0);
            match scene.first_hit(&ray, camera.far) {
                Some((t, tri)) => {
                    let mut normal = scene.mesh.normal(tri);
                    if normal.dot(&ray.direction) > 0.0 {
                        normal = -normal;
                    }
                    let shade = (-normal.dot(&ray.direction)).clamp(0.0, 1.0);
                    (t, normal, shade)
                }
                None => (0.0, Vec3::zeros(), 0.0),
            }
        })
        .collect();
    RenderedView {
        camera: camera.clone(),
        depth: pixels.iter().map(|p| p.0).collect(),
        normal: pixels.iter().map(|p| p.1).collect(),
        shading: pixels.iter().map(|p| p.2).collect(),
    }
}

/// Share of `a`'s hit pixels whose surface point is co-visible in `b`.
pub fn view_overlap(a: &RenderedView, b: &RenderedView, cam_b: &Camera) -> Result<f64> {
    let hits = a.hit_count();
    if hits == 0 {
        return Err(Error::UndefinedOverlap);
    }
    let covisible = (0..a.depth.len())
        .filter(|&i| a.depth[i] > 0.0)
        .filter(|&i| {
            let p = a.camera.ray_for_pixel(a.pixel_center(i), 0).at(a.depth[i]);
            let proj = cam_b.project(&p);
            if !proj.in_frustum {
                return false;
            }
            let (u, v) = (proj.pixel[0].floor() as usize, proj.pixel[1].floor() as usize);
            if u >= b.width() || v >= b.height() {
                return false;
            }
            let db = b.depth[v * b.width() + u];
            db > 0.0 && (db - (p - cam_b.center()).norm()).abs() <= OVERLAP_DEPTH_TOLERANCE
        })
        .count();
    Ok(covisible as f64 / hits as f64)
}
