//! Query rays and along-ray depths for training and inference.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RayField, TransformParams};
use crate::geometry::{Camera, Ray, Scene, Vec3};

/// Gaussian draws falling outside `[0, z_max]` are redrawn this many times, then clamped.
const MAX_GAUSSIAN_REDRAWS: usize = 50;
/// Attempts at finding a surface-hitting ray before giving up on a view.
const MAX_RAY_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub rays_per_image: usize,
    pub points_per_ray: usize,
    pub gaussian_sigma: f64,
    /// Share of each ray's depths drawn near intersections; the rest are uniform.
    pub gaussian_fraction: f64,
    pub z_max: f64,
    pub rng_seed: u64,
    /// Upper bound on the number of views fused per training batch.
    pub max_views: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            rays_per_image: 80,
            points_per_ray: 512,
            gaussian_sigma: 0.15,
            gaussian_fraction: 0.75,
            z_max: 8.0,
            rng_seed: 0,
            max_views: 3,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_image < 1 || self.points_per_ray < 1 || self.max_views < 1 {
            return Err(Error::Config("sampling counts must be >= 1".into()));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config("gaussian_sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gaussian_fraction) {
            return Err(Error::Config("gaussian_fraction must lie in [0, 1]".into()));
        }
        if !(self.z_max > 0.0) {
            return Err(Error::Config("z_max must be positive".into()));
        }
        Ok(())
    }
}

/// Tile centers of a `g x g` grid over the image, row by row.
pub fn grid_pixels(camera: &Camera, g: usize) -> Vec<[f64; 2]> {
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut out = Vec::with_capacity(g * g);
    for j in 0..g {
        for i in 0..g {
            out.push([(i as f64 + 0.5) * w / g as f64, (j as f64 + 0.5) * h / g as f64]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayPattern {
    /// `n` rays through uniformly random sub-pixel locations.
    Random(usize),
    /// Regular `g x g` grid at tile centers.
    Grid(usize),
}

pub fn sample_rays<R: Rng + ?Sized>(
    camera: &Camera,
    camera_index: usize,
    pattern: RayPattern,
    rng: &mut R,
) -> Result<Vec<Ray>> {
    match pattern {
        RayPattern::Random(0) | RayPattern::Grid(0) => Err(Error::invalid("ray count must be >= 1")),
        RayPattern::Random(n) => Ok((0..n)
            .map(|_| {
                let pixel = [
                    rng.gen::<f64>() * camera.width as f64,
                    rng.gen::<f64>() * camera.height as f64,
                ];
                camera.ray_for_pixel(pixel, camera_index)
            })
            .collect()),
        RayPattern::Grid(g) => Ok(grid_pixels(camera, g)
            .into_iter()
            .map(|p| camera.ray_for_pixel(p, camera_index))
            .collect()),
    }
}

/// `n` evenly spaced depths from 0 to `z_max` inclusive.
pub fn sample_points_uniform(n: usize, z_max: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("uniform sampling needs at least two points"));
    }
    let step = z_max / (n - 1) as f64;
    Ok((0..n).map(|k| if k == n - 1 { z_max } else { k as f64 * step }).collect())
}

/// Sorted depths: a Gaussian share around the intersections plus a uniform remainder.
pub fn sample_points_gaussian<R: Rng + ?Sized>(
    field: &RayField,
    n: usize,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !field.has_surface() {
        return Err(Error::NoSurface);
    }
    if n < 1 {
        return Err(Error::invalid("need at least one sample"));
    }
    let z_max = field.z_max;
    let n_gauss = ((cfg.gaussian_fraction * n as f64).ceil() as usize).min(n);
    let mut depths = Vec::with_capacity(n);
    for _ in 0..n_gauss {
        let center = field.intersections[rng.gen_range(0..field.intersections.len())];
        let mut z = f64::NAN;
        for _ in 0..MAX_GAUSSIAN_REDRAWS {
            let noise: f64 = StandardNormal.sample(rng);
            z = center + cfg.gaussian_sigma * noise;
            if (0.0..=z_max).contains(&z) {
                break;
            }
        }
        depths.push(z.clamp(0.0, z_max));
    }
    for _ in n_gauss..n {
        depths.push(rng.gen::<f64>() * z_max);
    }
    depths.sort_by(f64::total_cmp);
    Ok(depths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// Query point `origin + depth * direction`.
    pub point: Vec3,
    /// Query direction (the source ray's unit direction).
    pub direction: Vec3,
    /// Position of the source camera within [`TrainBatch::views`].
    pub source: usize,
    /// Pixel of the query ray in the source camera.
    pub pixel: [f64; 2],
    pub depth: f64,
    /// Transformed field value in `[-1, 1]`.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    /// Indices of the selected cameras within the camera list given to the builder.
    pub views: Vec<usize>,
    pub samples: Vec<TrainSample>,
    /// Sample ranges belonging to the same query ray, in order.
    pub rays: Vec<std::ops::Range<usize>>,
}

/// Number of fused views, uniform on `1..=min(max_views, available)`.
pub fn choose_view_count<R: Rng + ?Sized>(available: usize, max_views: usize, rng: &mut R) -> usize {
    rng.gen_range(1..=max_views.min(available).max(1))
}

pub fn build_training_batch<R: Rng + ?Sized>(
    scene: &Scene,
    cameras: &[Camera],
    cfg: &SamplingConfig,
    transform: &TransformParams,
    rng: &mut R,
) -> Result<TrainBatch> {
    if cameras.is_empty() {
        return Err(Error::invalid("training batch needs at least one camera"));
    }
    let n_views = choose_view_count(cameras.len(), cfg.max_views, rng);
    let mut views = index::sample(rng, cameras.len(), n_views).into_vec();
    views.sort_unstable();
    let mut samples = Vec::with_capacity(n_views * cfg.rays_per_image * cfg.points_per_ray);
    let mut rays = Vec::with_capacity(n_views * cfg.rays_per_image);
    for (slot, &cam_index) in views.iter().enumerate() {
        let camera = &cameras[cam_index];
        for _ in 0..cfg.rays_per_image {
            let field = (0..MAX_RAY_ATTEMPTS)
                .map(|_| {
                    let ray = sample_rays(camera, cam_index, RayPattern::Random(1), rng)
                        .map(|mut r| r.remove(0))
                        .expect("one ray");
                    RayField::cast(scene, ray, cfg.z_max)
                })
                .find(RayField::has_surface)
                .ok_or_else(|| {
                    Error::DegenerateScene(format!(
                        "camera {cam_index} found no surface after {MAX_RAY_ATTEMPTS} rays"
                    ))
                })?;
            let depths = sample_points_gaussian(&field, cfg.points_per_ray, cfg, rng)?;
            let start = samples.len();
            for z in depths {
                samples.push(TrainSample {
                    point: field.ray.at(z),
                    direction: field.ray.direction,
                    source: slot,
                    pixel: field.ray.pixel,
                    depth: z,
                    target: transform.apply(field.drdf_gt(z)?),
                });
            }
            rays.push(start..samples.len());
        }
    }
    Ok(TrainBatch { views, samples, rays })
}
