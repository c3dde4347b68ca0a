//! Ground-truth directed ray distances, the bounded regression target and
//! zero-crossing surface decoding.
//!
//! Along a ray `c + z r`, the field value at `z` is `s* - z` where `s*` is the
//! intersection depth closest to `z`. It is positive while the nearest
//! surface lies ahead and negative once it lies behind, so every surface is a
//! positive-to-negative zero crossing and the crossings of the negative-to-
//! positive kind sit at midpoints between surfaces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, PointCloud, Ray, Scene};
use crate::sampling::{grid_pixels, sample_points_uniform};

#[derive(Debug, Clone, PartialEq)]
pub struct RayField {
    pub ray: Ray,
    /// Strictly increasing intersection depths in `(0, z_max]`.
    pub intersections: Vec<f64>,
    pub z_max: f64,
}

impl RayField {
    pub fn new(ray: Ray, intersections: Vec<f64>, z_max: f64) -> Result<Self> {
        if !(z_max > 0.0) {
            return Err(Error::invalid("z_max must be positive"));
        }
        if intersections.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("intersections must be strictly increasing"));
        }
        if intersections.iter().any(|&s| !(s > 0.0 && s <= z_max)) {
            return Err(Error::invalid("intersections must lie in (0, z_max]"));
        }
        Ok(RayField {
            ray,
            intersections,
            z_max,
        })
    }

    /// Casts `ray` against the scene and keeps every hit up to `z_max`.
    pub fn cast(scene: &Scene, ray: Ray, z_max: f64) -> Self {
        let intersections = scene.intersect_ray(&ray, z_max);
        RayField {
            ray,
            intersections,
            z_max,
        }
    }

    pub fn has_surface(&self) -> bool {
        !self.intersections.is_empty()
    }

    /// Signed distance along the ray from depth `z` to the nearest surface.
    /// Equidistant surfaces resolve toward the camera.
    pub fn drdf_gt(&self, z: f64) -> Result<f64> {
        if self.intersections.is_empty() {
            return Err(Error::NoSurface);
        }
        if !(0.0..=self.z_max).contains(&z) {
            return Err(Error::invalid(format!("depth {z} outside [0, {}]", self.z_max)));
        }
        Ok(nearest_surface(&self.intersections, z) - z)
    }
}

fn nearest_surface(sorted: &[f64], z: f64) -> f64 {
    let k = sorted.partition_point(|&s| s < z);
    match (k.checked_sub(1).map(|i| sorted[i]), sorted.get(k)) {
        (Some(before), Some(&after)) => {
            if z - before <= after - z {
                before
            } else {
                after
            }
        }
        (Some(before), None) => before,
        (None, Some(&after)) => after,
        (None, None) => unreachable!("caller checks for an empty list"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetScale {
    /// `sign(d) min(ln(1+|d|), ln(1+tau)) / ln(1+tau)`
    #[default]
    LogTruncated,
    /// `clamp(d / tau, -1, 1)`
    LinearTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformParams {
    /// Truncation distance in meters.
    pub tau: f64,
    pub scale: TargetScale,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            tau: 1.0,
            scale: TargetScale::LogTruncated,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("truncation tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Maps a metric distance into `[-1, 1]`. Odd, monotone, zero-preserving.
    pub fn apply(&self, d: f64) -> f64 {
        match self.scale {
            TargetScale::LogTruncated => {
                let cap = self.tau.ln_1p();
                d.signum() * d.abs().ln_1p().min(cap) / cap * (d != 0.0) as u8 as f64
            }
            TargetScale::LinearTruncated => (d / self.tau).clamp(-1.0, 1.0),
        }
    }

    /// Inverse of [`apply`](Self::apply) on the open interval `(-1, 1)`.
    pub fn invert(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self.scale {
            TargetScale::LogTruncated => t.signum() * (t.abs() * self.tau.ln_1p()).exp_m1(),
            TargetScale::LinearTruncated => t * self.tau,
        }
    }
}

/// Depths of the positive-to-negative crossings of a sampled ray profile.
///
/// A sample that is exactly zero after a positive one is reported once at its
/// own depth; negative-to-positive crossings are not surfaces.
pub fn decode_zero_crossings(samples: &[(f64, f64)]) -> Result<Vec<f64>> {
    if samples.windows(2).any(|w| !(w[0].0 <= w[1].0)) {
        return Err(Error::invalid("samples must be sorted by depth"));
    }
    let mut out = Vec::new();
    for w in samples.windows(2) {
        let ((z0, v0), (z1, v1)) = (w[0], w[1]);
        if v0 > 0.0 && v1 <= 0.0 {
            if v1 == 0.0 {
                out.push(z1);
            } else {
                out.push(z0 + v0 * (z1 - z0) / (v0 - v1));
            }
        }
    }
    Ok(out)
}

/// Anything that can produce field values along a camera's query ray.
pub trait DrdfSource: Sync {
    /// Values at `depths` along `ray`, cast from camera `camera_index`.
    fn evaluate(&self, camera_index: usize, ray: &Ray, depths: &[f64]) -> Result<Vec<f64>>;
}

/// Exact field from a mesh, optionally passed through the target transform.
pub struct GroundTruthSource<'a> {
    pub scene: &'a Scene,
    pub z_max: f64,
    pub transform: Option<TransformParams>,
}

impl DrdfSource for GroundTruthSource<'_> {
    fn evaluate(&self, _camera_index: usize, ray: &Ray, depths: &[f64]) -> Result<Vec<f64>> {
        let field = RayField::cast(self.scene, *ray, self.z_max);
        if !field.has_surface() {
            // Surface-free rays never cross zero.
            return Ok(vec![1.0; depths.len()]);
        }
        depths
            .iter()
            .map(|&z| {
                let d = field.drdf_gt(z.clamp(0.0, self.z_max))?;
                Ok(match &self.transform {
                    Some(t) => t.apply(d),
                    None => d,
                })
            })
            .collect()
    }
}

/// Query layout for decoding one frustum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeGrid {
    /// Rays form a `rays_per_side x rays_per_side` grid of tile centers.
    pub rays_per_side: usize,
    pub points_per_ray: usize,
    pub z_max: f64,
}

impl Default for DecodeGrid {
    fn default() -> Self {
        DecodeGrid {
            rays_per_side: 128,
            points_per_ray: 256,
            z_max: 8.0,
        }
    }
}

impl DecodeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_ray < 2 || self.rays_per_side < 1 || !(self.z_max > 0.0) {
            return Err(Error::invalid("decode grid needs >= 1 ray, >= 2 points and z_max > 0"));
        }
        Ok(())
    }
}

/// Decodes every query ray of `camera` into world points tagged with `camera_index`.
pub fn decode_frustum(
    camera: &Camera,
    camera_index: usize,
    source: &dyn DrdfSource,
    grid: &DecodeGrid,
) -> Result<PointCloud> {
    grid.validate()?;
    let depths = sample_points_uniform(grid.points_per_ray, grid.z_max)?;
    let pixels = grid_pixels(camera, grid.rays_per_side);
    let per_ray: Vec<Vec<(f64, Ray)>> = pixels
        .par_iter()
        .map(|&pixel| {
            let ray = camera.ray_for_pixel(pixel, camera_index);
            let values = source.evaluate(camera_index, &ray, &depths)?;
            let samples: Vec<(f64, f64)> = depths.iter().copied().zip(values).collect();
            Ok(decode_zero_crossings(&samples)?.into_iter().map(|s| (s, ray)).collect())
        })
        .collect::<Result<_>>()?;
    let mut cloud = PointCloud {
        cameras: Some(Vec::new()),
        ..Default::default()
    };
    for (s, ray) in per_ray.into_iter().flatten() {
        cloud.push(ray.at(s), -ray.direction, Some(camera_index as u32));
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MeshBuilder, TriangleMesh, Vec3};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn field(hits: &[f64]) -> RayField {
        RayField::new(Ray::new(Vec3::zeros(), Vec3::z()), hits.to_vec(), 8.0).unwrap()
    }

    #[test]
    fn nearest_intersection_examples() {
        let f = field(&[2.0, 5.0]);
        assert_eq!(f.drdf_gt(1.0).unwrap(), 1.0);
        assert_eq!(f.drdf_gt(3.0).unwrap(), -1.0);
        assert_eq!(f.drdf_gt(4.0).unwrap(), 1.0);
        assert_eq!(f.drdf_gt(3.5).unwrap(), -1.5);
        assert_eq!(f.drdf_gt(8.0).unwrap(), -3.0);
    }

    #[test]
    fn empty_and_out_of_range() {
        assert!(matches!(field(&[]).drdf_gt(1.0), Err(Error::NoSurface)));
        assert!(matches!(field(&[2.0]).drdf_gt(9.0), Err(Error::InvalidArgument(_))));
        assert!(RayField::new(Ray::new(Vec3::zeros(), Vec3::z()), vec![3.0, 2.0], 8.0).is_err());
        assert!(RayField::new(Ray::new(Vec3::zeros(), Vec3::z()), vec![9.0], 8.0).is_err());
    }

    #[test]
    fn transform_examples() {
        let p = TransformParams::default();
        assert_eq!(p.apply(0.0), 0.0);
        let expected = -(1.5f64.ln()) / 2f64.ln();
        assert_abs_diff_eq!(p.apply(-0.5), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, -0.585, epsilon = 1e-3);
        assert_eq!(p.apply(3.0), 1.0);
        assert_eq!(p.apply(-1.0), -1.0);
        let lin = TransformParams {
            tau: 2.0,
            scale: TargetScale::LinearTruncated,
        };
        assert_eq!(lin.apply(1.0), 0.5);
        assert_eq!(lin.apply(-7.0), -1.0);
    }

    #[test]
    fn zero_crossing_examples() {
        assert_eq!(decode_zero_crossings(&[(1.0, 0.5), (2.0, -0.5)]).unwrap(), vec![1.5]);
        assert!(decode_zero_crossings(&[(1.0, -0.5), (2.0, 0.5)]).unwrap().is_empty());
        assert_abs_diff_eq!(decode_zero_crossings(&[(1.0, 0.2), (2.0, -0.6)]).unwrap()[0], 1.25, epsilon = 1e-15);
        assert_eq!(
            decode_zero_crossings(&[(0.0, 1.0), (1.0, 0.0), (2.0, 0.0), (3.0, -1.0)]).unwrap(),
            vec![1.0]
        );
        assert!(matches!(
            decode_zero_crossings(&[(2.0, 1.0), (1.0, -1.0)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    /// Dense-sweep oracle: nearest surface by scanning every intersection.
    fn sweep_oracle(hits: &[f64], z: f64) -> f64 {
        let mut best = hits[0];
        for &s in hits {
            if (s - z).abs() < (best - z).abs() {
                best = s;
            }
        }
        best - z
    }

    fn hits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(1u32..800, 1..6)
            .prop_map(|s| s.into_iter().map(|k| k as f64 * 0.01).collect())
    }

    proptest! {
        #[test]
        fn matches_sweep_and_zero_iff_surface(hits in hits_strategy()) {
            let f = field(&hits);
            for k in 0..=800 {
                let z = k as f64 * 0.01;
                let d = f.drdf_gt(z).unwrap();
                prop_assert_eq!(d, sweep_oracle(&hits, z));
                prop_assert!(hits.iter().any(|s| (s - (z + d)).abs() < 1e-12));
                prop_assert_eq!(d == 0.0, hits.contains(&z));
            }
        }

        #[test]
        fn slope_is_minus_one_between_sign_flips(hits in hits_strategy()) {
            let f = field(&hits);
            let h = 1e-3;
            let mids: Vec<f64> = hits.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            for k in 1..7999 {
                let z = k as f64 * 1e-3 + 0.5e-3;
                let near_kink = mids.iter().any(|m| (m - z).abs() < 2.0 * h);
                if near_kink { continue; }
                let slope = (f.drdf_gt(z + h * 0.5).unwrap() - f.drdf_gt(z - h * 0.5).unwrap()) / h;
                prop_assert!((slope + 1.0).abs() < 1e-6, "slope {} at {}", slope, z);
            }
        }

        #[test]
        fn transform_is_odd_monotone_and_sign_preserving(a in -5.0f64..5.0, b in -5.0f64..5.0, tau in 0.1f64..3.0) {
            for scale in [TargetScale::LogTruncated, TargetScale::LinearTruncated] {
                let p = TransformParams { tau, scale };
                prop_assert_eq!(p.apply(-a), -p.apply(a));
                if a <= b { prop_assert!(p.apply(a) <= p.apply(b)); }
                prop_assert_eq!(p.apply(a).signum() * (a != 0.0) as u8 as f64, a.signum() * (a != 0.0) as u8 as f64);
                prop_assert!(p.apply(a).abs() <= 1.0);
                if a.abs() < tau * 0.999 {
                    prop_assert!((p.invert(p.apply(a)) - a).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn crossings_survive_the_transform(hits in hits_strategy(), n in 16usize..300) {
            let f = field(&hits);
            let p = TransformParams::default();
            let zs = sample_points_uniform(n, 8.0).unwrap();
            let raw: Vec<(f64, f64)> = zs.iter().map(|&z| (z, f.drdf_gt(z).unwrap())).collect();
            let tr: Vec<(f64, f64)> = raw.iter().map(|&(z, d)| (z, p.apply(d))).collect();
            let a = decode_zero_crossings(&raw).unwrap();
            let b = decode_zero_crossings(&tr).unwrap();
            prop_assert_eq!(a.len(), b.len());
        }
    }

    fn quad_scene(z: f64) -> Scene {
        let mut b = MeshBuilder::new();
        b.quad(
            Vec3::new(-20.0, -20.0, z),
            Vec3::new(20.0, -20.0, z),
            Vec3::new(20.0, 20.0, z),
            Vec3::new(-20.0, 20.0, z),
            0,
        );
        Scene::new(b.build().unwrap())
    }

    #[test]
    fn decode_quad_frustum() {
        let scene = quad_scene(2.0);
        let cam = Camera::canonical(128, 128, 0.0, 8.0);
        let source = GroundTruthSource {
            scene: &scene,
            z_max: 8.0,
            transform: Some(TransformParams::default()),
        };
        let grid = DecodeGrid {
            rays_per_side: 32,
            ..Default::default()
        };
        let cloud = decode_frustum(&cam, 3, &source, &grid).unwrap();
        assert_eq!(cloud.len(), 32 * 32);
        for p in &cloud.points {
            assert!((p.z - 2.0).abs() < 0.0157, "{p:?}");
        }
        assert!(cloud.cameras.as_ref().unwrap().iter().all(|&c| c == 3));
    }

    #[test]
    fn decode_empty_scene() {
        let scene = Scene::new(TriangleMesh::empty());
        let cam = Camera::canonical(64, 64, 0.0, 8.0);
        let source = GroundTruthSource {
            scene: &scene,
            z_max: 8.0,
            transform: None,
        };
        let grid = DecodeGrid {
            rays_per_side: 8,
            ..Default::default()
        };
        assert!(decode_frustum(&cam, 0, &source, &grid).unwrap().is_empty());
    }
}
