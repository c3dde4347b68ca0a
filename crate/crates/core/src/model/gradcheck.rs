//! Central finite-difference verification of [`batch_loss_and_grad`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoder::ImageTensor;
use super::train::{batch_loss_and_grad, TrainExample};
use super::{FusionModel, ModelConfig, GROUP_NAMES};
use crate::error::{Error, Result};
use crate::field::TransformParams;
use crate::geometry::{Camera, MeshBuilder, Scene, Vec3};
use crate::sampling::{build_training_batch, SamplingConfig, TrainBatch};

/// Gradient magnitudes below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: &'static str,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Two overlapping 16x16 views of a room corner with random input images.
pub fn toy_example(seed: u64) -> Result<TrainExample> {
    let mut b = MeshBuilder::new();
    b.aabb_box(Vec3::new(-3.0, -2.0, -3.0), Vec3::new(3.0, 2.0, 3.0), 0, true);
    b.aabb_box(Vec3::new(-0.5, 0.5, -0.5), Vec3::new(0.5, 2.0, 0.5), 1, false);
    let scene = Scene::new(b.build()?);
    let target = Vec3::new(0.0, 1.0, 0.0);
    let up = -Vec3::y();
    let cameras = vec![
        Camera::look_at(16, 16, 70.0, Vec3::new(-2.0, -0.5, -2.0), target, up, 0.0, 8.0)?,
        Camera::look_at(16, 16, 70.0, Vec3::new(2.0, -0.5, -2.2), target, up, 0.0, 8.0)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = cameras
        .iter()
        .map(|_| {
            let mut img = ImageTensor::zeros(5, 16, 16);
            img.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            img
        })
        .collect();
    Ok(TrainExample { scene, cameras, images })
}

/// Replaces every target with the current prediction shifted by 0.3 so that
/// no residual sits near the kink of the absolute value.
pub fn nudge_targets(model: &FusionModel, example: &TrainExample, batch: &mut TrainBatch) -> Result<()> {
    for range in batch.rays.clone() {
        let mut ray_batch = batch.clone();
        ray_batch.samples = batch.samples[range.clone()].to_vec();
        ray_batch.rays = vec![0..range.len()];
        for (j, k) in range.enumerate() {
            let y = probe(model, example, &ray_batch, j)?;
            let shift = if y > 0.0 { -0.3 } else { 0.3 };
            batch.samples[k].target = y + shift;
        }
    }
    Ok(())
}

/// Prediction for sample `k` of a single-ray batch.
fn probe(model: &FusionModel, example: &TrainExample, ray_batch: &TrainBatch, k: usize) -> Result<f64> {
    let mut b = ray_batch.clone();
    for s in &mut b.samples {
        s.target = -2.0;
    }
    let base = batch_loss_and_grad(model, example, &b, false)?.0 * b.samples.len() as f64;
    b.samples[k].target = 2.0;
    let flipped = batch_loss_and_grad(model, example, &b, false)?.0 * b.samples.len() as f64;
    // |y + 2| - |y - 2| = 2y for |y| < 2
    Ok((base - flipped) / 2.0)
}

/// Checks every parameter with step `h`.
pub fn gradient_check(model: &FusionModel, example: &TrainExample, batch: &TrainBatch, h: f64) -> Result<GradCheckReport> {
    let (_, grads) = batch_loss_and_grad(model, example, batch, true)?;
    let grads = grads.expect("gradient requested");
    let mut probe = model.clone();
    let mut groups = Vec::new();
    let mut checked = 0;
    for (gi, name) in GROUP_NAMES.iter().enumerate() {
        let analytic = grads.groups()[gi].clone();
        let mut worst: f64 = 0.0;
        let mut largest: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.params.groups()[gi][k];
            probe.params.groups_mut()[gi][k] = orig + h;
            let up = batch_loss_and_grad(&probe, example, batch, false)?.0;
            probe.params.groups_mut()[gi][k] = orig - h;
            let down = batch_loss_and_grad(&probe, example, batch, false)?.0;
            probe.params.groups_mut()[gi][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NumericFailure { layer: (*name).into() });
            }
            worst = worst.max(relative_error(a, numeric));
            largest = largest.max(a.abs());
            checked += 1;
        }
        if !analytic.is_empty() {
            groups.push(GroupError {
                name,
                len: analytic.len(),
                max_rel_error: worst,
                max_abs_grad: largest,
            });
        }
    }
    Ok(GradCheckReport { groups, checked })
}

/// Tiny model, toy scene and nudged batch, checked with `h = 1e-4`.
pub fn run_default_check(ray_attention: bool, seed: u64) -> Result<GradCheckReport> {
    let mut model = FusionModel::new(ModelConfig {
        ray_attention,
        seed,
        ..ModelConfig::tiny()
    });
    // Non-zero biases so that every bias gradient path is exercised away from zero.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for g in model.params.groups_mut() {
        if g.iter().all(|&v| v == 0.0) {
            g.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        }
    }
    let example = toy_example(seed)?;
    let sampling = SamplingConfig {
        rays_per_image: 2,
        points_per_ray: 4,
        max_views: 2,
        ..SamplingConfig::default()
    };
    // Draw until both views are fused so cross-view terms are covered.
    let mut batch = loop {
        let b = build_training_batch(&example.scene, &example.cameras, &sampling, &TransformParams::default(), &mut rng)?;
        if b.views.len() == 2 {
            break b;
        }
    };
    nudge_targets(&model, &example, &mut batch)?;
    gradient_check(&model, &example, &batch, 1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }

    #[test]
    fn probes_recover_predictions() {
        let model = FusionModel::new(ModelConfig::tiny());
        let ex = toy_example(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampling = SamplingConfig {
            rays_per_image: 1,
            points_per_ray: 3,
            max_views: 1,
            ..SamplingConfig::default()
        };
        let mut batch = build_training_batch(&ex.scene, &ex.cameras, &sampling, &TransformParams::default(), &mut rng).unwrap();
        let y1 = probe(&model, &ex, &batch, 1).unwrap();
        let v = batch.views[0];
        let predictor = crate::model::Predictor::new(&model, &ex.cameras[v..=v], &ex.images[v..=v]).unwrap();
        let s = &batch.samples[1];
        let ray = ex.cameras[v].ray_for_pixel(s.pixel, 0);
        let direct = predictor.predict_ray(0, &ray, &[s.depth]).unwrap()[0];
        assert!((y1 - direct).abs() < 1e-9, "{y1} vs {direct}");
        nudge_targets(&model, &ex, &mut batch).unwrap();
        assert!(((batch.samples[1].target - y1).abs() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn every_parameter_matches_central_differences() {
        for ray_attention in [false, true] {
            let report = run_default_check(ray_attention, 1).unwrap();
            for g in &report.groups {
                eprintln!("{:>10} n={:<4} max|g|={:.3e} rel={:.3e}", g.name, g.len, g.max_abs_grad, g.max_rel_error);
            }
            assert!(report.max_rel_error() < 1e-4, "{report:?}");
        }
    }
}
