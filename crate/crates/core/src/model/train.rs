//! Loss/gradient evaluation on a training batch and the SGD loop.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{encode_image, encoder_backward, ImageTensor};
use super::fusion::{fuse_backward, fuse_forward, head_backward, head_forward, ray_attention_backward, ray_attention_forward};
use super::optim::{LrSchedule, OptimState};
use super::predictor::{gather_joints, EncodedView, SourceHint, MIN_QUERY_DEPTH};
use super::{FusionModel, Params};
use crate::error::{Error, Result};
use crate::field::TransformParams;
use crate::geometry::{Camera, Scene};
use crate::sampling::{build_training_batch, SamplingConfig, TrainBatch, TrainSample};

/// One scene with its rendered input views.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    /// Explicit milestones; empty means 2/3 and 5/6 of `steps`.
    pub milestones: Vec<usize>,
    pub momentum: f64,
    /// Rescale the gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    pub log_every: usize,
    /// Where to save the last finite model if the loss diverges.
    pub abort_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            base_lr: 0.01,
            lr_decay: 0.1,
            milestones: Vec::new(),
            momentum: 0.9,
            grad_clip: Some(1.0),
            log_every: 100,
            abort_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        let mut s = LrSchedule::scaled(self.base_lr, self.steps);
        s.decay = self.lr_decay;
        if !self.milestones.is_empty() {
            s.milestones = self.milestones.clone();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.log_every == 0 {
            return Err(Error::Config("steps and log_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        self.schedule().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub lr: f64,
    /// Mean batch loss since the previous record.
    pub loss: f64,
}

fn query_point(s: &TrainSample) -> crate::geometry::Vec3 {
    if s.depth < MIN_QUERY_DEPTH {
        s.point + s.direction * (MIN_QUERY_DEPTH - s.depth)
    } else {
        s.point
    }
}

/// Mean L1 loss of the batch and, if requested, its exact gradient.
pub fn batch_loss_and_grad(
    model: &FusionModel,
    example: &TrainExample,
    batch: &TrainBatch,
    with_grad: bool,
) -> Result<(f64, Option<Params>)> {
    let (cfg, p) = (&model.config, &model.params);
    if batch.samples.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut views = Vec::with_capacity(batch.views.len());
    let mut caches = Vec::with_capacity(batch.views.len());
    for &v in &batch.views {
        let image = example
            .images
            .get(v)
            .ok_or_else(|| Error::invalid(format!("batch references missing view {v}")))?;
        let (grid, cache) = encode_image(cfg, p, image)?;
        views.push(EncodedView {
            camera: example.cameras[v].clone(),
            grid,
        });
        caches.push(cache);
    }
    let n = batch.samples.len() as f64;
    let mut grads = with_grad.then(|| Params::zeros(cfg));
    let mut grid_grads: Vec<Vec<f64>> = views.iter().map(|v| vec![0.0; v.grid.data.len()]).collect();
    let mut total = 0.0;

    for range in &batch.rays {
        let samples = &batch.samples[range.clone()];
        let mut fused = Vec::with_capacity(samples.len());
        let mut taps = Vec::with_capacity(samples.len());
        for s in samples {
            let hint = SourceHint {
                view: s.source,
                pixel: s.pixel,
            };
            let (joints, t) = gather_joints(cfg, &views, &query_point(s), &s.direction, Some(hint))?;
            fused.push(fuse_forward(cfg, p, &joints)?);
            taps.push(t);
        }
        let pooled: Vec<Vec<f64>> = fused.iter().map(|f| f.pooled.clone()).collect();
        let ray_trace = if cfg.ray_attention {
            Some(ray_attention_forward(cfg, p, &pooled)?)
        } else {
            None
        };
        let head_in = ray_trace.as_ref().map_or(&pooled, |t| &t.outputs);
        let heads = head_in.iter().map(|g| head_forward(p, g)).collect::<Result<Vec<_>>>()?;
        for (h, s) in heads.iter().zip(samples) {
            total += (h.y - s.target).abs();
        }
        let Some(grads) = grads.as_mut() else { continue };

        let mut d_pooled: Vec<Vec<f64>> = heads
            .iter()
            .zip(samples)
            .map(|(h, s)| {
                let dy = match h.y.partial_cmp(&s.target) {
                    Some(std::cmp::Ordering::Greater) => 1.0 / n,
                    Some(std::cmp::Ordering::Less) => -1.0 / n,
                    _ => 0.0,
                };
                head_backward(p, h, dy, grads)
            })
            .collect();
        if let Some(t) = &ray_trace {
            d_pooled = ray_attention_backward(cfg, p, t, &d_pooled, grads);
        }
        for ((f, dg), t) in fused.iter().zip(&d_pooled).zip(&taps) {
            for (view, df) in fuse_backward(cfg, p, f, dg, grads) {
                if let Some(tap) = &t[view] {
                    tap.scatter(cfg.d_img, &df, &mut grid_grads[view]);
                }
            }
        }
    }
    if let Some(grads) = grads.as_mut() {
        for (cache, gg) in caches.iter().zip(&grid_grads) {
            encoder_backward(cfg, p, cache, gg, grads);
        }
    }
    Ok((total / n, grads))
}

/// Runs SGD from `optim.step` up to `cfg.steps`, returning the loss curve.
#[allow(clippy::too_many_arguments)]
pub fn train<R: Rng + ?Sized>(
    model: &mut FusionModel,
    data: &[TrainExample],
    sampling: &SamplingConfig,
    transform: &TransformParams,
    cfg: &TrainConfig,
    optim: &mut OptimState,
    rng: &mut R,
    mut on_record: impl FnMut(&LossPoint),
) -> Result<Vec<LossPoint>> {
    cfg.validate()?;
    sampling.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    optim.momentum = cfg.momentum;
    let mut curve = Vec::new();
    let (mut acc, mut count) = (0.0, 0usize);
    while optim.step < cfg.steps {
        let example = &data[rng.gen_range(0..data.len())];
        let batch = build_training_batch(&example.scene, &example.cameras, sampling, transform, rng)?;
        let (loss, grads) = batch_loss_and_grad(model, example, &batch, true)?;
        let mut grads = grads.expect("gradient requested");
        if !loss.is_finite() || !grads.is_finite() {
            if let Some(path) = &cfg.abort_checkpoint {
                super::checkpoint::save(path, model, Some(optim))?;
            }
            return Err(Error::NumericFailure { layer: "loss".into() });
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = grads.norm();
            if norm > clip {
                let scale = clip / norm;
                for g in grads.groups_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        let lr = optim.lr();
        optim.apply(&mut model.params, &grads)?;
        acc += loss;
        count += 1;
        if optim.step % cfg.log_every == 0 || optim.step == cfg.steps {
            let point = LossPoint {
                step: optim.step,
                lr,
                loss: acc / count as f64,
            };
            on_record(&point);
            curve.push(point);
            acc = 0.0;
            count = 0;
        }
    }
    Ok(curve)
}

pub fn write_loss_csv(path: &std::path::Path, curve: &[LossPoint]) -> Result<()> {
    let mut out = String::from("step,lr,loss\n");
    for p in curve {
        out.push_str(&format!("{},{:e},{:.8}\n", p.step, p.lr, p.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}
