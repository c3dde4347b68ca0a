//! End-to-end helpers shared by the command line and the benchmarks:
//! assembling training data, reconstructing view sets and scoring them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_scene, sample_view_set, CameraSpec, Dataset, RenderedView, SceneSpec, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, perturb_pose, sample_gt_cloud, MetricReport, ReconSet, DEFAULT_SIGMA_R, DEFAULT_SIGMA_T, DEFAULT_THRESHOLDS};
use crate::field::{decode_frustum, DecodeGrid, DrdfSource, GroundTruthSource, TransformParams};
use crate::geometry::{Camera, Ray, Scene};
use crate::model::{train, FusionModel, ImageTensor, LossPoint, OptimState, Predictor, TrainConfig, TrainExample};
use crate::sampling::SamplingConfig;

/// How a view set is turned into points.
#[derive(Debug, Clone, Copy)]
pub enum ReconSource<'a> {
    /// Every query fuses features from all views.
    Fused(&'a FusionModel),
    /// Each view is decoded alone and the clouds are merged in point space.
    Independent(&'a FusionModel),
    /// Exact field of the scene, bypassing the model.
    GroundTruth(&'a Scene),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    /// Surface samples in the frustum-restricted ground-truth cloud.
    pub gt_points: usize,
    pub seed: u64,
    pub sigma_r: Vec<f64>,
    pub sigma_t: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            gt_points: 20_000,
            seed: 0,
            sigma_r: DEFAULT_SIGMA_R.to_vec(),
            sigma_t: DEFAULT_SIGMA_T.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("thresholds must be a non-empty list of positive values".into()));
        }
        if self.gt_points == 0 {
            return Err(Error::Config("gt_points must be >= 1".into()));
        }
        if self.sigma_r.len() != self.sigma_t.len() {
            return Err(Error::Config("sigma_r and sigma_t must have equal length".into()));
        }
        if self.sigma_r.iter().chain(&self.sigma_t).any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Input channel holding scaled along-ray depth, zero where the pixel sees nothing.
const DEPTH_CHANNEL: usize = 0;

/// Laptop-scale ray sampling: 16 rays per image, 64 depths per ray.
pub fn desk_sampling() -> SamplingConfig {
    SamplingConfig {
        rays_per_image: 16,
        points_per_ray: 64,
        ..SamplingConfig::default()
    }
}

/// Decode grid matched to 64 x 64 inputs.
pub fn desk_decode_grid() -> DecodeGrid {
    DecodeGrid {
        rays_per_side: 48,
        ..DecodeGrid::default()
    }
}

pub fn example_from_views(scene: Scene, views: &[RenderedView]) -> TrainExample {
    TrainExample {
        scene,
        cameras: views.iter().map(|v| v.camera.clone()).collect(),
        images: views.iter().map(RenderedView::to_tensor).collect(),
    }
}

/// One training example per view set of `split`, scenes loaded once each.
pub fn load_examples(ds: &Dataset, split: Split) -> Result<Vec<TrainExample>> {
    let mut cache: Vec<(String, Scene)> = Vec::new();
    let mut out = Vec::new();
    for set in ds.sets(split, None) {
        let scene = match cache.iter().find(|(id, _)| *id == set.scene) {
            Some((_, s)) => s.clone(),
            None => {
                let s = Scene::new(ds.scene(&set.scene)?);
                cache.push((set.scene.clone(), s.clone()));
                s
            }
        };
        out.push(example_from_views(scene, &ds.views(&set.id)?));
    }
    Ok(out)
}

/// Fresh model trained from its seed; the curve is returned with it.
pub fn train_model(
    model: &mut FusionModel,
    data: &[TrainExample],
    sampling: &SamplingConfig,
    transform: &TransformParams,
    cfg: &TrainConfig,
) -> Result<Vec<LossPoint>> {
    let mut optim = OptimState::new(&model.config, cfg.schedule());
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.rng_seed);
    train(model, data, sampling, transform, cfg, &mut optim, &mut rng, |_| {})
}

/// Model source that skips rays through pixels whose input depth is empty.
///
/// Such rays carry no surface at all and are never supervised, so the
/// model's output there is meaningless; the value `1` decodes to nothing.
struct ObservedOnly<'a> {
    inner: &'a dyn DrdfSource,
    images: &'a [ImageTensor],
}

impl DrdfSource for ObservedOnly<'_> {
    fn evaluate(&self, camera_index: usize, ray: &Ray, depths: &[f64]) -> Result<Vec<f64>> {
        let img = &self.images[camera_index];
        let x = (ray.pixel[0].floor() as usize).min(img.width - 1);
        let y = (ray.pixel[1].floor() as usize).min(img.height - 1);
        if img.at(DEPTH_CHANNEL, y, x) > 0.0 {
            self.inner.evaluate(camera_index, ray, depths)
        } else {
            Ok(vec![1.0; depths.len()])
        }
    }
}

/// Decodes every camera's frustum. `cameras` are the poses fed to the
/// source; `images` are only used by model sources.
pub fn reconstruct(
    source: ReconSource<'_>,
    cameras: &[Camera],
    images: &[ImageTensor],
    grid: &DecodeGrid,
) -> Result<ReconSet> {
    if cameras.is_empty() {
        return Err(Error::invalid("reconstruction needs at least one camera"));
    }
    if !matches!(source, ReconSource::GroundTruth(_)) && images.len() != cameras.len() {
        return Err(Error::invalid("one image per camera required"));
    }
    let clouds = match source {
        ReconSource::GroundTruth(scene) => {
            let src = GroundTruthSource {
                scene,
                z_max: grid.z_max,
                transform: None,
            };
            cameras
                .iter()
                .enumerate()
                .map(|(i, c)| decode_frustum(c, i, &src, grid))
                .collect::<Result<Vec<_>>>()?
        }
        ReconSource::Fused(model) => {
            let predictor = Predictor::new(model, cameras, images)?;
            let source = ObservedOnly {
                inner: &predictor,
                images,
            };
            cameras
                .iter()
                .enumerate()
                .map(|(i, c)| decode_frustum(c, i, &source, grid))
                .collect::<Result<Vec<_>>>()?
        }
        ReconSource::Independent(model) => cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let predictor = Predictor::new(model, std::slice::from_ref(c), &images[i..=i])?;
                let source = ObservedOnly {
                    inner: &predictor,
                    images: &images[i..=i],
                };
                let mut cloud = decode_frustum(c, 0, &source, grid)?;
                cloud.cameras = Some(vec![i as u32; cloud.len()]);
                Ok(cloud)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ReconSet {
        cameras: cameras.to_vec(),
        clouds,
        z_max: grid.z_max,
    })
}

/// Scores `recon` against a ground-truth cloud restricted to the frusta of
/// `true_cameras`.
pub fn evaluate_reconstruction(
    recon: &ReconSet,
    scene: &Scene,
    true_cameras: &[Camera],
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gt = sample_gt_cloud(scene, true_cameras, cfg.gt_points, recon.z_max, &mut rng)?;
    let scored = ReconSet {
        cameras: true_cameras.to_vec(),
        clouds: recon.clouds.clone(),
        z_max: recon.z_max,
    };
    evaluate_run(&scored, &gt, scene, &cfg.thresholds)
}

/// Copies of `cameras` with every camera but the first perturbed.
pub fn perturb_all_but_first(cameras: &[Camera], sigma_r: f64, sigma_t: f64, seed: u64) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cameras
        .iter()
        .enumerate()
        .map(|(i, c)| if i == 0 { Ok(c.clone()) } else { perturb_pose(c, sigma_r, sigma_t, &mut rng) })
        .collect()
}

/// View sets of several scenes: training sets plus held-out 3- and 5-view
/// evaluation sets drawn from the same rooms.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<TrainExample>,
    pub eval3: Vec<TrainExample>,
    pub eval5: Vec<TrainExample>,
}

pub fn desk_benchmark(n_scenes: usize, train_sets_per_scene: usize, seed: u64) -> Result<Benchmark> {
    let spec = SceneSpec::default();
    let cam = CameraSpec::default();
    let per_scene = (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let scene = Scene::new(generate_scene(&spec, &mut rng)?);
            let mut draw = |k: usize| -> Result<TrainExample> {
                let views = sample_view_set(&scene, spec.extent, &cam, k, 4000, &mut rng)?;
                Ok(example_from_views(scene.clone(), &views))
            };
            let train = (0..train_sets_per_scene).map(|_| draw(3)).collect::<Result<Vec<_>>>()?;
            Ok((train, draw(3)?, draw(5)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = Benchmark {
        train: Vec::new(),
        eval3: Vec::new(),
        eval5: Vec::new(),
    };
    for (train, e3, e5) in per_scene {
        b.train.extend(train);
        b.eval3.push(e3);
        b.eval5.push(e5);
    }
    Ok(b)
}

/// Reconstructs and scores every set with `source` built per set.
pub fn score_sets<'a>(
    sets: &'a [TrainExample],
    source: impl Fn(&'a TrainExample) -> ReconSource<'a>,
    grid: &DecodeGrid,
    cfg: &EvalConfig,
) -> Result<Vec<MetricReport>> {
    sets.iter()
        .map(|ex| {
            let recon = reconstruct(source(ex), &ex.cameras, &ex.images, grid)?;
            evaluate_reconstruction(&recon, &ex.scene, &ex.cameras, cfg)
        })
        .collect()
}

/// Mean of `metric` over the reports that define it.
pub fn mean_metric(reports: &[MetricReport], rho: f64, metric: impl Fn(&crate::eval::ThresholdRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = reports.iter().filter_map(|r| r.row(rho).and_then(&metric)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
