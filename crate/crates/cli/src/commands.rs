//! Subcommand implementations. Each one validates its inputs before writing
//! anything.

use std::fs;
use std::path::{Path, PathBuf};

use drdf::datagen::{Dataset, Split};
use drdf::eval::{MetricReport, ReconSet};
use drdf::geometry::io::{read_ply, read_to_string, write_ply};
use drdf::geometry::{Camera, PointCloud, Scene};
use drdf::model::checkpoint;
use drdf::model::gradcheck::run_default_check;
use drdf::model::train::write_loss_csv;
use drdf::model::{train, FusionModel, ImageTensor, LossPoint, OptimState};
use drdf::pipeline::{
    evaluate_reconstruction, load_examples, perturb_all_but_first, reconstruct, ReconSource,
};
use drdf::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const CHECKPOINT: &str = "model.ckpt";
const LAST_GOOD: &str = "last-good.ckpt";
const LOSS_CSV: &str = "loss.csv";

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub no_gaussian_sampling: bool,
    pub ray_attention: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if self.no_gaussian_sampling {
            cfg.sampling.gaussian_fraction = 0.0;
        }
        if self.ray_attention {
            cfg.model.ray_attention = true;
        }
    }
}

/// Writes the frozen copy of the effective config into the run directory.
fn freeze(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

pub fn gen(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::build(&cfg.dataset, &cfg.dataset_dir)?;
    let m = &ds.manifest;
    println!(
        "dataset: {} scenes, {} sets in {}",
        m.scenes.len(),
        m.sets.len(),
        cfg.dataset_dir.display()
    );
    for k in [3, 5] {
        if let Some(f) = m.mean_hidden_fraction(k) {
            let n = m.sets.iter().filter(|s| s.views == k).count();
            println!("  {n} sets of {k} views, mean hidden fraction {f:.3}");
        }
    }
    Ok(ds)
}

/// Trains into `dir`, resuming from its checkpoint when asked.
pub fn train_into(cfg: &RunConfig, dir: &Path, resume: bool) -> Result<Vec<LossPoint>> {
    let ds = Dataset::open(&cfg.dataset_dir)?;
    let data = load_examples(&ds, Split::Train)?;
    if data.is_empty() {
        return Err(Error::invalid("dataset has no training sets"));
    }
    let ckpt = dir.join(CHECKPOINT);
    let (mut model, mut optim, mut curve) = if resume {
        let (model, optim) = checkpoint::load(&ckpt)?;
        if model.config != cfg.model {
            return Err(Error::Config("checkpoint model config differs from the run config".into()));
        }
        let optim = optim.ok_or_else(|| Error::parse("checkpoint", "no optimizer state to resume from"))?;
        (model, optim, read_loss_csv(&dir.join(LOSS_CSV))?)
    } else {
        let model = FusionModel::new(cfg.model.clone());
        let optim = OptimState::new(&model.config, cfg.train.schedule());
        (model, optim, Vec::new())
    };
    freeze(cfg, dir)?;
    println!(
        "batch: 1..={} views, {} rays/image, {} points/ray; {} training sets",
        cfg.sampling.max_views,
        cfg.sampling.rays_per_image,
        cfg.sampling.points_per_ray,
        data.len()
    );
    if cfg.train.steps == 0 {
        checkpoint::save(&ckpt, &model, Some(&optim))?;
        write_loss_csv(&dir.join(LOSS_CSV), &curve)?;
        return Ok(curve);
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.abort_checkpoint = Some(dir.join(LAST_GOOD));
    optim.schedule = train_cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.rng_seed);
    rng.set_stream(optim.step as u64);
    let new = train(
        &mut model,
        &data,
        &cfg.sampling,
        &cfg.transform,
        &train_cfg,
        &mut optim,
        &mut rng,
        |p| println!("step {:>7}  lr {:.2e}  loss {:.5}", p.step, p.lr, p.loss),
    )?;
    curve.extend(new);
    checkpoint::save(&ckpt, &model, Some(&optim))?;
    write_loss_csv(&dir.join(LOSS_CSV), &curve)?;
    Ok(curve)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossPoint>> {
    let text = read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse("loss curve", format!("bad line `{line}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LossPoint {
                step: f[0].parse().map_err(|_| bad())?,
                lr: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    Fused,
    Independent,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub set: String,
    pub scene: String,
    pub mode: ReconMode,
    pub checkpoint: Option<PathBuf>,
    pub rays_per_side: usize,
    pub points_per_ray: usize,
    pub z_max: f64,
    pub points: Vec<usize>,
}

struct SetData {
    scene: Scene,
    scene_id: String,
    cameras: Vec<Camera>,
    images: Vec<ImageTensor>,
}

fn load_set(ds: &Dataset, set_id: &str) -> Result<SetData> {
    let rec = ds.set(set_id)?;
    let views = ds.views(set_id)?;
    Ok(SetData {
        scene: Scene::new(ds.scene(&rec.scene)?),
        scene_id: rec.scene.clone(),
        cameras: views.iter().map(|v| v.camera.clone()).collect(),
        images: views.iter().map(|v| v.to_tensor()).collect(),
    })
}

fn recon_source<'a>(mode: ReconMode, model: Option<&'a FusionModel>, scene: &'a Scene) -> ReconSource<'a> {
    match (mode, model) {
        (ReconMode::Fused, Some(m)) => ReconSource::Fused(m),
        (ReconMode::Independent, Some(m)) => ReconSource::Independent(m),
        _ => ReconSource::GroundTruth(scene),
    }
}

/// Decodes a set into `out`: `cam<k>.ply` per camera, `merged.ply` and
/// `provenance.toml`.
pub fn reconstruct_set(cfg: &RunConfig, set_id: &str, mode: ReconMode, ckpt: Option<&Path>, out: &Path) -> Result<ReconSet> {
    let ds = Dataset::open(&cfg.dataset_dir)?;
    let data = load_set(&ds, set_id)?;
    let model = match mode {
        ReconMode::GroundTruth => None,
        _ => {
            let path = ckpt.ok_or_else(|| Error::invalid("model reconstruction needs a checkpoint"))?;
            Some(checkpoint::load(path)?.0)
        }
    };
    let recon = reconstruct(
        recon_source(mode, model.as_ref(), &data.scene),
        &data.cameras,
        &data.images,
        &cfg.decode,
    )?;
    fs::create_dir_all(out)?;
    for (k, cloud) in recon.clouds.iter().enumerate() {
        write_ply(&out.join(format!("cam{k}.ply")), cloud)?;
    }
    write_ply(&out.join("merged.ply"), &recon.merged())?;
    let prov = Provenance {
        set: set_id.to_string(),
        scene: data.scene_id,
        mode,
        checkpoint: model.as_ref().and(ckpt.map(Path::to_path_buf)),
        rays_per_side: cfg.decode.rays_per_side,
        points_per_ray: cfg.decode.points_per_ray,
        z_max: cfg.decode.z_max,
        points: recon.clouds.iter().map(PointCloud::len).collect(),
    };
    fs::write(
        out.join("provenance.toml"),
        toml::to_string(&prov).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    println!("{set_id}: {} points over {} cameras -> {}", recon.merged().len(), recon.clouds.len(), out.display());
    Ok(recon)
}

pub fn read_recon(dir: &Path) -> Result<(Provenance, Vec<PointCloud>)> {
    let prov: Provenance = toml::from_str(&read_to_string(&dir.join("provenance.toml"))?)
        .map_err(|e| Error::parse("provenance", e.to_string()))?;
    let clouds = (0..prov.points.len())
        .map(|k| read_ply(&dir.join(format!("cam{k}.ply"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((prov, clouds))
}

fn write_report(dir: &Path, stem: &str, report: &MetricReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    fs::write(dir.join(format!("{stem}.toml")), report.to_text()?)?;
    Ok(())
}

fn print_report(label: &str, report: &MetricReport) {
    for r in &report.rows {
        let f = |s: Option<drdf::eval::FScore>| s.map(|s| format!("{:6.2}", s.f)).unwrap_or_else(|| "     -".into());
        println!(
            "{label} rho {:<5} visible {}  hidden {}  all {:6.2}  consistency {}",
            r.rho,
            f(r.visible),
            f(r.hidden),
            r.all.f,
            r.consistency.map(|c| format!("{c:6.2}")).unwrap_or_else(|| "     -".into())
        );
    }
}

/// Scores a saved reconstruction of `set_id` found in `recon_dir`.
pub fn eval_set(cfg: &RunConfig, set_id: &str, recon_dir: &Path, out: &Path) -> Result<MetricReport> {
    let ds = Dataset::open(&cfg.dataset_dir)?;
    let (prov, clouds) = read_recon(recon_dir)?;
    if prov.set != set_id {
        return Err(Error::invalid(format!(
            "reconstruction in {} is of set {}, not {set_id}",
            recon_dir.display(),
            prov.set
        )));
    }
    let data = load_set(&ds, set_id)?;
    if clouds.len() != data.cameras.len() {
        return Err(Error::invalid("reconstruction camera count differs from the set"));
    }
    let recon = ReconSet {
        cameras: data.cameras.clone(),
        clouds,
        z_max: prov.z_max,
    };
    let report = evaluate_reconstruction(&recon, &data.scene, &data.cameras, &cfg.eval)?;
    write_report(out, set_id, &report)?;
    print_report(set_id, &report);
    Ok(report)
}

/// Re-decodes `set_id` from perturbed poses for every configured noise level.
pub fn eval_noise(cfg: &RunConfig, set_id: &str, ckpt: &Path, out: &Path) -> Result<Vec<(f64, f64, MetricReport)>> {
    let ds = Dataset::open(&cfg.dataset_dir)?;
    let data = load_set(&ds, set_id)?;
    let (model, _) = checkpoint::load(ckpt)?;
    let mut rows = Vec::new();
    let mut csv = String::from("sigma_r,sigma_t,rho,vis_f,hid_f,all_f,consistency\n");
    for (i, (&sr, &st)) in cfg.eval.sigma_r.iter().zip(&cfg.eval.sigma_t).enumerate() {
        let noisy = perturb_all_but_first(&data.cameras, sr, st, cfg.eval.seed.wrapping_add(i as u64))?;
        let recon = reconstruct(ReconSource::Fused(&model), &noisy, &data.images, &cfg.decode)?;
        let report = evaluate_reconstruction(&recon, &data.scene, &data.cameras, &cfg.eval)?;
        for r in &report.rows {
            let f = |s: Option<drdf::eval::FScore>| s.map(|s| format!("{:.4}", s.f)).unwrap_or_default();
            csv.push_str(&format!(
                "{sr},{st},{},{},{},{:.4},{}\n",
                r.rho,
                f(r.visible),
                f(r.hidden),
                r.all.f,
                r.consistency.map(|c| format!("{c:.4}")).unwrap_or_default()
            ));
        }
        print_report(&format!("{set_id} sigma_r {sr} sigma_t {st}"), &report);
        rows.push((sr, st, report));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{set_id}-noise.csv")), csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoGaussianSampling,
    RayAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoGaussianSampling, Variant::RayAttention];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGaussianSampling => "no_gaussian_sampling",
            Variant::RayAttention => "ray_attention",
        }
    }

    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoGaussianSampling => cfg.sampling.gaussian_fraction = 0.0,
            Variant::RayAttention => cfg.model.ray_attention = true,
        }
        cfg
    }
}

/// Mean F-scores over test sets at each threshold, per variant.
pub fn ablate(cfg: &RunConfig, variants: &[Variant]) -> Result<String> {
    let ds = Dataset::open(&cfg.dataset_dir)?;
    let sets: Vec<String> = ds.sets(Split::Test, None).map(|s| s.id.clone()).collect();
    if sets.is_empty() {
        return Err(Error::invalid("dataset has no test sets"));
    }
    let root = cfg.run_dir.join("ablate");
    let mut csv = String::from("variant,rho,vis_f,hid_f,all_f,consistency\n");
    for &v in variants {
        let vcfg = v.configure(cfg);
        let dir = root.join(v.name());
        println!("== {}", v.name());
        train_into(&vcfg, &dir, false)?;
        let reports = sets
            .iter()
            .map(|s| {
                let recon_dir = dir.join("recon").join(s);
                reconstruct_set(&vcfg, s, ReconMode::Fused, Some(&dir.join(CHECKPOINT)), &recon_dir)?;
                eval_set(&vcfg, s, &recon_dir, &dir.join("eval"))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, rho) in reports[0].rows.iter().map(|r| r.rho).enumerate() {
            let mean = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
                let v: Vec<f64> = reports.iter().filter_map(f).collect();
                if v.is_empty() {
                    String::new()
                } else {
                    format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            csv.push_str(&format!(
                "{},{rho},{},{},{},{}\n",
                v.name(),
                mean(&|r| r.rows[i].visible.map(|s| s.f)),
                mean(&|r| r.rows[i].hidden.map(|s| s.f)),
                mean(&|r| Some(r.rows[i].all.f)),
                mean(&|r| r.rows[i].consistency),
            ));
        }
    }
    fs::create_dir_all(&root)?;
    fs::write(root.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(csv)
}

/// Finite-difference check of every parameter group; fails above tolerance.
pub fn gradcheck(ray_attention: bool, seed: u64) -> Result<f64> {
    let report = run_default_check(ray_attention, seed)?;
    for g in &report.groups {
        println!("{:<10} n={:<6} max rel error {:.3e}", g.name, g.len, g.max_rel_error);
    }
    let worst = report.max_rel_error();
    println!("checked {} parameters, worst relative error {worst:.3e}", report.checked);
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(Error::NumericFailure {
            layer: format!("gradient check ({worst:.3e} >= {GRADCHECK_TOLERANCE:e})"),
        });
    }
    Ok(worst)
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join(CHECKPOINT)
}
