//! Acceptance gate: one PASS/FAIL line per criterion A1-A9.
//!
//! Runs everything by default; `DRDF_ACCEPT=A1,A7` restricts the set.
//! The model criteria train several desk-scale models and take hours on one core.

use std::process::ExitCode;
use std::time::Instant;

use drdf::datagen::{generate_scene, sample_view_set, CameraSpec, SceneSpec};
use drdf::eval::{fscore, nearest_brute_force, noise_percentiles, MetricReport, VoxelGrid};
use drdf::field::{decode_frustum, decode_zero_crossings, GroundTruthSource, RayField, TransformParams};
use drdf::geometry::testing::random_soup;
use drdf::geometry::{intersect_brute_force, Camera, MeshBuilder, Ray, Scene, Vec3};
use drdf::model::fusion::{fuse_and_predict, predict_single_view, Joint};
use drdf::model::gradcheck::run_default_check;
use drdf::model::train::batch_loss_and_grad;
use drdf::model::{FusionModel, ModelConfig, TrainConfig};
use drdf::pipeline::{
    desk_benchmark, desk_decode_grid, desk_sampling, evaluate_reconstruction, example_from_views, mean_metric,
    reconstruct, score_sets, train_model, Benchmark, EvalConfig, ReconSource,
};
use drdf::sampling::{build_training_batch, sample_points_uniform, TrainBatch};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RHO: f64 = 0.2;
const A1_SCENES: usize = 100;
const A1_RAYS: usize = 1000;
const A2_POINTS: usize = 256;
const A2_Z_MAX: f64 = 8.0;
const A2_ISOLATED_TOL: f64 = 0.016;
const A2_MID_TOL: f64 = 1e-9;
const A3_TOL: f64 = 1e-4;
const A4_SEEDS: u64 = 5;
const A4_REQUIRED: usize = 4;
const A4_ALL_MIN: f64 = 80.0;
const A4_VISIBLE_MIN: f64 = 90.0;
const A4_LOSS_RATIO_MAX: f64 = 0.1;
const A4_PROBE_BATCHES: usize = 50;
const A4_STEPS: usize = 40_000;
const TRAIN_STEPS: usize = 20_000;
const BENCH_SCENES: usize = 10;
const BENCH_TRAIN_SETS: usize = 8;
const BENCH_SEED: u64 = 1000;
const A5_MARGIN: f64 = 3.0;
const A6_SEEDS: u64 = 3;
const A7_DRAWS: usize = 100_000;
const A7_REL_TOL: f64 = 0.015;
const A7_ANGLES: [f64; 5] = [3.20, 6.37, 9.55, 12.82, 15.97];
const A7_SHIFTS: [f64; 5] = [0.28, 0.56, 0.84, 1.12, 1.40];
const A9_SLACK: f64 = 5.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn a1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut hits = 0;
    for _ in 0..A1_SCENES {
        let n = rng.gen_range(20..400);
        let scene = Scene::new(random_soup(&mut rng, n));
        for _ in 0..A1_RAYS {
            let origin = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let target = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let Some(dir) = (target - origin).try_normalize(1e-9) else { continue };
            let ray = Ray::new(origin, dir);
            let fast = scene.intersect_ray(&ray, 10.0);
            hits += fast.len();
            if fast != intersect_brute_force(&scene.mesh, &ray, 10.0) {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatching rays of {}, {hits} hits", A1_SCENES * A1_RAYS),
    )
}

fn a2() -> Outcome {
    let depths = sample_points_uniform(A2_POINTS, A2_Z_MAX).unwrap();
    let spacing = depths[1];
    let transform = TransformParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_isolated: f64 = 0.0;
    let mut missed = 0;
    for _ in 0..2000 {
        // Surfaces at least 0.2 m apart and away from the ends of the ray.
        let mut hits = Vec::new();
        let mut s = rng.gen_range(0.1..1.0);
        while s < A2_Z_MAX - 0.1 {
            hits.push(s);
            s += rng.gen_range(0.2..2.5);
        }
        let field = RayField::new(Ray::new(Vec3::zeros(), Vec3::z()), hits.clone(), A2_Z_MAX).unwrap();
        for t in [None, Some(transform)] {
            let samples: Vec<(f64, f64)> = depths
                .iter()
                .map(|&z| {
                    let d = field.drdf_gt(z).unwrap();
                    (z, t.map_or(d, |t| t.apply(d)))
                })
                .collect();
            let found = decode_zero_crossings(&samples).unwrap();
            if found.len() != hits.len() {
                missed += 1;
                continue;
            }
            for (f, h) in found.iter().zip(&hits) {
                worst_isolated = worst_isolated.max((f - h).abs());
            }
        }
    }

    let mut worst_mid: f64 = 0.0;
    for k in [3, 40, 127, 200, 250] {
        let s = depths[k] + 0.5 * spacing;
        let field = RayField::new(Ray::new(Vec3::zeros(), Vec3::z()), vec![s], A2_Z_MAX).unwrap();
        let samples: Vec<(f64, f64)> = depths.iter().map(|&z| (z, field.drdf_gt(z).unwrap())).collect();
        let found = decode_zero_crossings(&samples).unwrap();
        worst_mid = worst_mid.max(if found.len() == 1 { (found[0] - s).abs() } else { f64::INFINITY });
    }

    let mut b = MeshBuilder::new();
    let z = 2.0 + 0.37 * spacing;
    b.quad(
        Vec3::new(-20.0, -20.0, z),
        Vec3::new(20.0, -20.0, z),
        Vec3::new(20.0, 20.0, z),
        Vec3::new(-20.0, 20.0, z),
        0,
    );
    let scene = Scene::new(b.build().unwrap());
    let cam = Camera::canonical(64, 64, 0.0, A2_Z_MAX);
    let source = GroundTruthSource {
        scene: &scene,
        z_max: A2_Z_MAX,
        transform: Some(transform),
    };
    let cloud = decode_frustum(&cam, 0, &source, &desk_decode_grid()).unwrap();
    let frustum_ok = cloud.len() == desk_decode_grid().rays_per_side.pow(2);
    let frustum_err = cloud.points.iter().map(|p| (p.z - z).abs()).fold(0.0, f64::max);
    worst_isolated = worst_isolated.max(frustum_err);

    outcome(
        missed == 0 && frustum_ok && worst_isolated <= A2_ISOLATED_TOL && worst_mid <= A2_MID_TOL,
        format!(
            "isolated max err {worst_isolated:.5} m (tol {A2_ISOLATED_TOL}), mid-segment max err {worst_mid:.1e} (tol {A2_MID_TOL:e}), {missed} rays with missed surfaces"
        ),
    )
}

fn a3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for ray_attention in [false, true] {
        match run_default_check(ray_attention, 0) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error());
                detail.push(format!("ray_attention={ray_attention}: {:.2e}", r.max_rel_error()));
            }
            Err(e) => {
                worst = f64::INFINITY;
                detail.push(format!("ray_attention={ray_attention}: {e}"));
            }
        }
    }
    outcome(worst < A3_TOL, format!("max relative error {} (tol {A3_TOL:e})", detail.join(", ")))
}

fn a4() -> Outcome {
    let spec = SceneSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scene = Scene::new(generate_scene(&spec, &mut rng).unwrap());
    let views = sample_view_set(&scene, spec.extent, &CameraSpec::default(), 2, 4000, &mut rng).unwrap();
    let ex = example_from_views(scene.clone(), &views);
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..A4_SEEDS {
        let mut cfg = ModelConfig::desk();
        cfg.seed = seed;
        let mut model = FusionModel::new(cfg);
        let mut sampling = desk_sampling();
        sampling.rng_seed = seed;
        let train = TrainConfig {
            steps: A4_STEPS,
            ..TrainConfig::default()
        };
        let mut probe_rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let probes: Vec<TrainBatch> = (0..A4_PROBE_BATCHES)
            .map(|_| build_training_batch(&ex.scene, &ex.cameras, &sampling, &TransformParams::default(), &mut probe_rng).unwrap())
            .collect();
        let probe_loss = |m: &FusionModel| {
            probes.iter().map(|b| batch_loss_and_grad(m, &ex, b, false).unwrap().0).sum::<f64>() / probes.len() as f64
        };
        let initial = probe_loss(&model);
        if let Err(e) = train_model(&mut model, std::slice::from_ref(&ex), &sampling, &TransformParams::default(), &train) {
            lines.push(format!("seed {seed}: {e}"));
            continue;
        }
        let ratio = probe_loss(&model) / initial;
        let recon = reconstruct(ReconSource::Fused(&model), &ex.cameras, &ex.images, &desk_decode_grid()).unwrap();
        let report = evaluate_reconstruction(&recon, &scene, &ex.cameras, &EvalConfig::default()).unwrap();
        let row = report.row(RHO).unwrap();
        let visible = row.visible.map_or(0.0, |s| s.f);
        let ok = row.all.f >= A4_ALL_MIN && visible >= A4_VISIBLE_MIN && ratio < A4_LOSS_RATIO_MAX;
        good += ok as usize;
        lines.push(format!(
            "seed {seed}: all {:.1} vis {visible:.1} loss ratio {ratio:.3}",
            row.all.f
        ));
        eprintln!("  A4 {}", lines.last().unwrap());
    }
    outcome(
        good >= A4_REQUIRED,
        format!("{good}/{A4_SEEDS} seeds pass (need {A4_REQUIRED}); {}", lines.join("; ")),
    )
}

fn bench_model(bench: &Benchmark, seed: u64, gaussian: bool) -> FusionModel {
    let mut cfg = ModelConfig::desk();
    cfg.seed = seed;
    let mut model = FusionModel::new(cfg);
    let mut sampling = desk_sampling();
    sampling.rng_seed = seed;
    if !gaussian {
        sampling.gaussian_fraction = 0.0;
    }
    let train = TrainConfig {
        steps: TRAIN_STEPS,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    train_model(&mut model, &bench.train, &sampling, &TransformParams::default(), &train).unwrap();
    eprintln!("  trained benchmark model seed {seed} gaussian {gaussian} in {:.0?}", t.elapsed());
    model
}

fn fused_scores(model: &FusionModel, sets: &[drdf::model::TrainExample]) -> Vec<MetricReport> {
    score_sets(sets, |_| ReconSource::Fused(model), &desk_decode_grid(), &EvalConfig::default()).unwrap()
}

fn consistency(reports: &[MetricReport]) -> f64 {
    mean_metric(reports, RHO, |r| r.consistency).unwrap_or(f64::NAN)
}

fn hidden_f(reports: &[MetricReport]) -> f64 {
    mean_metric(reports, RHO, |r| r.hidden.map(|s| s.f)).unwrap_or(f64::NAN)
}

/// State shared by the benchmark criteria so each model is trained once.
#[derive(Default)]
struct BenchState {
    bench: Option<Benchmark>,
    base: Option<(FusionModel, Vec<MetricReport>)>,
}

impl BenchState {
    fn bench(&mut self) -> &Benchmark {
        self.bench
            .get_or_insert_with(|| desk_benchmark(BENCH_SCENES, BENCH_TRAIN_SETS, BENCH_SEED).unwrap())
    }

    /// Seed-0 model with Gaussian sampling and its fused 3-view reports.
    fn base(&mut self) -> &(FusionModel, Vec<MetricReport>) {
        if self.base.is_none() {
            let bench = self.bench().clone();
            let model = bench_model(&bench, 0, true);
            let reports = fused_scores(&model, &bench.eval3);
            self.base = Some((model, reports));
        }
        self.base.as_ref().unwrap()
    }
}

fn a5(state: &mut BenchState) -> Outcome {
    let bench = state.bench().clone();
    let (model, fused) = state.base();
    let indep = score_sets(
        &bench.eval3,
        |_| ReconSource::Independent(model),
        &desk_decode_grid(),
        &EvalConfig::default(),
    )
    .unwrap();
    let (f, i) = (consistency(fused), consistency(&indep));
    outcome(
        f >= i + A5_MARGIN,
        format!("fused consistency {f:.1} vs independent {i:.1} (need +{A5_MARGIN})"),
    )
}

fn a6(state: &mut BenchState) -> Outcome {
    let bench = state.bench().clone();
    let mut with = vec![hidden_f(&state.base().1)];
    let mut without = Vec::new();
    for seed in 0..A6_SEEDS {
        if seed > 0 {
            let m = bench_model(&bench, seed, true);
            with.push(hidden_f(&fused_scores(&m, &bench.eval3)));
        }
        let m = bench_model(&bench, seed, false);
        without.push(hidden_f(&fused_scores(&m, &bench.eval3)));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    outcome(
        a > b,
        format!("hidden F@{RHO} with Gaussian sampling {a:.2} {with:.1?} vs without {b:.2} {without:.1?}"),
    )
}

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for k in 0..5 {
        let sigma = 0.02 * (k + 1) as f64;
        let (angle, _) = noise_percentiles(sigma, 0.0, A7_DRAWS, &mut rng);
        let (_, shift) = noise_percentiles(0.0, 0.1 * (k + 1) as f64, A7_DRAWS, &mut rng);
        worst = worst
            .max((angle / A7_ANGLES[k] - 1.0).abs())
            .max((shift / A7_SHIFTS[k] - 1.0).abs());
        got.push(format!("{angle:.2}deg/{shift:.3}m"));
    }
    outcome(
        worst <= A7_REL_TOL,
        format!("max relative deviation {:.2}% (tol {:.1}%): {}", worst * 100.0, A7_REL_TOL * 100.0, got.join(" ")),
    )
}

fn random_joints(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize) -> Vec<Joint> {
    (0..n)
        .map(|_| Joint {
            feature: (0..cfg.d_img).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            query: (0..cfg.d_query()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            valid: true,
        })
        .collect()
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures: Vec<&str> = Vec::new();
    let model = FusionModel::new(ModelConfig::desk());
    let cfg = model.config.clone();

    let mut perm = 0.0f64;
    let mut single = 0.0f64;
    let mut masked = 0.0f64;
    for _ in 0..50 {
        let joints = random_joints(&mut rng, &cfg, 4);
        let (y, w) = fuse_and_predict(&model, &joints).unwrap();
        let order = [2, 0, 3, 1];
        let shuffled: Vec<Joint> = order.iter().map(|&i| joints[i].clone()).collect();
        let (ys, ws) = fuse_and_predict(&model, &shuffled).unwrap();
        perm = perm.max((y - ys).abs());
        for (k, &i) in order.iter().enumerate() {
            perm = perm.max((w[i] - ws[k]).abs());
        }

        let one = &joints[..1];
        single = single.max((fuse_and_predict(&model, one).unwrap().0 - predict_single_view(&model, &one[0]).unwrap()).abs());

        let mut extra = joints.clone();
        let mut junk = random_joints(&mut rng, &cfg, 1).remove(0);
        junk.valid = false;
        extra.insert(1, junk.clone());
        let (ym, wm) = fuse_and_predict(&model, &extra).unwrap();
        junk.feature.iter_mut().for_each(|v| *v *= 7.0);
        extra[1] = junk;
        let (ym2, _) = fuse_and_predict(&model, &extra).unwrap();
        masked = masked.max((ym - y).abs()).max((ym2 - y).abs()).max(wm[1].abs());
    }
    if perm > 1e-12 {
        failures.push("permutation invariance");
    }
    if single > 1e-12 {
        failures.push("single-view equivalence");
    }
    if masked > 1e-12 {
        failures.push("invalid-view masking");
    }

    let (pred, gt) = (random_cloud(&mut rng, 800), random_cloud(&mut rng, 900));
    let rhos = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
    let scores: Vec<_> = rhos.iter().map(|&r| fscore(&pred, &gt, r).unwrap()).collect();
    let monotone = scores
        .windows(2)
        .all(|w| w[0].accuracy <= w[1].accuracy && w[0].completeness <= w[1].completeness && w[0].f <= w[1].f);
    if !monotone {
        failures.push("monotonicity in rho");
    }
    let symmetric = rhos.iter().all(|&r| {
        let (a, b) = (fscore(&pred, &gt, r).unwrap(), fscore(&gt, &pred, r).unwrap());
        a.accuracy == b.completeness && a.completeness == b.accuracy && a.f == b.f
    });
    if !symmetric {
        failures.push("F-score symmetry");
    }

    let points = random_cloud(&mut rng, 2000);
    let grid = VoxelGrid::new(&points, 0.1);
    let nn_equal = (0..2000).all(|_| {
        let q = Vec3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        grid.nearest(&q).map(|x| x.1) == nearest_brute_force(&points, &q).map(|x| x.1)
    });
    if !nn_equal {
        failures.push("nearest-neighbor equality");
    }

    let mut rigid: f64 = 0.0;
    let mut rigid_count_ok = true;
    for _ in 0..20 {
        let mesh = random_soup(&mut rng, 100);
        let axis = Unit::new_normalize(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3));
        let rot = Rotation3::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
        let shift = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let (a, b) = (Scene::new(mesh.clone()), Scene::new(mesh.transformed(&rot, &shift)));
        for _ in 0..200 {
            let o = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let d = (random_cloud(&mut rng, 1)[0] - o).normalize();
            let ha = a.intersect_ray(&Ray::new(o, d), 10.0);
            let hb = b.intersect_ray(&Ray::new(rot * o + shift, rot * d), 10.0);
            if ha.len() != hb.len() {
                rigid_count_ok = false;
                continue;
            }
            for (x, y) in ha.iter().zip(&hb) {
                rigid = rigid.max((x - y).abs());
            }
        }
    }
    if rigid > 1e-9 || !rigid_count_ok {
        failures.push("rigid-transform invariance");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("7 invariants hold (perm {perm:.1e}, N=1 {single:.1e}, masking {masked:.1e}, rigid {rigid:.1e})")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn a9(state: &mut BenchState) -> Outcome {
    let bench = state.bench().clone();
    let (model, three) = state.base();
    let five = fused_scores(model, &bench.eval5);
    let valid = five
        .iter()
        .all(|r| r.pred_points > 0 && r.row(RHO).is_some_and(|row| row.consistency.is_some()));
    let (c3, c5) = (consistency(three), consistency(&five));
    outcome(
        valid && c5 >= c3 - A9_SLACK,
        format!("5-view consistency {c5:.1} vs 3-view {c3:.1} (slack {A9_SLACK}), all 5-view sets valid: {valid}"),
    )
}

fn main() -> ExitCode {
    let selected: Option<Vec<String>> = std::env::var("DRDF_ACCEPT")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());
    let wanted = |id: &str| selected.as_ref().map_or(true, |s| s.iter().any(|x| x == id));
    let mut state = BenchState::default();
    let criteria: [(&str, &str, &mut dyn FnMut(&mut BenchState) -> Outcome); 9] = [
        ("A1", "BVH equals brute force", &mut |_| a1()),
        ("A2", "ground-truth decoding fidelity", &mut |_| a2()),
        ("A3", "gradient check", &mut |_| a3()),
        ("A4", "single-scene overfit", &mut |_| a4()),
        ("A5", "fusion consistency advantage", &mut a5),
        ("A6", "Gaussian sampling ablation", &mut a6),
        ("A7", "pose-noise percentiles", &mut |_| a7()),
        ("A8", "invariant suite", &mut |_| a8()),
        ("A9", "five-view generalization", &mut a9),
    ];
    let mut all_passed = true;
    for (id, name, check) in criteria {
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut state);
        all_passed &= o.passed;
        println!(
            "{id} {} {name}: {} [{:.1?}]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
