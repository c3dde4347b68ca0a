use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drdf::datagen::{verify_view_set, Dataset, Split};
use drdf::geometry::io::read_ply;

const CONFIG: &str = r#"
dataset_dir = "data"
run_dir = "run"

[dataset]
splits = [1, 0, 1]
train_sets_per_scene = 1
sets_3 = 1
sets_5 = 1
hidden_samples = 500

[dataset.camera]
width = 24
height = 24

[sampling]
rays_per_image = 4
points_per_ray = 16

[model]
encoder_widths = [3, 4, 4]
d_img = 4
pe_octaves = 2
d_feat = 8
d_hidden = 6

[train]
steps = 4
log_every = 2

[decode]
rays_per_side = 12
points_per_ray = 64

[eval]
gt_points = 2000
sigma_r = [0.02, 0.1]
sigma_t = [0.1, 0.5]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_drdf"))
            .args(args)
            .current_dir(self.dir.path())
            .env("DRDF_THREADS", "1")
            .output()
            .unwrap();
        out
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn generated() -> Self {
        let ws = Workspace::new();
        ws.ok(&["gen", "-c", "run.toml"]);
        ws
    }

    fn set_id(&self, views: usize) -> String {
        let ds = Dataset::open(&self.path("data")).unwrap();
        let id = ds.sets(Split::Test, Some(views)).next().unwrap().id.clone();
        id
    }
}

fn loss_steps(path: &Path) -> Vec<usize> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn gen_is_deterministic_and_sets_verify() {
    let a = Workspace::generated();
    let b = Workspace::generated();
    let ma = fs::read(a.path("data/manifest.toml")).unwrap();
    assert_eq!(ma, fs::read(b.path("data/manifest.toml")).unwrap());
    let ds = Dataset::open(&a.path("data")).unwrap();
    assert_eq!(ds.manifest.scenes.len(), 2);
    for s in &ds.manifest.sets {
        assert!(verify_view_set(&ds.views(&s.id).unwrap()).unwrap());
    }
}

#[test]
fn train_from_zero_steps_and_resume() {
    let ws = Workspace::generated();
    let out = ws.ok(&["train", "-c", "run.toml", "--steps", "0"]);
    assert!(out.contains("batch: 1..=3 views, 4 rays/image, 16 points/ray"));
    assert!(ws.path("run/model.ckpt").exists());
    assert!(ws.path("run/config.toml").exists());
    assert!(loss_steps(&ws.path("run/loss.csv")).is_empty());

    ws.ok(&["train", "-c", "run.toml"]);
    assert_eq!(loss_steps(&ws.path("run/loss.csv")), vec![2, 4]);
    ws.ok(&["train", "-c", "run.toml", "--steps", "8", "--resume"]);
    assert_eq!(loss_steps(&ws.path("run/loss.csv")), vec![2, 4, 6, 8]);
    let frozen = fs::read_to_string(ws.path("run/config.toml")).unwrap();
    assert!(frozen.contains("steps = 8"));
}

#[test]
fn ground_truth_reconstruction_scores_high_and_files_agree() {
    let ws = Workspace::generated();
    let set = ws.set_id(3);
    ws.ok(&["reconstruct", "-c", "run.toml", "--set", &set, "--gt-field"]);
    let dir = ws.path(&format!("run/recon/{set}"));
    let merged = read_ply(&dir.join("merged.ply")).unwrap();
    let mut union = Vec::new();
    for k in 0..3 {
        union.extend(read_ply(&dir.join(format!("cam{k}.ply"))).unwrap().points);
    }
    assert_eq!(union, merged.points);

    let out = ws.ok(&["eval", "-c", "run.toml", "--set", &set]);
    assert!(out.contains("rho 0.2"));
    let csv = fs::read_to_string(ws.path(&format!("run/eval/{set}.csv"))).unwrap();
    let row: Vec<&str> = csv.lines().find(|l| l.starts_with("0.5,")).unwrap().split(',').collect();
    let all_f: f64 = row[9].parse().unwrap();
    assert!(all_f > 95.0, "{csv}");
}

#[test]
fn model_reconstruction_and_noise_sweep_on_five_views() {
    let ws = Workspace::generated();
    ws.ok(&["train", "-c", "run.toml"]);
    let set = ws.set_id(5);
    ws.ok(&["reconstruct", "-c", "run.toml", "--set", &set]);
    let prov = fs::read_to_string(ws.path(&format!("run/recon/{set}/provenance.toml"))).unwrap();
    assert!(prov.contains("mode = \"fused\""));
    assert!(ws.path(&format!("run/recon/{set}/cam4.ply")).exists());
    ws.ok(&["reconstruct", "-c", "run.toml", "--set", &set, "--independent", "--out", "indep"]);
    assert!(ws.path("indep/cam4.ply").exists());

    ws.ok(&["eval", "-c", "run.toml", "--set", &set, "--noise"]);
    let csv = fs::read_to_string(ws.path(&format!("run/eval/{set}-noise.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.02,0.1,"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let ws = Workspace::generated();
    let set3 = ws.set_id(3);
    let set5 = ws.set_id(5);

    fs::write(ws.path("bad.toml"), "[train]\nstepz = 1\n").unwrap();
    assert_eq!(ws.run(&["gen", "-c", "bad.toml"]).status.code(), Some(2));
    assert_eq!(ws.run(&["gen", "-c", "absent.toml"]).status.code(), Some(3));

    let missing = ws.run(&["reconstruct", "-c", "run.toml", "--set", &set3]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!ws.path(&format!("run/recon/{set3}")).exists());
    assert_eq!(
        ws.run(&["reconstruct", "-c", "run.toml", "--set", "nope", "--gt-field"]).status.code(),
        Some(3)
    );

    ws.ok(&["reconstruct", "-c", "run.toml", "--set", &set3, "--gt-field"]);
    let recon = format!("run/recon/{set3}");
    let mismatched = ws.run(&["eval", "-c", "run.toml", "--set", &set5, "--recon", &recon]);
    assert_eq!(mismatched.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let ws = Workspace::new();
    let out = ws.ok(&["gradcheck"]);
    assert!(out.contains("worst relative error"));
    assert!(out.contains("attn_out.w"));
}
