//! On-disk dataset: scenes, rendered views, camera sets and a manifest.
//!
//! ```text
//! <root>/manifest.toml
//! <root>/scenes/<scene>.scene
//! <root>/sets/<set>.cams
//! <root>/views/<set>/<k>.view
//! ```
//!
//! A `.view` file is a short text header ending in a line `end`, followed by
//! five little-endian `f32` planes in row-major order: depth, world normal
//! x, y, z and shading.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::RenderedView;
use super::views::{hidden_fraction, sample_view_set, CameraSpec};
use super::{generate_scene, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::io::{read_cameras, read_scene, read_to_string, write_cameras, write_scene};
use crate::geometry::{Camera, Scene, TriangleMesh, Vec3};

const VIEW_MAGIC: &str = "drdf-view 1";
const MANIFEST_FORMAT: u32 = 1;
const PLANES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    /// Scene counts for train, val and test.
    pub splits: [usize; 3],
    /// View sets drawn in every train and val scene.
    pub train_sets_per_scene: usize,
    pub train_set_size: usize,
    /// Benchmark sets of 3 and 5 views, spread over the test scenes.
    pub sets_3: usize,
    pub sets_5: usize,
    pub max_tries: usize,
    /// Surface samples used to report each set's hidden fraction.
    pub hidden_samples: usize,
    pub scene: SceneSpec,
    pub camera: CameraSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            splits: [10, 2, 2],
            train_sets_per_scene: 8,
            train_set_size: 3,
            sets_3: 30,
            sets_5: 10,
            max_tries: 4000,
            hidden_samples: 4000,
            scene: SceneSpec::default(),
            camera: CameraSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.camera.validate()?;
        if self.splits.iter().sum::<usize>() == 0 {
            return Err(Error::Config("dataset has no scenes".into()));
        }
        if self.splits[2] == 0 && self.sets_3 + self.sets_5 > 0 {
            return Err(Error::Config("benchmark sets need at least one test scene".into()));
        }
        if self.train_set_size == 0 || self.max_tries == 0 || self.hidden_samples == 0 {
            return Err(Error::Config("set size, max_tries and hidden_samples must be >= 1".into()));
        }
        Ok(())
    }

    fn scene_ids(&self) -> Vec<(String, Split)> {
        let mut out = Vec::new();
        for (split, &n) in [Split::Train, Split::Val, Split::Test].into_iter().zip(&self.splits) {
            for _ in 0..n {
                out.push((format!("scene{:03}", out.len()), split));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub id: String,
    pub scene: String,
    pub split: Split,
    pub views: usize,
    pub hidden_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub spec: DatasetSpec,
    pub scenes: Vec<SceneRecord>,
    pub sets: Vec<SetRecord>,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::parse("manifest", e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::parse("manifest", format!("unsupported format {}", m.format)));
        }
        Ok(m)
    }

    /// Mean hidden fraction over the sets with `views` cameras.
    pub fn mean_hidden_fraction(&self, views: usize) -> Option<f64> {
        let f: Vec<f64> = self.sets.iter().filter(|s| s.views == views).map(|s| s.hidden_fraction).collect();
        (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
    }
}

pub fn view_to_bytes(view: &RenderedView) -> Vec<u8> {
    let (w, h) = (view.width(), view.height());
    let header = format!("{VIEW_MAGIC}\nsize {w} {h}\nchannels depth normal_x normal_y normal_z shading\nend\n");
    let mut out = Vec::with_capacity(header.len() + PLANES * w * h * 4);
    out.extend_from_slice(header.as_bytes());
    let planes: [Box<dyn Fn(usize) -> f64 + '_>; PLANES] = [
        Box::new(|i| view.depth[i]),
        Box::new(|i| view.normal[i].x),
        Box::new(|i| view.normal[i].y),
        Box::new(|i| view.normal[i].z),
        Box::new(|i| view.shading[i]),
    ];
    for plane in &planes {
        for i in 0..w * h {
            out.extend_from_slice(&(plane(i) as f32).to_le_bytes());
        }
    }
    out
}

pub fn view_from_bytes(bytes: &[u8], camera: Camera) -> Result<RenderedView> {
    let bad = |m: &str| Error::parse("view", m.to_string());
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing header terminator"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(VIEW_MAGIC) {
        return Err(bad("unknown view format"));
    }
    let size: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("size "))
        .map(|l| l.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    if size != [camera.width, camera.height] {
        return Err(bad("view size does not match its camera"));
    }
    let n = camera.width * camera.height;
    let body = &bytes[end..];
    if body.len() != PLANES * n * 4 {
        return Err(bad("truncated view planes"));
    }
    let value = |plane: usize, i: usize| {
        let o = (plane * n + i) * 4;
        f64::from(f32::from_le_bytes([body[o], body[o + 1], body[o + 2], body[o + 3]]))
    };
    Ok(RenderedView {
        depth: (0..n).map(|i| value(0, i)).collect(),
        normal: (0..n).map(|i| Vec3::new(value(1, i), value(2, i), value(3, i))).collect(),
        shading: (0..n).map(|i| value(4, i)).collect(),
        camera,
    })
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

struct SceneOutput {
    record: SceneRecord,
    sets: Vec<SetRecord>,
}

fn build_scene(spec: &DatasetSpec, root: &Path, index: usize, id: &str, split: Split) -> Result<SceneOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mesh = generate_scene(&spec.scene, &mut rng)?;
    write_scene(&root.join("scenes").join(format!("{id}.scene")), &mesh)?;
    let scene = Scene::new(mesh);

    let test_rank = index.checked_sub(spec.splits[0] + spec.splits[1]);
    let sizes: Vec<usize> = match test_rank {
        None => vec![spec.train_set_size; spec.train_sets_per_scene],
        Some(r) => {
            let n_test = spec.splits[2];
            let mut v: Vec<usize> = (r..spec.sets_3).step_by(n_test).map(|_| 3).collect();
            v.extend((r..spec.sets_5).step_by(n_test).map(|_| 5));
            v
        }
    };
    let mut sets = Vec::with_capacity(sizes.len());
    for (j, &k) in sizes.iter().enumerate() {
        let set_id = format!("{id}-set{j:02}");
        let views = sample_view_set(&scene, spec.scene.extent, &spec.camera, k, spec.max_tries, &mut rng)
            .map_err(|e| match e {
                Error::SamplingFailure(m) => Error::SamplingFailure(format!("{id}: {m}")),
                other => other,
            })?;
        let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
        let hidden = hidden_fraction(&scene, &cameras, spec.hidden_samples, spec.camera.far, &mut rng)?;
        write_cameras(&root.join("sets").join(format!("{set_id}.cams")), &cameras)?;
        let dir = root.join("views").join(&set_id);
        fs::create_dir_all(&dir)?;
        for (v, view) in views.iter().enumerate() {
            fs::write(dir.join(format!("{v}.view")), view_to_bytes(view))?;
        }
        sets.push(SetRecord {
            id: set_id,
            scene: id.to_string(),
            split,
            views: k,
            hidden_fraction: hidden,
        });
    }
    Ok(SceneOutput {
        record: SceneRecord {
            id: id.to_string(),
            split,
            triangles: scene.mesh.len(),
        },
        sets,
    })
}

impl Dataset {
    /// Generates every scene and set under `root`; scenes build in parallel
    /// from independent random streams, so output does not depend on threads.
    pub fn build(spec: &DatasetSpec, root: &Path) -> Result<Dataset> {
        spec.validate()?;
        for sub in ["scenes", "sets", "views"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let outputs = spec
            .scene_ids()
            .into_par_iter()
            .enumerate()
            .map(|(i, (id, split))| build_scene(spec, root, i, &id, split))
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = Manifest {
            format: MANIFEST_FORMAT,
            spec: spec.clone(),
            scenes: Vec::new(),
            sets: Vec::new(),
        };
        for out in outputs {
            manifest.scenes.push(out.record);
            manifest.sets.extend(out.sets);
        }
        fs::write(root.join("manifest.toml"), manifest.to_toml()?)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = Manifest::from_toml(&read_to_string(&root.join("manifest.toml"))?)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn set(&self, id: &str) -> Result<&SetRecord> {
        self.manifest
            .sets
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::NotFound(self.root.join("sets").join(format!("{id}.cams"))))
    }

    pub fn sets(&self, split: Split, views: Option<usize>) -> impl Iterator<Item = &SetRecord> {
        self.manifest
            .sets
            .iter()
            .filter(move |s| s.split == split && views.map_or(true, |k| s.views == k))
    }

    pub fn scene(&self, id: &str) -> Result<TriangleMesh> {
        read_scene(&self.root.join("scenes").join(format!("{id}.scene")))
    }

    pub fn cameras(&self, set_id: &str) -> Result<Vec<Camera>> {
        read_cameras(&self.root.join("sets").join(format!("{set_id}.cams")))
    }

    pub fn views(&self, set_id: &str) -> Result<Vec<RenderedView>> {
        let cameras = self.cameras(set_id)?;
        cameras
            .into_iter()
            .enumerate()
            .map(|(k, cam)| {
                let path = self.root.join("views").join(set_id).join(format!("{k}.view"));
                let bytes = fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::NotFound(path.clone()),
                    _ => Error::Io(e),
                })?;
                view_from_bytes(&bytes, cam)
            })
            .collect()
    }
}
