//! Procedural indoor scenes, rendered input channels and view-set sampling.
//!
//! World frame: `+y` is up, the floor is the plane `y = 0` and the room spans
//! `[0, extent.x] x [0, extent.y] x [0, extent.z]`.

pub mod dataset;
pub mod render;
pub mod views;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DatasetSpec, Manifest, SceneRecord, SetRecord, Split};
pub use render::{render_view, view_overlap, RenderedView};
pub use views::{hidden_fraction, sample_view_set, verify_view_set, CameraSpec};

use crate::error::{Error, Result};
use crate::eval::classify_visibility;
use crate::geometry::{Camera, MeshBuilder, Scene, TriangleMesh, Vec3};

pub const LABEL_FLOOR: u32 = 0;
pub const LABEL_WALL: u32 = 1;
pub const LABEL_PANEL: u32 = 2;
pub const LABEL_OBJECT: u32 = 3;

const DOOR_WIDTH: f64 = 0.9;
const DOOR_HEIGHT: f64 = 2.0;
const MAX_REGENERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Room size in meters: width (x), height (y), depth (z).
    pub extent: [f64; 3],
    /// Inclusive range of free-standing objects besides the guaranteed partial wall.
    pub objects: [usize; 2],
    pub max_triangles: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            extent: [5.0, 2.8, 5.0],
            objects: [3, 6],
            max_triangles: 2000,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [w, h, d] = self.extent;
        if !(w >= 3.0 && d >= 3.0 && h >= DOOR_HEIGHT + 0.2) {
            return Err(Error::Config("room must be at least 3 x 2.2 x 3 m".into()));
        }
        if self.objects[0] > self.objects[1] {
            return Err(Error::Config("object range is reversed".into()));
        }
        if self.max_triangles < 64 {
            return Err(Error::Config("triangle budget below 64".into()));
        }
        Ok(())
    }
}

/// Wall on side `side` (0: z=0, 1: x=w, 2: z=d, 3: x=0) as a horizontal run.
fn wall_run(side: usize, [w, _, d]: [f64; 3]) -> (Vec3, Vec3) {
    match side {
        0 => (Vec3::new(0.0, 0.0, 0.0), Vec3::new(w, 0.0, 0.0)),
        1 => (Vec3::new(w, 0.0, 0.0), Vec3::new(w, 0.0, d)),
        2 => (Vec3::new(w, 0.0, d), Vec3::new(0.0, 0.0, d)),
        _ => (Vec3::new(0.0, 0.0, d), Vec3::new(0.0, 0.0, 0.0)),
    }
}

fn vertical_quad(b: &mut MeshBuilder, a: Vec3, c: Vec3, y0: f64, y1: f64, label: u32) {
    let up0 = Vec3::new(0.0, y0, 0.0);
    let up1 = Vec3::new(0.0, y1, 0.0);
    b.quad(a + up0, c + up0, c + up1, a + up1, label);
}

fn build_candidate<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<TriangleMesh> {
    let [w, h, d] = spec.extent;
    let mut b = MeshBuilder::new();
    b.quad(
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, d),
        Vec3::new(w, 0.0, d),
        Vec3::new(w, 0.0, 0.0),
        LABEL_FLOOR,
    );

    let mut sides = vec![0, 1, 2, 3];
    sides.shuffle(rng);
    sides.truncate(rng.gen_range(2..=4));
    for (k, &side) in sides.iter().enumerate() {
        let (a, c) = wall_run(side, spec.extent);
        if k == 0 {
            // Doorway: solid jambs on both sides and a lintel above the gap.
            let len = (c - a).norm();
            let dir = (c - a) / len;
            let start = rng.gen_range(0.3..len - DOOR_WIDTH - 0.3);
            let (g0, g1) = (a + dir * start, a + dir * (start + DOOR_WIDTH));
            vertical_quad(&mut b, a, g0, 0.0, h, LABEL_WALL);
            vertical_quad(&mut b, g1, c, 0.0, h, LABEL_WALL);
            vertical_quad(&mut b, g0, g1, DOOR_HEIGHT, h, LABEL_WALL);
        } else {
            vertical_quad(&mut b, a, c, 0.0, h, LABEL_WALL);
        }
    }

    // Guaranteed occluder: a free-standing partial wall crossing the room.
    let center = Vec3::new(rng.gen_range(0.35 * w..0.65 * w), 0.0, rng.gen_range(0.35 * d..0.65 * d));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let half = rng.gen_range(0.6..1.2);
    let dir = Vec3::new(angle.cos(), 0.0, angle.sin());
    vertical_quad(
        &mut b,
        center - dir * half,
        center + dir * half,
        0.0,
        rng.gen_range(1.2..2.0_f64.min(h)),
        LABEL_PANEL,
    );

    let n_objects = rng.gen_range(spec.objects[0]..=spec.objects[1]);
    for _ in 0..n_objects {
        let sx = rng.gen_range(0.3..1.2);
        let sz = rng.gen_range(0.3..1.2);
        let x0 = rng.gen_range(0.2..w - sx - 0.2);
        let z0 = rng.gen_range(0.2..d - sz - 0.2);
        match rng.gen_range(0..3) {
            0 => {
                let sy = rng.gen_range(0.4..1.6);
                b.aabb_box(Vec3::new(x0, 0.0, z0), Vec3::new(x0 + sx, sy, z0 + sz), LABEL_OBJECT, false);
            }
            1 => {
                // Open-top shell, e.g. a bin or shelf without a lid.
                let sy = rng.gen_range(0.4..1.0);
                b.aabb_box(Vec3::new(x0, 0.0, z0), Vec3::new(x0 + sx, sy, z0 + sz), LABEL_OBJECT, true);
            }
            _ => {
                // Table-like slab raised off the floor.
                let y = rng.gen_range(0.6..0.9);
                b.aabb_box(Vec3::new(x0, y, z0), Vec3::new(x0 + sx, y + 0.05, z0 + sz), LABEL_OBJECT, false);
            }
        }
    }
    if b.triangle_count() > spec.max_triangles {
        return Err(Error::DegenerateScene(format!(
            "{} triangles exceed the budget of {}",
            b.triangle_count(),
            spec.max_triangles
        )));
    }
    b.build()
}

/// Camera at the middle of the `z = 0` side at eye height, looking across the room.
pub fn frontal_camera(spec: &SceneSpec) -> Result<Camera> {
    let [w, _, d] = spec.extent;
    let eye = Vec3::new(w / 2.0, 1.5, 0.2);
    Camera::look_at(64, 64, 63.4, eye, Vec3::new(w / 2.0, 1.0, d), Vec3::y(), 0.0, 8.0)
}

/// Whether some surface inside the frontal camera's frustum is hidden from it.
pub fn has_hidden_geometry<R: Rng + ?Sized>(mesh: &TriangleMesh, spec: &SceneSpec, rng: &mut R) -> Result<bool> {
    let cam = frontal_camera(spec)?;
    let scene = Scene::new(mesh.clone());
    let pts: Vec<Vec3> = mesh
        .sample_surface(4000, rng)
        .into_iter()
        .map(|(p, _)| p)
        .filter(|p| cam.in_frustum(p, 8.0))
        .collect();
    Ok(classify_visibility(&pts, std::slice::from_ref(&cam), &scene, 8.0)
        .iter()
        .any(|v| !v))
}

/// Room with floor, 2-4 walls (one with a doorway), a partial wall and
/// random objects; regenerated until it has geometry hidden from the
/// frontal camera.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<TriangleMesh> {
    spec.validate()?;
    for _ in 0..MAX_REGENERATIONS {
        let mesh = match build_candidate(spec, rng) {
            Ok(m) => m,
            Err(Error::DegenerateScene(_)) => continue,
            Err(e) => return Err(e),
        };
        if has_hidden_geometry(&mesh, spec, rng)? {
            return Ok(mesh);
        }
    }
    Err(Error::DegenerateScene(format!(
        "no valid scene after {MAX_REGENERATIONS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.triangles, b.triangles);
        assert_ne!(a.vertices, c.vertices);
    }

    #[test]
    fn scenes_fit_the_room_and_budget() {
        let spec = SceneSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let mesh = generate_scene(&spec, &mut rng).unwrap();
            assert!(mesh.len() <= spec.max_triangles);
            for v in &mesh.vertices {
                assert!(v.x >= -1e-9 && v.x <= 5.0 + 1e-9);
                assert!(v.y >= -1e-9 && v.y <= 2.8 + 1e-9);
                assert!(v.z >= -1e-9 && v.z <= 5.0 + 1e-9);
            }
            let labels = mesh.labels.as_ref().unwrap();
            assert!(labels.contains(&LABEL_PANEL) && labels.contains(&LABEL_FLOOR));
            assert!(has_hidden_geometry(&mesh, &spec, &mut rng).unwrap());
        }
    }

    #[test]
    fn tight_budget_fails_cleanly() {
        let spec = SceneSpec {
            max_triangles: 64,
            objects: [8, 8],
            ..SceneSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(generate_scene(&spec, &mut rng), Err(Error::DegenerateScene(_))));
        assert!(SceneSpec {
            extent: [1.0, 2.8, 5.0],
            ..SceneSpec::default()
        }
        .validate()
        .is_err());
    }
}
