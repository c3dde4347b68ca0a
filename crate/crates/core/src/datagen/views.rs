//! Constrained sampling of wide-baseline view sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_view, view_overlap, RenderedView};
use crate::error::{Error, Result};
use crate::eval::{classify_visibility, sample_gt_cloud};
use crate::geometry::{Camera, Ray, Scene, Vec3};

pub const MAX_OVERLAP: f64 = 0.70;
pub const MIN_OVERLAP: f64 = 0.30;
/// Probability of aiming a candidate at a point an existing member sees.
const AIM_AT_MEMBER: f64 = 0.7;
const WALL_MARGIN: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub near: f64,
    pub far: f64,
    /// Camera center height above the floor, meters.
    pub eye_height: [f64; 2],
    /// Elevation of the optical axis in degrees; never above zero.
    pub pitch: [f64; 2],
    /// Minimum share of pixels that must hit geometry.
    pub min_coverage: f64,
    /// Minimum depth of any hit pixel, meters.
    pub min_depth: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            width: 64,
            height: 64,
            fov_x: 63.4,
            near: 0.0,
            far: 8.0,
            eye_height: [1.2, 1.8],
            pitch: [-30.0, 0.0],
            min_coverage: 0.6,
            min_depth: 0.3,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config("camera resolution below 4 x 4".into()));
        }
        if !(self.fov_x > 1.0 && self.fov_x < 170.0) {
            return Err(Error::Config("fov_x must lie in (1, 170) degrees".into()));
        }
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::Config("need 0 <= near < far".into()));
        }
        if !(self.eye_height[0] > 0.0 && self.eye_height[0] <= self.eye_height[1]) {
            return Err(Error::Config("eye_height range is invalid".into()));
        }
        if !(self.pitch[0] > -89.0 && self.pitch[0] <= self.pitch[1] && self.pitch[1] <= 0.0) {
            return Err(Error::Config("pitch range must lie in (-89, 0] degrees".into()));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(Error::Config("min_coverage must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn camera(&self, eye: Vec3, yaw: f64, pitch_deg: f64) -> Result<Camera> {
        let p = pitch_deg.to_radians();
        let forward = Vec3::new(p.cos() * yaw.sin(), p.sin(), p.cos() * yaw.cos());
        Camera::look_at(self.width, self.height, self.fov_x, eye, eye + forward, Vec3::y(), self.near, self.far)
    }
}

/// Elevation of the optical axis in degrees.
pub fn pitch_degrees(camera: &Camera) -> f64 {
    camera.forward().y.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Rendered candidate if it sees enough geometry, not too close, from open space.
fn checked_view(scene: &Scene, cam: Camera, spec: &CameraSpec) -> Option<RenderedView> {
    // The rooms have no ceiling, so anything above the eye means the camera
    // sits inside an object.
    let up = Ray::new(cam.center(), Vec3::y());
    if scene.first_hit(&up, f64::INFINITY).is_some() {
        return None;
    }
    let view = render_view(scene, &cam);
    let hits = view.hit_count();
    let coverage = hits as f64 / view.depth.len() as f64;
    let closest = view.depth.iter().copied().filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
    (hits > 0 && coverage >= spec.min_coverage && closest >= spec.min_depth).then_some(view)
}

fn propose<R: Rng + ?Sized>(
    scene: &Scene,
    extent: [f64; 3],
    spec: &CameraSpec,
    members: &[RenderedView],
    rng: &mut R,
) -> Result<Option<RenderedView>> {
    let [w, _, d] = extent;
    let eye = Vec3::new(
        rng.gen_range(WALL_MARGIN..w - WALL_MARGIN),
        rng.gen_range(spec.eye_height[0]..=spec.eye_height[1]),
        rng.gen_range(WALL_MARGIN..d - WALL_MARGIN),
    );
    let mut yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pitch = rng.gen_range(spec.pitch[0]..=spec.pitch[1]);
    if !members.is_empty() && rng.gen_bool(AIM_AT_MEMBER) {
        let m = &members[rng.gen_range(0..members.len())];
        let hit: Vec<usize> = (0..m.depth.len()).filter(|&i| m.depth[i] > 0.0).collect();
        let i = hit[rng.gen_range(0..hit.len())];
        let target = m.camera.ray_for_pixel(m.pixel_center(i), 0).at(m.depth[i]);
        let to = target - eye;
        if to.norm() < 1e-6 {
            return Ok(None);
        }
        yaw = to.x.atan2(to.z);
        let horizontal = (to.x * to.x + to.z * to.z).sqrt();
        pitch = to.y.atan2(horizontal).to_degrees().clamp(spec.pitch[0], spec.pitch[1]);
    }
    let cam = spec.camera(eye, yaw, pitch)?;
    Ok(checked_view(scene, cam, spec))
}

/// Minimum and maximum overlap of `a` against `b`, over both directions.
fn pair_overlap(a: &RenderedView, b: &RenderedView) -> Result<(f64, f64)> {
    let ab = view_overlap(a, b, &b.camera)?;
    let ba = view_overlap(b, a, &a.camera)?;
    Ok((ab.min(ba), ab.max(ba)))
}

/// Whether `candidate` may join `members`: at most [`MAX_OVERLAP`] with every
/// member and at least [`MIN_OVERLAP`] with one, both directions each.
pub fn admissible(candidate: &RenderedView, members: &[RenderedView]) -> Result<bool> {
    let mut linked = members.is_empty();
    for m in members {
        let (lo, hi) = pair_overlap(candidate, m)?;
        if hi > MAX_OVERLAP {
            return Ok(false);
        }
        linked |= lo >= MIN_OVERLAP;
    }
    Ok(linked)
}

/// Re-checks both overlap bounds on a finished set.
pub fn verify_view_set(views: &[RenderedView]) -> Result<bool> {
    for (k, v) in views.iter().enumerate().skip(1) {
        if !admissible(v, &views[..k])? {
            return Ok(false);
        }
    }
    for (i, a) in views.iter().enumerate() {
        for b in &views[i + 1..] {
            if pair_overlap(a, b)?.1 > MAX_OVERLAP {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `k` cameras placed inside a room of size `extent`, each new one at most
/// 70% overlapping any earlier member and at least 30% overlapping one.
///
/// Every `max_tries / 4` consecutive rejections the set restarts from scratch.
pub fn sample_view_set<R: Rng + ?Sized>(
    scene: &Scene,
    extent: [f64; 3],
    spec: &CameraSpec,
    k: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<Vec<RenderedView>> {
    if k == 0 {
        return Err(Error::invalid("view set size must be at least 1"));
    }
    spec.validate()?;
    if extent[0] <= 2.0 * WALL_MARGIN || extent[2] <= 2.0 * WALL_MARGIN {
        return Err(Error::invalid("room too small for camera placement"));
    }
    let patience = (max_tries / 4).max(1);
    let mut members: Vec<RenderedView> = Vec::with_capacity(k);
    let mut stuck = 0;
    for _ in 0..max_tries {
        if members.len() == k {
            break;
        }
        let accepted = match propose(scene, extent, spec, &members, rng)? {
            Some(view) if admissible(&view, &members)? => {
                members.push(view);
                true
            }
            _ => false,
        };
        stuck = if accepted { 0 } else { stuck + 1 };
        if stuck >= patience {
            members.clear();
            stuck = 0;
        }
    }
    if members.len() < k {
        return Err(Error::SamplingFailure(format!(
            "no {k}-view set satisfying the overlap bounds within {max_tries} tries"
        )));
    }
    Ok(members)
}

/// Share of frustum-restricted surface samples hidden from every camera.
pub fn hidden_fraction<R: Rng + ?Sized>(
    scene: &Scene,
    cameras: &[Camera],
    samples: usize,
    z_max: f64,
    rng: &mut R,
) -> Result<f64> {
    let gt = sample_gt_cloud(scene, cameras, samples, z_max, rng)?;
    let vis = classify_visibility(&gt.points, cameras, scene, z_max);
    Ok(vis.iter().filter(|v| !**v).count() as f64 / vis.len() as f64)
}
