//! Scene F-score, visibility split and multiview consistency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::neighbors::VoxelGrid;
use crate::error::{Error, Result};
use crate::geometry::{Camera, PointCloud, Ray, Scene, Vec3};

/// Slack before the target point when testing a sight line for occlusion.
pub const VISIBILITY_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub accuracy: f64,
    pub completeness: f64,
    pub f: f64,
}

impl FScore {
    pub fn from_fractions(accuracy: f64, completeness: f64) -> Self {
        let f = if accuracy + completeness > 0.0 {
            2.0 * accuracy * completeness / (accuracy + completeness)
        } else {
            0.0
        };
        FScore {
            accuracy,
            completeness,
            f,
        }
    }
}

/// Percentage of `from` points with a `to` point within `rho`.
pub fn fraction_within(from: &[Vec3], to: &[Vec3], rho: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    if to.is_empty() {
        return 0.0;
    }
    let grid = VoxelGrid::new(to, rho);
    let hits = from.par_iter().filter(|p| grid.any_within(p, rho)).count();
    100.0 * hits as f64 / from.len() as f64
}

pub fn fscore(pred: &[Vec3], gt: &[Vec3], rho: f64) -> Result<FScore> {
    if !(rho > 0.0) {
        return Err(Error::invalid("rho must be positive"));
    }
    if gt.is_empty() {
        return Err(Error::invalid("empty ground-truth cloud"));
    }
    Ok(FScore::from_fractions(fraction_within(pred, gt, rho), fraction_within(gt, pred, rho)))
}

/// `true` where the point is seen unoccluded by at least one camera.
pub fn classify_visibility(points: &[Vec3], cameras: &[Camera], scene: &Scene, z_max: f64) -> Vec<bool> {
    points
        .par_iter()
        .map(|p| {
            cameras.iter().any(|cam| {
                if !cam.in_frustum(p, z_max) {
                    return false;
                }
                let to = p - cam.center();
                let dist = to.norm();
                let ray = Ray::new(cam.center(), to);
                !scene.occluded(&ray, dist - VISIBILITY_EPSILON)
            })
        })
        .collect()
}

/// Decoded points per camera, each lying in its own frustum.
#[derive(Debug, Clone)]
pub struct ReconSet {
    pub cameras: Vec<Camera>,
    pub clouds: Vec<PointCloud>,
    pub z_max: f64,
}

impl ReconSet {
    pub fn merged(&self) -> PointCloud {
        let mut out = PointCloud {
            cameras: Some(Vec::new()),
            ..Default::default()
        };
        for c in &self.clouds {
            out.extend(c);
        }
        out
    }
}

/// Count-weighted bidirectional agreement between per-camera clouds, in percent.
pub fn consistency(recon: &ReconSet, rho: f64) -> Result<f64> {
    if recon.cameras.len() < 2 || recon.clouds.len() != recon.cameras.len() {
        return Err(Error::invalid("consistency needs >= 2 cameras with one cloud each"));
    }
    if !(rho > 0.0) {
        return Err(Error::invalid("rho must be positive"));
    }
    let n = recon.cameras.len();
    let grids: Vec<VoxelGrid> = recon.clouds.iter().map(|c| VoxelGrid::new(&c.points, rho)).collect();
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let candidates: Vec<&Vec3> = recon.clouds[j]
                .points
                .iter()
                .filter(|p| recon.cameras[i].in_frustum(p, recon.z_max))
                .collect();
            agree += candidates.par_iter().filter(|p| grids[i].any_within(p, rho)).count();
            total += candidates.len();
        }
    }
    if total == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(100.0 * agree as f64 / total as f64)
}
