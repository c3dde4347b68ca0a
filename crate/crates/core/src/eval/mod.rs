//! Reconstruction metrics and the pose-noise harness.

pub mod metrics;
pub mod neighbors;
pub mod noise;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{classify_visibility, consistency, fscore, FScore, ReconSet};
pub use neighbors::{nearest_brute_force, VoxelGrid};
pub use noise::{noise_percentiles, perturb_pose, so3_exp};

use crate::error::{Error, Result};
use crate::geometry::{Camera, PointCloud, Scene, Vec3};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];
pub const DEFAULT_SIGMA_R: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
pub const DEFAULT_SIGMA_T: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Area-weighted surface samples that fall inside at least one frustum.
pub fn sample_gt_cloud<R: Rng + ?Sized>(
    scene: &Scene,
    cameras: &[Camera],
    n: usize,
    z_max: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let mut cloud = PointCloud::default();
    let mut drawn = 0usize;
    while cloud.len() < n {
        let batch = scene.mesh.sample_surface(n.max(1024), rng);
        if batch.is_empty() {
            break;
        }
        drawn += batch.len();
        for (p, tri) in batch {
            if cloud.len() < n && cameras.iter().any(|c| c.in_frustum(&p, z_max)) {
                cloud.push(p, scene.mesh.normal(tri), None);
            }
        }
        if drawn > 200 * n.max(1024) {
            break;
        }
    }
    if cloud.is_empty() {
        return Err(Error::DegenerateScene("no surface inside any frustum".into()));
    }
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub rho: f64,
    pub visible: Option<FScore>,
    pub hidden: Option<FScore>,
    pub all: FScore,
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ThresholdRow>,
    pub gt_points: usize,
    pub hidden_gt_fraction: f64,
    pub pred_points: usize,
}

impl MetricReport {
    pub fn row(&self, rho: f64) -> Option<&ThresholdRow> {
        self.rows.iter().find(|r| (r.rho - rho).abs() < 1e-12)
    }

    /// One row per threshold with `p@`, `r@`, `f@` columns per split.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rho,vis_p,vis_r,vis_f,hid_p,hid_r,hid_f,all_p,all_r,all_f,consistency\n",
        );
        let cell = |s: &Option<FScore>| match s {
            Some(s) => format!("{:.4},{:.4},{:.4}", s.accuracy, s.completeness, s.f),
            None => ",,".to_string(),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.rho,
                cell(&r.visible),
                cell(&r.hidden),
                cell(&Some(r.all)),
                r.consistency.map(|c| format!("{c:.4}")).unwrap_or_default()
            ));
        }
        out
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// F-scores on the visible, hidden and full ground truth plus consistency.
///
/// Predicted points take the split of their nearest ground-truth point.
pub fn evaluate_run(recon: &ReconSet, gt: &PointCloud, scene: &Scene, thresholds: &[f64]) -> Result<MetricReport> {
    if gt.is_empty() {
        return Err(Error::invalid("empty ground-truth cloud"));
    }
    if thresholds.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("thresholds must be positive"));
    }
    let mut rhos = thresholds.to_vec();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let visible = classify_visibility(&gt.points, &recon.cameras, scene, recon.z_max);
    let pred = recon.merged();
    let split_gt = |flag: bool| -> Vec<Vec3> {
        gt.points
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| v == flag)
            .map(|(p, _)| *p)
            .collect()
    };
    let (gt_vis, gt_hid) = (split_gt(true), split_gt(false));
    let grid = VoxelGrid::new(&gt.points, 0.25);
    let pred_flags: Vec<bool> = pred
        .points
        .iter()
        .map(|p| grid.nearest(p).map(|(i, _)| visible[i]).unwrap_or(true))
        .collect();
    let split_pred = |flag: bool| -> Vec<Vec3> {
        pred.points
            .iter()
            .zip(&pred_flags)
            .filter(|(_, &v)| v == flag)
            .map(|(p, _)| *p)
            .collect()
    };
    let (pred_vis, pred_hid) = (split_pred(true), split_pred(false));
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in &rhos {
        let part = |p: &[Vec3], g: &[Vec3]| -> Result<Option<FScore>> {
            if g.is_empty() {
                Ok(None)
            } else {
                fscore(p, g, rho).map(Some)
            }
        };
        let consistency = if recon.cameras.len() >= 2 {
            match consistency(recon, rho) {
                Ok(c) => Some(c),
                Err(Error::NoOverlap) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        rows.push(ThresholdRow {
            rho,
            visible: part(&pred_vis, &gt_vis)?,
            hidden: part(&pred_hid, &gt_hid)?,
            all: fscore(&pred.points, &gt.points, rho)?,
            consistency,
        });
    }
    Ok(MetricReport {
        rows,
        gt_points: gt.len(),
        hidden_gt_fraction: gt_hid.len() as f64 / gt.len() as f64,
        pred_points: pred.len(),
    })
}
