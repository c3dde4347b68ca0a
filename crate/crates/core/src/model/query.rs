//! Per-camera query geometry: pixel-aligned feature lookup and the relative
//! direction / NDC descriptor with its sinusoidal encoding.

use std::f64::consts::PI;

use super::encoder::FeatureGrid;
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

/// Raw query descriptor length: relative direction (4) plus NDC (3).
pub const RAW_QUERY_DIM: usize = 7;

pub fn encoded_dim(octaves: usize) -> usize {
    RAW_QUERY_DIM * 2 * octaves
}

/// Bilinear interpolation stencil into a [`FeatureGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    /// Flat site indices `y * width + x`.
    pub sites: [usize; 4],
    pub weights: [f64; 4],
}

impl BilinearTap {
    pub fn gather(&self, grid: &FeatureGrid, out: &mut [f64]) {
        out.fill(0.0);
        let d = grid.dim;
        for k in 0..4 {
            let w = self.weights[k];
            if w != 0.0 {
                let s = self.sites[k] * d;
                for (o, v) in out.iter_mut().zip(&grid.data[s..s + d]) {
                    *o += w * v;
                }
            }
        }
    }

    pub fn scatter(&self, dim: usize, grad: &[f64], grid_grad: &mut [f64]) {
        for k in 0..4 {
            let w = self.weights[k];
            if w != 0.0 {
                let s = self.sites[k] * dim;
                for (g, v) in grid_grad[s..s + dim].iter_mut().zip(grad) {
                    *g += w * v;
                }
            }
        }
    }
}

/// Stencil for a continuous pixel; `None` when the pixel is outside the image.
pub fn bilinear_tap(grid: &FeatureGrid, pixel: [f64; 2]) -> Option<BilinearTap> {
    let [u, v] = pixel;
    if !(u >= 0.0 && v >= 0.0 && u < grid.image_width as f64 && v < grid.image_height as f64) {
        return None;
    }
    let gx = u * grid.width as f64 / grid.image_width as f64;
    let gy = v * grid.height as f64 / grid.image_height as f64;
    let x0 = (gx.floor() as usize).min(grid.width - 1);
    let y0 = (gy.floor() as usize).min(grid.height - 1);
    let x1 = (x0 + 1).min(grid.width - 1);
    let y1 = (y0 + 1).min(grid.height - 1);
    let fx = if x1 == x0 { 0.0 } else { (gx - x0 as f64).clamp(0.0, 1.0) };
    let fy = if y1 == y0 { 0.0 } else { (gy - y0 as f64).clamp(0.0, 1.0) };
    let w = grid.width;
    Some(BilinearTap {
        sites: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    })
}

/// Feature of `grid` at `pixel`, or zeros with `false` when out of view.
pub fn pixel_aligned_feature(grid: &FeatureGrid, pixel: [f64; 2], in_frustum: bool) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; grid.dim];
    match bilinear_tap(grid, pixel) {
        Some(tap) if in_frustum => {
            tap.gather(grid, &mut out);
            (out, true)
        }
        _ => (out, false),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncoding {
    /// `[r_q - norm(x - c), r_q . norm(x - c)]`
    pub delta_r: [f64; 4],
    pub ndc: [f64; 3],
    pub encoded: Vec<f64>,
}

/// Sinusoids `[sin(2^k pi v), cos(2^k pi v)]` for `k < octaves`, per component.
pub fn positional_encoding(raw: &[f64], octaves: usize, out: &mut Vec<f64>) {
    out.clear();
    for &v in raw {
        let (mut s, mut c) = (PI * v).sin_cos();
        for _ in 0..octaves {
            out.push(s);
            out.push(c);
            (s, c) = (2.0 * s * c, (c - s) * (c + s));
        }
    }
}

pub fn query_encode(x: &Vec3, direction: &Vec3, camera: &Camera, octaves: usize) -> Result<QueryEncoding> {
    if (direction.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("query direction must be unit length"));
    }
    let to_point = x - camera.center();
    let view_dir = to_point
        .try_normalize(1e-12)
        .ok_or_else(|| Error::invalid("query point coincides with the camera center"))?;
    let diff = direction - view_dir;
    let delta_r = [diff.x, diff.y, diff.z, direction.dot(&view_dir).clamp(-1.0, 1.0)];
    let n = camera.ndc(x);
    let ndc = [n.x, n.y, n.z];
    let mut encoded = Vec::with_capacity(encoded_dim(octaves));
    let raw = [delta_r[0], delta_r[1], delta_r[2], delta_r[3], ndc[0], ndc[1], ndc[2]];
    positional_encoding(&raw, octaves, &mut encoded);
    Ok(QueryEncoding { delta_r, ndc, encoded })
}
