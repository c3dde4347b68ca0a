//! Frozen-model evaluation over a fixed set of encoded views.

use super::encoder::{FeatureGrid, ImageTensor};
use super::fusion::{ray_attention_forward, Joint};
use super::linalg::{affine_rows, axpy, dot, silu, softmax_in_place};
use super::query::{bilinear_tap, query_encode, BilinearTap};
use super::{FusionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::field::DrdfSource;
use crate::geometry::{Camera, Ray, Vec3};

/// Queries closer than this to their source camera are pushed out to it.
pub const MIN_QUERY_DEPTH: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct EncodedView {
    pub camera: Camera,
    pub grid: FeatureGrid,
}

/// Source view of a query whose pixel is already known.
#[derive(Debug, Clone, Copy)]
pub struct SourceHint {
    pub view: usize,
    pub pixel: [f64; 2],
}

/// Builds one joint per view; the taps are kept for scattering gradients.
pub fn gather_joints(
    cfg: &ModelConfig,
    views: &[EncodedView],
    x: &Vec3,
    direction: &Vec3,
    source: Option<SourceHint>,
) -> Result<(Vec<Joint>, Vec<Option<BilinearTap>>)> {
    let mut joints = Vec::with_capacity(views.len());
    let mut taps = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let tap = match source {
            Some(s) if s.view == i => bilinear_tap(&view.grid, s.pixel),
            _ => {
                let p = view.camera.project(x);
                if p.in_frustum {
                    bilinear_tap(&view.grid, p.pixel)
                } else {
                    None
                }
            }
        };
        let query = match query_encode(x, direction, &view.camera, cfg.pe_octaves) {
            Ok(q) => Some(q.encoded),
            Err(Error::InvalidArgument(_)) if tap.is_none() => None,
            Err(e) => return Err(e),
        };
        let mut feature = vec![0.0; cfg.d_img];
        if let Some(t) = &tap {
            t.gather(&view.grid, &mut feature);
        }
        joints.push(Joint {
            feature,
            valid: tap.is_some(),
            query: query.unwrap_or_else(|| vec![0.0; cfg.d_query()]),
        });
        taps.push(tap);
    }
    Ok((joints, taps))
}

pub struct Predictor<'a> {
    pub model: &'a FusionModel,
    pub views: Vec<EncodedView>,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a FusionModel, cameras: &[Camera], images: &[ImageTensor]) -> Result<Self> {
        if cameras.len() != images.len() || cameras.is_empty() {
            return Err(Error::invalid("predictor needs one image per camera"));
        }
        let views = cameras
            .iter()
            .zip(images)
            .map(|(camera, image)| {
                Ok(EncodedView {
                    camera: camera.clone(),
                    grid: model.encode(image)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Predictor { model, views })
    }

    /// Predicted transformed field values along a ray of view `camera_index`.
    pub fn predict_ray(&self, camera_index: usize, ray: &Ray, depths: &[f64]) -> Result<Vec<f64>> {
        if camera_index >= self.views.len() {
            return Err(Error::invalid(format!(
                "camera {camera_index} out of range for {} views",
                self.views.len()
            )));
        }
        let (cfg, p) = (&self.model.config, &self.model.params);
        let (d_img, d_joint, d) = (cfg.d_img, cfg.d_joint(), cfg.d_feat);
        // Valid (depth, view) pairs are stacked so the shared layers run as one product.
        let mut rows = Vec::with_capacity(depths.len() * self.views.len() * d_joint);
        let mut spans = Vec::with_capacity(depths.len());
        for &z in depths {
            let x = ray.at(z.max(MIN_QUERY_DEPTH));
            let first = rows.len() / d_joint;
            for (i, view) in self.views.iter().enumerate() {
                let tap = if i == camera_index {
                    bilinear_tap(&view.grid, ray.pixel)
                } else {
                    let proj = view.camera.project(&x);
                    if proj.in_frustum {
                        bilinear_tap(&view.grid, proj.pixel)
                    } else {
                        None
                    }
                };
                let Some(tap) = tap else { continue };
                let q = query_encode(&x, &ray.direction, &view.camera, cfg.pe_octaves)?;
                let at = rows.len();
                rows.resize(at + d_img, 0.0);
                tap.gather(&view.grid, &mut rows[at..]);
                rows.extend_from_slice(&q.encoded);
            }
            let count = rows.len() / d_joint - first;
            if count == 0 {
                return Err(Error::NoEvidence);
            }
            spans.push((first, count));
        }
        let m = rows.len() / d_joint;
        let mut h = affine_rows(&p.joint_w, &p.joint_b, &rows, m, d_joint);
        h.iter_mut().for_each(|v| *v = silu(*v));
        let a = affine_rows(&p.attn_in_w, &p.attn_in_b, &h, m, d);

        let scale = 1.0 / (d as f64).sqrt();
        let mut pooled = Vec::with_capacity(depths.len());
        let mut row = Vec::new();
        let mut logits = Vec::new();
        let mut o = vec![0.0; d];
        for &(first, n) in &spans {
            let a_at = |k: usize| &a[(first + k) * d..(first + k + 1) * d];
            logits.clear();
            for i in 0..n {
                row.clear();
                row.extend((0..n).map(|k| dot(a_at(i), a_at(k)) * scale));
                softmax_in_place(&mut row);
                o.iter_mut().for_each(|v| *v = 0.0);
                for (k, &pk) in row.iter().enumerate() {
                    axpy(pk, a_at(k), &mut o);
                }
                logits.push(dot(&p.attn_out_w, &o));
            }
            softmax_in_place(&mut logits);
            let mut g = vec![0.0; d];
            for (k, &w) in logits.iter().enumerate() {
                axpy(w, &h[(first + k) * d..(first + k + 1) * d], &mut g);
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericFailure { layer: "fusion".into() });
            }
            pooled.push(g);
        }
        if cfg.ray_attention && !pooled.is_empty() {
            pooled = ray_attention_forward(cfg, p, &pooled)?.outputs;
        }
        let flat: Vec<f64> = pooled.concat();
        let mut u = affine_rows(&p.head_w1, &p.head_b1, &flat, pooled.len(), d);
        u.iter_mut().for_each(|v| *v = silu(*v));
        let dh = p.head_b1.len();
        (0..pooled.len())
            .map(|j| {
                let y = (dot(&p.head_w2, &u[j * dh..(j + 1) * dh]) + p.head_b2[0]).tanh();
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::NumericFailure { layer: "head".into() })
                }
            })
            .collect()
    }
}

impl DrdfSource for Predictor<'_> {
    fn evaluate(&self, camera_index: usize, ray: &Ray, depths: &[f64]) -> Result<Vec<f64>> {
        self.predict_ray(camera_index, ray, depths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fusion::fuse_and_predict;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageTensor::zeros(5, 32, 32);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        img
    }

    fn cameras() -> Vec<Camera> {
        let a = Camera::look_at(32, 32, 60.0, Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 4.0), -Vec3::y(), 0.0, 8.0)
            .unwrap();
        let b = Camera::look_at(32, 32, 60.0, Vec3::new(1.5, 0.0, 0.5), Vec3::new(0.0, 0.0, 4.0), -Vec3::y(), 0.0, 8.0)
            .unwrap();
        vec![a, b]
    }

    #[test]
    fn outputs_are_bounded_and_view_order_invariant() {
        let model = FusionModel::new(ModelConfig::tiny());
        let cams = cameras();
        let imgs = [image(1), image(2)];
        let fwd = Predictor::new(&model, &cams, &imgs).unwrap();
        let rev = Predictor::new(&model, &[cams[1].clone(), cams[0].clone()], &[imgs[1].clone(), imgs[0].clone()]).unwrap();
        let ray = cams[0].ray_for_pixel([13.5, 17.25], 0);
        let depths: Vec<f64> = (0..32).map(|k| k as f64 * 0.25).collect();
        let a = fwd.predict_ray(0, &ray, &depths).unwrap();
        let b = rev.predict_ray(1, &ray, &depths).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.abs() < 1.0 && (x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn source_view_is_always_valid() {
        let model = FusionModel::new(ModelConfig::tiny());
        let cams = cameras();
        let pred = Predictor::new(&model, &cams, &[image(1), image(2)]).unwrap();
        let ray = cams[0].ray_for_pixel([31.999, 0.0], 0);
        let x = ray.at(0.0_f64.max(MIN_QUERY_DEPTH));
        let hint = SourceHint { view: 0, pixel: ray.pixel };
        let (joints, taps) = gather_joints(&model.config, &pred.views, &x, &ray.direction, Some(hint)).unwrap();
        assert!(joints[0].valid && taps[0].is_some());
        assert!(pred.predict_ray(0, &ray, &[0.0, 8.0]).is_ok());
    }

    #[test]
    fn matches_direct_fusion() {
        let model = FusionModel::new(ModelConfig::tiny());
        let cams = cameras();
        let pred = Predictor::new(&model, &cams, &[image(3), image(4)]).unwrap();
        let ray = cams[1].ray_for_pixel([10.0, 20.0], 1);
        let depths: Vec<f64> = (0..40).map(|k| k as f64 * 0.2).collect();
        let got = pred.predict_ray(1, &ray, &depths).unwrap();
        let mut partial = false;
        for (&z, &g) in depths.iter().zip(&got) {
            let x = ray.at(z.max(MIN_QUERY_DEPTH));
            let hint = SourceHint { view: 1, pixel: ray.pixel };
            let (joints, _) = gather_joints(&model.config, &pred.views, &x, &ray.direction, Some(hint)).unwrap();
            partial |= !joints[0].valid;
            let (y, w) = fuse_and_predict(&model, &joints).unwrap();
            assert!((g - y).abs() < 1e-12);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(partial);
    }
}
