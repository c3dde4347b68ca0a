//! Trainable multi-view field predictor.
//!
//! Pipeline per query point `x` with direction `r`:
//! conv encoder per view -> bilinear pixel-aligned feature -> concat with the
//! encoded query descriptor -> joint linear + SiLU -> attention weights over
//! cameras -> weighted pooling -> MLP head -> tanh.

pub mod checkpoint;
pub mod encoder;
pub mod fusion;
pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod predictor;
pub mod query;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encoder::{encode_image, FeatureGrid, ImageTensor};
pub use fusion::{fuse_and_predict, loss_l1, Joint};
pub use optim::{LrSchedule, OptimState};
pub use predictor::{EncodedView, Predictor};
pub use query::{pixel_aligned_feature, query_encode, QueryEncoding};
pub use train::{train, LossPoint, TrainConfig, TrainExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_channels: usize,
    /// Output channels of the first three conv layers.
    pub encoder_widths: [usize; 3],
    pub d_img: usize,
    /// Positional-encoding octaves `L`; the query width is `14 L`.
    pub pe_octaves: usize,
    pub d_feat: usize,
    /// Hidden width of the prediction head.
    pub d_hidden: usize,
    /// Let samples on the same query ray attend to each other (ablation only).
    pub ray_attention: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_channels: 5,
            encoder_widths: [16, 32, 64],
            d_img: 64,
            pe_octaves: 6,
            d_feat: 128,
            d_hidden: 128,
            ray_attention: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Laptop-scale model used by the desk benchmarks.
    pub fn desk() -> Self {
        ModelConfig {
            encoder_widths: [8, 16, 16],
            d_img: 16,
            pe_octaves: 4,
            d_feat: 32,
            d_hidden: 32,
            ..Self::default()
        }
    }

    /// Smallest useful model, for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder_widths: [3, 4, 4],
            d_img: 4,
            pe_octaves: 2,
            d_feat: 8,
            d_hidden: 6,
            ..Self::default()
        }
    }

    pub fn d_query(&self) -> usize {
        query::encoded_dim(self.pe_octaves)
    }

    pub fn d_joint(&self) -> usize {
        self.d_img + self.d_query()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_channels,
            self.encoder_widths[0],
            self.encoder_widths[1],
            self.encoder_widths[2],
            self.d_img,
            self.pe_octaves,
            self.d_feat,
            self.d_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// All learnable tensors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[out][in][3][3]` per conv layer.
    pub conv_w: [Vec<f64>; 4],
    pub conv_b: [Vec<f64>; 4],
    /// `d_feat x (d_img + d_query)`, feature columns first.
    pub joint_w: Vec<f64>,
    pub joint_b: Vec<f64>,
    pub attn_in_w: Vec<f64>,
    pub attn_in_b: Vec<f64>,
    /// Logit projection `d_feat -> 1`.
    pub attn_out_w: Vec<f64>,
    pub head_w1: Vec<f64>,
    pub head_b1: Vec<f64>,
    pub head_w2: Vec<f64>,
    pub head_b2: Vec<f64>,
    /// Ray-attention query/key maps; empty unless enabled.
    pub ray_q_w: Vec<f64>,
    pub ray_k_w: Vec<f64>,
}

pub const GROUP_NAMES: [&str; 19] = [
    "conv0.w", "conv0.b", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "joint.w",
    "joint.b", "attn_in.w", "attn_in.b", "attn_out.w", "head1.w", "head1.b", "head2.w", "head2.b",
    "ray_q.w", "ray_k.w",
];

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let widths = encoder::layer_widths(cfg);
        let conv_w = widths.map(|(i, o)| vec![0.0; o * i * 9]);
        let conv_b = widths.map(|(_, o)| vec![0.0; o]);
        let (f, h) = (cfg.d_feat, cfg.d_hidden);
        let ray = if cfg.ray_attention { f * f } else { 0 };
        Params {
            conv_w,
            conv_b,
            joint_w: vec![0.0; f * cfg.d_joint()],
            joint_b: vec![0.0; f],
            attn_in_w: vec![0.0; f * f],
            attn_in_b: vec![0.0; f],
            attn_out_w: vec![0.0; f],
            head_w1: vec![0.0; h * f],
            head_b1: vec![0.0; h],
            head_w2: vec![0.0; h],
            head_b2: vec![0.0; 1],
            ray_q_w: vec![0.0; ray],
            ray_k_w: vec![0.0; ray],
        }
    }

    /// Glorot-uniform weights, zero biases, deterministic in `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut p = Params::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-a..a);
            }
        };
        for (l, (i, o)) in encoder::layer_widths(cfg).into_iter().enumerate() {
            fill(&mut p.conv_w[l], 9 * i, 9 * o);
        }
        let (f, h) = (cfg.d_feat, cfg.d_hidden);
        fill(&mut p.joint_w, cfg.d_joint(), f);
        fill(&mut p.attn_in_w, f, f);
        fill(&mut p.attn_out_w, f, 1);
        fill(&mut p.head_w1, f, h);
        fill(&mut p.head_w2, h, 1);
        fill(&mut p.ray_q_w, f, f);
        fill(&mut p.ray_k_w, f, f);
        p
    }

    pub fn groups(&self) -> [&Vec<f64>; 19] {
        let [c0, c1, c2, c3] = &self.conv_w;
        let [b0, b1, b2, b3] = &self.conv_b;
        [
            c0,
            b0,
            c1,
            b1,
            c2,
            b2,
            c3,
            b3,
            &self.joint_w,
            &self.joint_b,
            &self.attn_in_w,
            &self.attn_in_b,
            &self.attn_out_w,
            &self.head_w1,
            &self.head_b1,
            &self.head_w2,
            &self.head_b2,
            &self.ray_q_w,
            &self.ray_k_w,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 19] {
        let [c0, c1, c2, c3] = &mut self.conv_w;
        let [b0, b1, b2, b3] = &mut self.conv_b;
        [
            c0,
            b0,
            c1,
            b1,
            c2,
            b2,
            c3,
            b3,
            &mut self.joint_w,
            &mut self.joint_b,
            &mut self.attn_in_w,
            &mut self.attn_in_b,
            &mut self.attn_out_w,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
            &mut self.ray_q_w,
            &mut self.ray_k_w,
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for g in self.groups_mut() {
            g.fill(value);
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            linalg::axpy(alpha, b, a);
        }
    }

    pub fn norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl FusionModel {
    pub fn new(config: ModelConfig) -> Self {
        let params = Params::init(&config);
        FusionModel { config, params }
    }

    pub fn encode(&self, image: &ImageTensor) -> Result<FeatureGrid> {
        encode_image(&self.config, &self.params, image).map(|(grid, _)| grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.d_query(), 84);
        let p = Params::init(&cfg);
        assert_eq!(p.joint_w.len(), 128 * (64 + 84));
        assert_eq!(p.conv_w[0].len(), 16 * 5 * 9);
        assert_eq!(p.conv_w[3].len(), 64 * 64 * 9);
        assert!(p.ray_q_w.is_empty());
        let with_ray = Params::init(&ModelConfig {
            ray_attention: true,
            ..cfg
        });
        assert_eq!(with_ray.ray_k_w.len(), 128 * 128);
    }

    #[test]
    fn init_is_seeded() {
        let a = Params::init(&ModelConfig::tiny());
        let b = Params::init(&ModelConfig::tiny());
        let c = Params::init(&ModelConfig {
            seed: 1,
            ..ModelConfig::tiny()
        });
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite() && a.joint_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_views_cover_every_tensor() {
        let mut p = Params::init(&ModelConfig::tiny());
        let total = p.len();
        p.fill(1.0);
        assert_eq!(p.norm(), (total as f64).sqrt());
        assert_eq!(GROUP_NAMES.len(), p.groups().len());
    }

    #[test]
    fn config_rejects_zero_widths() {
        let bad = ModelConfig {
            d_feat: 0,
            ..ModelConfig::tiny()
        };
        assert!(bad.validate().is_err());
        assert!(ModelConfig::desk().validate().is_ok());
    }
}
