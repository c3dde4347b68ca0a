//! Strided convolutional image encoder producing pixel-aligned feature grids.
//!
//! Four 3x3 convolutions with padding 1 and strides (2, 2, 1, 1); SiLU after
//! the first three. The output grid is a quarter of the input resolution and
//! site `(i, j)` corresponds to pixel `(4i, 4j)`.

use super::linalg::{silu, silu_grad};
use super::{ModelConfig, Params};
use crate::error::{Error, Result};

pub const STRIDES: [usize; 4] = [2, 2, 1, 1];
/// Product of the strides: pixels per feature site along each axis.
pub const FEATURE_STRIDE: usize = 4;

/// Channel-major image, `data[c][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Site-major feature grid, `data[y][x][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// Image resolution the grid was computed from.
    pub image_width: usize,
    pub image_height: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn site(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input of each layer (after the previous activation).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    /// `(channels, height, width)` of each layer input, plus the final output.
    shapes: Vec<(usize, usize, usize)>,
}

pub fn output_size(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

pub fn layer_widths(cfg: &ModelConfig) -> [(usize, usize); 4] {
    let [a, b, c] = cfg.encoder_widths;
    [(cfg.image_channels, a), (a, b), (b, c), (c, cfg.d_img)]
}

fn conv_forward(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (output_size(h, stride), output_size(w, stride));
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        plane.fill(bias[o]);
        for c in 0..c_in {
            let src = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((o * c_in + c) * 3 + ky) * 3 + kx];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weight: &[f64],
    c_out: usize,
    stride: usize,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let (ho, wo) = (output_size(h, stride), output_size(w, stride));
    for o in 0..c_out {
        let g_plane = &d_out[o * ho * wo..(o + 1) * ho * wo];
        d_bias[o] += g_plane.iter().sum::<f64>();
        for c in 0..c_in {
            let src = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * c_in + c) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                        for (ox, &g) in g_row.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                acc += g * src[iy * w + ix as usize];
                            }
                        }
                        if let Some(din) = d_input.as_deref_mut() {
                            let dst = &mut din[c * h * w + iy * w..c * h * w + (iy + 1) * w];
                            for (ox, &g) in g_row.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += wv * g;
                                }
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

/// Forward pass; keeps the activations needed by [`encoder_backward`].
pub fn encode_image(cfg: &ModelConfig, params: &Params, image: &ImageTensor) -> Result<(FeatureGrid, EncoderCache)> {
    if image.channels != cfg.image_channels {
        return Err(Error::invalid(format!(
            "image has {} channels, model expects {}",
            image.channels, cfg.image_channels
        )));
    }
    if image.height < FEATURE_STRIDE || image.width < FEATURE_STRIDE {
        return Err(Error::invalid("image smaller than the feature stride"));
    }
    if !image.data.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("image contains non-finite values"));
    }
    let widths = layer_widths(cfg);
    let mut shape = (image.channels, image.height, image.width);
    let mut x = image.data.clone();
    let mut cache = EncoderCache {
        inputs: Vec::with_capacity(4),
        pre: Vec::with_capacity(4),
        shapes: Vec::with_capacity(5),
    };
    for (layer, &(_, c_out)) in widths.iter().enumerate() {
        let (pre, ho, wo) = conv_forward(
            &x,
            shape,
            &params.conv_w[layer],
            &params.conv_b[layer],
            c_out,
            STRIDES[layer],
        );
        cache.shapes.push(shape);
        cache.inputs.push(std::mem::take(&mut x));
        x = if layer < 3 { pre.iter().map(|&v| silu(v)).collect() } else { pre.clone() };
        cache.pre.push(pre);
        shape = (c_out, ho, wo);
    }
    cache.shapes.push(shape);
    let (d, h, w) = shape;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericFailure {
            layer: "encoder".into(),
        });
    }
    let mut data = vec![0.0; d * h * w];
    for c in 0..d {
        for y in 0..h {
            for xx in 0..w {
                data[(y * w + xx) * d + c] = x[(c * h + y) * w + xx];
            }
        }
    }
    let grid = FeatureGrid {
        width: w,
        height: h,
        dim: d,
        image_width: image.width,
        image_height: image.height,
        data,
    };
    Ok((grid, cache))
}

/// Accumulates parameter gradients given the gradient w.r.t. the feature grid.
pub fn encoder_backward(cfg: &ModelConfig, params: &Params, cache: &EncoderCache, grid_grad: &[f64], grads: &mut Params) {
    let widths = layer_widths(cfg);
    let (d, h, w) = cache.shapes[4];
    let mut g = vec![0.0; d * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..d {
                g[(c * h + y) * w + x] = grid_grad[(y * w + x) * d + c];
            }
        }
    }
    for layer in (0..4).rev() {
        if layer < 3 {
            for (gi, &p) in g.iter_mut().zip(&cache.pre[layer]) {
                *gi *= silu_grad(p);
            }
        }
        let shape = cache.shapes[layer];
        let mut d_in = (layer > 0).then(|| vec![0.0; shape.0 * shape.1 * shape.2]);
        let (dw, db) = (&mut grads.conv_w[layer], &mut grads.conv_b[layer]);
        conv_backward(
            &cache.inputs[layer],
            shape,
            &params.conv_w[layer],
            widths[layer].1,
            STRIDES[layer],
            &g,
            dw,
            db,
            d_in.as_deref_mut(),
        );
        match d_in {
            Some(next) => g = next,
            None => break,
        }
    }
}
