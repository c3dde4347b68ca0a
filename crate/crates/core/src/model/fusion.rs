//! Cross-camera attention fusion, prediction head and optional ray attention,
//! each with a matching reverse pass.

use super::linalg::{affine, axpy, dot, matvec, matvec_t_acc, outer_acc, silu, silu_grad, softmax_in_place};
use super::{FusionModel, ModelConfig, Params};
use crate::error::{Error, Result};

/// One camera's contribution to a query: pixel-aligned feature plus encoded query.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub feature: Vec<f64>,
    pub query: Vec<f64>,
    pub valid: bool,
}

/// Forward activations of the fusion block for one query.
#[derive(Debug, Clone)]
pub struct FuseTrace {
    /// Indices of the valid joints, in input order.
    pub active: Vec<usize>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    /// Row-major `n x n` self-attention probabilities.
    probs: Vec<f64>,
    o: Vec<Vec<f64>>,
    /// Camera weights over `active`.
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Vec<f64>,
    pre_u: Vec<f64>,
    u: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct RayTrace {
    inputs: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    probs: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

fn check_finite(v: &[f64], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure { layer: layer.into() })
    }
}

pub fn fuse_forward(cfg: &ModelConfig, p: &Params, joints: &[Joint]) -> Result<FuseTrace> {
    if joints.is_empty() {
        return Err(Error::invalid("fusion needs at least one view"));
    }
    let d_query = cfg.d_query();
    for j in joints {
        if j.feature.len() != cfg.d_img || j.query.len() != d_query {
            return Err(Error::invalid(format!(
                "joint has sizes ({}, {}), expected ({}, {})",
                j.feature.len(),
                j.query.len(),
                cfg.d_img,
                d_query
            )));
        }
    }
    let active: Vec<usize> = (0..joints.len()).filter(|&i| joints[i].valid).collect();
    if active.is_empty() {
        return Err(Error::NoEvidence);
    }
    let d = cfg.d_feat;
    let n = active.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for &i in &active {
        let mut x = Vec::with_capacity(cfg.d_joint());
        x.extend_from_slice(&joints[i].feature);
        x.extend_from_slice(&joints[i].query);
        let mut z = vec![0.0; d];
        affine(&p.joint_w, &p.joint_b, &x, &mut z);
        let hi: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
        let mut ai = vec![0.0; d];
        affine(&p.attn_in_w, &p.attn_in_b, &hi, &mut ai);
        inputs.push(x);
        pre.push(z);
        h.push(hi);
        a.push(ai);
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0.0; n * n];
    let mut o = Vec::with_capacity(n);
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let row = &mut probs[i * n..(i + 1) * n];
        for (k, r) in row.iter_mut().enumerate() {
            *r = dot(&a[i], &a[k]) * scale;
        }
        softmax_in_place(row);
        let mut oi = vec![0.0; d];
        for (k, &pk) in row.iter().enumerate() {
            axpy(pk, &a[k], &mut oi);
        }
        logits[i] = dot(&p.attn_out_w, &oi);
        o.push(oi);
    }
    let mut weights = logits;
    softmax_in_place(&mut weights);
    let mut pooled = vec![0.0; d];
    for (w, hi) in weights.iter().zip(&h) {
        axpy(*w, hi, &mut pooled);
    }
    check_finite(&pooled, "fusion")?;
    Ok(FuseTrace {
        active,
        inputs,
        pre,
        h,
        a,
        probs,
        o,
        weights,
        pooled,
    })
}

/// Accumulates parameter gradients and returns `(joint index, d feature)` for
/// every active joint.
pub fn fuse_backward(
    cfg: &ModelConfig,
    p: &Params,
    t: &FuseTrace,
    d_pooled: &[f64],
    grads: &mut Params,
) -> Vec<(usize, Vec<f64>)> {
    let d = cfg.d_feat;
    let n = t.active.len();
    let scale = 1.0 / (d as f64).sqrt();

    let mut dh: Vec<Vec<f64>> = t.weights.iter().map(|&w| d_pooled.iter().map(|g| w * g).collect()).collect();
    let dw: Vec<f64> = t.h.iter().map(|hi| dot(hi, d_pooled)).collect();
    let mean: f64 = t.weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
    let dl: Vec<f64> = t.weights.iter().zip(&dw).map(|(w, g)| w * (g - mean)).collect();

    let mut da = vec![vec![0.0; d]; n];
    for i in 0..n {
        // o_i = sum_k P_ik a_k, l_i = w_out . o_i
        axpy(dl[i], &t.o[i], &mut grads.attn_out_w);
        let do_i: Vec<f64> = p.attn_out_w.iter().map(|w| dl[i] * w).collect();
        let row = &t.probs[i * n..(i + 1) * n];
        let dp: Vec<f64> = (0..n).map(|k| dot(&do_i, &t.a[k])).collect();
        let rmean: f64 = row.iter().zip(&dp).map(|(p, g)| p * g).sum();
        for k in 0..n {
            axpy(row[k], &do_i, &mut da[k]);
            let ds = row[k] * (dp[k] - rmean) * scale;
            if ds != 0.0 {
                axpy(ds, &t.a[k], &mut da[i]);
                axpy(ds, &t.a[i], &mut da[k]);
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        outer_acc(&da[i], &t.h[i], &mut grads.attn_in_w);
        axpy(1.0, &da[i], &mut grads.attn_in_b);
        matvec_t_acc(&p.attn_in_w, &da[i], &mut dh[i]);
        let dz: Vec<f64> = dh[i].iter().zip(&t.pre[i]).map(|(g, &z)| g * silu_grad(z)).collect();
        outer_acc(&dz, &t.inputs[i], &mut grads.joint_w);
        axpy(1.0, &dz, &mut grads.joint_b);
        let mut dx = vec![0.0; cfg.d_joint()];
        matvec_t_acc(&p.joint_w, &dz, &mut dx);
        dx.truncate(cfg.d_img);
        out.push((t.active[i], dx));
    }
    out
}

pub fn head_forward(p: &Params, input: &[f64]) -> Result<HeadTrace> {
    let mut pre_u = vec![0.0; p.head_b1.len()];
    affine(&p.head_w1, &p.head_b1, input, &mut pre_u);
    let u: Vec<f64> = pre_u.iter().map(|&v| silu(v)).collect();
    let y = (dot(&p.head_w2, &u) + p.head_b2[0]).tanh();
    if !y.is_finite() {
        return Err(Error::NumericFailure { layer: "head".into() });
    }
    Ok(HeadTrace {
        input: input.to_vec(),
        pre_u,
        u,
        y,
    })
}

/// Returns the gradient w.r.t. the head input.
pub fn head_backward(p: &Params, t: &HeadTrace, dy: f64, grads: &mut Params) -> Vec<f64> {
    let dpre = dy * (1.0 - t.y * t.y);
    axpy(dpre, &t.u, &mut grads.head_w2);
    grads.head_b2[0] += dpre;
    let dpre_u: Vec<f64> = p
        .head_w2
        .iter()
        .zip(&t.pre_u)
        .map(|(w, &z)| dpre * w * silu_grad(z))
        .collect();
    outer_acc(&dpre_u, &t.input, &mut grads.head_w1);
    axpy(1.0, &dpre_u, &mut grads.head_b1);
    let mut dg = vec![0.0; t.input.len()];
    matvec_t_acc(&p.head_w1, &dpre_u, &mut dg);
    dg
}

/// Residual self-attention across the samples of one query ray.
pub fn ray_attention_forward(cfg: &ModelConfig, p: &Params, inputs: &[Vec<f64>]) -> Result<RayTrace> {
    let d = cfg.d_feat;
    let m = inputs.len();
    let scale = 1.0 / (d as f64).sqrt();
    let proj = |w: &[f64]| -> Vec<Vec<f64>> {
        inputs
            .iter()
            .map(|g| {
                let mut out = vec![0.0; d];
                matvec(w, g, &mut out);
                out
            })
            .collect()
    };
    let q = proj(&p.ray_q_w);
    let k = proj(&p.ray_k_w);
    let mut probs = vec![0.0; m * m];
    let mut outputs = Vec::with_capacity(m);
    for i in 0..m {
        let row = &mut probs[i * m..(i + 1) * m];
        for (j, r) in row.iter_mut().enumerate() {
            *r = dot(&q[i], &k[j]) * scale;
        }
        softmax_in_place(row);
        let mut out = inputs[i].clone();
        for (j, &pj) in row.iter().enumerate() {
            axpy(pj, &inputs[j], &mut out);
        }
        check_finite(&out, "ray attention")?;
        outputs.push(out);
    }
    Ok(RayTrace {
        inputs: inputs.to_vec(),
        q,
        k,
        probs,
        outputs,
    })
}

pub fn ray_attention_backward(cfg: &ModelConfig, p: &Params, t: &RayTrace, d_out: &[Vec<f64>], grads: &mut Params) -> Vec<Vec<f64>> {
    let d = cfg.d_feat;
    let m = t.inputs.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut dg: Vec<Vec<f64>> = d_out.to_vec();
    let mut dq = vec![vec![0.0; d]; m];
    let mut dk = vec![vec![0.0; d]; m];
    for i in 0..m {
        let row = &t.probs[i * m..(i + 1) * m];
        let dp: Vec<f64> = (0..m).map(|j| dot(&d_out[i], &t.inputs[j])).collect();
        let rmean: f64 = row.iter().zip(&dp).map(|(p, g)| p * g).sum();
        for j in 0..m {
            axpy(row[j], &d_out[i], &mut dg[j]);
            let ds = row[j] * (dp[j] - rmean) * scale;
            if ds != 0.0 {
                axpy(ds, &t.k[j], &mut dq[i]);
                axpy(ds, &t.q[i], &mut dk[j]);
            }
        }
    }
    for i in 0..m {
        outer_acc(&dq[i], &t.inputs[i], &mut grads.ray_q_w);
        outer_acc(&dk[i], &t.inputs[i], &mut grads.ray_k_w);
        matvec_t_acc(&p.ray_q_w, &dq[i], &mut dg[i]);
        matvec_t_acc(&p.ray_k_w, &dk[i], &mut dg[i]);
    }
    dg
}

/// Prediction in `(-1, 1)` and the camera weights (zero for invalid views).
///
/// With ray attention enabled the query is treated as a one-sample ray.
pub fn fuse_and_predict(model: &FusionModel, joints: &[Joint]) -> Result<(f64, Vec<f64>)> {
    let (cfg, p) = (&model.config, &model.params);
    let fused = fuse_forward(cfg, p, joints)?;
    let head_in = if cfg.ray_attention {
        ray_attention_forward(cfg, p, std::slice::from_ref(&fused.pooled))?.outputs.remove(0)
    } else {
        fused.pooled.clone()
    };
    let y = head_forward(p, &head_in)?.y;
    let mut weights = vec![0.0; joints.len()];
    for (&i, &w) in fused.active.iter().zip(&fused.weights) {
        weights[i] = w;
    }
    Ok((y, weights))
}

/// Dedicated one-camera path: joint layer straight into the head.
pub fn predict_single_view(model: &FusionModel, joint: &Joint) -> Result<f64> {
    let (cfg, p) = (&model.config, &model.params);
    if !joint.valid {
        return Err(Error::NoEvidence);
    }
    let mut x = joint.feature.clone();
    x.extend_from_slice(&joint.query);
    if x.len() != cfg.d_joint() {
        return Err(Error::invalid("joint size mismatch"));
    }
    let mut z = vec![0.0; cfg.d_feat];
    affine(&p.joint_w, &p.joint_b, &x, &mut z);
    let mut h: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
    if cfg.ray_attention {
        h.iter_mut().for_each(|v| *v *= 2.0);
    }
    Ok(head_forward(p, &h)?.y)
}

/// Mean absolute error.
pub fn loss_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "loss needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Subgradient of [`loss_l1`], zero at equality.
pub fn loss_l1_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    loss_l1(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| match p.partial_cmp(t) {
            Some(std::cmp::Ordering::Greater) => 1.0 / n,
            Some(std::cmp::Ordering::Less) => -1.0 / n,
            _ => 0.0,
        })
        .collect())
}
