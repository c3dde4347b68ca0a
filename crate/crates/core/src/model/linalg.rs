//! Dense kernels over row-major `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` with `W` of shape `out.len() x x.len()`.
#[inline]
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * n..(r + 1) * n], x) + b[r];
    }
}

/// `Y = X W^T + b` over the `n` rows of `X` (`n x d_in`); `W` is `b.len() x d_in`.
pub fn affine_rows(w: &[f64], b: &[f64], x: &[f64], n: usize, d_in: usize) -> Vec<f64> {
    let d_out = b.len();
    assert!(w.len() == d_out * d_in && x.len() == n * d_in);
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    if n > 0 && d_in > 0 && d_out > 0 {
        // SAFETY: the asserted lengths cover every strided access below.
        unsafe {
            matrixmultiply::dgemm(
                n,
                d_in,
                d_out,
                1.0,
                x.as_ptr(),
                d_in as isize,
                1,
                w.as_ptr(),
                1,
                d_in as isize,
                1.0,
                y.as_mut_ptr(),
                d_out as isize,
                1,
            );
        }
    }
    y
}

/// `out = W x` without bias.
#[inline]
pub fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * n..(r + 1) * n], x);
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let n = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[r * n..(r + 1) * n], dx);
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub fn outer_acc(dy: &[f64], x: &[f64], dw: &mut [f64]) {
    let n = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut dw[r * n..(r + 1) * n]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of [`silu`].
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// In-place softmax over `logits`; returns nothing for an empty slice.
pub fn softmax_in_place(logits: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
}
