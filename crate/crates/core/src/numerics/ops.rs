//! Value-level kernels shared by the tape and by callers that only need a
//! forward result.

use super::Tensor;
use crate::error::{MegtError, Result};

/// `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(MegtError::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(MegtError::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let ar = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(ar, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(MegtError::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (m, n) = (a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    let od = out.data_mut();
    for p in 0..a.rows() {
        let ar = a.row(p);
        let br = b.row(p);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut od[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-wise softmax with max-shift stabilization.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.clear_grad();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Per-row statistics saved by layer normalization for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Standardizes every row (population variance, `eps` inside the root), then
/// applies `gamma` and `beta`.
pub fn layer_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gamma, beta, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if gamma.shape() != (1, d) {
        return Err(MegtError::shape("layer_norm gamma", x.shape(), gamma.shape()));
    }
    if beta.shape() != (1, d) {
        return Err(MegtError::shape("layer_norm beta", x.shape(), beta.shape()));
    }
    if d == 0 {
        return Err(MegtError::Contract("layer_norm over zero columns".into()));
    }
    let mut normalized = Tensor::zeros(x.rows(), d);
    let mut out = Tensor::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let nrow = normalized.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * is;
        }
        let orow = out.row_mut(r);
        for c in 0..d {
            orow[c] = normalized.get(r, c) * gamma.data()[c] + beta.data()[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Row-partition used for landmarks: `m` contiguous segments, the first
/// `n mod m` of them one row longer.
pub(crate) fn segment_bounds(n: usize, m: usize) -> Vec<(usize, usize)> {
    let base = n / m;
    let extra = n % m;
    let mut bounds = Vec::with_capacity(m);
    let mut start = 0;
    for s in 0..m {
        let len = base + usize::from(s < extra);
        bounds.push((start, start + len));
        start += len;
    }
    bounds
}

/// Maximum absolute column sum times maximum absolute row sum; the
/// normalizer of the pseudoinverse iteration's starting point.
pub(crate) fn norm1_times_norm_inf(a: &Tensor) -> (f64, usize, f64, usize) {
    let mut best_col = (0.0, 0);
    for c in 0..a.cols() {
        let s: f64 = (0..a.rows()).map(|r| a.get(r, c).abs()).sum();
        if s > best_col.0 {
            best_col = (s, c);
        }
    }
    let mut best_row = (0.0, 0);
    for r in 0..a.rows() {
        let s: f64 = a.row(r).iter().map(|v| v.abs()).sum();
        if s > best_row.0 {
            best_row = (s, r);
        }
    }
    (best_col.0, best_col.1, best_row.0, best_row.1)
}
