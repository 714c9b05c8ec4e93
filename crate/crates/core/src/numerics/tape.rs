//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation on a [`Graph`] appends one node holding its forward value
//! and whatever it needs to propagate gradients. [`Graph::backward`] walks the
//! nodes in exact reverse order of execution.

use std::collections::HashMap;

use super::ops::{self, LayerNormCache};
use super::Tensor;
use crate::error::{MegtError, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `diag·I + scale·x`
    IdentityAffine { x: Var, scale: f64 },
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: LayerNormCache,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    SegmentMeans(Var, Vec<(usize, usize)>),
    SymNormalize(Var, Vec<f64>),
    PinvInit {
        a: Var,
        alpha: f64,
        col: (usize, f64),
        row: (usize, f64),
    },
    SumAll(Var),
    MeanRows(Var),
    Nll { probs: Var, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::IdentityAffine { .. } => "identity_affine",
            Op::Relu(_) => "relu",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherCols(..) => "gather_cols",
            Op::SegmentMeans(..) => "segment_means",
            Op::SymNormalize(..) => "sym_normalize",
            Op::PinvInit { .. } => "pinv_init",
            Op::SumAll(_) => "sum_all",
            Op::MeanRows(_) => "mean_rows",
            Op::Nll { .. } => "nll",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Computation graph recorded during one forward pass.
///
/// Parameters are pulled in from a borrowed [`ParamStore`] the first time
/// they are referenced; each parameter maps to exactly one leaf.
pub struct Graph<'a> {
    nodes: Vec<Node>,
    store: Option<&'a ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    fault: Option<(&'static str, f64)>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            param_vars: HashMap::new(),
            fault: None,
        }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Graph {
            store: Some(store),
            ..Graph::new()
        }
    }

    /// Multiplies the backward contribution of every op named `op_name` by
    /// `factor`. Only used to prove the gradient checker catches broken rules.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op_name: &'static str, factor: f64) {
        self.fault = Some((op_name, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives a gradient but is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Graph::leaf`] for inputs whose gradient is never read.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self
            .store
            .expect("Graph::param called on a graph without a parameter store");
        let value = store.get(id).detached();
        let v = self.push(value, Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    // ---- forward operations ---------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MegtError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_values(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_values(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_values(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(bias) != (1, ac) {
            return Err(MegtError::shape("add_row", (ar, ac), self.shape(bias)));
        }
        let mut out = self.value(a).detached();
        let b = self.value(bias).data().to_vec();
        for r in 0..ar {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    /// `diag·I + scale·x` for square `x`.
    pub fn identity_affine(&mut self, x: Var, diag: f64, scale: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r != c {
            return Err(MegtError::shape("identity_affine", (r, c), (c, r)));
        }
        let mut out = self.value(x).map(|v| v * scale);
        for i in 0..r {
            out.set(i, i, out.get(i, i) + diag);
        }
        Ok(self.push(out, Op::IdentityAffine { x, scale }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = ops::softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            ops::layer_norm_with_cache(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(MegtError::shape("slice_rows", (r, c), (start + len, c)));
        }
        let src = self.value(a);
        let out = Tensor::from_vec(len, c, src.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(MegtError::shape("slice_cols", (r, c), (r, start + len)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(r, len, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::vstack(&values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(MegtError::shape("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(MegtError::shape("gather_rows", (r, c), (bad + 1, c)));
        }
        let out = self.value(a).select_rows(indices);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn gather_cols(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(MegtError::shape("gather_cols", (r, c), (r, bad + 1)));
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(r, indices.len());
        for i in 0..r {
            for (j, &k) in indices.iter().enumerate() {
                out.set(i, j, src.get(i, k));
            }
        }
        Ok(self.push(out, Op::GatherCols(a, indices.to_vec())))
    }

    /// Means of `m` contiguous row segments (`1 ≤ m ≤ rows`).
    pub fn segment_means(&mut self, a: Var, m: usize) -> Result<Var> {
        let (n, d) = self.shape(a);
        if m == 0 || m > n {
            return Err(MegtError::Contract(format!(
                "segment_means needs 1 <= m <= n, got m={m}, n={n}"
            )));
        }
        let bounds = ops::segment_bounds(n, m);
        let src = self.value(a);
        let mut out = Tensor::zeros(m, d);
        for (s, &(lo, hi)) in bounds.iter().enumerate() {
            let inv = 1.0 / (hi - lo) as f64;
            let orow = out.row_mut(s);
            for r in lo..hi {
                for (o, v) in orow.iter_mut().zip(src.row(r)) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(out, Op::SegmentMeans(a, bounds)))
    }

    /// `D^{-1/2} · A · D^{-1/2}` with `D = diag(row sums of A)`; every row sum
    /// must be strictly positive.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        if n != c {
            return Err(MegtError::shape("sym_normalize", (n, c), (c, n)));
        }
        let src = self.value(a);
        let mut inv_sqrt = Vec::with_capacity(n);
        for r in 0..n {
            let deg: f64 = src.row(r).iter().sum();
            if deg <= 0.0 {
                return Err(MegtError::Contract(format!(
                    "sym_normalize: degree of node {r} is {deg}"
                )));
            }
            inv_sqrt.push(1.0 / deg.sqrt());
        }
        let mut out = src.detached();
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, src.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
        Ok(self.push(out, Op::SymNormalize(a, inv_sqrt)))
    }

    /// `aᵀ / (‖a‖₁ · ‖a‖_∞)`; an all-zero `a` maps to zeros.
    pub fn pinv_init(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (colsum, col, rowsum, row) = ops::norm1_times_norm_inf(src);
        let denom = colsum * rowsum;
        let alpha = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        let out = src.transpose().map(|v| v * alpha);
        self.push(
            out,
            Op::PinvInit {
                a,
                alpha,
                col: (col, colsum),
                row: (row, rowsum),
            },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Column-wise mean over rows, `1×d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        if n == 0 {
            return Err(MegtError::Contract("mean_rows over zero rows".into()));
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(1, d);
        for r in 0..n {
            for (o, v) in out.row_mut(0).iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let out = out.map(|v| v / n as f64);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Mean negative log-likelihood `−(1/M) Σᵢ log p[i, yᵢ]` of probability rows.
    pub fn nll(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.shape(probs);
        if labels.len() != m || m == 0 {
            return Err(MegtError::shape("nll", (m, c), (labels.len(), 1)));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(MegtError::Data(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            total -= p.get(i, y).ln();
        }
        let out = Tensor::scalar(total / m as f64);
        Ok(self.push(
            out,
            Op::Nll {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Propagates `d loss / d node` to every node the scalar `loss` depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(MegtError::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                self.shape(loss).0,
                self.shape(loss).1
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let mut g = g;
            if let Some((name, factor)) = self.fault {
                if self.nodes[i].op.name() == name {
                    g.iter_mut().for_each(|v| *v *= factor);
                }
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: {
                let mut p: Vec<_> = self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
                p.sort_by_key(|(id, _)| *id);
                p
            },
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = node.value.shape();
        let gt = || Tensor::from_vec(rows, cols, g.to_vec()).expect("grad shape");
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let gm = gt();
                let ga = ops::matmul_nt(&gm, self.value(*b)).expect("shape");
                let gb = ops::matmul_tn(self.value(*a), &gm).expect("shape");
                accumulate(grads, *a, ga.data());
                accumulate(grads, *b, gb.data());
            }
            Op::MatMulNt(a, b) => {
                let gm = gt();
                let ga = ops::matmul(&gm, self.value(*b)).expect("shape");
                let gb = ops::matmul_tn(&gm, self.value(*a)).expect("shape");
                accumulate(grads, *a, ga.data());
                accumulate(grads, *b, gb.data());
            }
            Op::Transpose(a) => {
                accumulate(grads, *a, gt().transpose().data());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g);
                let mut gb = vec![0.0; cols];
                for r in 0..rows {
                    for (o, v) in gb.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *o += v;
                    }
                }
                accumulate(grads, *bias, &gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::IdentityAffine { x, scale } => {
                let ga: Vec<f64> = g.iter().map(|v| v * scale).collect();
                accumulate(grads, *x, &ga);
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(av)
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let mut ga = vec![0.0; g.len()];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let yr = &y[span.clone()];
                    let gr = &g[span.clone()];
                    let inner = ops::dot(yr, gr);
                    for ((o, &yv), &gv) in ga[span].iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let gam = self.value(*gamma).data();
                let d = cols as f64;
                let mut ggamma = vec![0.0; cols];
                let mut gbeta = vec![0.0; cols];
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let xhat = cache.normalized.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..cols {
                        ggamma[c] += gr[c] * xhat[c];
                        gbeta[c] += gr[c];
                        let dxh = gr[c] * gam[c];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[c];
                    }
                    let is = cache.inv_std[r];
                    for c in 0..cols {
                        let dxh = gr[c] * gam[c];
                        gx[r * cols + c] =
                            is / d * (d * dxh - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                    }
                }
                accumulate(grads, *x, &gx);
                accumulate(grads, *gamma, &ggamma);
                accumulate(grads, *beta, &gbeta);
            }
            Op::SliceRows(a, start) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                ga[start * ac..(start + rows) * ac].copy_from_slice(g);
                accumulate(grads, *a, &ga);
            }
            Op::SliceCols(a, start) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for r in 0..rows {
                    ga[r * ac + start..r * ac + start + cols]
                        .copy_from_slice(&g[r * cols..(r + 1) * cols]);
                }
                accumulate(grads, *a, &ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    accumulate(grads, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.shape(*p).1;
                    let mut gp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * cols + off..r * cols + off + pc]);
                    }
                    accumulate(grads, *p, &gp);
                    off += pc;
                }
            }
            Op::GatherRows(a, idx) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for (j, &src) in idx.iter().enumerate() {
                    for c in 0..ac {
                        ga[src * ac + c] += g[j * ac + c];
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::GatherCols(a, idx) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for r in 0..ar {
                    for (j, &src) in idx.iter().enumerate() {
                        ga[r * ac + src] += g[r * cols + j];
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::SegmentMeans(a, bounds) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for (s, &(lo, hi)) in bounds.iter().enumerate() {
                    let inv = 1.0 / (hi - lo) as f64;
                    for r in lo..hi {
                        for c in 0..ac {
                            ga[r * ac + c] = g[s * ac + c] * inv;
                        }
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::SymNormalize(a, inv_sqrt) => {
                let av = self.value(*a);
                let n = rows;
                // d loss / d r_i, where r_i = deg_i^{-1/2}
                let mut d_r = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        d_r[i] += gij * av.get(i, j) * inv_sqrt[j];
                        d_r[j] += gij * av.get(i, j) * inv_sqrt[i];
                    }
                }
                let mut ga = vec![0.0; n * n];
                for k in 0..n {
                    let via_degree = -0.5 * inv_sqrt[k].powi(3) * d_r[k];
                    for l in 0..n {
                        ga[k * n + l] = g[k * n + l] * inv_sqrt[k] * inv_sqrt[l] + via_degree;
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::PinvInit { a, alpha, col, row } => {
                if *alpha == 0.0 {
                    return;
                }
                let av = self.value(*a);
                let (ar, ac) = av.shape();
                // out = alpha * aᵀ, so out[j][i] pairs with a[i][j].
                let mut d_alpha = 0.0;
                let mut ga = vec![0.0; ar * ac];
                for i in 0..ar {
                    for j in 0..ac {
                        let gji = g[j * ar + i];
                        ga[i * ac + j] = alpha * gji;
                        d_alpha += gji * av.get(i, j);
                    }
                }
                // alpha = 1 / (colsum * rowsum)
                let (c_idx, c_sum) = *col;
                let (r_idx, r_sum) = *row;
                for i in 0..ar {
                    let v = av.get(i, c_idx);
                    ga[i * ac + c_idx] += d_alpha * -alpha / c_sum * v.signum() * f64::from(v != 0.0);
                }
                for j in 0..ac {
                    let v = av.get(r_idx, j);
                    ga[r_idx * ac + j] += d_alpha * -alpha / r_sum * v.signum() * f64::from(v != 0.0);
                }
                accumulate(grads, *a, &ga);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                accumulate(grads, *a, &vec![g[0]; n]);
            }
            Op::MeanRows(a) => {
                let (ar, ac) = self.shape(*a);
                let inv = 1.0 / ar as f64;
                let mut ga = Vec::with_capacity(ar * ac);
                for _ in 0..ar {
                    ga.extend(g.iter().map(|v| v * inv));
                }
                accumulate(grads, *a, &ga);
            }
            Op::Nll { probs, labels } => {
                let p = self.value(*probs);
                let (pr, pc) = p.shape();
                let m = pr as f64;
                let mut ga = vec![0.0; pr * pc];
                for (i, &y) in labels.iter().enumerate() {
                    ga[i * pc + y] = -g[0] / (m * p.get(i, y));
                }
                accumulate(grads, *probs, &ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to any node; `None` if the loss does not depend
    /// on it.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        let g = self.grads[v.0].as_ref()?;
        let (r, c) = self.shapes[v.0];
        Some(Tensor::from_vec(r, c, g.clone()).expect("grad shape"))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, v)| self.grads[v.0].as_deref())
    }

    /// Every parameter leaf that was pulled into the graph, with its
    /// gradient (`None` if unreachable from the loss).
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[f64]>)> + '_ {
        self.params
            .iter()
            .map(|&(id, v)| (id, self.grads[v.0].as_deref()))
    }
}
