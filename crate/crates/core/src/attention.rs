//! Multi-head self-attention: the exact quadratic form, the Nyström
//! linear-cost approximation, class-token attention rows, and single-query
//! cross-attention.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::egt::head_average;
use crate::error::{MegtError, Result};
use crate::numerics::{Graph, InitScheme, RngState, Tensor, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadProjection {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Per-head query/key/value projections (`d_model × d_head` each) and the
/// shared output projection (`H·d_head × d_model`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionHeadParams {
    pub heads: Vec<HeadProjection>,
    pub wo: ParamId,
    pub d_model: usize,
    pub d_head: usize,
}

impl AttentionHeadParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &RngState,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(MegtError::Config(format!(
                "n_heads={n_heads} does not divide d_model={d_model}"
            )));
        }
        let d_head = d_model / n_heads;
        let xavier = InitScheme::XavierUniform;
        let heads = (0..n_heads)
            .map(|h| HeadProjection {
                wq: store.init(rng, &format!("{prefix}.h{h}.wq"), d_model, d_head, xavier),
                wk: store.init(rng, &format!("{prefix}.h{h}.wk"), d_model, d_head, xavier),
                wv: store.init(rng, &format!("{prefix}.h{h}.wv"), d_model, d_head, xavier),
            })
            .collect();
        let wo = store.init(rng, &format!("{prefix}.wo"), d_model, d_model, xavier);
        Ok(AttentionHeadParams {
            heads,
            wo,
            d_model,
            d_head,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionKind {
    #[default]
    Nystrom,
    Exact,
}

impl FromStr for AttentionKind {
    type Err = MegtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nystrom" => Ok(AttentionKind::Nystrom),
            "exact" => Ok(AttentionKind::Exact),
            other => Err(MegtError::Config(format!(
                "attention must be nystrom or exact, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Nystrom => "nystrom",
            AttentionKind::Exact => "exact",
        })
    }
}

/// Landmark count and pseudoinverse iterations. The head dimension used
/// for score scaling comes from the attention parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NystromConfig {
    pub m_landmarks: usize,
    pub pinv_iters: usize,
}

impl Default for NystromConfig {
    fn default() -> Self {
        NystromConfig {
            m_landmarks: 32,
            pinv_iters: 16,
        }
    }
}

/// Class-to-patch attention of one attention call.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// One `1×n` row per head, class column dropped, not renormalized.
    pub head_rows: Vec<Var>,
    /// Head average of `head_rows`.
    pub mean_row: Var,
}

struct Projected {
    q: Var,
    k: Var,
    v: Var,
}

fn project_heads(g: &mut Graph, x: Var, params: &AttentionHeadParams) -> Result<Vec<Projected>> {
    let mut out = Vec::with_capacity(params.n_heads());
    for h in &params.heads {
        let (wq, wk, wv) = (g.param(h.wq), g.param(h.wk), g.param(h.wv));
        out.push(Projected {
            q: g.matmul(x, wq)?,
            k: g.matmul(x, wk)?,
            v: g.matmul(x, wv)?,
        });
    }
    Ok(out)
}

fn merge_heads(g: &mut Graph, heads: &[Var], params: &AttentionHeadParams) -> Result<Var> {
    let cat = g.concat_cols(heads)?;
    let wo = g.param(params.wo);
    g.matmul(cat, wo)
}

/// Exact result of [`exact_mha`].
#[derive(Debug, Clone)]
pub struct ExactAttention {
    pub output: Var,
    /// `n×n` attention map of every head.
    pub maps: Vec<Var>,
}

/// Standard softmax attention, `O(n²)` per head.
pub fn exact_mha(g: &mut Graph, x: Var, params: &AttentionHeadParams) -> Result<ExactAttention> {
    let proj = project_heads(g, x, params)?;
    exact_from_projections(g, &proj, params)
}

fn exact_from_projections(
    g: &mut Graph,
    proj: &[Projected],
    params: &AttentionHeadParams,
) -> Result<ExactAttention> {
    let scale = 1.0 / (params.d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(proj.len());
    let mut maps = Vec::with_capacity(proj.len());
    for p in proj {
        let qs = g.scale(p.q, scale);
        let scores = g.matmul_nt(qs, p.k)?;
        let attn = g.softmax_rows(scores);
        outs.push(g.matmul(attn, p.v)?);
        maps.push(attn);
    }
    let output = merge_heads(g, &outs, params)?;
    Ok(ExactAttention { output, maps })
}

/// Approximate Moore–Penrose pseudoinverse by the cubic Newton–Schulz-type
/// iteration `Z ← ¼ Z (13I − AZ (15I − AZ (7I − AZ)))`, started at
/// `Z₀ = Aᵀ / (‖A‖₁ ‖A‖_∞)`. Differentiable through the tape.
pub fn pinv_iterative_var(g: &mut Graph, a: Var, iters: usize) -> Result<Var> {
    if iters == 0 {
        return Err(MegtError::Config("pinv_iters must be at least 1".into()));
    }
    let mut z = g.pinv_init(a);
    for _ in 0..iters {
        let az = g.matmul(a, z)?;
        let t = g.identity_affine(az, 7.0, -1.0)?;
        let t = g.matmul(az, t)?;
        let t = g.identity_affine(t, 15.0, -1.0)?;
        let t = g.matmul(az, t)?;
        let t = g.identity_affine(t, 13.0, -1.0)?;
        let zt = g.matmul(z, t)?;
        z = g.scale(zt, 0.25);
    }
    Ok(z)
}

/// Value-level form of [`pinv_iterative_var`].
pub fn pinv_iterative(a: &Tensor, iters: usize) -> Result<Tensor> {
    if a.rows() != a.cols() || a.rows() == 0 {
        return Err(MegtError::Contract(format!(
            "pinv_iterative needs a non-empty square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let z = pinv_iterative_var(&mut g, av, iters)?;
    Ok(g.value(z).clone())
}

/// Landmarks as means of `m` contiguous row segments; the first `n mod m`
/// segments hold one extra row. `m > n` is clamped to `n`.
pub fn landmark_means(q: &Tensor, m: usize) -> Result<Tensor> {
    let n = q.rows();
    if n == 0 || m == 0 {
        return Err(MegtError::Contract(format!(
            "landmark_means needs n >= 1 and m >= 1 (n={n}, m={m})"
        )));
    }
    let m = if m > n {
        warn!("landmark count {m} exceeds sequence length {n}; clamping to {n}");
        n
    } else {
        m
    };
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let out = g.segment_means(qv, m)?;
    Ok(g.value(out).clone())
}

/// Exact class-token attention row: `softmax(q_cls·Kᵀ/√d)` over every
/// column of `k` (class first), with the class column dropped and the rest
/// left unrenormalized.
pub fn class_attention_row(g: &mut Graph, q_cls: Var, k: Var) -> Result<Var> {
    let d = g.shape(q_cls).1;
    let (n1, _) = g.shape(k);
    if g.shape(q_cls).0 != 1 || n1 == 0 {
        return Err(MegtError::shape("class_attention_row", g.shape(q_cls), g.shape(k)));
    }
    let qs = g.scale(q_cls, 1.0 / (d as f64).sqrt());
    let scores = g.matmul_nt(qs, k)?;
    let row = g.softmax_rows(scores);
    g.slice_cols(row, 1, n1 - 1)
}

fn class_trace(g: &mut Graph, proj: &[Projected]) -> Result<AttentionTrace> {
    let mut head_rows = Vec::with_capacity(proj.len());
    for p in proj {
        let q_cls = g.slice_rows(p.q, 0, 1)?;
        head_rows.push(class_attention_row(g, q_cls, p.k)?);
    }
    let mean_row = head_average(g, &head_rows)?;
    Ok(AttentionTrace {
        head_rows,
        mean_row,
    })
}

fn nystrom_head(g: &mut Graph, p: &Projected, d_head: usize, cfg: &NystromConfig) -> Result<Var> {
    let n = g.shape(p.q).0;
    let m = cfg.m_landmarks.clamp(1, n);
    let scale = 1.0 / (d_head as f64).sqrt();
    let q = g.scale(p.q, scale);
    let q_land = g.segment_means(q, m)?;
    let k_land = g.segment_means(p.k, m)?;

    let f = g.matmul_nt(q, k_land)?;
    let f = g.softmax_rows(f);
    let a = g.matmul_nt(q_land, k_land)?;
    let a = g.softmax_rows(a);
    let b = g.matmul_nt(q_land, p.k)?;
    let b = g.softmax_rows(b);

    let a_pinv = pinv_iterative_var(g, a, cfg.pinv_iters)?;
    let bv = g.matmul(b, p.v)?;
    let zbv = g.matmul(a_pinv, bv)?;
    g.matmul(f, zbv)
}

/// Nyström self-attention over `x` (row 0 is the class token). The
/// returned trace carries exact class attention rows.
pub fn nystrom_attention(
    g: &mut Graph,
    x: Var,
    params: &AttentionHeadParams,
    cfg: &NystromConfig,
) -> Result<(Var, AttentionTrace)> {
    if g.shape(x).0 == 0 {
        return Err(MegtError::Contract("attention over an empty sequence".into()));
    }
    let proj = project_heads(g, x, params)?;
    let mut outs = Vec::with_capacity(proj.len());
    for p in &proj {
        outs.push(nystrom_head(g, p, params.d_head, cfg)?);
    }
    let output = merge_heads(g, &outs, params)?;
    let trace = class_trace(g, &proj)?;
    Ok((output, trace))
}

/// Self-attention of the requested kind, with class attention trace.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    params: &AttentionHeadParams,
    kind: AttentionKind,
    cfg: &NystromConfig,
) -> Result<(Var, AttentionTrace)> {
    match kind {
        AttentionKind::Nystrom => nystrom_attention(g, x, params, cfg),
        AttentionKind::Exact => {
            let proj = project_heads(g, x, params)?;
            let exact = exact_from_projections(g, &proj, params)?;
            let trace = class_trace(g, &proj)?;
            Ok((exact.output, trace))
        }
    }
}

/// Single-head cross-attention weights `d_model × d_model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossAttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl CrossAttentionParams {
    pub fn init(store: &mut ParamStore, rng: &RngState, prefix: &str, d_model: usize) -> Self {
        let x = InitScheme::XavierUniform;
        CrossAttentionParams {
            wq: store.init(rng, &format!("{prefix}.wq"), d_model, d_model, x),
            wk: store.init(rng, &format!("{prefix}.wk"), d_model, d_model, x),
            wv: store.init(rng, &format!("{prefix}.wv"), d_model, d_model, x),
        }
    }
}

/// Output of [`cross_attention`].
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    /// `1×d_model`
    pub output: Var,
    /// `1×(n+1)` weights over `[x_cls ‖ others]`.
    pub weights: Var,
}

/// The class token queries `[x_cls ‖ others]`; one attention row, so cost is
/// linear in `n`.
pub fn cross_attention(
    g: &mut Graph,
    x_cls: Var,
    others: Var,
    params: &CrossAttentionParams,
) -> Result<CrossAttention> {
    if g.shape(x_cls).0 != 1 {
        return Err(MegtError::shape("cross_attention", g.shape(x_cls), g.shape(others)));
    }
    let d = g.shape(x_cls).1;
    let kv_in = if g.shape(others).0 == 0 {
        x_cls
    } else {
        g.concat_rows(&[x_cls, others])?
    };
    let (wq, wk, wv) = (g.param(params.wq), g.param(params.wk), g.param(params.wv));
    let q = g.matmul(x_cls, wq)?;
    let k = g.matmul(kv_in, wk)?;
    let v = g.matmul(kv_in, wv)?;
    let q = g.scale(q, 1.0 / (d as f64).sqrt());
    let scores = g.matmul_nt(q, k)?;
    let weights = g.softmax_rows(scores);
    let output = g.matmul(weights, v)?;
    Ok(CrossAttention { output, weights })
}
