//! The efficient graph-transformer branch: a pre-norm encoder layer,
//! class-attention token pruning, and the graph-transformer layer whose
//! attention scores double as a GCN adjacency.
//!
//! Branch layout: input projection → `[cls ‖ patches]` → encoder 1 →
//! prune patches to top-k plus one fusion token → graph-transformer layer
//! over the patch tokens only → `[cls ‖ patches']` → encoder 2.

use crate::attention::{self_attention, AttentionHeadParams, AttentionKind, AttentionTrace, NystromConfig};
use crate::error::{MegtError, Result};
use crate::numerics::{Graph, InitScheme, RngState, Var};
use crate::params::{ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, rng: &RngState, prefix: &str, d: usize) -> Self {
        LayerNormParams {
            gamma: store.init(rng, &format!("{prefix}.gamma"), 1, d, InitScheme::Ones),
            beta: store.init(rng, &format!("{prefix}.beta"), 1, d, InitScheme::Zeros),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// A dense layer `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(store: &mut ParamStore, rng: &RngState, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: store.init(rng, &format!("{prefix}.w"), d_in, d_out, InitScheme::XavierUniform),
            bias: store.init(rng, &format!("{prefix}.b"), 1, d_out, InitScheme::Zeros),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionHeadParams,
    pub ln2: LayerNormParams,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl EncoderLayerParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &RngState,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let hidden = d_model * mlp_ratio;
        Ok(EncoderLayerParams {
            ln1: LayerNormParams::init(store, rng, &format!("{prefix}.ln1"), d_model),
            attn: AttentionHeadParams::init(store, rng, &format!("{prefix}.attn"), d_model, n_heads)?,
            ln2: LayerNormParams::init(store, rng, &format!("{prefix}.ln2"), d_model),
            mlp_in: Linear::init(store, rng, &format!("{prefix}.mlp1"), d_model, hidden),
            mlp_out: Linear::init(store, rng, &format!("{prefix}.mlp2"), hidden, d_model),
        })
    }
}

/// How self-attention is evaluated inside encoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionSetup {
    pub kind: AttentionKind,
    pub nystrom: NystromConfig,
}

/// `T′ = MSA(LN(T)) + T`, then `T″ = MLP(LN(T′)) + T′`. Row 0 must be the
/// class token; the trace carries its attention to the other rows.
pub fn encoder_layer(
    g: &mut Graph,
    t_prev: Var,
    params: &EncoderLayerParams,
    setup: &AttentionSetup,
) -> Result<(Var, AttentionTrace)> {
    let normed = params.ln1.apply(g, t_prev)?;
    let (attn, trace) = self_attention(g, normed, &params.attn, setup.kind, &setup.nystrom)?;
    let t_mid = g.add(attn, t_prev)?;

    let normed = params.ln2.apply(g, t_mid)?;
    let hidden = params.mlp_in.apply(g, normed)?;
    let hidden = g.relu(hidden);
    let mlp = params.mlp_out.apply(g, hidden)?;
    let out = g.add(mlp, t_mid)?;
    Ok((out, trace))
}

/// Runs a stack of encoder layers; the trace is the last layer's.
pub fn encoder_stack(
    g: &mut Graph,
    tokens: Var,
    layers: &[EncoderLayerParams],
    setup: &AttentionSetup,
) -> Result<(Var, Option<AttentionTrace>)> {
    let mut t = tokens;
    let mut trace = None;
    for layer in layers {
        let (next, tr) = encoder_layer(g, t, layer, setup)?;
        t = next;
        trace = Some(tr);
    }
    Ok((t, trace))
}

/// Elementwise mean of per-head attention rows.
pub fn head_average(g: &mut Graph, rows: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = rows.split_first() else {
        return Err(MegtError::Contract("head_average over zero heads".into()));
    };
    let mut acc = first;
    for &r in rest {
        acc = g.add(acc, r)?;
    }
    Ok(g.scale(acc, 1.0 / rows.len() as f64))
}

/// Indices of the `k` largest scores, ascending. Equal scores prefer the
/// lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    /// Original patch positions kept, ascending.
    pub kept_indices: Vec<usize>,
    pub kept_tokens: Var,
    /// `Σ ā_i · h_i` over the discarded tokens; present iff anything was
    /// discarded.
    pub fusion_token: Option<Var>,
    pub abar: Var,
}

impl PruneResult {
    /// Kept tokens followed by the fusion token, if any.
    pub fn tokens(&self, g: &mut Graph) -> Result<Var> {
        match self.fusion_token {
            Some(f) => g.concat_rows(&[self.kept_tokens, f]),
            None => Ok(self.kept_tokens),
        }
    }
}

/// Keeps the `k` patches with the highest head-averaged class attention and
/// folds the rest into one attention-weighted fusion token.
pub fn prune_tokens(g: &mut Graph, patches: Var, abar: Var, k: usize) -> Result<PruneResult> {
    if k < 1 {
        return Err(MegtError::Config("k_keep must be at least 1".into()));
    }
    let n = g.shape(patches).0;
    if g.shape(abar) != (1, n) {
        return Err(MegtError::shape("prune_tokens", g.shape(patches), g.shape(abar)));
    }
    if k >= n {
        return Ok(PruneResult {
            kept_indices: (0..n).collect(),
            kept_tokens: patches,
            fusion_token: None,
            abar,
        });
    }
    let kept = top_k_indices(g.value(abar).data(), k);
    let mut is_kept = vec![false; n];
    kept.iter().for_each(|&i| is_kept[i] = true);
    let dropped: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();

    let kept_tokens = g.gather_rows(patches, &kept)?;
    let weights = g.gather_cols(abar, &dropped)?;
    let dropped_tokens = g.gather_rows(patches, &dropped)?;
    let fusion = g.matmul(weights, dropped_tokens)?;
    Ok(PruneResult {
        kept_indices: kept,
        kept_tokens,
        fusion_token: Some(fusion),
        abar,
    })
}

/// Graph-transformer layer weights. `d_k` (token width) and `d_m`
/// (projection width) are both `d_model` here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtlParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv1: ParamId,
    pub wv2: ParamId,
    /// One `(d_m/H)×(d_m/H)` GCN weight per head.
    pub gcn: Vec<ParamId>,
    pub wo1: ParamId,
    pub wo2: ParamId,
    /// `2·d_k × d_k`
    pub wo3: ParamId,
    pub d_m: usize,
}

impl GtlParams {
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
        let x = InitScheme::XavierUniform;
        let dh = d_model / n_heads;
        let mut w = |name: &str, r, c| store.init(rng, &format!("{prefix}.{name}"), r, c, x);
        let (wq, wk, wv1, wv2) = (
            w("wq", d_model, d_model),
            w("wk", d_model, d_model),
            w("wv1", d_model, d_model),
            w("wv2", d_model, d_model),
        );
        let gcn = (0..n_heads).map(|h| w(&format!("gcn{h}"), dh, dh)).collect();
        Ok(GtlParams {
            wq,
            wk,
            wv1,
            wv2,
            gcn,
            wo1: w("wo1", d_model, d_model),
            wo2: w("wo2", d_model, d_model),
            wo3: w("wo3", 2 * d_model, d_model),
            d_m: d_model,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.gcn.len()
    }
}

/// Per-head score matrices and value slices of one graph-transformer layer.
#[derive(Debug, Clone)]
pub struct GtlHeads {
    /// Raw scaled scores `Q_i K_iᵀ / √(d_m/H)`.
    pub scores: Vec<Var>,
    pub v1: Vec<Var>,
    pub v2: Vec<Var>,
}

pub fn gtl_scores(g: &mut Graph, x_patch: Var, params: &GtlParams) -> Result<GtlHeads> {
    let h = params.n_heads();
    let dh = params.d_m / h;
    let (wq, wk, wv1, wv2) = (
        g.param(params.wq),
        g.param(params.wk),
        g.param(params.wv1),
        g.param(params.wv2),
    );
    let q = g.matmul(x_patch, wq)?;
    let k = g.matmul(x_patch, wk)?;
    let v1 = g.matmul(x_patch, wv1)?;
    let v2 = g.matmul(x_patch, wv2)?;
    let q = g.scale(q, 1.0 / (dh as f64).sqrt());
    let mut heads = GtlHeads {
        scores: Vec::with_capacity(h),
        v1: Vec::with_capacity(h),
        v2: Vec::with_capacity(h),
    };
    for i in 0..h {
        let qi = g.slice_cols(q, i * dh, dh)?;
        let ki = g.slice_cols(k, i * dh, dh)?;
        heads.scores.push(g.matmul_nt(qi, ki)?);
        heads.v1.push(g.slice_cols(v1, i * dh, dh)?);
        heads.v2.push(g.slice_cols(v2, i * dh, dh)?);
    }
    Ok(heads)
}

/// `Concat_i(softmax(A_i)·V1_i) · W_o1`
pub fn gtl_transformer_branch(g: &mut Graph, scores: &[Var], v1: &[Var], wo1: ParamId) -> Result<Var> {
    let mut outs = Vec::with_capacity(scores.len());
    for (&a, &v) in scores.iter().zip(v1) {
        let attn = g.softmax_rows(a);
        outs.push(g.matmul(attn, v)?);
    }
    let cat = g.concat_cols(&outs)?;
    let w = g.param(wo1);
    g.matmul(cat, w)
}

/// Self-connected adjacency `softmax_rows(A_i) + I`.
pub fn gcn_adjacency(g: &mut Graph, scores: Var) -> Result<Var> {
    let s = g.softmax_rows(scores);
    g.identity_affine(s, 1.0, 1.0)
}

/// One GCN propagation `ReLU(D^{-1/2} Ã D^{-1/2} · V · W)`.
pub fn gcn_propagate(g: &mut Graph, adjacency: Var, v: Var, w: Var) -> Result<Var> {
    let p = g.sym_normalize(adjacency)?;
    let pv = g.matmul(p, v)?;
    let pvw = g.matmul(pv, w)?;
    Ok(g.relu(pvw))
}

/// `Concat_i(GCN(Ã_i, V2_i)) · W_o2`
pub fn gtl_gcn_branch(
    g: &mut Graph,
    scores: &[Var],
    v2: &[Var],
    gcn_weights: &[ParamId],
    wo2: ParamId,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(scores.len());
    for ((&a, &v), &w) in scores.iter().zip(v2).zip(gcn_weights) {
        let adj = gcn_adjacency(g, a)?;
        let w = g.param(w);
        outs.push(gcn_propagate(g, adj, v, w)?);
    }
    let cat = g.concat_cols(&outs)?;
    let w = g.param(wo2);
    g.matmul(cat, w)
}

/// `Concat(V1′, V2′) · W_o3`
pub fn gtl_fuse(g: &mut Graph, v1_out: Var, v2_out: Var, wo3: ParamId) -> Result<Var> {
    if g.shape(v1_out).0 != g.shape(v2_out).0 {
        return Err(MegtError::shape("gtl_fuse", g.shape(v1_out), g.shape(v2_out)));
    }
    let cat = g.concat_cols(&[v1_out, v2_out])?;
    let w = g.param(wo3);
    g.matmul(cat, w)
}

pub fn graph_transformer_layer(g: &mut Graph, x_patch: Var, params: &GtlParams) -> Result<Var> {
    let heads = gtl_scores(g, x_patch, params)?;
    let v1 = gtl_transformer_branch(g, &heads.scores, &heads.v1, params.wo1)?;
    let v2 = gtl_gcn_branch(g, &heads.scores, &heads.v2, &params.gcn, params.wo2)?;
    gtl_fuse(g, v1, v2, params.wo3)
}

/// Switches and sizes shared by both branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgtSettings {
    pub attention: AttentionSetup,
    pub k_keep: usize,
    pub enable_tpm: bool,
    pub enable_gtl: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgtBranchParams {
    /// `"low"` or `"high"`; used in error messages.
    pub name: String,
    /// `1×d_model`
    pub class_token: ParamId,
    /// `d_in × d_model`
    pub input_proj: ParamId,
    pub encoder_1: Vec<EncoderLayerParams>,
    pub encoder_2: Vec<EncoderLayerParams>,
    pub gtl: Option<GtlParams>,
}

impl EgtBranchParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &RngState,
        name: &str,
        d_in: usize,
        d_model: usize,
        n_heads: usize,
        mlp_ratio: usize,
        depth: usize,
        with_gtl: bool,
    ) -> Result<Self> {
        let class_token = store.init(
            rng,
            &format!("{name}.cls"),
            1,
            d_model,
            InitScheme::Normal { std: 0.02 },
        );
        let input_proj = store.init(
            rng,
            &format!("{name}.proj"),
            d_in,
            d_model,
            InitScheme::XavierUniform,
        );
        let mut stack = |tag: &str| -> Result<Vec<EncoderLayerParams>> {
            (0..depth)
                .map(|l| {
                    EncoderLayerParams::init(
                        store,
                        rng,
                        &format!("{name}.{tag}.{l}"),
                        d_model,
                        n_heads,
                        mlp_ratio,
                    )
                })
                .collect()
        };
        let encoder_1 = stack("enc1")?;
        let encoder_2 = stack("enc2")?;
        let gtl = if with_gtl {
            Some(GtlParams::init(store, rng, &format!("{name}.gtl"), d_model, n_heads)?)
        } else {
            None
        };
        Ok(EgtBranchParams {
            name: name.to_string(),
            class_token,
            input_proj,
            encoder_1,
            encoder_2,
            gtl,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EgtOutput {
    /// `[cls ‖ kept patches ‖ fusion?]`, class token at row 0.
    pub tokens: Var,
    /// Class attention of the first encoder's last layer.
    pub trace: AttentionTrace,
    pub prune: Option<PruneResult>,
}

/// Full branch forward pass over an `n×d_in` feature matrix.
pub fn egt_forward(
    g: &mut Graph,
    features: Var,
    branch: &EgtBranchParams,
    settings: &EgtSettings,
) -> Result<EgtOutput> {
    let n = g.shape(features).0;
    if n == 0 {
        return Err(MegtError::Data(format!("empty bag at {} resolution", branch.name)));
    }
    if branch.encoder_1.is_empty() {
        return Err(MegtError::Config("encoder depth must be at least 1".into()));
    }
    let proj = g.param(branch.input_proj);
    let patches = g.matmul(features, proj)?;
    let cls = g.param(branch.class_token);
    let tokens = g.concat_rows(&[cls, patches])?;

    let (tokens, trace) = encoder_stack(g, tokens, &branch.encoder_1, &settings.attention)?;
    let trace = trace.expect("non-empty encoder");
    let cls = g.slice_rows(tokens, 0, 1)?;
    let mut patches = g.slice_rows(tokens, 1, n)?;

    let mut prune = None;
    if settings.enable_tpm {
        let result = prune_tokens(g, patches, trace.mean_row, settings.k_keep)?;
        patches = result.tokens(g)?;
        prune = Some(result);
    }
    if settings.enable_gtl {
        let gtl = branch
            .gtl
            .as_ref()
            .ok_or_else(|| MegtError::Config("GTL enabled but its parameters are missing".into()))?;
        patches = graph_transformer_layer(g, patches, gtl)?;
    }

    let tokens = g.concat_rows(&[cls, patches])?;
    let (tokens, _) = encoder_stack(g, tokens, &branch.encoder_2, &settings.attention)?;
    Ok(EgtOutput {
        tokens,
        trace,
        prune,
    })
}

#[cfg(test)]
mod tests;
