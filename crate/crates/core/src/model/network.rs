use super::config::{Branches, ModelConfig, ModelKind};
use crate::attention::{cross_attention, CrossAttentionParams};
use crate::data::Bag;
use crate::egt::{egt_forward, encoder_stack, AttentionSetup, EgtBranchParams, EgtOutput, EncoderLayerParams, LayerNormParams, Linear};
use crate::error::{MegtError, Result};
use crate::numerics::{Graph, RngState, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Low,
    High,
}

impl Resolution {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Low => "low",
            Resolution::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MffmBlockParams {
    pub low: Vec<EncoderLayerParams>,
    pub high: Vec<EncoderLayerParams>,
    /// The low class token queries the high tokens.
    pub ca_low: CrossAttentionParams,
    /// The high class token queries the low tokens.
    pub ca_high: CrossAttentionParams,
}

impl MffmBlockParams {
    pub fn init(store: &mut ParamStore, rng: &RngState, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut layers = |tag: &str, count: usize| -> Result<Vec<EncoderLayerParams>> {
            (0..count)
                .map(|l| {
                    EncoderLayerParams::init(
                        store,
                        rng,
                        &format!("{prefix}.{tag}.{l}"),
                        cfg.d_model,
                        cfg.n_heads,
                        cfg.mlp_ratio,
                    )
                })
                .collect()
        };
        let low = layers("low", cfg.l_low)?;
        let high = layers("high", cfg.l_high)?;
        Ok(MffmBlockParams {
            low,
            high,
            ca_low: CrossAttentionParams::init(store, rng, &format!("{prefix}.ca_low"), cfg.d_model),
            ca_high: CrossAttentionParams::init(store, rng, &format!("{prefix}.ca_high"), cfg.d_model),
        })
    }
}

/// Cross-attention weights of one block, each over `[own cls ‖ other patches]`.
#[derive(Debug, Clone, Copy)]
pub struct MffmTrace {
    pub low_queries_high: Var,
    pub high_queries_low: Var,
}

/// Runs each branch's encoders, then swaps information between the class
/// tokens. Both cross-attentions read the pre-exchange tokens; patch rows
/// pass through untouched.
pub fn mffm_block(
    g: &mut Graph,
    low_tokens: Var,
    high_tokens: Var,
    params: &MffmBlockParams,
    setup: &AttentionSetup,
) -> Result<(Var, Var, MffmTrace)> {
    for (name, t) in [("low", low_tokens), ("high", high_tokens)] {
        if g.shape(t).0 == 0 {
            return Err(MegtError::Contract(format!("{name} tokens lack a class token row")));
        }
    }
    let (low, _) = encoder_stack(g, low_tokens, &params.low, setup)?;
    let (high, _) = encoder_stack(g, high_tokens, &params.high, setup)?;
    let n_low = g.shape(low).0 - 1;
    let n_high = g.shape(high).0 - 1;
    let cls_low = g.slice_rows(low, 0, 1)?;
    let cls_high = g.slice_rows(high, 0, 1)?;
    let patch_low = g.slice_rows(low, 1, n_low)?;
    let patch_high = g.slice_rows(high, 1, n_high)?;

    let to_low = cross_attention(g, cls_low, patch_high, &params.ca_low)?;
    let to_high = cross_attention(g, cls_high, patch_low, &params.ca_high)?;
    let new_low = g.add(cls_low, to_low.output)?;
    let new_high = g.add(cls_high, to_high.output)?;

    let restack = |g: &mut Graph, cls: Var, patches: Var, n: usize| {
        if n == 0 {
            Ok(cls)
        } else {
            g.concat_rows(&[cls, patches])
        }
    };
    let low_out = restack(g, new_low, patch_low, n_low)?;
    let high_out = restack(g, new_high, patch_high, n_high)?;
    Ok((
        low_out,
        high_out,
        MffmTrace {
            low_queries_high: to_low.weights,
            high_queries_low: to_high.weights,
        },
    ))
}

/// `LayerNorm → Linear → ReLU → Linear`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierHead {
    pub norm: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore, rng: &RngState, d_in: usize, hidden: usize, classes: usize) -> Self {
        ClassifierHead {
            norm: LayerNormParams::init(store, rng, "head.norm", d_in),
            fc1: Linear::init(store, rng, "head.fc1", d_in, hidden),
            fc2: Linear::init(store, rng, "head.fc2", hidden, classes),
        }
    }

    pub fn logits(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let z = self.norm.apply(g, z)?;
        let h = self.fc1.apply(g, z)?;
        let h = g.relu(h);
        self.fc2.apply(g, h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Dual {
        low: EgtBranchParams,
        high: EgtBranchParams,
        mffm: Vec<MffmBlockParams>,
        head: ClassifierHead,
    },
    Single {
        resolution: Resolution,
        branch: EgtBranchParams,
        head: ClassifierHead,
    },
    MeanPool {
        fc: Linear,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MegtModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub arch: Architecture,
}

impl MegtModel {
    /// Parameters are registered in a fixed order and each is drawn from a
    /// stream keyed by its name, so the store is a function of the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let rng = RngState::new(config.seed).child("init");
        let mut store = ParamStore::new();
        let c = &config;
        let branch = |store: &mut ParamStore, name: &str| {
            EgtBranchParams::init(
                store,
                &rng,
                name,
                c.d_in,
                c.d_model,
                c.n_heads,
                c.mlp_ratio,
                c.egt_depth,
                c.enable_gtl,
            )
        };
        let arch = match (c.model, c.branches) {
            (ModelKind::MeanPool, _) => Architecture::MeanPool {
                fc: Linear::init(&mut store, &rng, "pool.fc", 2 * c.d_in, c.n_classes),
            },
            (ModelKind::Megt, Branches::Dual) => {
                let low = branch(&mut store, "low")?;
                let high = branch(&mut store, "high")?;
                let mffm = (0..c.k_mffm)
                    .map(|b| MffmBlockParams::init(&mut store, &rng, &format!("mffm{b}"), c))
                    .collect::<Result<Vec<_>>>()?;
                let head = ClassifierHead::init(&mut store, &rng, 2 * c.d_model, c.d_model, c.n_classes);
                Architecture::Dual { low, high, mffm, head }
            }
            (ModelKind::Megt, single) => {
                let resolution = if single == Branches::Low {
                    Resolution::Low
                } else {
                    Resolution::High
                };
                let branch = branch(&mut store, resolution.as_str())?;
                let head = ClassifierHead::init(&mut store, &rng, c.d_model, c.d_model, c.n_classes);
                Architecture::Single {
                    resolution,
                    branch,
                    head,
                }
            }
        };
        Ok(MegtModel { config, store, arch })
    }

    pub fn forward(&self, g: &mut Graph, bag: &Bag) -> Result<Forward> {
        match self.arch {
            Architecture::MeanPool { .. } => {
                let (logits, probs) = mean_pool_logits(g, bag, self)?;
                Ok(Forward {
                    logits,
                    probs,
                    trace: ForwardTrace::default(),
                })
            }
            _ => megt_forward(g, bag, self),
        }
    }

    /// Class probabilities of one bag.
    pub fn predict(&self, bag: &Bag) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store);
        let out = self.forward(&mut g, bag)?;
        Ok(g.value(out.probs).data().to_vec())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub low: Option<EgtOutput>,
    pub high: Option<EgtOutput>,
    pub mffm: Vec<MffmTrace>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `1×C`
    pub logits: Var,
    /// `softmax(logits)`
    pub probs: Var,
    pub trace: ForwardTrace,
}

fn check_bag(bag: &Bag, d_in: usize) -> Result<()> {
    if bag.low.rows() == 0 {
        return Err(MegtError::EmptyBag { resolution: "low" });
    }
    if bag.high.rows() == 0 {
        return Err(MegtError::EmptyBag { resolution: "high" });
    }
    for (name, t) in [("low", &bag.low), ("high", &bag.high)] {
        if t.cols() != d_in {
            return Err(MegtError::Data(format!(
                "bag {} has {name} feature width {} but the model expects d_in={d_in}",
                bag.id,
                t.cols()
            )));
        }
    }
    Ok(())
}

pub fn megt_forward(g: &mut Graph, bag: &Bag, model: &MegtModel) -> Result<Forward> {
    check_bag(bag, model.config.d_in)?;
    let settings = model.config.egt_settings();
    match &model.arch {
        Architecture::Dual { low, high, mffm, head } => {
            let x_low = g.constant(bag.low.clone());
            let x_high = g.constant(bag.high.clone());
            let low_out = egt_forward(g, x_low, low, &settings)?;
            let high_out = egt_forward(g, x_high, high, &settings)?;
            let (mut t_low, mut t_high) = (low_out.tokens, high_out.tokens);
            let mut traces = Vec::with_capacity(mffm.len());
            for block in mffm {
                let (l, h, tr) = mffm_block(g, t_low, t_high, block, &settings.attention)?;
                t_low = l;
                t_high = h;
                traces.push(tr);
            }
            let cls_low = g.slice_rows(t_low, 0, 1)?;
            let cls_high = g.slice_rows(t_high, 0, 1)?;
            let z = g.concat_cols(&[cls_low, cls_high])?;
            let logits = head.logits(g, z)?;
            let probs = g.softmax_rows(logits);
            Ok(Forward {
                logits,
                probs,
                trace: ForwardTrace {
                    low: Some(low_out),
                    high: Some(high_out),
                    mffm: traces,
                },
            })
        }
        Architecture::Single {
            resolution,
            branch,
            head,
        } => {
            let features = match resolution {
                Resolution::Low => &bag.low,
                Resolution::High => &bag.high,
            };
            let x = g.constant(features.clone());
            let out = egt_forward(g, x, branch, &settings)?;
            let cls = g.slice_rows(out.tokens, 0, 1)?;
            let logits = head.logits(g, cls)?;
            let probs = g.softmax_rows(logits);
            let mut trace = ForwardTrace::default();
            match resolution {
                Resolution::Low => trace.low = Some(out),
                Resolution::High => trace.high = Some(out),
            }
            Ok(Forward { logits, probs, trace })
        }
        Architecture::MeanPool { .. } => Err(MegtError::Config(
            "megt_forward called on a mean-pool model".into(),
        )),
    }
}

fn mean_pool_logits(g: &mut Graph, bag: &Bag, model: &MegtModel) -> Result<(Var, Var)> {
    let Architecture::MeanPool { fc } = &model.arch else {
        return Err(MegtError::Config("mean_pool_baseline needs a mean-pool model".into()));
    };
    check_bag(bag, model.config.d_in)?;
    let low = g.constant(bag.low.clone());
    let high = g.constant(bag.high.clone());
    let m_low = g.mean_rows(low)?;
    let m_high = g.mean_rows(high)?;
    let z = g.concat_cols(&[m_low, m_high])?;
    let logits = fc.apply(g, z)?;
    Ok((logits, g.softmax_rows(logits)))
}

/// `softmax(W·[mean(low) ‖ mean(high)] + b)`
pub fn mean_pool_baseline(g: &mut Graph, bag: &Bag, model: &MegtModel) -> Result<Var> {
    Ok(mean_pool_logits(g, bag, model)?.1)
}
