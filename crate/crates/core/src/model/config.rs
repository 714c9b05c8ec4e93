use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionKind, NystromConfig};
use crate::egt::{AttentionSetup, EgtSettings};
use crate::error::{MegtError, Result};

/// Which resolutions feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    /// Both branches fused by cross-attention blocks.
    Dual,
    /// One standalone branch; the classifier reads its class token.
    Low,
    High,
}

impl FromStr for Branches {
    type Err = MegtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Branches::Dual),
            "low" => Ok(Branches::Low),
            "high" => Ok(Branches::High),
            other => Err(MegtError::Config(format!("unknown branches {other:?}"))),
        }
    }
}

impl fmt::Display for Branches {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branches::Dual => "dual",
            Branches::Low => "low",
            Branches::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Megt,
    /// Per-resolution feature means into a linear classifier.
    MeanPool,
}

impl FromStr for ModelKind {
    type Err = MegtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "megt" => Ok(ModelKind::Megt),
            "mean_pool" | "mean-pool" => Ok(ModelKind::MeanPool),
            other => Err(MegtError::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Megt => "megt",
            ModelKind::MeanPool => "mean_pool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub k_keep: usize,
    pub m_landmarks: usize,
    pub pinv_iters: usize,
    pub l_low: usize,
    pub l_high: usize,
    pub k_mffm: usize,
    pub n_classes: usize,
    pub mlp_ratio: usize,
    pub enable_tpm: bool,
    pub enable_gtl: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub attention: AttentionKind,
    pub branches: Branches,
    pub model: ModelKind,
    /// Encoder layers in each of a branch's two encoders.
    pub egt_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 64,
            d_model: 128,
            n_heads: 8,
            k_keep: 128,
            m_landmarks: 32,
            pinv_iters: NystromConfig::default().pinv_iters,
            l_low: 1,
            l_high: 2,
            k_mffm: 2,
            n_classes: 2,
            mlp_ratio: 4,
            enable_tpm: true,
            enable_gtl: true,
            lr: 1e-4,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            max_epochs: 150,
            patience: 30,
            seed: 0,
            attention: AttentionKind::Nystrom,
            branches: Branches::Dual,
            model: ModelKind::Megt,
            egt_depth: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MegtError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(MegtError::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 24] = [
        "d_in",
        "d_model",
        "n_heads",
        "k_keep",
        "m_landmarks",
        "pinv_iters",
        "l_low",
        "l_high",
        "k_mffm",
        "n_classes",
        "mlp_ratio",
        "enable_tpm",
        "enable_gtl",
        "lr",
        "weight_decay",
        "adam_beta1",
        "adam_beta2",
        "max_epochs",
        "patience",
        "seed",
        "attention",
        "branches",
        "model",
        "egt_depth",
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_in" => self.d_in = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "k_keep" => self.k_keep = parse(key, value)?,
            "m_landmarks" => self.m_landmarks = parse(key, value)?,
            "pinv_iters" => self.pinv_iters = parse(key, value)?,
            "l_low" => self.l_low = parse(key, value)?,
            "l_high" => self.l_high = parse(key, value)?,
            "k_mffm" => self.k_mffm = parse(key, value)?,
            "n_classes" => self.n_classes = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "enable_tpm" => self.enable_tpm = parse_bool(key, value)?,
            "enable_gtl" => self.enable_gtl = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "attention" => self.attention = value.trim().parse()?,
            "branches" => self.branches = value.trim().parse()?,
            "model" => self.model = value.trim().parse()?,
            "egt_depth" => self.egt_depth = parse(key, value)?,
            other => return Err(MegtError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d_in" => self.d_in.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "k_keep" => self.k_keep.to_string(),
            "m_landmarks" => self.m_landmarks.to_string(),
            "pinv_iters" => self.pinv_iters.to_string(),
            "l_low" => self.l_low.to_string(),
            "l_high" => self.l_high.to_string(),
            "k_mffm" => self.k_mffm.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "mlp_ratio" => self.mlp_ratio.to_string(),
            "enable_tpm" => self.enable_tpm.to_string(),
            "enable_gtl" => self.enable_gtl.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "attention" => self.attention.to_string(),
            "branches" => self.branches.to_string(),
            "model" => self.model.to_string(),
            "egt_depth" => self.egt_depth.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines; `#` starts a comment line. Unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values without
    /// validating.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MegtError::Config(format!("config line {}: expected key=value", i + 1)))?;
            self.set(key.trim(), value).map_err(|e| match e {
                MegtError::Config(m) => MegtError::Config(format!("config line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(MegtError::Config(m.to_string()));
        if self.d_in == 0 || self.d_model == 0 {
            return fail("d_in and d_model must be positive");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(MegtError::Config(format!(
                "n_heads={} does not divide d_model={}",
                self.n_heads, self.d_model
            )));
        }
        if self.k_mffm < 1 {
            return fail("k_mffm must be at least 1");
        }
        if self.n_classes < 2 {
            return fail("n_classes must be at least 2");
        }
        if self.n_classes > 256 {
            return fail("n_classes must fit in a byte");
        }
        if self.k_keep < 1 {
            return fail("k_keep must be at least 1");
        }
        if self.m_landmarks < 1 || self.pinv_iters < 1 {
            return fail("m_landmarks and pinv_iters must be at least 1");
        }
        if self.mlp_ratio < 1 || self.egt_depth < 1 {
            return fail("mlp_ratio and egt_depth must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("lr and weight_decay must be finite and non-negative");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return fail("adam betas must lie in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn egt_settings(&self) -> EgtSettings {
        EgtSettings {
            attention: self.attention_setup(),
            k_keep: self.k_keep,
            enable_tpm: self.enable_tpm,
            enable_gtl: self.enable_gtl,
        }
    }

    pub fn attention_setup(&self) -> AttentionSetup {
        AttentionSetup {
            kind: self.attention,
            nystrom: NystromConfig {
                m_landmarks: self.m_landmarks,
                pinv_iters: self.pinv_iters,
            },
        }
    }
}
