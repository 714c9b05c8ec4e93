use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use megt::{MegtError, ModelConfig, Result};

pub const SEED_ENV: &str = "MEGT_SEED";

/// Keys accepted by a run config in addition to the model config fields.
pub const PATH_KEYS: [&str; 3] = ["manifest", "out", "checkpoint"];

/// `MEGT_SEED`, if set; a malformed value is an error.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| MegtError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// One flag per model config field, named after it with dashes.
#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub d_in: Option<String>,
    #[arg(long)]
    pub d_model: Option<String>,
    #[arg(long)]
    pub n_heads: Option<String>,
    #[arg(long)]
    pub k_keep: Option<String>,
    #[arg(long)]
    pub m_landmarks: Option<String>,
    #[arg(long)]
    pub pinv_iters: Option<String>,
    #[arg(long)]
    pub l_low: Option<String>,
    #[arg(long)]
    pub l_high: Option<String>,
    #[arg(long)]
    pub k_mffm: Option<String>,
    #[arg(long)]
    pub n_classes: Option<String>,
    #[arg(long)]
    pub mlp_ratio: Option<String>,
    #[arg(long)]
    pub enable_tpm: Option<String>,
    #[arg(long)]
    pub enable_gtl: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<String>,
    #[arg(long)]
    pub adam_beta2: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long)]
    pub branches: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub egt_depth: Option<String>,
}

impl ModelFlags {
    pub fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("d_in", &self.d_in),
            ("d_model", &self.d_model),
            ("n_heads", &self.n_heads),
            ("k_keep", &self.k_keep),
            ("m_landmarks", &self.m_landmarks),
            ("pinv_iters", &self.pinv_iters),
            ("l_low", &self.l_low),
            ("l_high", &self.l_high),
            ("k_mffm", &self.k_mffm),
            ("n_classes", &self.n_classes),
            ("mlp_ratio", &self.mlp_ratio),
            ("enable_tpm", &self.enable_tpm),
            ("enable_gtl", &self.enable_gtl),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("attention", &self.attention),
            ("branches", &self.branches),
            ("model", &self.model),
            ("egt_depth", &self.egt_depth),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

/// Model config plus data and output paths. Later sources override earlier
/// ones: defaults, config file, flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_key(key: &str) -> bool {
        ModelConfig::is_key(key) || PATH_KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            _ if ModelConfig::is_key(key) => self.model.set(key, value)?,
            _ => return Err(MegtError::Config(format!("unknown config key {key:?}"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Whether a file or flag set this key.
    pub fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// `key=value` lines; `#` lines and blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
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

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| MegtError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// `KEY=VALUE` as given to `--set`.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| MegtError::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
        self.set(key.trim(), value)
    }

    pub fn apply_flags(&mut self, flags: &ModelFlags) -> Result<()> {
        for (key, value) in flags.pairs() {
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies `MEGT_SEED` when nothing else set the seed.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if !self.is_set("seed") {
            if let Some(seed) = seed_from_env()? {
                self.model.seed = seed;
                self.explicit.insert("seed".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut rc = RunConfig::new();
        rc.apply_text("# comment\nlr=0.01\nmanifest = data/m.tsv\nenable_gtl=false\n")
            .unwrap();
        let flags = ModelFlags {
            lr: Some("0.5".into()),
            ..ModelFlags::default()
        };
        rc.apply_flags(&flags).unwrap();
        assert_eq!(rc.model.lr, 0.5);
        assert!(!rc.model.enable_gtl);
        assert_eq!(rc.manifest, Some(PathBuf::from("data/m.tsv")));
        assert!(rc.is_set("lr") && rc.is_set("manifest") && !rc.is_set("d_in"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::new().apply_text("lr=0.1\nlearning_rate=0.1\n").unwrap_err();
        assert!(matches!(err, MegtError::Config(ref m) if m.contains("line 2") && m.contains("learning_rate")));
        assert!(RunConfig::new().apply_assignment("bogus=1").is_err());
        assert!(RunConfig::new().apply_assignment("lr").is_err());
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(RunConfig::new().apply_text("enable_tpm=maybe\n").is_err());
        assert!(RunConfig::new().apply_text("d_model=-3\n").is_err());
    }

    #[test]
    fn every_model_key_has_a_flag() {
        let mut flags = ModelFlags::default();
        flags.d_in = Some("1".into());
        assert_eq!(flags.pairs(), vec![("d_in", "1")]);
        let names: Vec<&str> = ModelFlags {
            d_in: Some(String::new()),
            d_model: Some(String::new()),
            n_heads: Some(String::new()),
            k_keep: Some(String::new()),
            m_landmarks: Some(String::new()),
            pinv_iters: Some(String::new()),
            l_low: Some(String::new()),
            l_high: Some(String::new()),
            k_mffm: Some(String::new()),
            n_classes: Some(String::new()),
            mlp_ratio: Some(String::new()),
            enable_tpm: Some(String::new()),
            enable_gtl: Some(String::new()),
            lr: Some(String::new()),
            weight_decay: Some(String::new()),
            adam_beta1: Some(String::new()),
            adam_beta2: Some(String::new()),
            max_epochs: Some(String::new()),
            patience: Some(String::new()),
            seed: Some(String::new()),
            attention: Some(String::new()),
            branches: Some(String::new()),
            model: Some(String::new()),
            egt_depth: Some(String::new()),
        }
        .pairs()
        .into_iter()
        .map(|(k, _)| k)
        .collect();
        assert_eq!(names, ModelConfig::KEYS.to_vec());
    }
}
