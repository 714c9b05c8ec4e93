use std::fs;
use std::io::Write;

use megt::data::{load_manifest, Split};
use megt::metrics::EvalResult;
use megt::model::{evaluate, load_checkpoint};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, EvalArgs};

/// The machine-readable metric record printed by `train` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJson {
    pub accuracy: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub auc: Option<f64>,
    pub n: usize,
}

impl From<&EvalResult> for EvalJson {
    fn from(r: &EvalResult) -> Self {
        EvalJson {
            accuracy: r.accuracy,
            recall_macro: r.recall_macro,
            f1_macro: r.f1_macro,
            auc: r.auc,
            n: r.n(),
        }
    }
}

impl EvalJson {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let split: Split = args.split.parse()?;
    let model = load_checkpoint(&args.checkpoint)?;
    let splits = load_manifest(&args.manifest)?;
    let bags = splits.get(split);
    if bags.is_empty() {
        return Err(CliError::usage(format!("manifest has no {split} bags")));
    }
    let (result, _) = evaluate(&model, bags)?;
    let line = EvalJson::from(&result).to_line();
    writeln!(out, "{line}")?;
    if let Some(path) = &args.out {
        fs::write(path, format!("{line}\n"))
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
