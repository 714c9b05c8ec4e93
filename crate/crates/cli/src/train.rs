use std::fs;
use std::io::Write;
use std::path::PathBuf;

use megt::data::{load_manifest, Bag, Splits};
use megt::model::{evaluate, fit, save_checkpoint};
use megt::MegtModel;

use crate::config::RunConfig;
use crate::eval::EvalJson;
use crate::{CliError, CliResult, TrainArgs};

pub const CHECKPOINT_NAME: &str = "model.megm";
pub const HISTORY_NAME: &str = "history.json";

/// Defaults, then the config file, then `--set`, then dedicated flags, then
/// `MEGT_SEED` for an unset seed.
pub fn resolve(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut rc = RunConfig::new();
    if let Some(path) = &args.config {
        rc.apply_file(path)?;
    }
    for s in &args.set {
        rc.apply_assignment(s)?;
    }
    if let Some(p) = &args.manifest {
        rc.manifest = Some(p.clone());
    }
    if let Some(p) = &args.out {
        rc.out = Some(p.clone());
    }
    if let Some(p) = &args.checkpoint {
        rc.checkpoint = Some(p.clone());
    }
    rc.apply_flags(&args.model)?;
    rc.apply_seed_env()?;
    Ok(rc)
}

fn all_bags(splits: &Splits) -> impl Iterator<Item = &Bag> {
    splits.train.iter().chain(&splits.val).chain(&splits.test)
}

/// Fills `d_in` and `n_classes` from the data unless set explicitly.
fn infer_from_data(rc: &mut RunConfig, splits: &Splits) {
    if !rc.is_set("d_in") {
        if let Some(bag) = splits.train.first() {
            rc.model.d_in = bag.d();
        }
    }
    if !rc.is_set("n_classes") {
        let max_label = all_bags(splits).map(|b| b.label).max().unwrap_or(0);
        rc.model.n_classes = (max_label + 1).max(2);
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut rc = resolve(args)?;
    let manifest = rc
        .manifest
        .clone()
        .ok_or_else(|| CliError::usage("no manifest given (--manifest or manifest= in --config)"))?;
    let out_dir = rc
        .out
        .clone()
        .ok_or_else(|| CliError::usage("no output directory given (--out or out= in --config)"))?;
    let splits = load_manifest(&manifest)?;
    for (name, bags) in [("train", &splits.train), ("val", &splits.val)] {
        if bags.is_empty() {
            return Err(CliError::usage(format!("the {name} split is empty")));
        }
    }
    infer_from_data(&mut rc, &splits);
    let model = MegtModel::new(rc.model.clone())?;
    log::info!(
        "training on {} bags, validating on {}, {} parameters",
        splits.train.len(),
        splits.val.len(),
        model.store.scalar_count()
    );
    let (trained, history) = fit(&model, &splits.train, &splits.val)?;

    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", out_dir.display())))?;
    let checkpoint: PathBuf = rc.checkpoint.clone().unwrap_or_else(|| out_dir.join(CHECKPOINT_NAME));
    save_checkpoint(&trained, &checkpoint)?;
    let history_path = out_dir.join(HISTORY_NAME);
    let json = serde_json::to_string_pretty(&history).expect("history serializes");
    fs::write(&history_path, json + "\n")
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", history_path.display())))?;

    let (val, _) = evaluate(&trained, &splits.val)?;
    writeln!(out, "{}", EvalJson::from(&val).to_line())?;
    log::info!(
        "best epoch {} of {}; checkpoint {}",
        history.best_epoch,
        history.epochs.len(),
        checkpoint.display()
    );
    Ok(())
}
