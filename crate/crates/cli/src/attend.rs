use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use megt::data::read_bag;
use megt::model::{load_checkpoint, Architecture, Resolution};
use megt::Graph;

use crate::{AttendArgs, CliError, CliResult};

pub const CSV_HEADER: &str = "token_index,resolution,raw_weight,minmax_normalized_weight";

/// Maps the row minimum to 0 and the maximum to 1; a constant row maps to 0.
pub fn minmax_normalize(row: &[f64]) -> Vec<f64> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    row.iter()
        .map(|&w| if span > 0.0 { (w - lo) / span } else { 0.0 })
        .collect()
}

/// Token 0 is the querying class token; the rest are the opposite branch's
/// patch tokens in post-pruning order.
pub fn attention_csv(row: &[f64], query: Resolution, other: Resolution) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (i, (w, n)) in row.iter().zip(minmax_normalize(row)).enumerate() {
        let res = if i == 0 { query } else { other };
        writeln!(s, "{i},{},{w},{n}", res.as_str()).expect("string write");
    }
    s
}

pub fn csv_name(block: usize, query: Resolution, other: Resolution) -> String {
    format!("mffm{block}_{}_queries_{}.csv", query.as_str(), other.as_str())
}

pub fn cmd_attend(args: &AttendArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    if !matches!(model.arch, Architecture::Dual { .. }) {
        return Err(CliError::usage(
            "attention export needs a dual-branch model (branches=dual, model=megt)",
        ));
    }
    let bag = read_bag(&args.bag)?;
    let mut g = Graph::with_params(&model.store);
    let forward = model.forward(&mut g, &bag)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", args.out.display())))?;
    for (b, trace) in forward.trace.mffm.iter().enumerate() {
        for (weights, query, other) in [
            (trace.low_queries_high, Resolution::Low, Resolution::High),
            (trace.high_queries_low, Resolution::High, Resolution::Low),
        ] {
            let path: PathBuf = args.out.join(csv_name(b, query, other));
            fs::write(&path, attention_csv(g.value(weights).data(), query, other))
                .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
            writeln!(out, "{}", path.display())?;
        }
    }
    Ok(())
}
