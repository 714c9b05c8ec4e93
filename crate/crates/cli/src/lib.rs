//! Command-line front end for dataset synthesis, training, evaluation,
//! gradient checking and attention export.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or data error, 3 numeric
//! failure.

mod attend;
mod config;
mod eval;
mod gradcheck;
mod synth;
mod train;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use megt::MegtError;

pub use config::{seed_from_env, ModelFlags, RunConfig, PATH_KEYS, SEED_ENV};
pub use eval::EvalJson;
pub use gradcheck::Scope;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CHECK,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<MegtError> for CliError {
    fn from(e: MegtError) -> Self {
        let code = match e {
            MegtError::NonFinite { .. } | MegtError::Oracle { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "megt", version, about = "Multi-scale graph-transformer for multiple-instance classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dual-resolution dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model on the train split, early-stopping on val.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Finite-difference gradient checks on tiny random models.
    Gradcheck(GradcheckArgs),
    /// Export cross-attention weights of every fusion block as CSV.
    Attend(AttendArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// witness or cross-scale
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub bags: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Falls back to MEGT_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_low_min: Option<usize>,
    #[arg(long)]
    pub n_low_max: Option<usize>,
    #[arg(long)]
    pub children_per_low: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub signal_strength: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub witness_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value file; keys are model config fields plus manifest, out,
    /// checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to OUT/model.megm.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Generic override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val or test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::All)]
    pub scope: Scope,
    /// Falls back to MEGT_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampled coordinates per scope.
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Scales the backward rule of the named tape op.
    #[arg(long, hide = true)]
    pub corrupt_rule: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bag: PathBuf,
    /// Directory for the CSV files.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one command, writing its primary output to `out`; returns the exit
/// code after reporting any error on stderr.
pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Synth(a) => synth::cmd_synth(&a, out),
        Command::Train(a) => train::cmd_train(&a, out),
        Command::Eval(a) => eval::cmd_eval(&a, out),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(&a, out),
        Command::Attend(a) => attend::cmd_attend(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
