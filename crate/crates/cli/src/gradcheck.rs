use std::io::Write;
use std::time::Instant;

use clap::ValueEnum;
use megt::gradcheck::{check_param_grads, GradCheckOptions, GradCheckReport, Sampling};
use megt::model::{cross_entropy_loss, megt_forward};
use megt::numerics::uniform;
use megt::{Bag, MegtModel, ModelConfig, RngState};

use crate::config::seed_from_env;
use crate::{CliError, CliResult, GradcheckArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    All,
    /// Self-attention and cross-attention projections.
    Attention,
    /// Both branches: class tokens, input projections, encoders, GTL.
    Egt,
    /// Graph-transformer layer weights only.
    Gtl,
    /// Fusion block encoders and cross-attention.
    Mffm,
    /// Every parameter, classifier head included.
    Model,
}

impl Scope {
    pub const LEAVES: [Scope; 5] = [Scope::Attention, Scope::Egt, Scope::Gtl, Scope::Mffm, Scope::Model];

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Attention => "attention",
            Scope::Egt => "egt",
            Scope::Gtl => "gtl",
            Scope::Mffm => "mffm",
            Scope::Model => "model",
        }
    }

    pub fn covers(self, param: &str) -> bool {
        match self {
            Scope::All | Scope::Model => true,
            Scope::Attention => param.contains(".attn.") || param.contains(".ca_"),
            Scope::Egt => param.starts_with("low.") || param.starts_with("high."),
            Scope::Gtl => param.contains(".gtl."),
            Scope::Mffm => param.starts_with("mffm"),
        }
    }

    fn leaves(self) -> Vec<Scope> {
        match self {
            Scope::All => Self::LEAVES.to_vec(),
            s => vec![s],
        }
    }
}

/// Two fusion blocks, pruning and the GTL all active on 8 tokens per
/// resolution, with the truncated pseudoinverse used for training.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_in: 6,
        d_model: 16,
        n_heads: 2,
        k_keep: 4,
        m_landmarks: 4,
        pinv_iters: 6,
        seed,
        ..ModelConfig::default()
    }
}

pub fn tiny_bag(seed: u64, d: usize) -> Bag {
    let rng = RngState::new(seed).child("gradcheck-bag");
    let low = uniform(8, d, -1.0, 1.0, &mut rng.child("low"));
    let high = uniform(8, d, -1.0, 1.0, &mut rng.child("high"));
    Bag::new("gradcheck", 1, low, high).expect("non-empty bag")
}

/// Retried when the default step misses: the smaller ones for coordinates
/// within a step of a ReLU or max switch, the larger one for gradients small
/// enough that round-off dominates.
pub const RETRY_STEPS: [f64; 3] = [1e-6, 1e-7, 1e-4];

/// One coordinate of every tensor in scope plus `coords` random ones.
pub fn check_scope(
    model: &MegtModel,
    bag: &Bag,
    scope: Scope,
    coords: usize,
    seed: u64,
    tol: f64,
    fault: Option<(&'static str, f64)>,
) -> CliResult<GradCheckReport> {
    let filter: Vec<String> = model
        .store
        .iter()
        .map(|(_, name, _)| name)
        .filter(|n| scope.covers(n))
        .map(|n| n.to_string())
        .collect();
    if filter.is_empty() {
        return Err(CliError::usage(format!("scope {} has no parameters", scope.name())));
    }
    let build = |g: &mut megt::Graph| {
        let out = megt_forward(g, bag, model)?;
        cross_entropy_loss(g, out.probs, &[bag.label])
    };
    let mut report = GradCheckReport::default();
    for sampling in [Sampling::PerTensor(1), Sampling::Random { count: coords, seed }] {
        let opts = GradCheckOptions {
            sampling,
            filter: filter.clone(),
            fault,
            retry_steps: RETRY_STEPS.to_vec(),
            retry_above: tol,
            ..GradCheckOptions::default()
        };
        report.params.extend(check_param_grads(&model.store, build, &opts)?.params);
    }
    Ok(report)
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    };
    let fault = args
        .corrupt_rule
        .as_ref()
        .map(|op| (&*Box::leak(op.clone().into_boxed_str()), 1.5));
    let model = MegtModel::new(tiny_config(seed))?;
    let bag = tiny_bag(seed, model.config.d_in);
    let mut failures = Vec::new();
    for scope in args.scope.leaves() {
        let start = Instant::now();
        let report = check_scope(&model, &bag, scope, args.coords, seed, args.tol, fault)?;
        let tensors = {
            let mut names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            names.len()
        };
        let worst = report.worst().expect("scope has parameters");
        writeln!(
            out,
            "scope={} tensors={tensors} coords={} retried={} worst_rel_err={:.3e} at {}[{}] ({:.2}s)",
            scope.name(),
            report.coords(),
            report.retried(),
            worst.max_rel_err,
            worst.name,
            worst.worst_index,
            start.elapsed().as_secs_f64()
        )?;
        for p in report.params.iter().filter(|p| p.max_rel_err > args.tol) {
            writeln!(
                out,
                "  FAIL {}[{}] analytic={:e} numeric={:e} rel_err={:.3e}",
                p.name, p.worst_index, p.worst_analytic, p.worst_numeric, p.max_rel_err
            )?;
            failures.push(p.name.clone());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        failures.sort_unstable();
        failures.dedup();
        Err(CliError::check(format!(
            "gradient check failed for {} parameter(s), first {}",
            failures.len(),
            failures[0]
        )))
    }
}
