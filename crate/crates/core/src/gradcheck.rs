//! Finite-difference verification of tape gradients with respect to every
//! parameter in a store.

use rand::seq::index::sample;

use crate::error::{MegtError, Result};
use crate::numerics::{relative_error, Graph, RngState, Var};
use crate::params::{ParamId, ParamStore};

/// Which parameter coordinates get probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// At most this many evenly spaced coordinates per tensor.
    PerTensor(usize),
    /// This many coordinates drawn without replacement over the whole store.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub sampling: Sampling,
    /// Only parameters whose name starts with one of these prefixes; empty
    /// means all.
    pub filter: Vec<String>,
    /// Deliberately broken backward rule: `(op name, factor)`.
    pub fault: Option<(&'static str, f64)>,
    /// Steps retried, in order, for a coordinate whose error at `step`
    /// exceeds `retry_above`; the smallest error found is kept.
    pub retry_steps: Vec<f64>,
    pub retry_above: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            sampling: Sampling::All,
            filter: Vec::new(),
            fault: None,
            retry_steps: Vec::new(),
            retry_above: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords: usize,
    /// Coordinates that only met `retry_above` at a retry step.
    pub retried: usize,
    /// Whether any probed coordinate had a nonzero analytic gradient.
    pub nonzero: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn coords(&self) -> usize {
        self.params.iter().map(|p| p.coords).sum()
    }

    pub fn retried(&self) -> usize {
        self.params.iter().map(|p| p.retried).sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

fn plan(store: &ParamStore, opts: &GradCheckOptions) -> Vec<(ParamId, Vec<usize>)> {
    let ids: Vec<ParamId> = store
        .ids()
        .filter(|&id| opts.filter.is_empty() || opts.filter.iter().any(|f| store.name(id).starts_with(f.as_str())))
        .collect();
    match opts.sampling {
        Sampling::All => ids.iter().map(|&id| (id, (0..store.get(id).len()).collect())).collect(),
        Sampling::PerTensor(m) => ids
            .iter()
            .map(|&id| {
                let len = store.get(id).len();
                let idx = if m == 0 || m >= len {
                    (0..len).collect()
                } else {
                    let stride = len as f64 / m as f64;
                    (0..m).map(|i| (i as f64 * stride) as usize).collect()
                };
                (id, idx)
            })
            .collect(),
        Sampling::Random { count, seed } => {
            let offsets: Vec<usize> = ids
                .iter()
                .scan(0, |acc, &id| {
                    let start = *acc;
                    *acc += store.get(id).len();
                    Some(start)
                })
                .collect();
            let total: usize = ids.iter().map(|&id| store.get(id).len()).sum();
            let mut rng = RngState::new(seed).child("gradcheck");
            let mut picks = sample(rng.stream(), total, count.min(total)).into_vec();
            picks.sort_unstable();
            let mut out: Vec<(ParamId, Vec<usize>)> = ids.iter().map(|&id| (id, Vec::new())).collect();
            for p in picks {
                let t = offsets.partition_point(|&o| o <= p) - 1;
                out[t].1.push(p - offsets[t]);
            }
            out.retain(|(_, idx)| !idx.is_empty());
            out
        }
    }
}

/// `build` must construct a scalar loss on the given graph, pulling
/// parameters through `Graph::param`.
pub fn check_param_grads<F>(store: &ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store);
        if let Some((op, factor)) = opts.fault {
            g.inject_backward_fault(op, factor);
        }
        let loss = build(&mut g)?;
        g.backward(loss)?
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for (id, indices) in plan(store, opts) {
        let analytic = grads.param(id);
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            coords: 0,
            retried: 0,
            nonzero: false,
        };
        for i in indices {
            let orig = store.get(id).data()[i];
            let mut central = |h: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[i] = orig + h;
                let plus = eval(&probe)?;
                probe.get_mut(id).data_mut()[i] = orig - h;
                let minus = eval(&probe)?;
                probe.get_mut(id).data_mut()[i] = orig;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(MegtError::Oracle { index: i });
                }
                Ok((plus - minus) / (2.0 * h))
            };
            let a = analytic.map_or(0.0, |g| g[i]);
            let mut numeric = central(opts.step)?;
            let mut rel = relative_error(a, numeric);
            if rel > opts.retry_above {
                for &h in &opts.retry_steps {
                    let n = central(h)?;
                    let r = relative_error(a, n);
                    if r < rel {
                        rel = r;
                        numeric = n;
                    }
                    if rel <= opts.retry_above {
                        check.retried += 1;
                        break;
                    }
                }
            }
            check.nonzero |= a != 0.0;
            let rel = relative_error(a, numeric);
            if check.coords == 0 || rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = i;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
            check.coords += 1;
        }
        report.params.push(check);
    }
    Ok(report)
}
