use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::MegtModel;
use crate::data::Bag;
use crate::error::{MegtError, Result};
use crate::metrics::{evaluate_probabilities, EvalResult};
use crate::numerics::{Gradients, Graph, RngState, Tensor, Var};
use crate::params::ParamStore;

/// `−(1/M) Σᵢ log p[i, yᵢ]`
pub fn cross_entropy_loss(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    g.nll(probs, labels)
}

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn from_model(cfg: &ModelConfig) -> Self {
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: ADAM_EPS,
            weight_decay: cfg.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters the loss did not reach get a
/// zero gradient (weight decay still applies).
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let grad = grads.param(id);
        let w = store.get_mut(id).data_mut();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for k in 0..w.len() {
            let g = grad.map_or(0.0, |g| g[k]) + cfg.weight_decay * w[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            w[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean loss and metrics over `bags`, accumulated in list order.
pub fn evaluate(model: &MegtModel, bags: &[Bag]) -> Result<(EvalResult, f64)> {
    if bags.is_empty() {
        return Err(MegtError::Config("cannot evaluate an empty split".into()));
    }
    let mut probs = Vec::with_capacity(bags.len());
    let mut labels = Vec::with_capacity(bags.len());
    let mut loss = 0.0;
    for bag in bags {
        let p = model.predict(bag)?;
        if bag.label >= p.len() {
            return Err(MegtError::Data(format!(
                "bag {} has label {} but the model has {} classes",
                bag.id,
                bag.label,
                p.len()
            )));
        }
        loss -= p[bag.label].ln();
        labels.push(bag.label);
        probs.push(p);
    }
    let result = evaluate_probabilities(&probs, &labels, model.config.n_classes)?;
    Ok((result, loss / bags.len() as f64))
}

fn train_step(model: &mut MegtModel, bag: &Bag, state: &mut AdamState, adam: &AdamConfig) -> Result<f64> {
    let mut g = Graph::with_params(&model.store);
    let out = model.forward(&mut g, bag)?;
    let loss = cross_entropy_loss(&mut g, out.probs, &[bag.label])?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    drop(g);
    adam_step(&mut model.store, &grads, state, adam);
    Ok(value)
}

pub fn fit(model: &MegtModel, train: &[Bag], val: &[Bag]) -> Result<(MegtModel, History)> {
    fit_with(model, train, val, |_| {})
}

/// Batch size one, per-epoch shuffle from the seeded stream, early stopping
/// on validation loss with the best epoch's weights restored.
pub fn fit_with<F>(model: &MegtModel, train: &[Bag], val: &[Bag], mut on_epoch: F) -> Result<(MegtModel, History)>
where
    F: FnMut(&EpochRecord),
{
    if train.is_empty() || val.is_empty() {
        return Err(MegtError::Config(format!(
            "training needs non-empty splits (train={}, val={})",
            train.len(),
            val.len()
        )));
    }
    let cfg = model.config.clone();
    let adam = AdamConfig::from_model(&cfg);
    let mut current = model.clone();
    let mut best = model.store.clone();
    let mut state = AdamState::new(&current.store);
    let mut shuffle = RngState::new(cfg.seed).child("shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut wait = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(shuffle.stream());
        let mut losses = vec![0.0; train.len()];
        for &i in &order {
            let loss = train_step(&mut current, &train[i], &mut state, &adam)?;
            if !loss.is_finite() {
                return Err(MegtError::NonFinite { epoch });
            }
            losses[i] = loss;
        }
        let train_loss = losses.iter().sum::<f64>() / train.len() as f64;
        let (metrics, val_loss) = evaluate(&current, val)?;
        if !val_loss.is_finite() {
            return Err(MegtError::NonFinite { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: metrics.accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.6} val_loss={val_loss:.6} val_acc={:.4}",
            metrics.accuracy
        );
        on_epoch(&record);
        history.epochs.push(record);

        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best.copy_values_from(&current.store)?;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    current.store.copy_values_from(&best)?;
    current.store.clear_grads();
    Ok((current, history))
}
