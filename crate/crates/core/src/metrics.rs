//! Accuracy, macro recall, macro F1 and rank-based AUC.

use serde::{Deserialize, Serialize};

use crate::error::{MegtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// Binary tasks only.
    pub auc: Option<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl EvalResult {
    pub fn n(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Classes with zero support contribute recall 0 and F1 0 to the macro
/// means.
pub fn confusion_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<EvalResult> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(MegtError::Data(format!(
            "need equal non-empty prediction and label lists, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= n_classes || p >= n_classes {
            return Err(MegtError::Data(format!(
                "class index out of range: label {y}, prediction {p}, classes {n_classes}"
            )));
        }
        confusion[y][p] += 1;
    }
    let total = labels.len() as f64;
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        recall_sum += recall;
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / total,
        recall_macro: recall_sum / n_classes as f64,
        f1_macro: f1_sum / n_classes as f64,
        auc: None,
        confusion,
    })
}

/// Mann–Whitney AUC with midranks for ties.
pub fn auc_rank(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MegtError::Data("scores and labels differ in length".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(MegtError::Data(format!("AUC needs binary labels, found {bad}")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MegtError::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks doubled so that midranks stay integral.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank_x2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_x2 += midrank_x2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// Argmax predictions (lower class on ties) and, for two classes, the AUC
/// of the class-1 probability.
pub fn evaluate_probabilities(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<EvalResult> {
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let mut result = confusion_metrics(&predictions, labels, n_classes)?;
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        result.auc = match auc_rank(&scores, labels) {
            Ok(a) => Some(a),
            Err(MegtError::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(result)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
