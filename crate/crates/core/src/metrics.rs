//! Evaluation metrics for graded predictions: accuracy, adjacent accuracy,
//! support-weighted precision/recall/F1, and quadratic weighted kappa.

use serde::{Deserialize, Serialize};

/// All metrics of one prediction set, with the confusion matrix they were
/// derived from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub adj_acc: f64,
    pub f1_weighted: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub qwk: f64,
    /// `confusion[t][p]` counts true grade `t+1` predicted as `p+1`.
    pub confusion: Vec<Vec<usize>>,
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], truths: &[usize]) -> f64 {
    assert_eq!(preds.len(), truths.len());
    assert!(!preds.is_empty());
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    hits as f64 / preds.len() as f64
}

/// Fraction of predictions within one grade of the truth.
pub fn adjacent_accuracy(preds: &[usize], truths: &[usize]) -> f64 {
    assert_eq!(preds.len(), truths.len());
    assert!(!preds.is_empty());
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(&p, &t)| p.abs_diff(t) <= 1)
        .count();
    hits as f64 / preds.len() as f64
}

/// Confusion matrix with `confusion[t][p]` counting true grade `t+1`
/// predicted as grade `p+1`.
pub fn confusion_matrix(preds: &[usize], truths: &[usize], y: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; y]; y];
    for (&p, &t) in preds.iter().zip(truths) {
        assert!(p >= 1 && p <= y, "prediction {p} outside 1..={y}");
        assert!(t >= 1 && t <= y, "truth {t} outside 1..={y}");
        m[t - 1][p - 1] += 1;
    }
    m
}

/// Per-class precision/recall/F1 weighted by true-class support.
/// Zero-division (a class never predicted, or with zero support) contributes
/// 0 for that class.
pub fn weighted_prf(preds: &[usize], truths: &[usize], y: usize) -> (f64, f64, f64) {
    let m = confusion_matrix(preds, truths, y);
    let n = preds.len() as f64;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    for c in 0..y {
        let tp = m[c][c] as f64;
        let support: f64 = m[c].iter().sum::<usize>() as f64;
        let predicted: f64 = (0..y).map(|t| m[t][c]).sum::<usize>() as f64;
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        p_sum += prec * support;
        r_sum += rec * support;
        f_sum += f1 * support;
    }
    (p_sum / n, r_sum / n, f_sum / n)
}

/// Quadratic weighted kappa: `1 − Σ w·O / Σ w·E` with weights
/// `w_ij = (i−j)²/(Y−1)²`, observed confusion `O`, and expected confusion
/// `E` from the outer product of the marginals (normalized to the same
/// total). Zero expected disagreement with perfect predictions is defined
/// as 1.
pub fn qwk(preds: &[usize], truths: &[usize], y: usize) -> f64 {
    let m = confusion_matrix(preds, truths, y);
    let n: usize = preds.len();
    let mut truth_marginal = vec![0.0; y];
    let mut pred_marginal = vec![0.0; y];
    for t in 0..y {
        for p in 0..y {
            truth_marginal[t] += m[t][p] as f64;
            pred_marginal[p] += m[t][p] as f64;
        }
    }
    let denom_w = if y > 1 { ((y - 1) * (y - 1)) as f64 } else { 1.0 };
    let weight = |i: usize, j: usize| ((i as f64 - j as f64).powi(2)) / denom_w;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..y {
        for p in 0..y {
            let w = weight(t, p);
            num += w * m[t][p] as f64;
            den += w * truth_marginal[t] * pred_marginal[p] / n as f64;
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - num / den
}

/// Compute the full report.
pub fn evaluate(preds: &[usize], truths: &[usize], y: usize) -> EvalReport {
    let (p, r, f1) = weighted_prf(preds, truths, y);
    EvalReport {
        acc: accuracy(preds, truths),
        adj_acc: adjacent_accuracy(preds, truths),
        f1_weighted: f1,
        precision_weighted: p,
        recall_weighted: r,
        qwk: qwk(preds, truths, y),
        confusion: confusion_matrix(preds, truths, y),
    }
}
