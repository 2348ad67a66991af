//! Classification metrics: accuracy, precision, recall, F1 and ROC AUC.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub auc: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from true labels and per-class probabilities.
///
/// For two classes, class 1 is the positive class and its probability is the
/// ranking score. With more classes precision, recall, F1 and AUC are
/// macro-averaged one-vs-rest.
pub fn classification_metrics(labels: &[usize], probs: &[Vec<f64>]) -> Metrics {
    assert_eq!(labels.len(), probs.len());
    let n_classes = probs.first().map_or(2, Vec::len).max(2);
    let preds: Vec<usize> = probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
    let acc = ratio(correct, labels.len());

    let positives: Vec<usize> = if n_classes == 2 {
        vec![1]
    } else {
        (0..n_classes).collect()
    };
    let (mut pre, mut rec, mut f1, mut auc) = (0.0, 0.0, 0.0, 0.0);
    for &c in &positives {
        let tp = labels
            .iter()
            .zip(&preds)
            .filter(|&(&y, &p)| y == c && p == c)
            .count();
        let fp = labels
            .iter()
            .zip(&preds)
            .filter(|&(&y, &p)| y != c && p == c)
            .count();
        let fn_ = labels
            .iter()
            .zip(&preds)
            .filter(|&(&y, &p)| y == c && p != c)
            .count();
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        pre += p;
        rec += r;
        f1 += if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        let scores: Vec<f64> = probs.iter().map(|pr| pr[c]).collect();
        let is_pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        auc += auc_rank(&scores, &is_pos);
    }
    let k = positives.len() as f64;
    Metrics {
        acc,
        pre: pre / k,
        rec: rec / k,
        f1: f1 / k,
        auc: auc / k,
    }
}

/// ROC AUC as the normalised Mann-Whitney statistic, ties receiving average rank.
/// NaN when either class is absent.
pub fn auc_rank(scores: &[f64], positive: &[bool]) -> f64 {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos * n_neg) as f64
}
