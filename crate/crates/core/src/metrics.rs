//! Ranking and agreement metrics.

use crate::error::{NclError, Result};

fn metric_err(msg: impl Into<String>) -> NclError {
    NclError::Metric(msg.into())
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(metric_err("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(metric_err("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(metric_err("both classes must be present"));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve as a step function: the sum over
/// distinct thresholds of `(recall_k - recall_{k-1}) * precision_k`.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Cohen's kappa with linear weights `|i - j| / (K - 1)`:
/// `1 - sum(w * O) / sum(w * E)` where `E` is the outer product of the
/// marginals scaled to the sample count.
pub fn linear_weighted_kappa(pred: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(metric_err("kappa needs equally long, non-empty inputs"));
    }
    if k < 2 {
        return Err(metric_err("kappa needs at least two bins"));
    }
    if pred.iter().chain(truth).any(|&b| b as usize >= k) {
        return Err(metric_err(format!("bin out of range 0..{k}")));
    }
    let mut observed = vec![0.0; k * k];
    let mut row = vec![0.0; k];
    let mut col = vec![0.0; k];
    for (&p, &t) in pred.iter().zip(truth) {
        observed[t as usize * k + p as usize] += 1.0;
        row[t as usize] += 1.0;
        col[p as usize] += 1.0;
    }
    let n = pred.len() as f64;
    let (mut wo, mut we) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = i.abs_diff(j) as f64 / (k - 1) as f64;
            wo += w * observed[i * k + j];
            we += w * row[i] * col[j] / n;
        }
    }
    if we == 0.0 {
        return Err(metric_err("kappa is undefined when expected disagreement is zero"));
    }
    Ok(1.0 - wo / we)
}

/// Index of the largest entry in each row of a row-major `[n, k]` buffer.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<u32> {
    values
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [false, false, true, true];
        assert_eq!(auroc(&s, &y).unwrap(), 0.75);
    }

    #[test]
    fn constant_scores() {
        let y = [true, false, false, true, false];
        assert_eq!(auroc(&[0.3; 5], &y).unwrap(), 0.5);
        assert!((auprc(&[0.3; 5], &y).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [false, false, true, true];
        assert_eq!(auroc(&s, &y).unwrap(), 1.0);
        assert_eq!(auprc(&s, &y).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_error() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auprc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn kappa_perfect_and_errors() {
        let a = [0, 1, 2, 3, 2, 1];
        assert_eq!(linear_weighted_kappa(&a, &a, 4).unwrap(), 1.0);
        assert!(linear_weighted_kappa(&[], &[], 4).is_err());
        assert!(linear_weighted_kappa(&[4], &[0], 4).is_err());
    }
}
