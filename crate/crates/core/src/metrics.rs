//! Ranking metrics.

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney rank statistic.
///
/// Tied scores share the average rank, which credits half a pair for every
/// positive/negative tie. Runs in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc inputs", &[scores.len()], &[labels.len()]));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric(format!("score {s} is not comparable")));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = labels.iter().filter(|&&y| y == 0.0).count();
    if positives + negatives != labels.len() {
        return Err(Error::Data("auc labels must be 0 or 1".into()));
    }
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
    // every partial sum is an exact integer
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_avg = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1.0).count() as u128;
        doubled_rank_sum += doubled_avg * pos_in_group;
        i = j;
    }
    let p = positives as u128;
    // 2U = 2*R - P(P+1); AUC = U / (P*N)
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}
