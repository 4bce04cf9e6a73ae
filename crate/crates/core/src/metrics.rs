//! Evaluation metrics.

use crate::error::{CoreError, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann–Whitney statistic), via average ranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Data("auc: scores and labels differ in length".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(CoreError::NonFinite(format!("auc score {s}")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.iter().filter(|&&y| y == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(CoreError::Data("auc: labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::Data("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mae(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(CoreError::Data("mae: lengths differ".into()));
    }
    if scores.is_empty() {
        return Err(CoreError::Data("mae of no values".into()));
    }
    Ok(scores.iter().zip(targets).map(|(s, t)| (s - t).abs()).sum::<f64>() / scores.len() as f64)
}
