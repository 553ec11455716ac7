//! Ranking and accuracy metrics for binary link labels.
//!
//! Ties are resolved by midrank: an item tied with `m` others is treated as
//! sitting in the middle of its tie group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AP, AUC and accuracy of one scored set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ap: f64,
    pub auc: f64,
    pub acc: f64,
    /// Number of scored samples (positives plus negatives).
    pub count: usize,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(Metrics {
            ap: metric_ap(scores, labels)?,
            auc: metric_auc(scores, labels)?,
            acc: metric_acc(scores, labels, 0.5)?,
            count: scores.len(),
        })
    }
}

fn check(scores: &[f64], labels: &[u8], need_both: bool) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} cannot be ranked")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Parameter(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if need_both && (pos == 0 || neg == 0) {
        return Err(Error::UndefinedMetric(format!("{pos} positives and {neg} negatives; need both classes")));
    }
    Ok((pos, neg))
}

/// Tie groups in descending score order, as `(positives, total)` per group.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        g.0 += labels[i] as usize;
        g.1 += 1;
    }
    groups
}

/// Mean over positives of the precision at the positive's rank. Within a tie
/// group both the rank and the positives ranked at or above it take their
/// midrank values.
pub fn metric_ap(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels, true)?;
    let (mut above_pos, mut above_all) = (0usize, 0usize);
    let mut sum = 0.0;
    for (gp, gn) in tie_groups(scores, labels) {
        if gp > 0 {
            let precision = (above_pos as f64 + (gp as f64 + 1.0) / 2.0) / (above_all as f64 + (gn as f64 + 1.0) / 2.0);
            sum += gp as f64 * precision;
        }
        above_pos += gp;
        above_all += gn;
    }
    Ok(sum / pos as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney statistic from midranks).
pub fn metric_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels, true)?;
    // Ascending midranks, 1-based.
    let mut rank_sum = 0.0;
    let mut below = 0usize;
    let mut groups = tie_groups(scores, labels);
    groups.reverse();
    for (gp, gn) in groups {
        let midrank = below as f64 + (gn as f64 + 1.0) / 2.0;
        rank_sum += gp as f64 * midrank;
        below += gn;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Fraction of samples whose thresholded score (`>= threshold` means
/// positive) matches the label.
pub fn metric_acc(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels, false)?;
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero samples".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}
