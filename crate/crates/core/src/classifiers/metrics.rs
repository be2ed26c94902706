//! Threshold-free classification metrics and recall-targeted threshold
//! calibration.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric undefined: labels contain a single class")]
    SingleClass,
    #[error("metric undefined: no positive labels")]
    NoPositives,
    #[error("score at index {0} is NaN")]
    NaN(usize),
    #[error("target recall {0} must lie in (0, 1]")]
    InvalidTarget(f64),
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NaN(i));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    Ok((pos, labels.len() - pos))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Area under the ROC curve via the Mann-Whitney statistic: the chance a
/// random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = validate(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of (1-based, tie-averaged) ascending ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + end + 2) as f64 / 2.0;
        let tied_pos = order[start..=end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * tied_pos as f64;
        start = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: the precision-recall step curve swept from the
/// highest score down, one step per distinct score.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = validate(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let order = descending(scores);
    let total_pos = pos as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut area, mut prev_recall) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    /// Predict positive when `score >= threshold`.
    pub threshold: f64,
    pub recall: f64,
}

/// Largest threshold whose recall (positive iff `score >= threshold`)
/// reaches `target_recall`.
pub fn calibrate_threshold(
    scores: &[f64],
    labels: &[bool],
    target_recall: f64,
) -> Result<Calibration, MetricError> {
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(MetricError::InvalidTarget(target_recall));
    }
    let (pos, _) = validate(scores, labels)?;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, &y)| y.then_some(s))
        .collect();
    positives.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let total = pos as f64;
    let needed = (1..=pos)
        .find(|&k| k as f64 / total >= target_recall)
        .unwrap_or(pos);
    let threshold = positives[needed - 1];
    let hit = positives.iter().filter(|&&s| s >= threshold).count();
    Ok(Calibration {
        threshold,
        recall: hit as f64 / total,
    })
}
