use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("labels must contain both classes"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve from the tie-corrected rank-sum statistic.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Standard deviation of the AUROC of an uninformative scorer (no ties).
pub fn auroc_null_std(pos: usize, neg: usize) -> f64 {
    ((pos + neg + 1) as f64 / (12.0 * pos as f64 * neg as f64)).sqrt()
}

/// Area under the precision-recall curve by step integration over distinct
/// score thresholds (average precision).
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

pub fn mae(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("no errors to average"));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// Targets closer to zero than this are left out of MAPE.
pub const MAPE_EPS: f64 = 1e-3;

/// Mean absolute percentage error over targets with `|y| > MAPE_EPS`.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and truth lengths differ"));
    }
    let terms: Vec<f64> = pred
        .iter()
        .zip(truth)
        .filter(|(_, y)| y.abs() > MAPE_EPS)
        .map(|(p, y)| ((p - y) / y).abs())
        .collect();
    if terms.is_empty() {
        return Err(Error::invalid("no targets above the MAPE guard"));
    }
    Ok(100.0 * terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn accuracy(correct: &[bool]) -> Result<f64> {
    if correct.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub(crate) fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}
