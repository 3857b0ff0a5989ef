use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::experiment::ScoredEvent;
use super::metrics::{accuracy, aupr, auroc, mae, mape};
use super::rejection::rejection_keep;
use crate::error::{Error, Result};
use crate::scoring::{agent_score, SortedReference};

/// Numeric features reported by MAE and MAPE.
pub const NUMERIC_REPORTED: [&str; 4] = ["st", "sd", "x", "y"];
pub const CATEGORICAL_REPORTED: [&str; 2] = ["poi", "dow"];

/// Kept percentages of the standard rejection sweep.
pub const REJECTION_SWEEP: [f64; 11] = [100.0, 95.0, 90.0, 85.0, 80.0, 75.0, 70.0, 65.0, 60.0, 55.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub n_events: usize,
    pub mae: [f64; 4],
    /// `None` when no target clears the MAPE guard.
    pub mape: [Option<f64>; 4],
    pub acc: [f64; 2],
}

/// MAE, MAPE and accuracy of masked-event predictions.
pub fn prediction_metrics(events: &[&ScoredEvent]) -> Result<PredictionMetrics> {
    if events.is_empty() {
        return Err(Error::invalid("no scored events"));
    }
    let mut m = PredictionMetrics {
        n_events: events.len(),
        mae: [0.0; 4],
        mape: [None; 4],
        acc: [0.0; 2],
    };
    for k in 0..4 {
        let errors: Vec<f64> = events.iter().map(|e| e.prediction.errors[k]).collect();
        m.mae[k] = mae(&errors)?;
        let truth: Vec<f64> = events.iter().map(|e| e.observed[k]).collect();
        // Start time errors are circular, so compare the error against zero.
        let pred: Vec<f64> = events
            .iter()
            .map(|e| match k {
                0 => e.observed[0] + e.prediction.errors[0],
                1 => e.prediction.sd,
                2 => e.prediction.x,
                _ => e.prediction.y,
            })
            .collect();
        m.mape[k] = mape(&pred, &truth).ok();
    }
    for c in 0..2 {
        let correct: Vec<bool> = events
            .iter()
            .map(|e| [e.prediction.poi, e.prediction.dow][c] == e.observed_class[c])
            .collect();
        m.acc[c] = accuracy(&correct)?;
    }
    Ok(m)
}

/// Total uncertainty as the plain sum of EU and AU over scored features.
pub fn total_uncertainty(e: &ScoredEvent) -> f64 {
    e.prediction.report.total()
}

/// Total uncertainty with each feature's EU + AU replaced by its percentile
/// within `events`, so features with different units weigh equally.
pub fn normalized_total_uncertainty(events: &[&ScoredEvent]) -> Result<Vec<f64>> {
    let per: Vec<[(f64, f64); 6]> = events.iter().map(|e| e.prediction.report.per_feature()).collect();
    let mut out = vec![0.0; events.len()];
    for f in 0..6 {
        let vals: Vec<f64> = per.iter().map(|p| p[f].0 + p[f].1).collect();
        let reference = SortedReference::new(vals.clone())?;
        for (o, v) in out.iter_mut().zip(vals) {
            *o += reference.transform(v)?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub kept_percent: f64,
    pub metrics: PredictionMetrics,
}

/// Prediction metrics after rejecting the most uncertain events, one row per
/// kept percentage.
pub fn rejection_sweep(events: &[&ScoredEvent], uncertainty: &[f64], kept_percent: &[f64], seed: u64) -> Result<Vec<RejectionRow>> {
    if events.len() != uncertainty.len() {
        return Err(Error::invalid("events and uncertainties differ in length"));
    }
    kept_percent
        .iter()
        .map(|&p| {
            let keep = rejection_keep(uncertainty, 1.0 - p / 100.0, seed)?;
            let kept: Vec<&ScoredEvent> = keep.iter().map(|&i| events[i]).collect();
            Ok(RejectionRow {
                kept_percent: p,
                metrics: prediction_metrics(&kept)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub bin: usize,
    pub mean_uncertainty: f64,
    /// Stay-duration MAE of the bin.
    pub mae_sd: f64,
    pub count: usize,
}

/// Uncertainty-vs-error curve over equal-count bins of total uncertainty.
pub fn calibration_curve(events: &[&ScoredEvent], uncertainty: &[f64], bins: usize) -> Result<Vec<CalibrationPoint>> {
    if bins == 0 || events.len() < bins {
        return Err(Error::invalid("need at least one event per calibration bin"));
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    let n = order.len();
    (0..bins)
        .map(|b| {
            let part = &order[b * n / bins..(b + 1) * n / bins];
            let u = part.iter().map(|&i| uncertainty[i]).sum::<f64>() / part.len() as f64;
            let errs: Vec<f64> = part.iter().map(|&i| events[i].prediction.errors[1]).collect();
            Ok(CalibrationPoint {
                bin: b,
                mean_uncertainty: u,
                mae_sd: mae(&errs)?,
                count: part.len(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub event_auroc: f64,
    pub event_aupr: f64,
    /// `None` when every agent has the same label.
    pub agent_auroc: Option<f64>,
    pub agent_aupr: Option<f64>,
}

/// Event- and agent-level detection quality; agent scores are the maximum
/// over each agent's events.
pub fn detection_metrics(events: &[&ScoredEvent], scores: &[f64]) -> Result<DetectionMetrics> {
    if events.len() != scores.len() {
        return Err(Error::invalid("events and scores differ in length"));
    }
    let labels: Vec<bool> = events.iter().map(|e| e.label).collect();
    let mut agents: BTreeMap<u32, (Vec<f64>, bool)> = BTreeMap::new();
    for (e, &s) in events.iter().zip(scores) {
        let entry = agents.entry(e.agent_id).or_default();
        entry.0.push(s);
        entry.1 |= e.label;
    }
    let mut agent_scores = Vec::with_capacity(agents.len());
    let mut agent_labels = Vec::with_capacity(agents.len());
    for (s, l) in agents.values() {
        agent_scores.push(agent_score(s)?);
        agent_labels.push(*l);
    }
    let mixed = agent_labels.iter().any(|&l| l) && agent_labels.iter().any(|&l| !l);
    Ok(DetectionMetrics {
        event_auroc: auroc(scores, &labels)?,
        event_aupr: aupr(scores, &labels)?,
        agent_auroc: if mixed { Some(auroc(&agent_scores, &agent_labels)?) } else { None },
        agent_aupr: if mixed { Some(aupr(&agent_scores, &agent_labels)?) } else { None },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub prediction: PredictionMetrics,
    pub detection: Option<DetectionMetrics>,
    pub rejection: Vec<RejectionRow>,
    pub calibration: Vec<CalibrationPoint>,
}

/// Full report over scored events. Detection metrics are filled in when
/// `scores` is given and the labels hold both classes.
pub fn metric_report(events: &[&ScoredEvent], scores: Option<&[f64]>, seed: u64) -> Result<MetricReport> {
    let unc: Vec<f64> = events.iter().map(|e| total_uncertainty(e)).collect();
    let detection = match scores {
        Some(s) => {
            let pos = events.iter().filter(|e| e.label).count();
            if pos == 0 || pos == events.len() {
                None
            } else {
                Some(detection_metrics(events, s)?)
            }
        }
        None => None,
    };
    Ok(MetricReport {
        prediction: prediction_metrics(events)?,
        detection,
        rejection: rejection_sweep(events, &unc, &REJECTION_SWEEP, seed)?,
        calibration: calibration_curve(events, &unc, 10.min(events.len()))?,
    })
}
