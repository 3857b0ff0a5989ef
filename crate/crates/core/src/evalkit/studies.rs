use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::experiment::{fit_model, rescore_changed, score_events, FittedModel, ScoreOptions, ScoredEvent};
use super::metrics::{aupr, auroc};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::scoring::{EventRaw, ScoreReference, ScoreVariant, TrainIndex};
use crate::seqmodel::{ModelConfig, TrainConfig};
use crate::synthgen::{inject_anomalies, InjectionSpec, LabeledDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSizeRow {
    pub weeks: u32,
    pub train_days: Range<u32>,
    pub final_loss: f64,
    /// Mean EU per scored feature (st, sd, x, y, poi, dow).
    pub mean_eu: [f64; 6],
    pub mean_au: [f64; 6],
    pub n_scored: usize,
}

/// Train one model per training length and report mean EU and AU on the
/// same scored events.
///
/// Training sets are nested: each uses the last `7 * weeks` days before the
/// end of the training period.
pub fn eu_vs_datasize_study(
    ds: &LabeledDataset,
    weeks: &[u32],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    score_agents: &[usize],
    score_days: Range<u32>,
    opts: ScoreOptions,
    exec: Exec,
) -> Result<Vec<DataSizeRow>> {
    if weeks.is_empty() {
        return Err(Error::invalid("no training sizes given"));
    }
    let end = ds.split.train_end;
    let mut rows = Vec::with_capacity(weeks.len());
    for &w in weeks {
        let days = w * 7;
        if w == 0 || days > end {
            return Err(Error::invalid(format!("{w} weeks do not fit in the {end}-day training period")));
        }
        let train_days = end - days..end;
        log::info!("data-size study: training on days {train_days:?}");
        let fitted = fit_model(ds, train_days.clone(), model_cfg, train_cfg, exec)?;
        let opts = ScoreOptions { knn: false, ..opts };
        let scored = score_events(&fitted, ds, score_agents, score_days.clone(), None, opts, exec)?;
        if scored.is_empty() {
            return Err(Error::invalid("no events to score"));
        }
        let mut mean_eu = [0.0; 6];
        let mut mean_au = [0.0; 6];
        for s in &scored {
            for (f, (eu, au)) in s.prediction.report.per_feature().into_iter().enumerate() {
                mean_eu[f] += eu;
                mean_au[f] += au;
            }
        }
        let n = scored.len() as f64;
        mean_eu.iter_mut().chain(mean_au.iter_mut()).for_each(|v| *v /= n);
        rows.push(DataSizeRow {
            weeks: w,
            train_days,
            final_loss: fitted.report.epoch_loss.last().copied().unwrap_or(f64::NAN),
            mean_eu,
            mean_au,
            n_scored: scored.len(),
        });
    }
    Ok(rows)
}

/// A named group of injections scored together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSuite {
    pub name: String,
    pub specs: Vec<InjectionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub suite: String,
    pub variant: ScoreVariant,
    pub auroc: f64,
    pub aupr: f64,
    pub positives: usize,
    pub events: usize,
}

/// Raw scoring inputs of events, failing when kNN distances are missing.
pub fn raw_scores(events: &[ScoredEvent]) -> Result<Vec<EventRaw>> {
    events.iter().map(|e| e.raw()).collect()
}

/// Event-level AUROC and AUPR per (suite, variant) over all test events.
///
/// Percentile references are fitted on the clean validation period. Each
/// suite is injected into `clean` separately.
pub fn injection_benchmark(
    fitted: &FittedModel,
    index: &TrainIndex,
    clean: &LabeledDataset,
    suites: &[InjectionSuite],
    variants: &[ScoreVariant],
    opts: ScoreOptions,
    exec: Exec,
) -> Result<Vec<BenchmarkRow>> {
    if variants.is_empty() || suites.is_empty() {
        return Ok(Vec::new());
    }
    let opts = ScoreOptions { knn: true, ..opts };
    let agents: Vec<usize> = (0..clean.agents.len()).collect();
    let validation = score_events(fitted, clean, &agents, clean.split.validation(), Some(index), opts, exec)?;
    let refs = ScoreReference::fit(&raw_scores(&validation)?)?;
    let test_days = clean.split.test();
    let baseline = score_events(fitted, clean, &agents, test_days.clone(), Some(index), opts, exec)?;
    let mut rows = Vec::new();
    for suite in suites {
        let injected = inject_anomalies(clean, &suite.specs)?;
        let scored = rescore_changed(fitted, clean, &baseline, &injected, test_days.clone(), Some(index), opts, exec)?;
        let raws = raw_scores(&scored)?;
        let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
        let positives = labels.iter().filter(|&&l| l).count();
        for &variant in variants {
            let scores: Vec<f64> = raws.iter().map(|r| refs.score(r, variant)).collect::<Result<_>>()?;
            rows.push(BenchmarkRow {
                suite: suite.name.clone(),
                variant,
                auroc: auroc(&scores, &labels)?,
                aupr: aupr(&scores, &labels)?,
                positives,
                events: labels.len(),
            });
        }
    }
    Ok(rows)
}

/// Fitted model, training index and the dataset they came from.
pub fn fit_with_index(
    ds: &LabeledDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    exec: Exec,
) -> Result<(FittedModel, TrainIndex)> {
    let fitted = fit_model(ds, ds.split.train(), model_cfg, train_cfg, exec)?;
    let index = super::experiment::build_index(&fitted, ds, ds.split.train(), exec)?;
    Ok((fitted, index))
}
