use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::scoring::{EventPrediction, EventRaw, TrainIndex};
use crate::seqmodel::{train, DualTransformer, EncodedSequence, ModelConfig, NormStats, TrainConfig, TrainReport};
use crate::staypoint::{build_windows_for_days, EventSequence, StayEvent};
use crate::synthgen::{InjectionKind, LabeledDataset};
use crate::uncertainty::mc_sample_each;

/// A trained model with the normalization it was trained under.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub model: DualTransformer,
    pub stats: NormStats,
    pub report: TrainReport,
}

impl FittedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }
}

/// Windows of one agent record, tagged with the record's index.
pub fn agent_windows(
    ds: &LabeledDataset,
    agents: &[usize],
    days: Range<u32>,
    cfg: &ModelConfig,
) -> Result<Vec<(usize, EventSequence)>> {
    let mut out = Vec::new();
    for &a in agents {
        let rec = ds
            .agents
            .get(a)
            .ok_or_else(|| Error::invalid(format!("agent index {a} out of range")))?;
        for w in build_windows_for_days(&rec.events, cfg.window_days, cfg.max_len, days.clone())? {
            out.push((a, w));
        }
    }
    Ok(out)
}

pub fn all_agents(ds: &LabeledDataset) -> Vec<usize> {
    (0..ds.agents.len()).collect()
}

/// Normalization statistics over the events of the given days.
pub fn fit_stats(ds: &LabeledDataset, days: Range<u32>, cfg: &ModelConfig) -> Result<NormStats> {
    let events = ds
        .agents
        .iter()
        .flat_map(|a| a.events.iter())
        .filter(move |e| days.contains(&e.day));
    NormStats::fit(events, cfg.time_radius)
}

pub fn encode_windows(
    windows: &[(usize, EventSequence)],
    stats: &NormStats,
    cfg: &ModelConfig,
    exec: Exec,
) -> Result<Vec<EncodedSequence>> {
    exec.try_map(windows, |(_, w)| stats.encode_sequence(w, cfg))
}

/// Train a fresh model on windows whose target day lies in `days`.
pub fn fit_model(
    ds: &LabeledDataset,
    days: Range<u32>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    exec: Exec,
) -> Result<FittedModel> {
    if model_cfg.n_poi < ds.n_poi as usize {
        return Err(Error::Config(format!(
            "model has {} POI classes but the data uses {}",
            model_cfg.n_poi, ds.n_poi
        )));
    }
    let stats = fit_stats(ds, days.clone(), model_cfg)?;
    let windows = agent_windows(ds, &all_agents(ds), days, model_cfg)?;
    let data = encode_windows(&windows, &stats, model_cfg, exec)?;
    let mut model = DualTransformer::new(model_cfg.clone(), derive_seed(train_cfg.seed, &[0x1417]))?;
    let report = train(&mut model, &data, train_cfg, exec)?;
    Ok(FittedModel { model, stats, report })
}

/// Identifier of an event inside the kNN index.
pub fn event_id(e: &StayEvent) -> u64 {
    ((e.agent_id as u64) << 32) | ((e.day as u64) << 12) | e.idx as u64
}

/// Deterministic embeddings of every target-day event of the given days.
pub fn build_index(fitted: &FittedModel, ds: &LabeledDataset, days: Range<u32>, exec: Exec) -> Result<TrainIndex> {
    let cfg = fitted.config();
    let d = cfg.d_model;
    let windows = agent_windows(ds, &all_agents(ds), days, cfg)?;
    let rows = exec.try_map(&windows, |(_, w)| -> Result<Vec<(u64, Vec<f64>)>> {
        let seq = fitted.stats.encode_sequence(w, cfg)?;
        let emb = fitted.model.embed(&seq)?;
        Ok(w.target_positions()
            .map(|i| (event_id(&w.events[i]), emb[i * d..(i + 1) * d].to_vec()))
            .collect())
    })?;
    let mut index = TrainIndex::new(d);
    for (id, e) in rows.into_iter().flatten() {
        index.push(id, &e)?;
    }
    Ok(index)
}

/// Settings for Monte Carlo scoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    pub passes: usize,
    pub seed: u64,
    /// Compute kNN distances (requires an index).
    pub knn: bool,
}

/// One scored event with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub agent: usize,
    pub agent_id: u32,
    pub day: u32,
    pub idx: u32,
    pub label: bool,
    pub kind: Option<InjectionKind>,
    /// Observed start time of day, duration, x, y.
    pub observed: [f64; 4],
    pub observed_class: [usize; 2],
    pub prediction: EventPrediction,
    pub knn: Option<f64>,
}

impl ScoredEvent {
    pub fn raw(&self) -> Result<EventRaw> {
        let knn = self
            .knn
            .ok_or_else(|| Error::invalid("event was scored without a kNN distance"))?;
        Ok(EventRaw::new(&self.prediction, knn))
    }
}

/// Predictions for the target-day events of one window, in order.
fn score_window(
    fitted: &FittedModel,
    agent: usize,
    w: &EventSequence,
    index: Option<&TrainIndex>,
    opts: ScoreOptions,
) -> Result<Vec<ScoredEvent>> {
    let cfg = fitted.config();
    let seq = fitted.stats.encode_sequence(w, cfg)?;
    let positions: Vec<usize> = w.target_positions().collect();
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let window_seed = derive_seed(opts.seed, &[w.agent_id as u64, w.target_day as u64]);
    let samples = mc_sample_each(&fitted.model, &seq, &positions, opts.passes, derive_seed(window_seed, &[0]))?;
    let embedding = match (opts.knn, index) {
        (true, Some(_)) => Some(fitted.model.embed(&seq)?),
        (true, None) => return Err(Error::invalid("kNN scoring needs a training index")),
        (false, _) => None,
    };
    let d = cfg.d_model;
    let mut out = Vec::with_capacity(positions.len());
    for (&i, s) in positions.iter().zip(&samples) {
        let e = &w.events[i];
        let prediction = EventPrediction::evaluate(e, s, &fitted.stats, cfg, derive_seed(window_seed, &[1, i as u64]))?;
        let knn = match (&embedding, index) {
            (Some(emb), Some(ix)) => Some(ix.knn_distance(&emb[i * d..(i + 1) * d], cfg.knn_k)?),
            _ => None,
        };
        out.push(ScoredEvent {
            agent,
            agent_id: e.agent_id,
            day: e.day,
            idx: e.idx,
            label: false,
            kind: None,
            observed: [e.time_of_day(), e.sd, e.x, e.y],
            observed_class: [e.poi as usize, e.dow as usize],
            prediction,
            knn,
        });
    }
    Ok(out)
}

fn attach_labels(ds: &LabeledDataset, scored: &mut [ScoredEvent]) {
    for s in scored {
        let rec = &ds.agents[s.agent];
        let k = rec.events.partition_point(|e| e.day < s.day) + s.idx as usize;
        s.label = rec.labels[k];
        s.kind = rec.kinds[k];
    }
}

/// Score every event of the given agents and days.
pub fn score_events(
    fitted: &FittedModel,
    ds: &LabeledDataset,
    agents: &[usize],
    days: Range<u32>,
    index: Option<&TrainIndex>,
    opts: ScoreOptions,
    exec: Exec,
) -> Result<Vec<ScoredEvent>> {
    let windows = agent_windows(ds, agents, days, fitted.config())?;
    let parts = exec.try_map(&windows, |(a, w)| score_window(fitted, *a, w, index, opts))?;
    let mut scored: Vec<ScoredEvent> = parts.into_iter().flatten().collect();
    attach_labels(ds, &mut scored);
    Ok(scored)
}

/// Score `ds`, reusing results from `baseline` for windows whose content is
/// unchanged. Window seeds depend only on agent and day, so reuse gives the
/// same values as rescoring.
pub fn rescore_changed(
    fitted: &FittedModel,
    baseline_ds: &LabeledDataset,
    baseline: &[ScoredEvent],
    ds: &LabeledDataset,
    days: Range<u32>,
    index: Option<&TrainIndex>,
    opts: ScoreOptions,
    exec: Exec,
) -> Result<Vec<ScoredEvent>> {
    if baseline_ds.agents.len() != ds.agents.len() {
        return Err(Error::invalid("baseline and dataset differ in agent count"));
    }
    let cfg = fitted.config();
    let agents = all_agents(ds);
    let old = agent_windows(baseline_ds, &agents, days.clone(), cfg)?;
    let new = agent_windows(ds, &agents, days, cfg)?;
    let mut cached = std::collections::HashMap::new();
    let mut at = 0;
    for (a, w) in &old {
        let n = w.target_positions().len();
        cached.insert((*a, w.target_day), (w, &baseline[at..at + n]));
        at += n;
    }
    if at != baseline.len() {
        return Err(Error::invalid("baseline scores do not match the baseline windows"));
    }
    let parts = exec.try_map(&new, |(a, w)| match cached.get(&(*a, w.target_day)) {
        Some((ow, s)) if ow.events == w.events => Ok(s.to_vec()),
        _ => score_window(fitted, *a, w, index, opts),
    })?;
    let mut scored: Vec<ScoredEvent> = parts.into_iter().flatten().collect();
    attach_labels(ds, &mut scored);
    Ok(scored)
}
