use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{streams, RunConfig};
use super::io::{
    assemble_dataset, dataset_meta, injection_records, label_records, read_json, read_jsonl, write_csv, write_json,
    write_jsonl, DatasetMeta, InjectionRecord, LabelRecord,
};
use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::evalkit::{
    all_agents, build_index, detection_metrics, fit_model, metric_report, normalized_total_uncertainty,
    raw_scores, rejection_sweep, score_events, DetectionMetrics, FittedModel, MetricReport, RejectionRow,
    ScoreOptions, ScoredEvent, CATEGORICAL_REPORTED, NUMERIC_REPORTED, REJECTION_SWEEP,
};
use crate::exec::Exec;
use crate::scoring::{AnomalyScore, ScoreReference, ScoreVariant, SCORED_FEATURES};
use crate::seqmodel::{load_checkpoint, save_checkpoint, TrainReport};
use crate::staypoint::{attach_poi, build_windows, extract_stay_events, GpsPoint, StayEvent, StayParams};
use crate::synthgen::{generate_population_with, inject_anomalies, render_gps, LabeledDataset};

pub const STAGES: [&str; 6] = ["simulate", "tokenize", "train", "score", "evaluate", "report"];

/// Resolved artifact locations of one run.
#[derive(Clone, Debug)]
pub struct Layout {
    pub base: PathBuf,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig, base: &Path) -> Self {
        Layout {
            base: base.to_path_buf(),
            data: base.join(&cfg.paths.data_dir),
            checkpoint: base.join(&cfg.paths.checkpoint),
            report: base.join(&cfg.paths.report_dir),
        }
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.data.join("manifests").join(format!("{stage}.json"))
    }

    pub fn dataset_meta(&self) -> PathBuf {
        self.data.join("dataset.json")
    }
    pub fn raw_events(&self) -> PathBuf {
        self.data.join("events.jsonl")
    }
    pub fn labels(&self) -> PathBuf {
        self.data.join("labels.jsonl")
    }
    pub fn injections(&self) -> PathBuf {
        self.data.join("injections.json")
    }
    pub fn gps(&self) -> PathBuf {
        self.data.join("gps.jsonl")
    }
    pub fn tokens(&self) -> PathBuf {
        self.data.join("tokens").join("events.jsonl")
    }
    pub fn windows(&self) -> PathBuf {
        self.data.join("tokens").join("windows.jsonl")
    }
    pub fn loss_log(&self) -> PathBuf {
        self.data.join("train").join("loss_log.csv")
    }
    pub fn train_meta(&self) -> PathBuf {
        self.data.join("train").join("train_meta.json")
    }
    pub fn event_scores(&self) -> PathBuf {
        self.data.join("scores").join("events.jsonl")
    }
    pub fn agent_scores(&self) -> PathBuf {
        self.data.join("scores").join("agents.csv")
    }
    pub fn score_details(&self) -> PathBuf {
        self.data.join("scores").join("details.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.report.join("metrics.json")
    }
}

/// A stage invocation: configuration, layout and execution mode.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
    pub exec: Exec,
}

fn upstream(layout: &Layout, stage: &str) -> Result<Manifest> {
    Manifest::read(&layout.manifest(stage))
}

impl Pipeline {
    pub fn new(cfg: RunConfig, base: &Path, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg, base);
        Ok(Pipeline { cfg, layout, exec })
    }

    pub fn run_stage(&self, stage: &str) -> Result<()> {
        match stage {
            "simulate" => self.simulate(),
            "tokenize" => self.tokenize(),
            "train" => self.train().map(|_| ()),
            "score" => self.score(),
            "evaluate" => self.evaluate().map(|_| ()),
            "report" => self.report(),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        STAGES.iter().try_for_each(|s| self.run_stage(s))
    }

    fn manifest(&self, stage: &str) -> Result<Manifest> {
        Manifest::new(stage, &self.cfg)
    }

    /// Generate the population, inject anomalies and write the dataset.
    pub fn simulate(&self) -> Result<()> {
        let l = &self.layout;
        let d = &self.cfg.data;
        let ds = generate_population_with(
            &d.population(),
            d.n_agents,
            d.n_days,
            self.cfg.stream(streams::POPULATION),
            self.exec,
        )?;
        let specs = self.cfg.injection_specs();
        let ds = if specs.is_empty() { ds } else { inject_anomalies(&ds, &specs)? };
        log::info!("simulated {} agents, {} events", ds.agents.len(), ds.n_events());

        write_json(&l.dataset_meta(), &dataset_meta(&ds))?;
        write_jsonl(&l.raw_events(), ds.agents.iter().flat_map(|a| a.events.iter()))?;
        write_jsonl(&l.labels(), &label_records(&ds))?;
        write_json(&l.injections(), &injection_records(&ds))?;
        let mut m = self.manifest("simulate")?;
        let mut outputs = vec![l.dataset_meta(), l.raw_events(), l.labels(), l.injections()];
        if d.from_gps {
            let tracks = self.exec.map(&ds.agents, |a| render_gps(&a.events));
            write_jsonl(&l.gps(), tracks.iter().flatten())?;
            outputs.push(l.gps());
        }
        for p in &outputs {
            m.output(&l.base, p)?;
        }
        m.write(&l.manifest("simulate"))
    }

    /// Produce the tokenized event file and its window index.
    pub fn tokenize(&self) -> Result<()> {
        let l = &self.layout;
        let sim = upstream(l, "simulate")?;
        let mut m = self.manifest("tokenize")?;
        for p in [l.dataset_meta(), l.raw_events()] {
            sim.verify_output(&l.base, &p)?;
            m.input(&l.base, &p)?;
        }
        let meta: DatasetMeta = read_json(&l.dataset_meta())?;
        let reference: Vec<StayEvent> = read_jsonl(&l.raw_events())?;
        let events = if self.cfg.data.from_gps {
            sim.verify_output(&l.base, &l.gps())?;
            m.input(&l.base, &l.gps())?;
            self.events_from_gps(&reference)?
        } else {
            reference
        };
        let ds = assemble_dataset(&meta, events, &[], &[])?;
        let mut windows = Vec::new();
        for a in &ds.agents {
            for w in build_windows(&a.events, self.cfg.model.window_days, self.cfg.model.max_len)? {
                windows.push(WindowRecord {
                    agent_id: w.agent_id,
                    target_day: w.target_day,
                    first_day: w.events[0].day,
                    n_events: w.len(),
                    n_target: w.target_positions().len(),
                });
            }
        }
        write_jsonl(&l.tokens(), ds.agents.iter().flat_map(|a| a.events.iter()))?;
        write_jsonl(&l.windows(), &windows)?;
        m.output(&l.base, &l.tokens())?;
        m.output(&l.base, &l.windows())?;
        m.write(&l.manifest("tokenize"))
    }

    fn events_from_gps(&self, reference: &[StayEvent]) -> Result<Vec<StayEvent>> {
        let points: Vec<GpsPoint> = read_jsonl(&self.layout.gps())?;
        let mut tracks: BTreeMap<u32, Vec<GpsPoint>> = BTreeMap::new();
        for p in points {
            tracks.entry(p.agent_id).or_default().push(p);
        }
        let mut refs: BTreeMap<u32, Vec<StayEvent>> = BTreeMap::new();
        for e in reference {
            refs.entry(e.agent_id).or_default().push(e.clone());
        }
        let params = StayParams {
            min_dwell: self.cfg.data.min_dwell,
            stay_radius: self.cfg.data.stay_radius,
        };
        let tracks: Vec<(u32, Vec<GpsPoint>)> = tracks.into_iter().collect();
        let per_agent = self.exec.try_map(&tracks, |(id, track)| -> Result<Vec<StayEvent>> {
            let mut ev = extract_stay_events(track, params)?;
            attach_poi(&mut ev, refs.get(id).map(Vec::as_slice).unwrap_or(&[]));
            Ok(ev)
        })?;
        Ok(per_agent.into_iter().flatten().collect())
    }

    /// Load the tokenized dataset with labels, checking provenance.
    fn load_dataset(&self, m: &mut Manifest) -> Result<LabeledDataset> {
        let l = &self.layout;
        let sim = upstream(l, "simulate")?;
        let tok = upstream(l, "tokenize")?;
        for p in [l.dataset_meta(), l.labels(), l.injections()] {
            sim.verify_output(&l.base, &p)?;
            m.input(&l.base, &p)?;
        }
        tok.verify_output(&l.base, &l.tokens())?;
        m.input(&l.base, &l.tokens())?;
        let meta: DatasetMeta = read_json(&l.dataset_meta())?;
        let labels: Vec<LabelRecord> = read_jsonl(&l.labels())?;
        let injections: Vec<InjectionRecord> = read_json(&l.injections())?;
        let tokens: Vec<StayEvent> = read_jsonl(&l.tokens())?;
        assemble_dataset(&meta, tokens, &labels, &injections)
    }

    /// Train the model and write the checkpoint, loss log and metadata.
    pub fn train(&self) -> Result<TrainReport> {
        let l = &self.layout;
        let mut m = self.manifest("train")?;
        let ds = self.load_dataset(&mut m)?;
        let fitted = fit_model(&ds, ds.split.train(), &self.cfg.model, &self.cfg.train_config(), self.exec)?;
        save_checkpoint(&l.checkpoint, &fitted.model, &fitted.stats, self.cfg.precision)?;
        let log: Vec<LossRow> = fitted
            .report
            .epoch_loss
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| LossRow { epoch: epoch + 1, loss })
            .collect();
        write_csv(&l.loss_log(), &log)?;
        write_json(
            &l.train_meta(),
            &TrainMeta {
                n_params: fitted.model.n_params(),
                steps: fitted.report.steps,
                train_days: ds.split.train_end,
                precision: self.cfg.precision,
                epoch_loss: fitted.report.epoch_loss.clone(),
            },
        )?;
        for p in [l.checkpoint.clone(), l.loss_log(), l.train_meta()] {
            m.output(&l.base, &p)?;
        }
        m.write(&l.manifest("train"))?;
        Ok(fitted.report)
    }

    /// Score validation and test events and write per-event and per-agent
    /// score files.
    pub fn score(&self) -> Result<()> {
        let l = &self.layout;
        if !l.checkpoint.exists() {
            return Err(Error::MissingArtifact(l.checkpoint.clone()));
        }
        let mut m = self.manifest("score")?;
        let train = upstream(l, "train")?;
        train.verify_output(&l.base, &l.checkpoint)?;
        m.input(&l.base, &l.checkpoint)?;
        let ds = self.load_dataset(&mut m)?;
        let ck = load_checkpoint(&l.checkpoint)?;
        if ck.model.config != self.cfg.model {
            return Err(Error::Config("checkpoint was trained with a different model configuration".into()));
        }
        let fitted = FittedModel {
            model: ck.model,
            stats: ck.stats,
            report: TrainReport::default(),
        };
        let index = build_index(&fitted, &ds, ds.split.train(), self.exec)?;
        let opts = ScoreOptions {
            passes: self.cfg.mc_passes(),
            seed: self.cfg.stream(streams::SCORE),
            knn: true,
        };
        let agents = all_agents(&ds);
        let validation = score_events(&fitted, &ds, &agents, ds.split.validation(), Some(&index), opts, self.exec)?;
        let refs = ScoreReference::fit(&raw_scores(&validation)?)?;
        let test = score_events(&fitted, &ds, &agents, ds.split.test(), Some(&index), opts, self.exec)?;

        let mut lines = Vec::with_capacity(test.len());
        let mut details = Vec::with_capacity(test.len());
        let mut per_agent: BTreeMap<u32, (f64, bool)> = BTreeMap::new();
        for s in &test {
            let raw = s.raw()?;
            let a = AnomalyScore::new(s.agent_id, s.day, s.idx, &raw, &refs)?;
            let score = refs.score(&raw, self.cfg.score.variant)?;
            let variants = self
                .cfg
                .score
                .variants
                .iter()
                .map(|&v| Ok((v.name().to_string(), refs.score(&raw, v)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            lines.push(EventScoreLine {
                agent_id: s.agent_id,
                day: s.day,
                event_index: s.idx,
                losses: SCORED_FEATURES.iter().map(|f| f.to_string()).zip(a.losses).collect(),
                knn: a.knn,
                loss_pct: a.loss_pct,
                knn_pct: a.knn_pct,
                score,
            });
            let entry = per_agent.entry(s.agent_id).or_insert((f64::NEG_INFINITY, false));
            entry.0 = entry.0.max(score);
            entry.1 |= s.label;
            details.push(ScoreDetail {
                event: s.clone(),
                score,
                variants,
            });
        }
        let agents_rows: Vec<AgentScoreRow> = per_agent
            .into_iter()
            .map(|(agent_id, (agent_score, label))| AgentScoreRow {
                agent_id,
                agent_score,
                label,
            })
            .collect();
        write_jsonl(&l.event_scores(), &lines)?;
        write_csv(&l.agent_scores(), &agents_rows)?;
        write_jsonl(&l.score_details(), &details)?;
        for p in [l.event_scores(), l.agent_scores(), l.score_details()] {
            m.output(&l.base, &p)?;
        }
        m.write(&l.manifest("score"))
    }

    /// Compute the metric report from scored events.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let l = &self.layout;
        let mut m = self.manifest("evaluate")?;
        let score = upstream(l, "score")?;
        score.verify_output(&l.base, &l.score_details())?;
        m.input(&l.base, &l.score_details())?;
        let details: Vec<ScoreDetail> = read_jsonl(&l.score_details())?;
        if details.is_empty() {
            return Err(Error::invalid("no scored events to evaluate"));
        }
        let events: Vec<&ScoredEvent> = details.iter().map(|d| &d.event).collect();
        let scores: Vec<f64> = details.iter().map(|d| d.score).collect();
        let seed = self.cfg.stream(streams::REPORT);
        let report = metric_report(&events, Some(&scores), seed)?;
        let has_both = report.detection.is_some();
        let mut variants = Vec::new();
        if has_both {
            for &v in &self.cfg.score.variants {
                let s: Vec<f64> = details
                    .iter()
                    .map(|d| {
                        d.variants
                            .get(v.name())
                            .copied()
                            .ok_or_else(|| Error::Schema(format!("score details lack variant {v}")))
                    })
                    .collect::<Result<_>>()?;
                variants.push(VariantDetection {
                    variant: v,
                    metrics: detection_metrics(&events, &s)?,
                });
            }
        }
        let normalized = normalized_total_uncertainty(&events)?;
        let evaluation = Evaluation {
            report,
            variants,
            normalized_rejection: rejection_sweep(&events, &normalized, &REJECTION_SWEEP, seed)?,
        };
        write_json(&l.metrics(), &evaluation)?;
        m.output(&l.base, &l.metrics())?;
        m.write(&l.manifest("evaluate"))?;
        Ok(evaluation)
    }

    /// Flatten the metric report into CSV tables and a summary.
    pub fn report(&self) -> Result<()> {
        let l = &self.layout;
        let mut m = self.manifest("report")?;
        upstream(l, "evaluate")?.verify_output(&l.base, &l.metrics())?;
        m.input(&l.base, &l.metrics())?;
        let ev: Evaluation = read_json(&l.metrics())?;
        let r = &ev.report;

        let mut prediction = Vec::new();
        for (k, name) in NUMERIC_REPORTED.iter().enumerate() {
            prediction.push(PredictionRow {
                feature: name.to_string(),
                mae: Some(r.prediction.mae[k]),
                mape: r.prediction.mape[k],
                acc: None,
            });
        }
        for (c, name) in CATEGORICAL_REPORTED.iter().enumerate() {
            prediction.push(PredictionRow {
                feature: name.to_string(),
                mae: None,
                mape: None,
                acc: Some(r.prediction.acc[c]),
            });
        }
        let rejection = |rows: &[RejectionRow]| -> Vec<RejectionCsvRow> {
            rows.iter()
                .map(|row| RejectionCsvRow {
                    kept_percent: row.kept_percent,
                    n_events: row.metrics.n_events,
                    mae_st: row.metrics.mae[0],
                    mae_sd: row.metrics.mae[1],
                    mae_x: row.metrics.mae[2],
                    mae_y: row.metrics.mae[3],
                    acc_poi: row.metrics.acc[0],
                    acc_dow: row.metrics.acc[1],
                })
                .collect()
        };
        let detection: Vec<DetectionRow> = ev
            .variants
            .iter()
            .map(|v| DetectionRow {
                variant: v.variant.name().to_string(),
                event_auroc: v.metrics.event_auroc,
                event_aupr: v.metrics.event_aupr,
                agent_auroc: v.metrics.agent_auroc,
                agent_aupr: v.metrics.agent_aupr,
            })
            .collect();
        let files = [
            l.report.join("prediction.csv"),
            l.report.join("rejection.csv"),
            l.report.join("rejection_normalized.csv"),
            l.report.join("calibration.csv"),
            l.report.join("detection.csv"),
            l.report.join("summary.json"),
        ];
        write_csv(&files[0], &prediction)?;
        write_csv(&files[1], &rejection(&r.rejection))?;
        write_csv(&files[2], &rejection(&ev.normalized_rejection))?;
        write_csv(&files[3], &r.calibration)?;
        write_csv(&files[4], &detection)?;
        write_json(
            &files[5],
            &Summary {
                n_events: r.prediction.n_events,
                mae_sd: r.prediction.mae[1],
                mae_sd_95: r.rejection.iter().find(|x| x.kept_percent == 95.0).map(|x| x.metrics.mae[1]),
                detection: r.detection,
                variants: detection,
            },
        )?;
        for p in &files {
            m.output(&l.base, p)?;
        }
        m.write(&l.manifest("report"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub agent_id: u32,
    pub target_day: u32,
    pub first_day: u32,
    pub n_events: usize,
    pub n_target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n_params: usize,
    pub steps: u64,
    pub train_days: u32,
    pub precision: crate::seqmodel::Precision,
    pub epoch_loss: Vec<f64>,
}

/// One line of the per-event score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventScoreLine {
    pub agent_id: u32,
    pub day: u32,
    pub event_index: u32,
    pub losses: BTreeMap<String, f64>,
    pub knn: f64,
    pub loss_pct: f64,
    pub knn_pct: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScoreRow {
    pub agent_id: u32,
    pub agent_score: f64,
    pub label: bool,
}

/// A scored event with every configured score variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreDetail {
    pub event: ScoredEvent,
    pub score: f64,
    pub variants: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDetection {
    pub variant: ScoreVariant,
    pub metrics: DetectionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub variants: Vec<VariantDetection>,
    /// Rejection by the percentile-normalized total uncertainty.
    pub normalized_rejection: Vec<RejectionRow>,
}

#[derive(Serialize)]
struct PredictionRow {
    feature: String,
    mae: Option<f64>,
    mape: Option<f64>,
    acc: Option<f64>,
}

#[derive(Serialize)]
struct RejectionCsvRow {
    kept_percent: f64,
    n_events: usize,
    mae_st: f64,
    mae_sd: f64,
    mae_x: f64,
    mae_y: f64,
    acc_poi: f64,
    acc_dow: f64,
}

#[derive(Serialize)]
struct DetectionRow {
    variant: String,
    event_auroc: f64,
    event_aupr: f64,
    agent_auroc: Option<f64>,
    agent_aupr: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    n_events: usize,
    mae_sd: f64,
    mae_sd_95: Option<f64>,
    detection: Option<DetectionMetrics>,
    variants: Vec<DetectionRow>,
}
