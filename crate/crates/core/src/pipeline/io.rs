use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staypoint::StayEvent;
use crate::synthgen::{AgentRecord, CityMap, InjectionKind, LabeledDataset, Split};

/// Version of every on-disk format written by the pipeline.
pub const SCHEMA_VERSION: u32 = 1;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub agent_id: u32,
    pub day: u32,
    pub event_index: u32,
    pub is_anomaly: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionRecord {
    pub agent_id: u32,
    pub day: u32,
    pub event_index: u32,
    pub kind: InjectionKind,
}

/// Dataset-level facts that the event file does not carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub n_agents: u32,
    pub n_poi: u32,
    pub split: Split,
    pub city: CityMap,
}

pub fn check_schema(found: u32, what: &str) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{what} has schema version {found}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

pub fn label_records(ds: &LabeledDataset) -> Vec<LabelRecord> {
    ds.agents
        .iter()
        .flat_map(|a| {
            a.events.iter().zip(&a.labels).map(|(e, &l)| LabelRecord {
                agent_id: e.agent_id,
                day: e.day,
                event_index: e.idx,
                is_anomaly: l,
            })
        })
        .collect()
}

pub fn injection_records(ds: &LabeledDataset) -> Vec<InjectionRecord> {
    ds.agents
        .iter()
        .flat_map(|a| {
            a.events.iter().zip(&a.kinds).filter_map(|(e, k)| {
                k.map(|kind| InjectionRecord {
                    agent_id: e.agent_id,
                    day: e.day,
                    event_index: e.idx,
                    kind,
                })
            })
        })
        .collect()
}

pub fn dataset_meta(ds: &LabeledDataset) -> DatasetMeta {
    DatasetMeta {
        schema_version: SCHEMA_VERSION,
        n_agents: ds.agents.len() as u32,
        n_poi: ds.n_poi,
        split: ds.split,
        city: ds.city.clone(),
    }
}

/// Rebuild a dataset from its event, label and injection records.
pub fn assemble_dataset(
    meta: &DatasetMeta,
    events: Vec<StayEvent>,
    labels: &[LabelRecord],
    injections: &[InjectionRecord],
) -> Result<LabeledDataset> {
    check_schema(meta.schema_version, "dataset metadata")?;
    let mut by_agent: BTreeMap<u32, Vec<StayEvent>> = BTreeMap::new();
    for e in events {
        if e.poi >= meta.n_poi || e.dow >= 7 {
            return Err(Error::Schema(format!(
                "event ({}, {}, {}) has poi {} / dow {} out of range",
                e.agent_id, e.day, e.idx, e.poi, e.dow
            )));
        }
        by_agent.entry(e.agent_id).or_default().push(e);
    }
    let mut agents: Vec<AgentRecord> = by_agent
        .into_iter()
        .map(|(id, ev)| {
            if ev.windows(2).any(|p| p[1].st < p[0].st) {
                return Err(Error::Schema(format!("events of agent {id} are not sorted")));
            }
            Ok(AgentRecord::new(id, ev))
        })
        .collect::<Result<_>>()?;
    let position: BTreeMap<(u32, u32, u32), (usize, usize)> = agents
        .iter()
        .enumerate()
        .flat_map(|(a, r)| r.events.iter().enumerate().map(move |(i, e)| ((e.agent_id, e.day, e.idx), (a, i))))
        .collect();
    let locate = |agent_id: u32, day: u32, idx: u32| {
        position.get(&(agent_id, day, idx)).copied().ok_or_else(|| {
            Error::Schema(format!("label refers to unknown event ({agent_id}, {day}, {idx})"))
        })
    };
    for l in labels {
        let (a, i) = locate(l.agent_id, l.day, l.event_index)?;
        agents[a].labels[i] = l.is_anomaly;
    }
    for r in injections {
        let (a, i) = locate(r.agent_id, r.day, r.event_index)?;
        agents[a].kinds[i] = Some(r.kind);
    }
    if agents.len() != meta.n_agents as usize {
        return Err(Error::Schema(format!(
            "metadata lists {} agents but events cover {}",
            meta.n_agents,
            agents.len()
        )));
    }
    Ok(LabeledDataset {
        n_poi: meta.n_poi,
        split: meta.split,
        city: meta.city.clone(),
        agents,
    })
}
