//! Synthetic mobility populations with labeled anomaly injection.
//!
//! [`generate_population`] simulates routine-driven agents in a square city
//! and [`inject_anomalies`] perturbs the test period with the six injection
//! kinds. Both are pure functions of their inputs and seed.

mod inject;
mod population;

pub use inject::{inject_anomalies, InjectionKind, InjectionParams, InjectionSpec};
pub use population::{
    generate_population, generate_population_with, recompute_trips, render_gps, trip_points, AgentProfile,
    CityMap, NoiseLevel, PopulationConfig, RoutineEntry, HOME_POI, SCHOOL_POI, WORK_POI,
};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staypoint::StayEvent;

/// Day boundaries of the train / validation / test periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: u32,
    pub val_end: u32,
    pub n_days: u32,
}

impl Split {
    /// Split `n_days` by the ratio `train : val : test`.
    pub fn from_ratio(n_days: u32, ratio: [u32; 3]) -> Result<Split> {
        let total: u32 = ratio.iter().sum();
        if total == 0 || ratio[0] == 0 || ratio[2] == 0 {
            return Err(Error::Config("split ratio needs non-zero train and test parts".into()));
        }
        let at = |parts: u32| ((n_days as f64) * parts as f64 / total as f64).round() as u32;
        let split = Split {
            train_end: at(ratio[0]).max(1),
            val_end: at(ratio[0] + ratio[1]),
            n_days,
        };
        split.validate()?;
        Ok(split)
    }

    /// Explicit day counts for each period.
    pub fn from_days(train: u32, val: u32, test: u32) -> Result<Split> {
        let split = Split {
            train_end: train,
            val_end: train + val,
            n_days: train + val + test,
        };
        split.validate()?;
        Ok(split)
    }

    fn validate(&self) -> Result<()> {
        if self.train_end == 0 || self.train_end > self.val_end || self.val_end >= self.n_days {
            return Err(Error::Config(format!("degenerate split {self:?}")));
        }
        Ok(())
    }

    pub fn train(&self) -> Range<u32> {
        0..self.train_end
    }

    pub fn validation(&self) -> Range<u32> {
        self.train_end..self.val_end
    }

    pub fn test(&self) -> Range<u32> {
        self.val_end..self.n_days
    }
}

/// One agent's events with per-event anomaly annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: u32,
    pub events: Vec<StayEvent>,
    pub labels: Vec<bool>,
    pub kinds: Vec<Option<InjectionKind>>,
}

impl AgentRecord {
    pub fn new(agent_id: u32, events: Vec<StayEvent>) -> Self {
        let n = events.len();
        AgentRecord {
            agent_id,
            events,
            labels: vec![false; n],
            kinds: vec![None; n],
        }
    }

    /// Events of one day.
    pub fn day(&self, day: u32) -> &[StayEvent] {
        let lo = self.events.partition_point(|e| e.day < day);
        let hi = self.events.partition_point(|e| e.day <= day);
        &self.events[lo..hi]
    }
}

/// A generated population with labels and the split it was generated for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub n_poi: u32,
    pub split: Split,
    pub city: CityMap,
    pub agents: Vec<AgentRecord>,
}

impl LabeledDataset {
    pub fn n_days(&self) -> u32 {
        self.split.n_days
    }

    /// An agent is anomalous when any of its test-period events is.
    pub fn agent_label(&self, agent: usize) -> bool {
        let rec = &self.agents[agent];
        let test = self.split.test();
        rec.events
            .iter()
            .zip(rec.labels.iter())
            .any(|(e, &l)| l && test.contains(&e.day))
    }

    pub fn agent_labels(&self) -> Vec<bool> {
        (0..self.agents.len()).map(|a| self.agent_label(a)).collect()
    }

    pub fn n_events(&self) -> usize {
        self.agents.iter().map(|a| a.events.len()).sum()
    }

    /// The agents at the given indices, in that order.
    pub fn subset(&self, agents: &[usize]) -> Result<LabeledDataset> {
        let mut picked = Vec::with_capacity(agents.len());
        for &a in agents {
            let rec = self
                .agents
                .get(a)
                .ok_or_else(|| Error::invalid(format!("agent index {a} out of range")))?;
            picked.push(rec.clone());
        }
        Ok(LabeledDataset {
            n_poi: self.n_poi,
            split: self.split,
            city: self.city.clone(),
            agents: picked,
        })
    }

    /// Empirical visit count per POI category.
    pub fn poi_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_poi as usize];
        for e in self.agents.iter().flat_map(|a| a.events.iter()) {
            counts[e.poi as usize] += 1;
        }
        counts
    }
}
