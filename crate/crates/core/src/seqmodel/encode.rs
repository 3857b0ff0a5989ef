use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, N_DOW, N_NUMERIC};
use crate::error::{Error, Result};
use crate::staypoint::{EventSequence, StayEvent, TRIP_DIM};
use crate::uncertainty::time_angle_encode;

/// Train-split z-score statistics for numeric targets and trip features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; N_NUMERIC],
    pub std: [f64; N_NUMERIC],
    pub trip_mean: [f64; TRIP_DIM],
    pub trip_std: [f64; TRIP_DIM],
}

/// Numeric features in natural units: time-of-day circle point, stay
/// duration in minutes, and location in km.
pub fn raw_numeric(e: &StayEvent, time_radius: f64) -> [f64; N_NUMERIC] {
    let (tx, ty) = time_angle_encode(e.time_of_day(), time_radius);
    [tx, ty, e.sd, e.x, e.y]
}

fn moments<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> Option<([f64; N], [f64; N])> {
    let mut n = 0usize;
    let mut mean = [0.0; N];
    let mut m2 = [0.0; N];
    for row in rows {
        n += 1;
        for k in 0..N {
            let delta = row[k] - mean[k];
            mean[k] += delta / n as f64;
            m2[k] += delta * (row[k] - mean[k]);
        }
    }
    if n == 0 {
        return None;
    }
    let mut std = [1.0; N];
    for k in 0..N {
        let s = (m2[k] / n as f64).sqrt();
        if s > 1e-9 {
            std[k] = s;
        }
    }
    Some((mean, std))
}

impl NormStats {
    pub fn fit<'a>(events: impl Iterator<Item = &'a StayEvent> + Clone, time_radius: f64) -> Result<Self> {
        let (mean, std) = moments(events.clone().map(|e| raw_numeric(e, time_radius)))
            .ok_or_else(|| Error::invalid("cannot fit normalization on zero events"))?;
        let (trip_mean, trip_std) = moments(events.map(|e| e.trip)).expect("nonempty");
        Ok(NormStats {
            mean,
            std,
            trip_mean,
            trip_std,
        })
    }

    pub fn normalize(&self, k: usize, v: f64) -> f64 {
        (v - self.mean[k]) / self.std[k]
    }

    pub fn denormalize(&self, k: usize, z: f64) -> f64 {
        z * self.std[k] + self.mean[k]
    }

    /// Convert a variance in normalized units back to natural units.
    pub fn variance_to_raw(&self, k: usize, var: f64) -> f64 {
        var * self.std[k] * self.std[k]
    }

    pub fn encode_event(&self, e: &StayEvent, cfg: &ModelConfig) -> Result<EncodedEvent> {
        if e.poi as usize >= cfg.n_poi {
            return Err(Error::invalid(format!("poi {} outside [0, {})", e.poi, cfg.n_poi)));
        }
        if e.dow as usize >= N_DOW {
            return Err(Error::invalid(format!("dow {} outside [0, 7)", e.dow)));
        }
        if e.idx as usize >= cfg.max_day_events {
            return Err(Error::invalid(format!(
                "within-day index {} exceeds table size {}",
                e.idx, cfg.max_day_events
            )));
        }
        let raw = raw_numeric(e, cfg.time_radius);
        let mut numeric = [0.0; N_NUMERIC];
        for k in 0..N_NUMERIC {
            numeric[k] = self.normalize(k, raw[k]);
        }
        let mut trip = [0.0; TRIP_DIM];
        for k in 0..TRIP_DIM {
            trip[k] = (e.trip[k] - self.trip_mean[k]) / self.trip_std[k];
        }
        Ok(EncodedEvent {
            numeric,
            trip,
            poi: e.poi as usize,
            dow: e.dow as usize,
            day_pos: e.idx as usize,
        })
    }

    pub fn encode_sequence(&self, seq: &EventSequence, cfg: &ModelConfig) -> Result<EncodedSequence> {
        if seq.len() > cfg.max_len {
            return Err(Error::invalid(format!("sequence of {} events exceeds max_len {}", seq.len(), cfg.max_len)));
        }
        let events = seq
            .events
            .iter()
            .map(|e| self.encode_event(e, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSequence {
            agent_id: seq.agent_id,
            target_day: seq.target_day,
            events,
            refs: seq.events.iter().map(|e| (e.day, e.idx)).collect(),
            target: seq.target_positions(),
        })
    }
}

/// Model-ready event: normalized numeric inputs and categorical ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedEvent {
    pub numeric: [f64; N_NUMERIC],
    pub trip: [f64; TRIP_DIM],
    pub poi: usize,
    pub dow: usize,
    pub day_pos: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub agent_id: u32,
    pub target_day: u32,
    pub events: Vec<EncodedEvent>,
    /// `(day, idx)` of each event.
    pub refs: Vec<(u32, u32)>,
    /// Positions of the target day's events.
    pub target: Range<usize>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
