use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::StayEvent;
use crate::error::{Error, Result};

/// An agent's events over the days `target_day - w ..= target_day`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub agent_id: u32,
    pub target_day: u32,
    pub window_days: u32,
    pub events: Vec<StayEvent>,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Positions of the target day's events inside the sequence.
    pub fn target_positions(&self) -> Range<usize> {
        let start = self.events.partition_point(|e| e.day < self.target_day);
        start..self.events.len()
    }
}

/// Build one window per day on which the agent has events.
///
/// `events` must be one agent's chronologically sorted events. Windows longer
/// than `max_len` keep only the most recent `max_len` events.
pub fn build_windows(events: &[StayEvent], w: u32, max_len: usize) -> Result<Vec<EventSequence>> {
    build_windows_for_days(events, w, max_len, 0..u32::MAX)
}

/// Same as [`build_windows`], restricted to target days in `days`.
pub fn build_windows_for_days(
    events: &[StayEvent],
    w: u32,
    max_len: usize,
    days: Range<u32>,
) -> Result<Vec<EventSequence>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be positive"));
    }
    if events.windows(2).any(|p| p[1].st < p[0].st || p[1].agent_id != p[0].agent_id) {
        return Err(Error::invalid("events must be one agent's sorted events"));
    }
    let mut target_days: Vec<u32> = events.iter().map(|e| e.day).filter(|d| days.contains(d)).collect();
    target_days.dedup();

    let mut out = Vec::with_capacity(target_days.len());
    for d in target_days {
        let first_day = d.saturating_sub(w);
        let lo = events.partition_point(|e| e.day < first_day);
        let hi = events.partition_point(|e| e.day <= d);
        let lo = lo.max(hi.saturating_sub(max_len));
        out.push(EventSequence {
            agent_id: events[lo].agent_id,
            target_day: d,
            window_days: w,
            events: events[lo..hi].to_vec(),
        });
    }
    Ok(out)
}
