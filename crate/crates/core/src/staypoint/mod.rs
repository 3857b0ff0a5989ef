//! Stay-point tokenization.
//!
//! Raw GPS tracks become stay events (a dwell inside a small radius), the
//! movement between two stays becomes a fixed-length trip feature vector, and
//! each agent's events are grouped into multi-day windows for the model.

mod extract;
mod trip;
mod window;

pub use extract::{attach_poi, extract_stay_events, split_trip_segments, StayParams};
pub use trip::{featurize_trip, TRIP_DIM};
pub use window::{build_windows, build_windows_for_days, EventSequence};

use serde::{Deserialize, Serialize};

/// Minutes in one day.
pub const DAY_MINUTES: f64 = 1440.0;

/// One raw GPS reading in a city-local planar frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub agent_id: u32,
    /// Minutes since the dataset epoch (day 0, 00:00, a Monday).
    pub t: f64,
    /// Kilometres.
    pub x: f64,
    pub y: f64,
}

/// One stay-point event.
///
/// Field order and names are the on-disk event schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StayEvent {
    pub agent_id: u32,
    pub day: u32,
    pub idx: u32,
    #[serde(rename = "st_min")]
    pub st: f64,
    #[serde(rename = "sd_min")]
    pub sd: f64,
    #[serde(rename = "x_km")]
    pub x: f64,
    #[serde(rename = "y_km")]
    pub y: f64,
    pub poi: u32,
    pub dow: u32,
    /// Features of the inbound trip.
    pub trip: [f64; TRIP_DIM],
}

impl StayEvent {
    pub fn end(&self) -> f64 {
        self.st + self.sd
    }

    /// Minutes since local midnight of the start time.
    pub fn time_of_day(&self) -> f64 {
        self.st.rem_euclid(DAY_MINUTES)
    }

    /// Day-of-week implied by the start time (day 0 is a Monday).
    pub fn implied_dow(st: f64) -> u32 {
        ((st / DAY_MINUTES).floor() as i64).rem_euclid(7) as u32
    }

    /// True when everything except the positional indices matches bit for bit.
    pub fn same_content(&self, other: &StayEvent) -> bool {
        self.agent_id == other.agent_id
            && self.st.to_bits() == other.st.to_bits()
            && self.sd.to_bits() == other.sd.to_bits()
            && self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.poi == other.poi
            && self.dow == other.dow
            && self
                .trip
                .iter()
                .zip(other.trip.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Recompute `day` and `idx` for a chronologically sorted agent event list.
pub fn reindex_days(events: &mut [StayEvent]) {
    let mut current_day = u32::MAX;
    let mut idx = 0;
    for e in events.iter_mut() {
        let day = (e.st / DAY_MINUTES).floor() as u32;
        if day != current_day {
            current_day = day;
            idx = 0;
        }
        e.day = day;
        e.idx = idx;
        e.dow = StayEvent::implied_dow(e.st);
        idx += 1;
    }
}
