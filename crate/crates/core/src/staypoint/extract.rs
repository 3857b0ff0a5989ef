use std::ops::Range;

use super::{featurize_trip, reindex_days, GpsPoint, StayEvent, DAY_MINUTES, TRIP_DIM};
use crate::error::{Error, Result};

/// Stay detection thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StayParams {
    /// Minimum dwell in minutes.
    pub min_dwell: f64,
    /// Maximum distance (km) of any point from the stay centroid.
    pub stay_radius: f64,
}

impl Default for StayParams {
    fn default() -> Self {
        StayParams {
            min_dwell: 5.0,
            stay_radius: 0.1,
        }
    }
}

/// Detect stay points in one agent's time-sorted track.
///
/// A stay is a maximal run of consecutive points that all lie within
/// `stay_radius` of the run's centroid and spans at least `min_dwell`
/// minutes. Runs crossing midnight are split at the day boundary. Points not
/// covered by a stay form the trip segment of the following event; the first
/// event of the track gets an all-zero trip vector.
///
/// GPS carries no POI label, so `poi` is left at 0; see [`attach_poi`].
pub fn extract_stay_events(track: &[GpsPoint], params: StayParams) -> Result<Vec<StayEvent>> {
    if !(params.min_dwell > 0.0) || !(params.stay_radius >= 0.0) {
        return Err(Error::invalid("min_dwell must be > 0 and stay_radius >= 0"));
    }
    if track.is_empty() {
        return Ok(Vec::new());
    }
    let agent_id = track[0].agent_id;
    for pair in track.windows(2) {
        if pair[1].agent_id != agent_id {
            return Err(Error::invalid("track mixes several agents"));
        }
        if !(pair[1].t > pair[0].t) {
            return Err(Error::invalid(format!(
                "track not strictly increasing in time at t={}",
                pair[1].t
            )));
        }
    }

    let stays = find_stays(track, params);
    let mut events = Vec::with_capacity(stays.len());
    let mut prev_end: Option<usize> = None;
    for range in stays {
        let (cx, cy) = centroid(&track[range.clone()]);
        let first = track[range.start];
        let last = track[range.end - 1];
        let trip = match prev_end {
            Some(p) => featurize_trip(&track[p..=range.start]),
            None => [0.0; TRIP_DIM],
        };
        events.push(StayEvent {
            agent_id,
            day: 0,
            idx: 0,
            st: first.t,
            sd: last.t - first.t,
            x: cx,
            y: cy,
            poi: 0,
            dow: 0,
            trip,
        });
        prev_end = Some(range.end - 1);
    }
    reindex_days(&mut events);
    Ok(events)
}

/// Index ranges of the trip segments between consecutive stays, including
/// the last point of the previous stay and the first point of the next.
pub fn split_trip_segments(track: &[GpsPoint], params: StayParams) -> Vec<Range<usize>> {
    let stays = find_stays(track, params);
    stays
        .windows(2)
        .map(|w| (w[0].end - 1)..(w[1].start + 1))
        .collect()
}

/// Copy POI labels onto detected events from reference events of the same
/// agent, choosing the reference with the largest time overlap.
pub fn attach_poi(detected: &mut [StayEvent], reference: &[StayEvent]) {
    for e in detected.iter_mut() {
        let best = reference
            .iter()
            .filter(|r| r.agent_id == e.agent_id)
            .map(|r| (r, (e.end().min(r.end()) - e.st.max(r.st)).max(0.0)))
            .filter(|(_, overlap)| *overlap > 0.0 || e.sd == 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((r, _)) = best {
            e.poi = r.poi;
        }
    }
}

fn find_stays(track: &[GpsPoint], params: StayParams) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let n = track.len();
    let mut i = 0;
    while i < n {
        let j = grow_cluster(track, i, params.stay_radius);
        if track[j - 1].t - track[i].t >= params.min_dwell {
            split_at_midnight(track, i..j, params.min_dwell, &mut out);
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Largest `j` such that every point in `start..j` lies within `radius` of
/// the centroid of `start..j`.
fn grow_cluster(track: &[GpsPoint], start: usize, radius: f64) -> usize {
    let origin = track[start];
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut j = start + 1;
    while j < track.len() {
        let (ox, oy) = (track[j].x - origin.x, track[j].y - origin.y);
        let count = (j - start + 1) as f64;
        let (cx, cy) = ((sx + ox) / count, (sy + oy) / count);
        let (bx0, bx1, by0, by1) = (min_x.min(ox), max_x.max(ox), min_y.min(oy), max_y.max(oy));
        let far_x = (cx - bx0).abs().max((bx1 - cx).abs());
        let far_y = (cy - by0).abs().max((by1 - cy).abs());
        let fits = if far_x.hypot(far_y) <= radius {
            true
        } else {
            track[start..=j]
                .iter()
                .all(|p| (p.x - origin.x - cx).hypot(p.y - origin.y - cy) <= radius)
        };
        if !fits {
            break;
        }
        sx += ox;
        sy += oy;
        min_x = bx0;
        max_x = bx1;
        min_y = by0;
        max_y = by1;
        j += 1;
    }
    j
}

fn split_at_midnight(track: &[GpsPoint], range: Range<usize>, min_dwell: f64, out: &mut Vec<Range<usize>>) {
    let mut piece_start = range.start;
    for k in range.start + 1..range.end {
        let day_prev = (track[k - 1].t / DAY_MINUTES).floor();
        let day_here = (track[k].t / DAY_MINUTES).floor();
        if day_here != day_prev {
            push_piece(track, piece_start..k, min_dwell, out);
            piece_start = k;
        }
    }
    push_piece(track, piece_start..range.end, min_dwell, out);
}

fn push_piece(track: &[GpsPoint], range: Range<usize>, min_dwell: f64, out: &mut Vec<Range<usize>>) {
    if track[range.end - 1].t - track[range.start].t >= min_dwell {
        out.push(range);
    }
}

/// Centroid computed as an offset from the first point, so a run of
/// identical points reproduces that point exactly.
fn centroid(points: &[GpsPoint]) -> (f64, f64) {
    let origin = points[0];
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + (p.x - origin.x), sy + (p.y - origin.y)));
    (origin.x + sx / n, origin.y + sy / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: f64, x: f64, y: f64) -> GpsPoint {
        GpsPoint { agent_id: 3, t, x, y }
    }

    fn dwell(start: f64, end: f64, step: f64, x: f64, y: f64) -> Vec<GpsPoint> {
        let mut v = Vec::new();
        let mut t = start;
        while t <= end + 1e-9 {
            v.push(pt(t, x, y));
            t += step;
        }
        v
    }

    #[test]
    fn single_cluster_gives_one_event() {
        // 10 points over 20 minutes.
        let track: Vec<_> = (0..10).map(|i| pt(100.0 + i as f64 * 20.0 / 9.0, 1.0, 2.0)).collect();
        let ev = extract_stay_events(&track, StayParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0].sd - 20.0).abs() < 1e-9);
        assert_eq!((ev[0].x, ev[0].y), (1.0, 2.0));
        assert_eq!(ev[0].trip, [0.0; TRIP_DIM]);
    }

    #[test]
    fn two_clusters_with_a_trip() {
        let mut track: Vec<_> = (0..10).map(|i| pt(i as f64 * 20.0 / 9.0, 0.0, 0.0)).collect();
        for k in 1..=5 {
            track.push(pt(20.0 + k as f64, 0.5 * k as f64, 0.0));
        }
        track.extend((0..10).map(|i| pt(26.0 + i as f64 * 30.0 / 9.0, 3.0, 0.0)));
        let ev = extract_stay_events(&track, StayParams::default()).unwrap();
        assert_eq!(ev.len(), 2);
        assert!((ev[1].sd - 30.0).abs() < 1e-9);
        assert!((ev[1].trip[0] - 3.0).abs() < 1e-9);
        assert_eq!(split_trip_segments(&track, StayParams::default()).len(), 1);
    }

    #[test]
    fn short_dwell_is_not_a_stay() {
        let track = dwell(0.0, 4.0, 1.0, 0.0, 0.0);
        assert!(extract_stay_events(&track, StayParams::default()).unwrap().is_empty());
    }

    #[test]
    fn unsorted_track_is_rejected() {
        let track = vec![pt(2.0, 0.0, 0.0), pt(1.0, 0.0, 0.0)];
        assert!(extract_stay_events(&track, StayParams::default()).is_err());
        assert!(extract_stay_events(&[], StayParams::default()).unwrap().is_empty());
    }

    #[test]
    fn stays_split_at_midnight() {
        let track = dwell(1400.0, 1500.0, 5.0, 0.0, 0.0);
        let ev = extract_stay_events(&track, StayParams::default()).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].day, 0);
        assert_eq!(ev[1].day, 1);
        assert_eq!(ev[1].st, 1440.0);
        assert_eq!(ev[1].idx, 0);
    }

    #[test]
    fn noisy_cluster_within_radius_is_one_stay() {
        let track: Vec<_> = (0..30)
            .map(|i| pt(i as f64, 0.03 * ((i % 3) as f64 - 1.0), 0.02 * ((i % 2) as f64)))
            .collect();
        let ev = extract_stay_events(&track, StayParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].sd, 29.0);
    }
}
