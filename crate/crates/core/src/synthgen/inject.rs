use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::{trip_points, HOME_POI};
use super::{AgentRecord, LabeledDataset};
use crate::error::{Error, Result};
use crate::staypoint::{featurize_trip, reindex_days, StayEvent, DAY_MINUTES, TRIP_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Spatial,
    Temporal,
    SpatialTemporal,
    Swap,
    Permutation,
    HighDensity,
}

impl InjectionKind {
    pub const ALL: [InjectionKind; 6] = [
        InjectionKind::Spatial,
        InjectionKind::Temporal,
        InjectionKind::SpatialTemporal,
        InjectionKind::Swap,
        InjectionKind::Permutation,
        InjectionKind::HighDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InjectionKind::Spatial => "spatial",
            InjectionKind::Temporal => "temporal",
            InjectionKind::SpatialTemporal => "spatial_temporal",
            InjectionKind::Swap => "swap",
            InjectionKind::Permutation => "permutation",
            InjectionKind::HighDensity => "high_density",
        }
    }
}

impl fmt::Display for InjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InjectionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown injection kind `{s}`")))
    }
}

/// Magnitudes used by the individual injection kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionParams {
    /// Absolute start-time shift range, minutes (sign drawn uniformly).
    pub shift_min: (f64, f64),
    /// Stay-duration scale range.
    pub duration_scale: (f64, f64),
    /// Number of least-visited POI categories to draw from.
    pub rare_pois: usize,
    /// Events altered per selected agent (spatial / temporal kinds).
    pub events_per_agent: usize,
    pub permutation_days: u32,
    pub density_days: u32,
    /// Minimum ratio of replacement to original events in a dense window.
    pub density_factor: f64,
}

impl Default for InjectionParams {
    fn default() -> Self {
        InjectionParams {
            shift_min: (120.0, 360.0),
            duration_scale: (2.0, 4.0),
            rare_pois: 20,
            events_per_agent: 1,
            permutation_days: 6,
            density_days: 3,
            density_factor: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: InjectionKind,
    pub agent_fraction: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub params: InjectionParams,
}

impl InjectionSpec {
    pub fn new(kind: InjectionKind, agent_fraction: f64, rng_seed: u64) -> Self {
        InjectionSpec {
            kind,
            agent_fraction,
            rng_seed,
            params: InjectionParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let p = &self.params;
        if !(self.agent_fraction > 0.0 && self.agent_fraction <= 1.0) {
            return Err(Error::invalid("agent_fraction must lie in (0, 1]"));
        }
        if p.permutation_days == 0 || p.density_days == 0 || p.events_per_agent == 0 || p.rare_pois == 0 {
            return Err(Error::invalid("injection window lengths and counts must be positive"));
        }
        if !(p.shift_min.0 >= 0.0 && p.shift_min.1 >= p.shift_min.0) {
            return Err(Error::invalid("shift range must be nonnegative and ordered"));
        }
        if !(p.duration_scale.0 > 0.0 && p.duration_scale.1 >= p.duration_scale.0) {
            return Err(Error::invalid("duration scale range must be positive and ordered"));
        }
        Ok(())
    }
}

/// Apply injections in order and return the relabeled dataset.
///
/// Only test-period days are edited. Every event whose stay attributes differ
/// from the pre-injection data is labeled and gets a fresh inbound trip;
/// all other events are left byte-identical. Agents touched by an earlier
/// spec are not selected again. On error the input is returned untouched.
pub fn inject_anomalies(ds: &LabeledDataset, specs: &[InjectionSpec]) -> Result<LabeledDataset> {
    let mut out = ds.clone();
    let mut used: HashSet<usize> = ds
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.labels.iter().any(|&l| l))
        .map(|(i, _)| i)
        .collect();
    let rare = rare_pois(ds);
    for spec in specs {
        spec.validate()?;
        apply_spec(&mut out, spec, &rare, &mut used)?;
    }
    Ok(out)
}

fn rare_pois(ds: &LabeledDataset) -> Vec<u32> {
    let counts = ds.poi_counts();
    let mut order: Vec<u32> = (0..ds.n_poi).filter(|&p| p != HOME_POI).collect();
    order.sort_by_key(|&p| (counts[p as usize], p));
    order
}

fn apply_spec(
    ds: &mut LabeledDataset,
    spec: &InjectionSpec,
    rare_sorted: &[u32],
    used: &mut HashSet<usize>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let test = ds.split.test();
    let mut candidates: Vec<usize> = (0..ds.agents.len()).filter(|a| !used.contains(a)).collect();
    let mut count = (spec.agent_fraction * ds.agents.len() as f64).round() as usize;
    if spec.kind == InjectionKind::Swap {
        if ds.agents.len() < 2 {
            return Err(Error::invalid("swap needs at least two agents"));
        }
        if count == 1 {
            count = 2;
        }
        count -= count % 2;
    }
    if count == 0 {
        return Err(Error::invalid(format!(
            "agent_fraction {} selects no agents out of {}",
            spec.agent_fraction,
            ds.agents.len()
        )));
    }
    if count > candidates.len() {
        return Err(Error::invalid("not enough untouched agents for this injection"));
    }
    candidates.shuffle(&mut rng);
    candidates.truncate(count);
    candidates.sort_unstable();
    let rare: Vec<u32> = rare_sorted.iter().copied().take(spec.params.rare_pois).collect();

    match spec.kind {
        InjectionKind::Swap => {
            let mut order = candidates.clone();
            order.shuffle(&mut rng);
            for pair in order.chunks(2) {
                let day = rng.random_range(test.clone());
                swap_day(ds, pair[0], pair[1], day, spec.kind);
            }
        }
        _ => {
            for &a in &candidates {
                let rec = &ds.agents[a];
                let mut events = rec.events.clone();
                match spec.kind {
                    InjectionKind::Spatial | InjectionKind::Temporal | InjectionKind::SpatialTemporal => {
                        for _ in 0..spec.params.events_per_agent {
                            alter_event(&mut events, ds, spec, &rare, &mut rng)?;
                        }
                    }
                    InjectionKind::Permutation => permute_window(&mut events, ds, spec, &mut rng)?,
                    InjectionKind::HighDensity => densify_window(&mut events, ds, spec, &mut rng)?,
                    InjectionKind::Swap => unreachable!(),
                }
                commit(&mut ds.agents[a], events, spec.kind);
            }
        }
    }
    used.extend(candidates);
    Ok(())
}

/// Replace an agent's events with an edited version. Events whose stay
/// attributes match a previous event keep its trip and annotations; every
/// other event is labeled with `kind` and gets its inbound trip recomputed.
fn commit(rec: &mut AgentRecord, mut events: Vec<StayEvent>, kind: InjectionKind) {
    events.sort_by(|a, b| a.st.total_cmp(&b.st));
    reindex_days(&mut events);
    let key = |e: &StayEvent| [e.st.to_bits(), e.sd.to_bits(), e.x.to_bits(), e.y.to_bits(), e.poi as u64];
    let mut previous: HashMap<[u64; 5], Vec<([f64; TRIP_DIM], bool, Option<InjectionKind>)>> = HashMap::new();
    for ((e, &l), &k) in rec.events.iter().zip(&rec.labels).zip(&rec.kinds) {
        previous.entry(key(e)).or_default().push((e.trip, l, k));
    }
    let mut labels = Vec::with_capacity(events.len());
    let mut kinds = Vec::with_capacity(events.len());
    for i in 0..events.len() {
        match previous.get_mut(&key(&events[i])).and_then(|v| v.pop()) {
            Some((trip, l, k)) => {
                events[i].trip = trip;
                labels.push(l);
                kinds.push(k);
            }
            None => {
                events[i].trip = match i {
                    0 => [0.0; TRIP_DIM],
                    _ => featurize_trip(&trip_points(&events[i - 1], &events[i])),
                };
                labels.push(true);
                kinds.push(Some(kind));
            }
        }
    }
    rec.events = events;
    rec.labels = labels;
    rec.kinds = kinds;
}

fn day_range(events: &[StayEvent], day: u32) -> std::ops::Range<usize> {
    let lo = events.partition_point(|e| e.day < day);
    let hi = events.partition_point(|e| e.day <= day);
    lo..hi
}

/// Pick a test-day event that is neither the opening nor closing stay.
fn pick_inner_event<R: Rng>(events: &[StayEvent], ds: &LabeledDataset, rng: &mut R) -> Result<usize> {
    let test = ds.split.test();
    let inner: Vec<usize> = test
        .clone()
        .flat_map(|d| {
            let r = day_range(events, d);
            if r.len() >= 3 {
                (r.start + 1..r.end - 1).collect::<Vec<_>>()
            } else {
                Vec::new()
            }
        })
        .collect();
    if inner.is_empty() {
        // Fall back to any test event.
        let any: Vec<usize> = (0..events.len()).filter(|&i| test.contains(&events[i].day)).collect();
        if any.is_empty() {
            return Err(Error::invalid("agent has no test-period events"));
        }
        return Ok(any[rng.random_range(0..any.len())]);
    }
    Ok(inner[rng.random_range(0..inner.len())])
}

fn alter_event<R: Rng>(
    events: &mut Vec<StayEvent>,
    ds: &LabeledDataset,
    spec: &InjectionSpec,
    rare: &[u32],
    rng: &mut R,
) -> Result<()> {
    let i = pick_inner_event(events, ds, rng)?;
    let spatial = matches!(spec.kind, InjectionKind::Spatial | InjectionKind::SpatialTemporal);
    let temporal = matches!(spec.kind, InjectionKind::Temporal | InjectionKind::SpatialTemporal);
    if spatial {
        let poi = rare[rng.random_range(0..rare.len())];
        let (x, y) = ds.city.random_venue(poi, rng);
        events[i].poi = poi;
        events[i].x = x;
        events[i].y = y;
    }
    if temporal {
        let p = &spec.params;
        let day = events[i].day;
        let day_start = day as f64 * DAY_MINUTES;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let shift = sign * rng.random_range(p.shift_min.0..=p.shift_min.1).round();
        let scale = rng.random_range(p.duration_scale.0..=p.duration_scale.1);
        let mut st = events[i].st + shift;
        let sd = (events[i].sd * scale).round().max(10.0);
        st = st.clamp(day_start + 11.0, day_start + DAY_MINUTES - 12.0 - 10.0);
        let end = (st + sd).min(day_start + DAY_MINUTES - 12.0);
        let mut moved = events[i].clone();
        moved.st = st;
        moved.sd = end - st;
        events.remove(i);
        place_interval(events, moved);
    }
    Ok(())
}

/// Insert `moved` into its day, trimming or dropping other stays of that day
/// so that stays stay disjoint with at least a one-minute gap.
fn place_interval(events: &mut Vec<StayEvent>, moved: StayEvent) {
    let (lo, hi) = (moved.st - 1.0, moved.end() + 1.0);
    let range = day_range(events, moved.day);
    let mut kept = Vec::new();
    for e in events.drain(range.clone()) {
        let (s, t) = (e.st, e.end());
        if t <= lo || s >= hi {
            kept.push(e);
            continue;
        }
        if s < lo {
            let mut head = e.clone();
            head.sd = lo - s;
            if head.sd >= 5.0 {
                kept.push(head);
            }
        }
        if t > hi {
            let mut tail = e;
            tail.st = hi;
            tail.sd = t - hi;
            if tail.sd >= 5.0 {
                kept.push(tail);
            }
        }
    }
    kept.push(moved);
    kept.sort_by(|a, b| a.st.total_cmp(&b.st));
    events.splice(range.start..range.start, kept);
}

fn swap_day(ds: &mut LabeledDataset, a: usize, b: usize, day: u32, kind: InjectionKind) {
    let ra = day_range(&ds.agents[a].events, day);
    let rb = day_range(&ds.agents[b].events, day);
    let day_a: Vec<StayEvent> = ds.agents[a].events[ra.clone()].to_vec();
    let day_b: Vec<StayEvent> = ds.agents[b].events[rb.clone()].to_vec();
    let (id_a, id_b) = (ds.agents[a].agent_id, ds.agents[b].agent_id);

    let mut new_a = ds.agents[a].events.clone();
    new_a.splice(ra, day_b.into_iter().map(|mut e| {
        e.agent_id = id_a;
        e
    }));
    let mut new_b = ds.agents[b].events.clone();
    new_b.splice(rb, day_a.into_iter().map(|mut e| {
        e.agent_id = id_b;
        e
    }));
    commit(&mut ds.agents[a], new_a, kind);
    commit(&mut ds.agents[b], new_b, kind);
}

fn window_start<R: Rng>(ds: &LabeledDataset, len: u32, rng: &mut R) -> Result<u32> {
    let test = ds.split.test();
    if test.len() < len as usize {
        return Err(Error::invalid(format!("test period shorter than the {len}-day injection window")));
    }
    Ok(rng.random_range(test.start..=test.end - len))
}

fn permute_window<R: Rng>(
    events: &mut [StayEvent],
    ds: &LabeledDataset,
    spec: &InjectionSpec,
    rng: &mut R,
) -> Result<()> {
    let start = window_start(ds, spec.params.permutation_days, rng)?;
    let end = start + spec.params.permutation_days;
    let lo = events.partition_point(|e| e.day < start);
    let hi = events.partition_point(|e| e.day < end);
    let mut spatial: Vec<(f64, f64, u32)> = events[lo..hi].iter().map(|e| (e.x, e.y, e.poi)).collect();
    spatial.shuffle(rng);
    for (e, (x, y, poi)) in events[lo..hi].iter_mut().zip(spatial) {
        e.x = x;
        e.y = y;
        e.poi = poi;
    }
    Ok(())
}

fn densify_window<R: Rng>(
    events: &mut Vec<StayEvent>,
    ds: &LabeledDataset,
    spec: &InjectionSpec,
    rng: &mut R,
) -> Result<()> {
    let start = window_start(ds, spec.params.density_days, rng)?;
    let end = start + spec.params.density_days;
    let lo = events.partition_point(|e| e.day < start);
    let hi = events.partition_point(|e| e.day < end);
    let agent_id = events.first().map(|e| e.agent_id).unwrap_or(0);
    let mut replacement = Vec::new();
    for day in start..end {
        let original = events[lo..hi].iter().filter(|e| e.day == day).count().max(1);
        let target = (spec.params.density_factor * original as f64).ceil() as usize + rng.random_range(0..=original);
        let target = target.min(40);
        let base = day as f64 * DAY_MINUTES;
        let mut t = rng.random_range(0.0..60.0f64).round();
        let mut prev: Option<(f64, f64)> = None;
        let mut placed = 0;
        while placed < target {
            let poi = rng.random_range(1..ds.n_poi);
            let loc = ds.city.random_venue(poi, rng);
            let travel = prev.map_or(0.0, |p: (f64, f64)| ((p.0 - loc.0).hypot(p.1 - loc.1) / 0.8).ceil().max(1.0));
            let sd = rng.random_range(8.0..30.0f64).round();
            let st = t + travel;
            if st + sd > DAY_MINUTES - 2.0 {
                break;
            }
            replacement.push(StayEvent {
                agent_id,
                day,
                idx: 0,
                st: base + st,
                sd,
                x: loc.0,
                y: loc.1,
                poi,
                dow: day % 7,
                trip: [0.0; TRIP_DIM],
            });
            prev = Some(loc);
            t = st + sd;
            placed += 1;
        }
    }
    events.splice(lo..hi, replacement);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_population;

    fn labeled(ds: &LabeledDataset) -> usize {
        ds.agents.iter().flat_map(|a| a.labels.iter()).filter(|&&l| l).count()
    }

    #[test]
    fn zero_selection_is_an_error() {
        let ds = generate_population(10, 14, 3).unwrap();
        let spec = InjectionSpec::new(InjectionKind::Spatial, 0.01, 1);
        assert!(inject_anomalies(&ds, &[spec]).is_err());
    }

    #[test]
    fn swap_needs_two_agents() {
        let ds = generate_population(1, 14, 3).unwrap();
        let spec = InjectionSpec::new(InjectionKind::Swap, 1.0, 1);
        assert!(inject_anomalies(&ds, &[spec]).is_err());
    }

    #[test]
    fn spatial_replaces_one_poi_with_a_rare_category() {
        let ds = generate_population(20, 14, 3).unwrap();
        let rare: Vec<u32> = rare_pois(&ds).into_iter().take(20).collect();
        let spec = InjectionSpec::new(InjectionKind::Spatial, 0.05, 9);
        let out = inject_anomalies(&ds, &[spec]).unwrap();
        let touched: Vec<usize> = (0..20).filter(|&a| out.agents[a].labels.iter().any(|&l| l)).collect();
        assert_eq!(touched.len(), 1);
        let a = touched[0];
        let before = &ds.agents[a].events;
        let after = &out.agents[a].events;
        assert_eq!(before.len(), after.len());
        let changed_poi: Vec<usize> = (0..before.len()).filter(|&i| before[i].poi != after[i].poi).collect();
        assert!(changed_poi.len() <= 1);
        let moved: Vec<usize> = (0..before.len()).filter(|&i| before[i].x != after[i].x).collect();
        assert_eq!(moved.len(), 1);
        assert!(rare.contains(&after[moved[0]].poi));
        assert!(out.agents[a].labels[moved[0]]);
        assert!(out.agent_label(a));
    }

    #[test]
    fn high_density_triples_the_window() {
        let ds = generate_population(5, 21, 8).unwrap();
        let mut spec = InjectionSpec::new(InjectionKind::HighDensity, 0.2, 2);
        spec.params.density_days = 3;
        let out = inject_anomalies(&ds, &[spec]).unwrap();
        let a = (0..5).find(|&a| out.agent_label(a)).unwrap();
        let kinds = &out.agents[a].kinds;
        let days: HashSet<u32> = out.agents[a]
            .events
            .iter()
            .zip(kinds)
            .filter(|(_, k)| **k == Some(InjectionKind::HighDensity))
            .map(|(e, _)| e.day)
            .collect();
        let window: Vec<u32> = {
            let mut d: Vec<u32> = days.into_iter().collect();
            d.sort();
            d
        };
        let (first, last) = (window[0], *window.last().unwrap());
        assert!(last - first <= 3);
        let count = |rec: &AgentRecord| rec.events.iter().filter(|e| e.day >= first && e.day < first + 3).count();
        assert!(count(&out.agents[a]) >= 3 * count(&ds.agents[a]) - 3);
        assert!(out.agents[a].events.windows(2).all(|w| w[0].end() < w[1].st));
    }

    #[test]
    fn each_kind_keeps_days_ordered_and_labels_only_test_days() {
        let ds = generate_population(24, 28, 11).unwrap();
        let specs: Vec<InjectionSpec> = InjectionKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &k)| InjectionSpec::new(k, 2.0 / 24.0, 100 + i as u64))
            .collect();
        let out = inject_anomalies(&ds, &specs).unwrap();
        assert!(labeled(&out) > 0);
        let test = out.split.test();
        for (before, after) in ds.agents.iter().zip(out.agents.iter()) {
            for w in after.events.windows(2) {
                assert!(w[0].end() < w[1].st, "overlap in agent {}", after.agent_id);
            }
            for (e, &l) in after.events.iter().zip(after.labels.iter()) {
                if l {
                    assert!(test.contains(&e.day));
                }
            }
            let pre: Vec<&StayEvent> = before.events.iter().filter(|e| e.day < test.start).collect();
            let post: Vec<&StayEvent> = after.events.iter().filter(|e| e.day < test.start).collect();
            assert_eq!(pre, post);
        }
    }
}
