use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentRecord, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::staypoint::{featurize_trip, reindex_days, GpsPoint, StayEvent, TRIP_DIM};

pub const HOME_POI: u32 = 0;
pub const WORK_POI: u32 = 1;
pub const SCHOOL_POI: u32 = 2;
const FIRST_LEISURE_POI: u32 = 3;

/// Last minute of the day at which the closing home stay ends.
const DAY_CLOSE: i64 = 1439;
/// Shortest home stay inserted between activities.
const MIN_HOME_STAY: i64 = 30;
/// GPS sampling interval while dwelling, minutes.
const STAY_SAMPLE_MIN: i64 = 5;

/// Generator knobs that are not per-agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_poi: u32,
    /// Side of the square city, km.
    pub city_km: f64,
    pub venues_per_category: usize,
    /// Weeks ratio train : validation : test.
    pub split_ratio: [u32; 3],
    /// Zipf exponent of leisure category popularity.
    pub leisure_zipf: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_poi: 40,
            city_km: 20.0,
            venues_per_category: 30,
            split_ratio: [3, 1, 4],
            leisure_zipf: 1.3,
        }
    }
}

/// Venue locations for every POI category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityMap {
    pub side_km: f64,
    pub venues: Vec<Vec<(f64, f64)>>,
}

impl CityMap {
    fn generate(cfg: &PopulationConfig, seed: u64) -> CityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xC17]));
        let side = cfg.city_km;
        let hubs: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.25 * side..0.75 * side), rng.random_range(0.25 * side..0.75 * side)))
            .collect();
        let spread = Normal::new(0.0, side * 0.15).expect("positive stddev");
        let venues = (0..cfg.n_poi)
            .map(|c| {
                let n = if c == HOME_POI { 0 } else { cfg.venues_per_category };
                (0..n)
                    .map(|_| {
                        if rng.random_bool(0.6) {
                            let (hx, hy) = hubs[rng.random_range(0..hubs.len())];
                            let x: f64 = hx + spread.sample(&mut rng);
                            let y: f64 = hy + spread.sample(&mut rng);
                            (x.clamp(0.0, side), y.clamp(0.0, side))
                        } else {
                            (rng.random_range(0.0..side), rng.random_range(0.0..side))
                        }
                    })
                    .collect()
            })
            .collect();
        CityMap { side_km: side, venues }
    }

    /// A uniformly chosen venue of `poi`, or a uniform city location when the
    /// category has no venues.
    pub fn random_venue<R: Rng>(&self, poi: u32, rng: &mut R) -> (f64, f64) {
        let list = &self.venues[poi as usize];
        if list.is_empty() {
            (rng.random_range(0.0..self.side_km), rng.random_range(0.0..self.side_km))
        } else {
            list[rng.random_range(0..list.len())]
        }
    }
}

/// One recurring activity of an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutineEntry {
    pub poi: u32,
    pub loc: (f64, f64),
    /// Minutes after midnight, in `[0, 1440)`.
    pub typical_start: f64,
    /// Minutes, positive.
    pub typical_duration: f64,
    /// Bit `d` set when the activity may happen on day-of-week `d`.
    pub dow_mask: u8,
    /// Probability that the activity happens on an eligible day.
    pub probability: f64,
}

/// Per-agent behavioural noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    /// Start-time jitter stddev, minutes.
    pub start_min: f64,
    /// Log-normal duration jitter sigma.
    pub duration_log: f64,
    /// Location jitter stddev, km.
    pub location_km: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: u32,
    pub home_loc: (f64, f64),
    pub work_loc: Option<(f64, f64)>,
    pub routine: Vec<RoutineEntry>,
    /// Venues used for unplanned visits.
    pub favorites: Vec<(u32, (f64, f64))>,
    pub extra_visit_prob: f64,
    pub noise: NoiseLevel,
    /// Travel speed, km per minute.
    pub speed: f64,
}

/// Generate a population with the default [`PopulationConfig`].
pub fn generate_population(n_agents: u32, n_days: u32, seed: u64) -> Result<LabeledDataset> {
    generate_population_with(&PopulationConfig::default(), n_agents, n_days, seed, Exec::Parallel)
}

pub fn generate_population_with(
    cfg: &PopulationConfig,
    n_agents: u32,
    n_days: u32,
    seed: u64,
    exec: Exec,
) -> Result<LabeledDataset> {
    if n_agents == 0 {
        return Err(Error::invalid("n_agents must be at least 1"));
    }
    if n_days < 7 {
        return Err(Error::invalid("n_days must be at least 7 (windows need full weeks)"));
    }
    if cfg.n_poi < FIRST_LEISURE_POI + 1 {
        return Err(Error::Config("n_poi must leave room for leisure categories".into()));
    }
    let split = Split::from_ratio(n_days, cfg.split_ratio)?;
    let city = CityMap::generate(cfg, seed);
    let ids: Vec<u32> = (0..n_agents).collect();
    let agents = exec.map(&ids, |&id| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, id as u64]));
        let profile = draw_profile(id, cfg, &city, &mut rng);
        let events = simulate_agent(&profile, n_days, &mut rng);
        AgentRecord::new(id, events)
    });
    Ok(LabeledDataset {
        n_poi: cfg.n_poi,
        split,
        city,
        agents,
    })
}

fn leisure_category<R: Rng>(cfg: &PopulationConfig, rng: &mut R) -> u32 {
    let n = cfg.n_poi - FIRST_LEISURE_POI;
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-cfg.leisure_zipf)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return FIRST_LEISURE_POI + i as u32;
        }
        u -= w;
    }
    cfg.n_poi - 1
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// A venue of `poi` at least 0.5 km from every location in `avoid`,
/// preferring the closer half of the candidates.
fn pick_venue<R: Rng>(city: &CityMap, poi: u32, avoid: &[(f64, f64)], rng: &mut R) -> (f64, f64) {
    let home = avoid[0];
    let mut candidates: Vec<(f64, f64)> = city.venues[poi as usize]
        .iter()
        .copied()
        .filter(|v| avoid.iter().all(|a| dist(*a, *v) >= 0.5))
        .collect();
    if candidates.is_empty() {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        return (home.0 + 2.0 * angle.cos(), home.1 + 2.0 * angle.sin());
    }
    candidates.sort_by(|a, b| dist(home, *a).total_cmp(&dist(home, *b)));
    let keep = candidates.len().div_ceil(2);
    candidates[rng.random_range(0..keep)]
}

fn random_mask<R: Rng>(rng: &mut R, days: &[u8], counts: std::ops::RangeInclusive<usize>) -> u8 {
    let count = rng.random_range(counts);
    let mut pool = days.to_vec();
    let mut mask = 0u8;
    for _ in 0..count.min(pool.len()) {
        let i = rng.random_range(0..pool.len());
        mask |= 1 << pool.swap_remove(i);
    }
    mask
}

const WEEKDAYS: u8 = 0b0001_1111;
const WEEKEND: u8 = 0b0110_0000;

fn draw_profile<R: Rng>(agent_id: u32, cfg: &PopulationConfig, city: &CityMap, rng: &mut R) -> AgentProfile {
    let side = city.side_km;
    let home = (rng.random_range(0.05 * side..0.95 * side), rng.random_range(0.05 * side..0.95 * side));
    let noise = NoiseLevel {
        start_min: (rng.random_range(5f64.ln()..60f64.ln())).exp(),
        duration_log: rng.random_range(0.05..0.35),
        location_km: rng.random_range(0.005..0.04),
    };
    let mut routine = Vec::new();
    let mut avoid = vec![home];
    let archetype: f64 = rng.random();
    let mut anchor_end = 12.0 * 60.0;
    let mut work_loc = None;

    if archetype < 0.6 {
        let loc = pick_venue(city, WORK_POI, &avoid, rng);
        avoid.push(loc);
        work_loc = Some(loc);
        let start = rng.random_range(7.0 * 60.0..10.0 * 60.0);
        let duration = rng.random_range(7.0 * 60.0..9.5 * 60.0);
        anchor_end = start + duration;
        let mask = if rng.random_bool(0.15) { WEEKDAYS | 1 << 5 } else { WEEKDAYS };
        routine.push(RoutineEntry {
            poi: WORK_POI,
            loc,
            typical_start: start,
            typical_duration: duration,
            dow_mask: mask,
            probability: rng.random_range(0.9..0.99),
        });
    } else if archetype < 0.75 {
        let loc = pick_venue(city, SCHOOL_POI, &avoid, rng);
        avoid.push(loc);
        work_loc = Some(loc);
        let start = rng.random_range(7.5 * 60.0..9.0 * 60.0);
        let duration = rng.random_range(5.0 * 60.0..7.0 * 60.0);
        anchor_end = start + duration;
        routine.push(RoutineEntry {
            poi: SCHOOL_POI,
            loc,
            typical_start: start,
            typical_duration: duration,
            dow_mask: WEEKDAYS,
            probability: rng.random_range(0.9..0.99),
        });
    }
    let irregular = work_loc.is_none();

    let n_leisure = if irregular { rng.random_range(2..=3) } else { rng.random_range(0..=2) };
    for _ in 0..n_leisure {
        let poi = leisure_category(cfg, rng);
        let loc = pick_venue(city, poi, &avoid, rng);
        let (start, mask) = if irregular {
            (
                rng.random_range(9.0 * 60.0..17.0 * 60.0),
                random_mask(rng, &[0, 1, 2, 3, 4, 5, 6], 2..=4),
            )
        } else {
            (
                anchor_end + rng.random_range(30.0..90.0),
                random_mask(rng, &[0, 1, 2, 3, 4], 1..=3),
            )
        };
        routine.push(RoutineEntry {
            poi,
            loc,
            typical_start: start.min(20.0 * 60.0),
            typical_duration: rng.random_range(30.0..150.0),
            dow_mask: mask,
            probability: rng.random_range(0.6..0.95),
        });
    }
    for _ in 0..rng.random_range(1..=2) {
        let poi = leisure_category(cfg, rng);
        let loc = pick_venue(city, poi, &avoid, rng);
        routine.push(RoutineEntry {
            poi,
            loc,
            typical_start: rng.random_range(10.0 * 60.0..16.0 * 60.0),
            typical_duration: rng.random_range(60.0..180.0),
            dow_mask: random_mask(rng, &[5, 6], 1..=2) & WEEKEND,
            probability: rng.random_range(0.5..0.9),
        });
    }
    let favorites = (0..3)
        .map(|_| {
            let poi = leisure_category(cfg, rng);
            (poi, pick_venue(city, poi, &avoid, rng))
        })
        .collect();

    AgentProfile {
        agent_id,
        home_loc: home,
        work_loc,
        routine,
        favorites,
        extra_visit_prob: if irregular { rng.random_range(0.25..0.5) } else { rng.random_range(0.05..0.3) },
        noise,
        speed: rng.random_range(0.4..0.6),
    }
}

struct Activity {
    poi: u32,
    loc: (f64, f64),
    start: i64,
    duration: i64,
}

struct OpenStay {
    poi: u32,
    loc: (f64, f64),
    start: i64,
    min_end: i64,
}

// Consecutive stays closer than this would be indistinguishable in GPS.
const MIN_HOP_KM: f64 = 0.3;

fn travel_minutes(a: (f64, f64), b: (f64, f64), speed: f64) -> i64 {
    ((dist(a, b) / speed).ceil() as i64).max(1)
}

fn simulate_agent<R: Rng>(p: &AgentProfile, n_days: u32, rng: &mut R) -> Vec<StayEvent> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let jitter_loc = |loc: (f64, f64), rng: &mut R| {
        (
            loc.0 + p.noise.location_km * std_normal.sample(rng),
            loc.1 + p.noise.location_km * std_normal.sample(rng),
        )
    };
    let mut events = Vec::new();
    for day in 0..n_days {
        let dow = day % 7;
        let mut acts: Vec<Activity> = Vec::new();
        for entry in &p.routine {
            if entry.dow_mask & (1 << dow) == 0 || !rng.random_bool(entry.probability) {
                continue;
            }
            let start = entry.typical_start + p.noise.start_min * std_normal.sample(rng);
            let duration = entry.typical_duration * (p.noise.duration_log * std_normal.sample(rng)).exp();
            acts.push(Activity {
                poi: entry.poi,
                loc: entry.loc,
                start: start.round().clamp(30.0, 1300.0) as i64,
                duration: duration.round().max(10.0) as i64,
            });
        }
        if rng.random_bool(p.extra_visit_prob) {
            let (poi, loc) = p.favorites[rng.random_range(0..p.favorites.len())];
            acts.push(Activity {
                poi,
                loc,
                start: rng.random_range(8 * 60..20 * 60),
                duration: rng.random_range(20..90),
            });
        }
        acts.sort_by_key(|a| a.start);

        let base = day as i64 * 1440;
        let home = p.home_loc;
        let mut stays: Vec<(u32, (f64, f64), i64, i64)> = Vec::new();
        let mut open = OpenStay {
            poi: HOME_POI,
            loc: jitter_loc(home, rng),
            start: 0,
            min_end: 10,
        };
        for act in acts {
            if dist(open.loc, act.loc) < MIN_HOP_KM {
                continue;
            }
            let mut travel = travel_minutes(open.loc, act.loc, p.speed);
            let back_home = travel_minutes(act.loc, home, p.speed);
            if open.poi != HOME_POI {
                let via_home = travel_minutes(open.loc, home, p.speed) + travel_minutes(home, act.loc, p.speed);
                if act.start - travel - open.min_end > via_home + 90 {
                    let leave = open.min_end;
                    let arrive = leave + travel_minutes(open.loc, home, p.speed);
                    stays.push((open.poi, open.loc, open.start, leave));
                    open = OpenStay {
                        poi: HOME_POI,
                        loc: jitter_loc(home, rng),
                        start: arrive,
                        min_end: arrive + MIN_HOME_STAY,
                    };
                    travel = travel_minutes(open.loc, act.loc, p.speed);
                }
            }
            let leave = (act.start - travel).max(open.min_end);
            let arrive = leave + travel;
            let end = arrive + act.duration;
            if end + back_home + MIN_HOME_STAY > DAY_CLOSE {
                continue;
            }
            stays.push((open.poi, open.loc, open.start, leave));
            open = OpenStay {
                poi: act.poi,
                loc: jitter_loc(act.loc, rng),
                start: arrive,
                min_end: end,
            };
        }
        if open.poi != HOME_POI {
            let leave = open.min_end;
            let arrive = leave + travel_minutes(open.loc, home, p.speed);
            stays.push((open.poi, open.loc, open.start, leave));
            open = OpenStay {
                poi: HOME_POI,
                loc: jitter_loc(home, rng),
                start: arrive,
                min_end: arrive,
            };
        }
        stays.push((open.poi, open.loc, open.start, DAY_CLOSE));

        for (poi, loc, start, end) in stays {
            events.push(StayEvent {
                agent_id: p.agent_id,
                day,
                idx: 0,
                st: (base + start) as f64,
                sd: (end - start) as f64,
                x: loc.0,
                y: loc.1,
                poi,
                dow,
                trip: [0.0; TRIP_DIM],
            });
        }
    }
    reindex_days(&mut events);
    recompute_trips(&mut events);
    events
}

/// GPS points of the trip from the end of `from` to the start of `to`,
/// including both endpoints. Movement follows a two-leg path through a
/// deterministic side waypoint with a mildly varying speed profile.
pub fn trip_points(from: &StayEvent, to: &StayEvent) -> Vec<GpsPoint> {
    let (t0, t1) = (from.end(), to.st);
    let a = (from.x, from.y);
    let b = (to.x, to.y);
    let mut pts = vec![GpsPoint {
        agent_id: to.agent_id,
        t: t0,
        x: a.0,
        y: a.1,
    }];
    let steps = (t1 - t0).round() as i64;
    let d = dist(a, b);
    if steps >= 2 && d > 0.0 {
        let side = if (a.0.to_bits() ^ b.1.to_bits()) & 1 == 0 { 1.0 } else { -1.0 };
        let (ux, uy) = ((b.0 - a.0) / d, (b.1 - a.1) / d);
        let mid = (
            0.5 * (a.0 + b.0) - side * 0.15 * d * uy,
            0.5 * (a.1 + b.1) + side * 0.15 * d * ux,
        );
        let leg1 = dist(a, mid);
        let total = leg1 + dist(mid, b);
        for k in 1..steps {
            let tau = k as f64 / steps as f64;
            let s = (tau + 0.12 * (std::f64::consts::TAU * tau).sin() / std::f64::consts::TAU) * total;
            let (x, y) = if s <= leg1 {
                let f = s / leg1;
                (a.0 + f * (mid.0 - a.0), a.1 + f * (mid.1 - a.1))
            } else {
                let f = (s - leg1) / (total - leg1);
                (mid.0 + f * (b.0 - mid.0), mid.1 + f * (b.1 - mid.1))
            };
            pts.push(GpsPoint {
                agent_id: to.agent_id,
                t: t0 + k as f64,
                x,
                y,
            });
        }
    }
    pts.push(GpsPoint {
        agent_id: to.agent_id,
        t: t1,
        x: b.0,
        y: b.1,
    });
    pts
}

/// Recompute every event's inbound trip features from its predecessor.
pub fn recompute_trips(events: &mut [StayEvent]) {
    if let Some(first) = events.first_mut() {
        first.trip = [0.0; TRIP_DIM];
    }
    for i in 1..events.len() {
        let trip = featurize_trip(&trip_points(&events[i - 1], &events[i]));
        events[i].trip = trip;
    }
}

/// Render an agent's events as a GPS track: dwell points every five minutes
/// (plus the exact end point) at the event location, and trip points every
/// minute in between.
pub fn render_gps(events: &[StayEvent]) -> Vec<GpsPoint> {
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if i > 0 {
            let trip = trip_points(&events[i - 1], e);
            out.extend_from_slice(&trip[1..trip.len() - 1]);
        }
        let mut t = e.st;
        while t < e.end() {
            out.push(GpsPoint {
                agent_id: e.agent_id,
                t,
                x: e.x,
                y: e.y,
            });
            t += STAY_SAMPLE_MIN as f64;
        }
        out.push(GpsPoint {
            agent_id: e.agent_id,
            t: e.end(),
            x: e.x,
            y: e.y,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_horizons() {
        assert!(generate_population(1, 6, 0).is_err());
        assert!(generate_population(0, 7, 0).is_err());
    }

    #[test]
    fn single_agent_week_is_anchored_at_home() {
        let ds = generate_population(1, 7, 0).unwrap();
        let rec = &ds.agents[0];
        for day in 0..7 {
            let events = rec.day(day);
            assert!(!events.is_empty());
            assert_eq!(events.first().unwrap().poi, HOME_POI);
            assert_eq!(events.last().unwrap().poi, HOME_POI);
            assert_eq!(events.first().unwrap().st, day as f64 * crate::staypoint::DAY_MINUTES);
            for pair in events.windows(2) {
                assert!(pair[0].end() < pair[1].st);
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_population(5, 14, 0).unwrap();
        let b = generate_population(5, 14, 0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_population(5, 14, 1).unwrap();
        assert_ne!(a.agents[0].events, c.agents[0].events);
    }

    #[test]
    fn gps_rendering_is_strictly_increasing() {
        let ds = generate_population(3, 7, 4).unwrap();
        for rec in &ds.agents {
            let track = render_gps(&rec.events);
            assert!(track.windows(2).all(|w| w[1].t > w[0].t));
        }
    }
}
