use super::GpsPoint;

/// Length of the trip feature vector.
pub const TRIP_DIM: usize = 14;

const DIRECTION_BINS: usize = 8;

/// Fixed-length summary of a trip segment.
///
/// Layout: path length (km), net displacement (km), duration (min), mean
/// speed (km/h), max speed (km/h), straightness (displacement / path
/// length), then an 8-bin heading histogram weighted by segment length and
/// normalized to sum to one. Bin 0 is centred on +x, bins advance
/// counter-clockwise. Segments with fewer than two points map to zeros.
pub fn featurize_trip(segment: &[GpsPoint]) -> [f64; TRIP_DIM] {
    let mut out = [0.0; TRIP_DIM];
    if segment.len() < 2 {
        return out;
    }
    let first = segment[0];
    let last = segment[segment.len() - 1];

    let mut path = 0.0;
    let mut max_speed: f64 = 0.0;
    let mut hist = [0.0; DIRECTION_BINS];
    for pair in segment.windows(2) {
        let (dx, dy) = (pair[1].x - pair[0].x, pair[1].y - pair[0].y);
        let len = dx.hypot(dy);
        path += len;
        let dt = pair[1].t - pair[0].t;
        if dt > 0.0 {
            max_speed = max_speed.max(len / dt * 60.0);
        }
        if len > 0.0 {
            let sector = std::f64::consts::TAU / DIRECTION_BINS as f64;
            let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
            let bin = (((angle + sector / 2.0) / sector).floor() as usize) % DIRECTION_BINS;
            hist[bin] += len;
        }
    }
    let displacement = (last.x - first.x).hypot(last.y - first.y);
    let duration = last.t - first.t;

    out[0] = path;
    out[1] = displacement;
    out[2] = duration;
    out[3] = if duration > 0.0 { path / duration * 60.0 } else { 0.0 };
    out[4] = max_speed;
    out[5] = if path > 0.0 { displacement / path } else { 0.0 };
    if path > 0.0 {
        for (slot, h) in out[6..].iter_mut().zip(hist.iter()) {
            *slot = h / path;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(t: f64, x: f64, y: f64) -> GpsPoint {
        GpsPoint { agent_id: 0, t, x, y }
    }

    #[test]
    fn empty_segment_is_zero() {
        assert_eq!(featurize_trip(&[]), [0.0; TRIP_DIM]);
        assert_eq!(featurize_trip(&[p(0.0, 1.0, 1.0)]), [0.0; TRIP_DIM]);
    }

    #[test]
    fn straight_one_km_in_ten_minutes() {
        let f = featurize_trip(&[p(0.0, 0.0, 0.0), p(10.0, 1.0, 0.0)]);
        assert_relative_eq!(f[0], 1.0);
        assert_relative_eq!(f[1], 1.0);
        assert_relative_eq!(f[2], 10.0);
        assert_relative_eq!(f[3], 6.0);
        assert_relative_eq!(f[4], 6.0);
        assert_relative_eq!(f[5], 1.0);
        assert_relative_eq!(f[6], 1.0);
    }

    #[test]
    fn closed_loop_has_no_displacement() {
        let f = featurize_trip(&[
            p(0.0, 0.0, 0.0),
            p(1.0, 1.0, 0.0),
            p(2.0, 1.0, 1.0),
            p(3.0, 0.0, 1.0),
            p(4.0, 0.0, 0.0),
        ]);
        assert_relative_eq!(f[0], 4.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[5], 0.0);
        // East, north, west, south quarters.
        assert_relative_eq!(f[6], 0.25);
        assert_relative_eq!(f[8], 0.25);
        assert_relative_eq!(f[10], 0.25);
        assert_relative_eq!(f[12], 0.25);
    }
}
