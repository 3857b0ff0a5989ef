use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::staypoint::DAY_MINUTES;

/// Place a time of day (minutes) on a circle of radius `r`, midnight on the
/// positive x axis and 06:00 on the positive y axis.
pub fn time_angle_encode(minutes: f64, r: f64) -> (f64, f64) {
    let theta = TAU * minutes / DAY_MINUTES;
    (r * theta.cos(), r * theta.sin())
}

/// Angle in `[0, 2π)` of a circle point.
pub fn time_angle_recover(x: f64, y: f64) -> Result<f64> {
    if x == 0.0 && y == 0.0 {
        return Err(Error::Numeric("time angle of the zero vector is undefined".into()));
    }
    let a = y.atan2(x);
    let a = if a < 0.0 { a + TAU } else { a };
    Ok(if a >= TAU { 0.0 } else { a })
}

pub fn angle_to_minutes(theta: f64) -> f64 {
    theta * DAY_MINUTES / TAU
}

/// Shorter-arc distance between two times of day, in minutes.
pub fn circular_minutes(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(DAY_MINUTES);
    d.min(DAY_MINUTES - d)
}

fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// Mean squared shorter-arc deviation of each pass's angle from the angle of
/// the averaged circle point.
pub fn time_angle_eu(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let center = time_angle_recover(mx, my)?;
    let mut total = 0.0;
    for &(x, y) in points {
        let d = arc(time_angle_recover(x, y)?, center);
        total += d * d;
    }
    Ok(total / n)
}

/// Angular aleatoric uncertainty: the average of the two component AUs.
pub fn time_angle_au(beta_x: f64, beta_y: f64) -> f64 {
    0.5 * (beta_x + beta_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_directions() {
        assert_eq!(time_angle_recover(1.0, 0.0).unwrap(), 0.0);
        assert!((time_angle_recover(0.0, 1.0).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(time_angle_recover(0.0, 0.0).is_err());
        let a = time_angle_recover(1.0, -1e-300).unwrap();
        assert!((0.0..TAU).contains(&a));
    }

    #[test]
    fn every_minute_round_trips() {
        for t in 0..1440 {
            let (x, y) = time_angle_encode(t as f64, 1.0);
            let back = angle_to_minutes(time_angle_recover(x, y).unwrap());
            assert!(circular_minutes(back, t as f64) <= 0.5, "minute {t}");
        }
    }

    #[test]
    fn spread_about_the_mean() {
        let c: f64 = 1.3;
        let pts: Vec<(f64, f64)> = [c - 0.1, c + 0.1].iter().map(|a: &f64| (a.cos(), a.sin())).collect();
        assert!((time_angle_eu(&pts).unwrap() - 0.01).abs() < 1e-12);
        let same = vec![(c.cos(), c.sin()); 4];
        assert!(time_angle_eu(&same).unwrap() < 1e-28);
    }

    #[test]
    fn deviation_across_the_seam_uses_the_short_arc() {
        let pts: Vec<(f64, f64)> = [0.05, TAU - 0.05].iter().map(|a: &f64| (a.cos(), a.sin())).collect();
        assert!((time_angle_eu(&pts).unwrap() - 0.0025).abs() < 1e-12);
        assert!(time_angle_eu(&[(1.0, 0.0), (-1.0, 0.0)]).is_err());
    }
}
