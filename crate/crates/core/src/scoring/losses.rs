use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::seqmodel::linalg::log_sum_exp;
use crate::seqmodel::{ModelConfig, NormStats};
use crate::staypoint::StayEvent;
use crate::uncertainty::{
    angle_to_minutes, circular_minutes, mean_probabilities, predicted_mean, time_angle_recover, SampleSet,
    UncertaintyReport,
};

/// Lower bound applied to predicted variances before attenuation.
pub const BETA_FLOOR: f64 = 1e-8;

/// Features carrying a per-event loss: start time, stay duration, x, y, POI
/// and day-of-week.
pub const SCORED_FEATURES: [&str; 6] = ["st", "sd", "x", "y", "poi", "dow"];

pub type FeatureLosses = [f64; 6];

pub fn floor_beta(beta: f64) -> f64 {
    beta.max(BETA_FLOOR)
}

/// Squared residual attenuated by the predicted variance:
/// `residual^2 / (2 beta)`.
pub fn attenuated_numeric(residual: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Numeric(format!("attenuation variance must be positive, got {beta}")));
    }
    Ok(residual * residual / (2.0 * beta))
}

/// Circular analogue for the start time: the arc residual on a circle of
/// radius `radius` against the summed variance of the two components.
pub fn attenuated_time(arc: f64, radius: f64, beta_x: f64, beta_y: f64) -> Result<f64> {
    let chord = radius * arc;
    attenuated_numeric(chord, beta_x + beta_y)
}

/// Negative log of the true-class probability averaged over one sampled
/// logit vector per pass.
pub fn attenuated_categorical(samples: &SampleSet, cat: usize, class: usize, seed: u64) -> Result<f64> {
    let c = samples.outputs[0].categorical[cat].mean_logits.len();
    if class >= c {
        return Err(Error::invalid(format!("class {class} outside [0, {c})")));
    }
    let mut logits = vec![0.0; c];
    let log_q: Vec<f64> = samples
        .outputs
        .iter()
        .enumerate()
        .map(|(t, o)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[cat as u64, t as u64]));
            let head = &o.categorical[cat];
            for k in 0..c {
                let eps: f64 = StandardNormal.sample(&mut rng);
                logits[k] = head.mean_logits[k] + head.logit_std[k] * eps;
            }
            logits[class] - log_sum_exp(&logits)
        })
        .collect();
    Ok((samples.len() as f64).ln() - log_sum_exp(&log_q))
}

fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// Predictions, errors, uncertainty and attenuated losses of one event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    /// Predicted start time of day, minutes.
    pub start_min: f64,
    pub sd: f64,
    pub x: f64,
    pub y: f64,
    pub poi: usize,
    pub dow: usize,
    /// Raw error per scored feature: circular minutes, minutes, km, km, and
    /// one minus the mean true-class probability for POI and day-of-week.
    pub errors: [f64; 6],
    pub report: UncertaintyReport,
    pub losses: FeatureLosses,
}

impl EventPrediction {
    pub fn evaluate(
        observed: &StayEvent,
        samples: &SampleSet,
        stats: &NormStats,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty sample set"));
        }
        let classes = [observed.poi as usize, observed.dow as usize];
        let report = UncertaintyReport::from_samples(samples, stats, classes)?;
        let mean = |k: usize| stats.denormalize(k, predicted_mean(samples, k));
        let angle = time_angle_recover(mean(0), mean(1))?;
        let start_min = angle_to_minutes(angle);
        let observed_angle = TAU * observed.time_of_day() / crate::staypoint::DAY_MINUTES;
        let (sd, x, y) = (mean(2), mean(3), mean(4));
        let probs = [mean_probabilities(samples, 0), mean_probabilities(samples, 1)];
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        let errors = [
            circular_minutes(start_min, observed.time_of_day()),
            (observed.sd - sd).abs(),
            (observed.x - x).abs(),
            (observed.y - y).abs(),
            1.0 - probs[0][classes[0]],
            1.0 - probs[1][classes[1]],
        ];
        let beta = |k: usize| floor_beta(report.numeric_au[k]);
        let losses = [
            attenuated_time(arc(observed_angle, angle), cfg.time_radius, beta(0), beta(1))?,
            attenuated_numeric(observed.sd - sd, beta(2))?,
            attenuated_numeric(observed.x - x, beta(3))?,
            attenuated_numeric(observed.y - y, beta(4))?,
            attenuated_categorical(samples, 0, classes[0], seed)?,
            attenuated_categorical(samples, 1, classes[1], seed)?,
        ];
        Ok(EventPrediction {
            start_min,
            sd,
            x,
            y,
            poi: argmax(&probs[0]),
            dow: argmax(&probs[1]),
            errors,
            report,
            losses,
        })
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Attenuated losses of one observed event given its samples.
pub fn attenuated_losses(
    observed: &StayEvent,
    samples: &SampleSet,
    stats: &NormStats,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<FeatureLosses> {
    Ok(EventPrediction::evaluate(observed, samples, stats, cfg, seed)?.losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_attenuation() {
        assert_eq!(attenuated_numeric(0.0, 0.3).unwrap(), 0.0);
        assert_eq!(attenuated_numeric(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(attenuated_numeric(2.0, 2.0).unwrap(), 1.0);
        assert!(attenuated_numeric(1.0, 0.0).is_err());
        assert_eq!(floor_beta(0.0), BETA_FLOOR);
    }

    #[test]
    fn time_attenuation_matches_two_components() {
        // A small arc behaves like a residual split over two components.
        let l = attenuated_time(0.2, 1.0, 0.5, 0.5).unwrap();
        assert!((l - 0.04 / 2.0).abs() < 1e-15);
    }
}
