use serde::{Deserialize, Serialize};

use super::angle::{time_angle_au, time_angle_eu};
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::seqmodel::linalg::softmax_in_place;
use crate::seqmodel::{DecoderOutput, DualTransformer, EncodedSequence, NormStats, N_NUMERIC};

/// Decoder outputs for one masked event from independent dropout draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub outputs: Vec<DecoderOutput>,
    pub seeds: Vec<u64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

fn pass_seeds(passes: usize, seed: u64) -> Vec<u64> {
    (0..passes as u64).map(|t| derive_seed(seed, &[t])).collect()
}

/// `passes` stochastic predictions of the event at `position`.
pub fn mc_sample(model: &DualTransformer, seq: &EncodedSequence, position: usize, passes: usize, seed: u64) -> Result<SampleSet> {
    Ok(mc_sample_each(model, seq, &[position], passes, seed)?.remove(0))
}

/// [`mc_sample`] for several positions of one sequence, each masked alone.
/// Pass `t` uses the same dropout draw for every position.
pub fn mc_sample_each(
    model: &DualTransformer,
    seq: &EncodedSequence,
    positions: &[usize],
    passes: usize,
    seed: u64,
) -> Result<Vec<SampleSet>> {
    if passes == 0 {
        return Err(Error::invalid("at least one Monte Carlo pass is required"));
    }
    let seeds = pass_seeds(passes, seed);
    let draws: Vec<Option<u64>> = seeds.iter().map(|&s| Some(s)).collect();
    let outs = model.predict_each(seq, positions, &draws)?;
    Ok(outs
        .into_iter()
        .map(|outputs| SampleSet {
            outputs,
            seeds: seeds.clone(),
        })
        .collect())
}

/// Variance with divisor `n`.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Natural-log entropy.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn predicted_mean(s: &SampleSet, feature: usize) -> f64 {
    s.outputs.iter().map(|o| o.numeric_mean[feature]).sum::<f64>() / s.len() as f64
}

/// Spread of the predicted means across passes.
pub fn eu_numeric(s: &SampleSet, feature: usize) -> f64 {
    let v: Vec<f64> = s.outputs.iter().map(|o| o.numeric_mean[feature]).collect();
    population_variance(&v)
}

/// Mean predicted variance across passes.
pub fn au_numeric(s: &SampleSet, feature: usize) -> f64 {
    s.outputs.iter().map(|o| o.numeric_logvar[feature].exp()).sum::<f64>() / s.len() as f64
}

/// Softmax of each pass's mean logits, averaged over passes.
pub fn mean_probabilities(s: &SampleSet, cat: usize) -> Vec<f64> {
    let c = s.outputs[0].categorical[cat].mean_logits.len();
    let mut avg = vec![0.0; c];
    for o in &s.outputs {
        let mut p = o.categorical[cat].mean_logits.clone();
        softmax_in_place(&mut p);
        for (a, v) in avg.iter_mut().zip(&p) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= s.len() as f64;
    }
    avg
}

/// Entropy of the pass-averaged class distribution.
pub fn eu_categorical(s: &SampleSet, cat: usize) -> f64 {
    entropy(&mean_probabilities(s, cat))
}

/// Mean squared logit std of the true class.
pub fn au_categorical(s: &SampleSet, cat: usize, class: usize) -> Result<f64> {
    let c = s.outputs[0].categorical[cat].logit_std.len();
    if class >= c {
        return Err(Error::invalid(format!("class {class} outside [0, {c})")));
    }
    Ok(s.outputs
        .iter()
        .map(|o| o.categorical[cat].logit_std[class].powi(2))
        .sum::<f64>()
        / s.len() as f64)
}

/// Per-feature uncertainty of one masked event, numeric entries in natural
/// units (minutes, km, circle units for the time components).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub numeric_eu: [f64; N_NUMERIC],
    pub numeric_au: [f64; N_NUMERIC],
    /// POI then day-of-week, in nats.
    pub categorical_eu: [f64; 2],
    pub categorical_au: [f64; 2],
    /// Angular spread of the start time, squared radians.
    pub time_eu: f64,
    pub time_au: f64,
}

impl UncertaintyReport {
    pub fn from_samples(s: &SampleSet, stats: &NormStats, classes: [usize; 2]) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::invalid("empty sample set"));
        }
        let mut numeric_eu = [0.0; N_NUMERIC];
        let mut numeric_au = [0.0; N_NUMERIC];
        for k in 0..N_NUMERIC {
            numeric_eu[k] = stats.variance_to_raw(k, eu_numeric(s, k));
            numeric_au[k] = stats.variance_to_raw(k, au_numeric(s, k));
        }
        let points: Vec<(f64, f64)> = s
            .outputs
            .iter()
            .map(|o| (stats.denormalize(0, o.numeric_mean[0]), stats.denormalize(1, o.numeric_mean[1])))
            .collect();
        Ok(UncertaintyReport {
            numeric_eu,
            numeric_au,
            categorical_eu: [eu_categorical(s, 0), eu_categorical(s, 1)],
            categorical_au: [au_categorical(s, 0, classes[0])?, au_categorical(s, 1, classes[1])?],
            time_eu: time_angle_eu(&points)?,
            time_au: time_angle_au(numeric_au[0], numeric_au[1]),
        })
    }

    /// Per-feature `(EU, AU)` for start time, duration, x, y, POI and
    /// day-of-week.
    pub fn per_feature(&self) -> [(f64, f64); 6] {
        [
            (self.time_eu, self.time_au),
            (self.numeric_eu[2], self.numeric_au[2]),
            (self.numeric_eu[3], self.numeric_au[3]),
            (self.numeric_eu[4], self.numeric_au[4]),
            (self.categorical_eu[0], self.categorical_au[0]),
            (self.categorical_eu[1], self.categorical_au[1]),
        ]
    }

    /// Sum of EU and AU over features, in their mixed natural units.
    pub fn total(&self) -> f64 {
        self.per_feature().iter().map(|(a, b)| a + b).sum()
    }

    pub fn total_eu(&self) -> f64 {
        self.per_feature().iter().map(|(a, _)| a).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::CategoricalOutput;

    fn set(means: &[f64], logvars: &[f64]) -> SampleSet {
        SampleSet {
            outputs: means
                .iter()
                .zip(logvars)
                .map(|(&m, &r)| DecoderOutput {
                    numeric_mean: [m; N_NUMERIC],
                    numeric_logvar: [r; N_NUMERIC],
                    categorical: [
                        CategoricalOutput {
                            mean_logits: vec![m, 0.0],
                            logit_std: vec![0.5, 0.5],
                        },
                        CategoricalOutput {
                            mean_logits: vec![0.0; 7],
                            logit_std: vec![0.0; 7],
                        },
                    ],
                })
                .collect(),
            seeds: vec![0; means.len()],
        }
    }

    #[test]
    fn numeric_estimators() {
        assert_eq!(eu_numeric(&set(&[2.0, 2.0], &[0.0, 0.0]), 0), 0.0);
        assert_eq!(eu_numeric(&set(&[1.0, 3.0], &[0.0, 0.0]), 0), 1.0);
        assert_eq!(au_numeric(&set(&[0.0, 0.0], &[0.0, 0.0]), 1), 1.0);
        let s = set(&[0.0, 0.0], &[1.0f64.ln(), 3.0f64.ln()]);
        assert!((au_numeric(&s, 1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn categorical_estimators() {
        let s = set(&[0.0], &[0.0]);
        assert!((eu_categorical(&s, 1) - 7.0f64.ln()).abs() < 1e-12);
        assert_eq!(au_categorical(&s, 1, 3).unwrap(), 0.0);
        assert_eq!(au_categorical(&s, 0, 1).unwrap(), 0.25);
        assert!(au_categorical(&s, 0, 2).is_err());
        let split = set(&[800.0, -800.0], &[0.0, 0.0]);
        assert!((eu_categorical(&split, 0) - 2.0f64.ln()).abs() < 1e-12);
        let sure = set(&[900.0], &[0.0]);
        assert!(eu_categorical(&sure, 0).abs() < 1e-12);
    }
}
