use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::{EventPrediction, FeatureLosses};
use super::percentile::SortedReference;
use crate::error::{Error, Result};

/// Raw per-event quantities feeding every score variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRaw {
    pub errors: [f64; 6],
    pub losses: FeatureLosses,
    pub eu: [f64; 6],
    pub au: [f64; 6],
    pub knn: f64,
}

impl EventRaw {
    pub fn new(p: &EventPrediction, knn: f64) -> Self {
        let per = p.report.per_feature();
        EventRaw {
            errors: p.errors,
            losses: p.losses,
            eu: per.map(|(e, _)| e),
            au: per.map(|(_, a)| a),
            knn,
        }
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn error_and_uncertainty(&self) -> f64 {
        (0..6).map(|f| self.errors[f] + self.au[f] + self.eu[f]).sum()
    }

    fn eu_sum(&self) -> f64 {
        self.eu.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScoreVariant {
    /// Largest per-feature percentile of the raw prediction error.
    Pe,
    /// Percentile of the largest attenuated loss.
    Loss,
    /// Percentile of summed raw error, AU and EU.
    PeAuEu,
    /// Larger of the loss and kNN percentiles (the default score).
    LossKnn,
    /// Percentile of summed EU.
    Eu,
    /// Percentile of the kNN distance.
    Knn,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 6] = [
        ScoreVariant::Pe,
        ScoreVariant::Loss,
        ScoreVariant::PeAuEu,
        ScoreVariant::LossKnn,
        ScoreVariant::Eu,
        ScoreVariant::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Pe => "PE",
            ScoreVariant::Loss => "Loss",
            ScoreVariant::PeAuEu => "PE+AU+EU",
            ScoreVariant::LossKnn => "Loss&kNN",
            ScoreVariant::Eu => "EU",
            ScoreVariant::Knn => "kNN",
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<ScoreVariant> for String {
    fn from(v: ScoreVariant) -> String {
        v.name().to_string()
    }
}

impl TryFrom<String> for ScoreVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown score variant `{s}`")))
    }
}

/// Percentile references fitted on validation events and then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReference {
    max_loss: SortedReference,
    knn: SortedReference,
    errors: Vec<SortedReference>,
    error_and_uncertainty: SortedReference,
    eu: SortedReference,
}

impl ScoreReference {
    pub fn fit(events: &[EventRaw]) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::invalid("no reference events"));
        }
        let col = |f: &dyn Fn(&EventRaw) -> f64| SortedReference::new(events.iter().map(f).collect());
        Ok(ScoreReference {
            max_loss: col(&|e| e.max_loss())?,
            knn: col(&|e| e.knn)?,
            errors: (0..6).map(|k| col(&|e| e.errors[k])).collect::<Result<_>>()?,
            error_and_uncertainty: col(&|e| e.error_and_uncertainty())?,
            eu: col(&|e| e.eu_sum())?,
        })
    }

    /// Reference from explicit loss and kNN populations only.
    pub fn from_populations(max_loss: Vec<f64>, knn: Vec<f64>) -> Result<Self> {
        let max_loss = SortedReference::new(max_loss)?;
        let knn = SortedReference::new(knn)?;
        Ok(ScoreReference {
            errors: vec![max_loss.clone(); 6],
            error_and_uncertainty: max_loss.clone(),
            eu: max_loss.clone(),
            max_loss,
            knn,
        })
    }

    pub fn loss_percentile(&self, max_loss: f64) -> Result<f64> {
        self.max_loss.transform(max_loss)
    }

    pub fn knn_percentile(&self, knn: f64) -> Result<f64> {
        self.knn.transform(knn)
    }

    pub fn score(&self, e: &EventRaw, variant: ScoreVariant) -> Result<f64> {
        match variant {
            ScoreVariant::Pe => {
                let mut best: f64 = 0.0;
                for k in 0..6 {
                    best = best.max(self.errors[k].transform(e.errors[k])?);
                }
                Ok(best)
            }
            ScoreVariant::Loss => self.loss_percentile(e.max_loss()),
            ScoreVariant::PeAuEu => self.error_and_uncertainty.transform(e.error_and_uncertainty()),
            ScoreVariant::LossKnn => event_score(&e.losses, e.knn, self),
            ScoreVariant::Eu => self.eu.transform(e.eu_sum()),
            ScoreVariant::Knn => self.knn_percentile(e.knn),
        }
    }
}

/// Larger of the percentile of the highest feature loss and the percentile
/// of the kNN distance.
pub fn event_score(losses: &[f64], knn: f64, refs: &ScoreReference) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("no feature losses"));
    }
    let max_loss = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(refs.loss_percentile(max_loss)?.max(refs.knn_percentile(knn)?))
}

/// Highest event score of an agent.
pub fn agent_score(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("agent has no scored events"));
    }
    Ok(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Scored test event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub agent_id: u32,
    pub day: u32,
    pub idx: u32,
    pub losses: FeatureLosses,
    pub knn: f64,
    pub loss_pct: f64,
    pub knn_pct: f64,
    pub score: f64,
}

impl AnomalyScore {
    pub fn new(agent_id: u32, day: u32, idx: u32, raw: &EventRaw, refs: &ScoreReference) -> Result<Self> {
        let loss_pct = refs.loss_percentile(raw.max_loss())?;
        let knn_pct = refs.knn_percentile(raw.knn)?;
        Ok(AnomalyScore {
            agent_id,
            day,
            idx,
            losses: raw.losses,
            knn: raw.knn,
            loss_pct,
            knn_pct,
            score: loss_pct.max(knn_pct),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs() -> ScoreReference {
        ScoreReference::from_populations(vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]).unwrap()
    }

    #[test]
    fn max_semantics() {
        let r = refs();
        assert_eq!(event_score(&[1.0, 0.5], 30.0, &r).unwrap(), 1.0);
        assert_eq!(event_score(&[1.0, 1.0], 10.0, &r).unwrap(), 0.0);
        assert_eq!(event_score(&[2.0], 10.0, &r).unwrap(), 0.5);
    }

    #[test]
    fn monotone_rescaling_of_knn_is_invisible() {
        let r = refs();
        let warped = ScoreReference::from_populations(vec![1.0, 2.0, 3.0], vec![10f64.ln(), 20f64.ln(), 30f64.ln()]).unwrap();
        for knn in [5.0, 10.0, 15.0, 25.0, 40.0] {
            assert_eq!(event_score(&[1.5], knn, &r).unwrap(), event_score(&[1.5], f64::ln(knn), &warped).unwrap());
        }
    }

    #[test]
    fn agent_rollup() {
        assert_eq!(agent_score(&[0.4]).unwrap(), 0.4);
        assert_eq!(agent_score(&[0.2, 0.9, 0.5]).unwrap(), 0.9);
        assert_eq!(agent_score(&[0.2, 0.9, 0.5, 0.3]).unwrap(), 0.9);
        assert!(agent_score(&[]).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.name().parse::<ScoreVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<ScoreVariant>().is_err());
    }
}
