use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Input features of an event, in token order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TimeX,
    TimeY,
    Duration,
    X,
    Y,
    Trip,
    Poi,
    Dow,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::TimeX,
        Feature::TimeY,
        Feature::Duration,
        Feature::X,
        Feature::Y,
        Feature::Trip,
        Feature::Poi,
        Feature::Dow,
    ];

    /// Scalar numeric features; these are also the numeric prediction targets.
    pub const NUMERIC: [Feature; 5] = [Feature::TimeX, Feature::TimeY, Feature::Duration, Feature::X, Feature::Y];

    /// Categorical prediction targets.
    pub const CATEGORICAL: [Feature; 2] = [Feature::Poi, Feature::Dow];

    pub fn kind(self) -> FeatureKind {
        match self {
            Feature::Poi | Feature::Dow => FeatureKind::Categorical,
            _ => FeatureKind::Numeric,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::TimeX => "time_x",
            Feature::TimeY => "time_y",
            Feature::Duration => "sd",
            Feature::X => "x",
            Feature::Y => "y",
            Feature::Trip => "trip",
            Feature::Poi => "poi",
            Feature::Dow => "dow",
        }
    }
}

/// Number of feature tokens per event.
pub const N_TOKENS: usize = Feature::ALL.len();
pub const N_NUMERIC: usize = Feature::NUMERIC.len();
pub const N_DOW: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub feature_blocks: usize,
    pub event_blocks: usize,
    pub n_head: usize,
    /// FFN hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub dropout: f64,
    pub mask_ratio: f64,
    /// Monte Carlo passes at inference.
    pub mc_samples: usize,
    /// Logit noise draws per categorical target during training.
    pub train_samples: usize,
    pub lambda: f64,
    pub knn_k: usize,
    pub window_days: u32,
    pub max_len: usize,
    /// Size of the within-day position table.
    pub max_day_events: usize,
    pub time_radius: f64,
    pub n_poi: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            feature_blocks: 1,
            event_blocks: 3,
            n_head: 4,
            ffn_mult: 2,
            dropout: 0.05,
            mask_ratio: 0.15,
            mc_samples: 50,
            train_samples: 10,
            lambda: 1.0,
            knn_k: 150,
            window_days: 3,
            max_len: 256,
            max_day_events: 64,
            time_radius: 1.0,
            n_poi: 40,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_head == 0 || self.d_model % self.n_head != 0 {
            return fail("d_model must be a positive multiple of n_head");
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail("mask_ratio must lie in (0, 1)");
        }
        if self.mc_samples == 0 || self.train_samples == 0 {
            return fail("sample counts must be at least 1");
        }
        if !(self.lambda > 0.0) {
            return fail("lambda must be positive");
        }
        if self.knn_k == 0 {
            return fail("knn_k must be at least 1");
        }
        if self.max_len == 0 || self.max_day_events == 0 {
            return fail("position tables must be nonempty");
        }
        if !(self.time_radius > 0.0) {
            return fail("time_radius must be positive");
        }
        if self.n_poi < 2 {
            return fail("n_poi must be at least 2");
        }
        Ok(())
    }

    pub fn features(&self) -> Vec<(Feature, FeatureKind)> {
        Feature::ALL.iter().map(|&f| (f, f.kind())).collect()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    /// Class count per categorical target, in `Feature::CATEGORICAL` order.
    pub fn class_counts(&self) -> [usize; 2] {
        [self.n_poi, N_DOW]
    }

    /// Width of the decoder output row.
    pub fn output_dim(&self) -> usize {
        2 * N_NUMERIC + 2 * (self.n_poi + N_DOW)
    }
}
