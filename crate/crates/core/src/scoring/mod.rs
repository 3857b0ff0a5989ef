//! Anomaly scoring: attenuated prediction losses, embedding kNN distance,
//! percentile aggregation and agent rollup.

mod knn;
mod losses;
mod percentile;
mod score;

pub use knn::TrainIndex;
pub use losses::{
    attenuated_categorical, attenuated_losses, attenuated_numeric, attenuated_time, floor_beta, EventPrediction,
    FeatureLosses, BETA_FLOOR, SCORED_FEATURES,
};
pub use percentile::{percentile_transform, SortedReference};
pub use score::{agent_score, event_score, AnomalyScore, EventRaw, ScoreReference, ScoreVariant};
