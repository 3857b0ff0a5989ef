//! Metrics, rejection analysis and end-to-end experiment drivers.

mod experiment;
mod metrics;
mod rejection;
mod report;
mod studies;

pub use experiment::{
    agent_windows, all_agents, build_index, encode_windows, event_id, fit_model, fit_stats, rescore_changed,
    score_events, FittedModel, ScoreOptions, ScoredEvent,
};
pub use metrics::{accuracy, aupr, auroc, auroc_null_std, mae, mape, MAPE_EPS};
pub use rejection::{rejection_curve, rejection_eval, rejection_keep, RejectionPoint};
pub use report::{
    calibration_curve, detection_metrics, metric_report, normalized_total_uncertainty, prediction_metrics,
    rejection_sweep, total_uncertainty, CalibrationPoint, DetectionMetrics, MetricReport, PredictionMetrics,
    RejectionRow, CATEGORICAL_REPORTED, NUMERIC_REPORTED, REJECTION_SWEEP,
};
pub use studies::{
    eu_vs_datasize_study, fit_with_index, injection_benchmark, raw_scores, BenchmarkRow, DataSizeRow,
    InjectionSuite,
};
