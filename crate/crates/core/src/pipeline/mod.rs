//! Staged, seeded end-to-end runs with on-disk artifacts and provenance
//! manifests.

mod config;
mod io;
mod manifest;
mod stages;

pub use config::{
    streams, DataConfig, InjectionEntry, PathsConfig, RunConfig, ScoreSection, TrainSection,
};
pub use io::{
    assemble_dataset, check_schema, dataset_meta, injection_records, label_records, read_json, read_jsonl,
    write_csv, write_json, write_jsonl, DatasetMeta, InjectionRecord, LabelRecord, SCHEMA_VERSION,
};
pub use manifest::{sha256_bytes, sha256_file, FileHash, Manifest};
pub use stages::{
    AgentScoreRow, Evaluation, EventScoreLine, Layout, LossRow, Pipeline, ScoreDetail, TrainMeta,
    VariantDetection, WindowRecord, STAGES,
};
