//! Dataset ingestion, evaluation, and reporting.

mod dataset;
mod eval;
mod report;

pub use dataset::{load_dataset, parse_dataset, DatasetError, TaskInstance};
pub use eval::{
    config_hash, dataset_hash, evaluate, evaluate_instance, load_report, read_records, EvalError,
    EvalOptions, InstanceRecord, RunManifest,
};
pub use report::{EvalReport, Score, Timing};
