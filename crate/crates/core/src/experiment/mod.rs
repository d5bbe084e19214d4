//! Training runs, evaluation, result tables and paired variant comparisons.

mod compare;
mod config;
mod evaluate;
mod figure;
mod report;
mod train;

pub use compare::{compare, read_evaluation, report, write_figures, Comparison, PairedRun};
pub use config::ExperimentConfig;
pub use evaluate::{
    evaluate, evaluate_with, load_members, Evaluation, DETECTIONS_FILE, GROUND_TRUTH_FILE, METRICS_FILE,
};
pub use figure::{render_overlay, write_png};
pub use report::{ResultsTable, TableRow};
pub use train::{resolve_fold, train, validate_model, CheckpointEntry, EpochRecord, RunRecord, RUN_RECORD_FILE};
