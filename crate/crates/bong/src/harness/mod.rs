//! Datasets, metrics, learning-rate tuning and experiment orchestration.

pub mod datasets;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod selftest;
pub mod tuning;

pub use datasets::{
    nonlin_teacher, synth_linreg, synth_linreg_with_weights, synth_nonlin, Dataset, DatasetMeta, TaskKind,
};
pub use experiment::{
    prepare, read_trace_csv, run_experiment, sidecar_path, write_outputs, write_trace_csv, DatasetSpec, Prepared,
    ResolvedConfig, RunConfig, RunOutput, StepTrace, CSV_HEADER,
};
pub use idx::{dataset_from_idx_bytes, load_idx};
pub use metrics::{
    evaluate, misclassification, nlpd_linearized, nlpd_mc, nlpd_plugin, EvalMetrics, MetricSet, PredictiveMode,
};
pub use selftest::{run_selftest, CheckResult};
pub use tuning::{tune_learning_rate, validation_split, TuneOutcome};
