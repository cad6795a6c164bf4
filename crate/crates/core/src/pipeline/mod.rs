//! Cross-validated experiments and report emission.

mod experiment;
mod folds;
mod report;

pub use experiment::{
    run_experiment, stack_distributions, AnnotationSummary, Corpus, ExperimentConfig, ExperimentReport, FoldMean,
    FoldResult, MethodResult, NamedPair, PooledResult, SweepSummary, VerbError, REPORT_VERSION,
};
pub use folds::{make_folds, FoldAssignment};
pub use report::{emit_reports, render_summary, EMPTY_CELL};
