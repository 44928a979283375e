//! Training, evaluation and the experiment protocols.

mod config;
mod cv;
mod experiments;
mod metrics;
mod trainer;

pub use config::{
    config_help, Ablation, ConfigError, F1Average, GroupHint, KeyDoc, RunConfig, StopMetric, CONFIG_KEYS,
};
pub use cv::{cross_validate, holdout, mean_std, stratified_folds, CvReport, FoldResult};
pub use experiments::{
    domain_shift_eval, run_ablations, sensitivity_sweep, DomainResult, ShiftReport, SweepReport, SweepRow,
    VariantReport, BASELINE_TAU,
};
pub use metrics::{classification_report, ClassMetrics, MetricReport};
pub use trainer::{evaluate, score_edges, train, EpochLog, PipelineCounters, TrainError, TrainOutcome};
