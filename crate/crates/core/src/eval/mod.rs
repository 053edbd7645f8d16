//! Datasets, scoring, evaluation runs, ablations and statistics.

mod dataset;
mod metrics;
mod runner;
mod stats;

pub use dataset::{load_dataset, parse_dataset, write_dataset, Dataset, DatasetError, DatasetLine, EvalItem};
pub use metrics::{
    grounded_metrics, interval_iop, interval_iou, score_mc, score_open_ended, GroundedMetrics, GroundedSample,
};
pub use runner::{
    ablation_csv, eval_item, run_ablation, run_eval, score_item, summarize, write_eval, AblationRow, EvalConfig,
    EvalError, EvalResult, EvalRun, EvalSummary, FailureRecord, FailureSummary, ItemTrace, SubsetSummary, System,
    ABLATION_MASKS,
};
pub use stats::{load_traces, qtype_stats, trace_stat, Agreement, QTypeStats, TraceStat};
