//! Evaluation harness: trial protocol (reset with a per-trial seed, ten
//! grapes, three attempts without homing), success metrics, latency
//! statistics and reports.
//!
//! Trials run in-process on simulated time, so an evaluation finishes far
//! faster than its simulated duration and repeats bit for bit.

pub mod metrics;
pub mod report;
pub mod trials;

pub use metrics::{
    latency_stats, nearest_rank, success_rates, LatencyStats, SuccessRates, TrialRecord, ATTEMPTS_PER_TRIAL,
};
pub use report::{fmt_ms, fmt_pct, table_header, table_row, EvalReport, ReportHeader};
pub use trials::{
    run_trials, AttemptThresholds, AttemptTracker, EvalConfig, EvalRun, ATTEMPT_TIMEOUT, OBJECTS_PER_TRIAL,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no usable trials: every trial aborted")]
    NoUsableTrials,
    #[error("no latency samples")]
    EmptySamples,
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("could not set up the evaluation stack: {0}")]
    Setup(String),
    #[error("{0}")]
    Io(String),
}
