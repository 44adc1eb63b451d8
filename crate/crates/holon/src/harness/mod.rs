//! Scenario harness: configuration, drivers, failure injection, metrics,
//! and reporting.
//!
//! Two drivers execute the same node runtime. The simulation driver
//! interleaves node ticks on a single thread under a seeded schedule, which
//! makes whole runs (including failure injection) bit-reproducible. The
//! threaded driver runs one worker thread per node against the same
//! thread-safe topics and is used for throughput measurements; its outputs
//! are still deterministic, only its timings are not.

mod dedup;
mod metrics;
mod report;
mod scenario;
mod sim;
mod threaded;

pub use dedup::{dedup_partition_stream, result_lines};
pub use metrics::{
    compute_percentiles, compute_sensitivity, latency_curve, LatencySample, MetricsReport,
    MetricsSink, Sensitivity,
};
pub use report::{read_results_file, write_reports, write_results_file};
pub use scenario::{
    DriverKind, FailureEvent, NodeSettings, RunPlan, ScenarioConfig, SimSettings,
    ThreadedSettings,
};
pub use sim::{oracle_lines, run_scenario, run_sim, ScenarioOutcome};
pub use threaded::run_threaded;

use thiserror::Error;

use crate::runtime::RuntimeError;
use crate::stream_log::LogError;
use crate::workloads::WorkloadError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot compute percentiles of an empty sample set")]
    EmptySamples,
    #[error("mismatched curve horizons: {left} vs {right}")]
    MismatchedHorizons { left: f64, right: f64 },
    #[error("conflicting duplicate for window {window} of {partition}")]
    DedupConflict { partition: String, window: u64 },
}

impl HarnessError {
    pub fn is_determinism_violation(&self) -> bool {
        match self {
            HarnessError::Runtime(e) => e.is_determinism_violation(),
            HarnessError::Log(LogError::DeterminismViolation { .. }) => true,
            _ => false,
        }
    }
}
