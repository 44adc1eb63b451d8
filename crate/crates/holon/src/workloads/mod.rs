//! Benchmark workloads: event model, seeded generator, the four handler
//! programs, and the independent sequential oracle.

mod events;
mod generator;
mod handlers;
mod oracle;

pub use events::{EventKind, NexmarkEvent};
pub use generator::{generate, partition_name, redistribute, EventLogs, GeneratorConfig};
pub use handlers::{CategoryAverageHandler, HighestBidHandler, PassThroughHandler, RatioHandler};
pub use oracle::oracle_results;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::Handler;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("malformed event line: {0:?}")]
    ParseEvent(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("unknown workload {0:?}")]
    UnknownWorkload(String),
}

/// The four benchmark queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    /// Pass through: outputs equal inputs, no state.
    Q0,
    /// Ratio of processed bids per partition relative to the global count.
    Q1,
    /// Average price per category, globally aggregated without shuffles.
    Q4,
    /// Highest bid per window, ties broken by lowest bid id.
    Q7,
}

impl WorkloadKind {
    pub fn handler(self) -> Arc<dyn Handler> {
        match self {
            WorkloadKind::Q0 => Arc::new(PassThroughHandler),
            WorkloadKind::Q1 => Arc::new(RatioHandler),
            WorkloadKind::Q4 => Arc::new(CategoryAverageHandler),
            WorkloadKind::Q7 => Arc::new(HighestBidHandler),
        }
    }

    /// Name of the workload's replicated windowed state, used by watermark
    /// probes. Stateless workloads have none.
    pub fn wcrdt_name(self) -> Option<&'static str> {
        match self {
            WorkloadKind::Q0 => None,
            WorkloadKind::Q1 => Some(handlers::TOTAL_COUNT),
            WorkloadKind::Q4 => Some(handlers::CATEGORY_STATS),
            WorkloadKind::Q7 => Some(handlers::HIGHEST_BID),
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WorkloadKind::Q0 => "q0",
            WorkloadKind::Q1 => "q1",
            WorkloadKind::Q4 => "q4",
            WorkloadKind::Q7 => "q7",
        };
        f.write_str(name)
    }
}

impl FromStr for WorkloadKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "q0" => Ok(WorkloadKind::Q0),
            "q1" => Ok(WorkloadKind::Q1),
            "q4" => Ok(WorkloadKind::Q4),
            "q7" => Ok(WorkloadKind::Q7),
            other => Err(WorkloadError::UnknownWorkload(other.to_string())),
        }
    }
}

/// Format a ratio or average for output records: double precision, six
/// decimals. Keeping one formatting path makes output logs byte-comparable
/// across runs and platforms.
pub(crate) fn format_fraction(numerator: u64, denominator: u64) -> String {
    if denominator == 0 {
        return format!("{:.6}", 0.0);
    }
    format!("{:.6}", numerator as f64 / denominator as f64)
}
