//! Per-node executor: batch processing, checkpointing, recovery, background
//! state synchronization, heartbeats, and opportunistic work stealing.
//!
//! A node owns a dynamic set of partitions. Each tick it processes one batch
//! for a randomly chosen held partition, periodically checkpoints the
//! per-partition `(input index, output index, handler state)` triple, and
//! periodically gossips windowed-lattice snapshots over the broadcast topic.
//! Heartbeats flow over the control topic; partitions whose heartbeats go
//! stale are adopted by whichever node notices first. Several nodes may end
//! up processing the same partition; that is safe because handlers are
//! deterministic and the output log is idempotent at fixed offsets.

mod handler;
mod node;
mod state;

pub use handler::{Handler, HandlerCtx};
pub use node::{Node, NodeConfig, StepOutcome};
pub use state::{BroadcastFrame, HandlerState, Heartbeat, PartitionState, StateSnapshot};

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::encoding::{Canonical, CodecError, Decoder, Encoder};
use crate::stream_log::{CheckpointStore, LogError, LoggedTopic, PartitionId};
use crate::windowed::WindowError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("handler failed on {partition}: {source}")]
    Handler {
        partition: PartitionId,
        source: WindowError,
    },
    #[error("codec error: {0}")]
    Codec(#[from] CodecError),
    #[error("await_window deadline exceeded for {name} window {window}")]
    AwaitTimeout { name: String, window: u64 },
    #[error("node holds no partition")]
    NoPartitions,
    #[error("bad input on {partition}: {detail}")]
    Input { partition: PartitionId, detail: String },
}

impl RuntimeError {
    /// True when the error indicates two executions of the same partition
    /// diverged; the harness aborts with a distinguished exit code on it.
    pub fn is_determinism_violation(&self) -> bool {
        matches!(self, RuntimeError::Log(LogError::DeterminismViolation { .. }))
    }
}

/// Identity of a physical executor. Several nodes may process the same
/// partition; node ids never key any replicated state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Canonical for NodeId {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self(dec.string()?))
    }
}

/// Observer for metrics collection. The runtime reports unique input
/// consumption and output emissions; implementations must be cheap and
/// thread-safe.
pub trait RunObserver: Send + Sync {
    /// Partition `p` advanced its in-memory input index from `from` to `to`
    /// at time `now` (driver clock units).
    fn consumed(&self, p: &PartitionId, from: u64, to: u64, now: u64);

    /// A window-tagged output record for `(p, window)` was written at `now`.
    fn emitted(&self, p: &PartitionId, window: u64, now: u64);
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl RunObserver for NoopObserver {
    fn consumed(&self, _: &PartitionId, _: u64, _: u64, _: u64) {}
    fn emitted(&self, _: &PartitionId, _: u64, _: u64) {}
}

/// Shared environment a node operates against.
#[derive(Clone)]
pub struct RuntimeEnv {
    pub input: Arc<LoggedTopic>,
    pub output: Arc<LoggedTopic>,
    pub broadcast: Arc<LoggedTopic>,
    pub control: Arc<LoggedTopic>,
    pub checkpoints: Arc<CheckpointStore>,
    pub observer: Arc<dyn RunObserver>,
}
