//! The processing-function contract.

use std::collections::BTreeSet;

use crate::runtime::{HandlerState, RuntimeError};
use crate::stream_log::{PartitionId, Record};
use crate::windowed::WindowSpec;

/// Everything a handler invocation may know about its surroundings. The
/// membership is the full, static set of partitions of the job; it seeds the
/// progress tracking of every replicated windowed value.
#[derive(Debug, Clone)]
pub struct HandlerCtx {
    pub partition: PartitionId,
    pub membership: BTreeSet<PartitionId>,
    pub window: WindowSpec,
}

/// A processing function over one partition's input stream.
///
/// Handlers are pure by construction: they receive exclusively-owned state
/// and a batch, and return outputs. No I/O handles are available and no
/// randomness is permitted; anything nondeterministic in the output stream
/// eventually trips the output log's conflicting-rewrite check when the same
/// partition is executed twice.
///
/// Called with an empty batch, a handler must not touch per-event state but
/// may still emit: windows can complete between batches when progress
/// arrives from other partitions through background merges.
pub trait Handler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Declared state constructors. Must not depend on the partition: every
    /// partition of a job starts from an identical composite (this is also
    /// the designated initial state of the checkpoint store).
    fn initial_state(&self, window: WindowSpec, membership: &BTreeSet<PartitionId>)
        -> HandlerState;

    /// Process one input batch, mutating the state and returning output
    /// records in emission order.
    fn on_batch(
        &self,
        ctx: &HandlerCtx,
        state: &mut HandlerState,
        batch: &[Record],
    ) -> Result<Vec<Record>, RuntimeError>;
}
