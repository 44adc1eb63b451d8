//! The node executor loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::crdt::AggregateValue;
use crate::encoding::Canonical;
use crate::runtime::{
    BroadcastFrame, Handler, HandlerCtx, Heartbeat, NodeId, PartitionState, RuntimeEnv,
    RuntimeError, StateSnapshot,
};
use crate::stream_log::{PartitionId, Record};
use crate::windowed::{Timestamp, WindowSpec};

/// Static per-node settings. Cadences count executor steps; the staleness
/// threshold counts driver clock units.
#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub id: NodeId,
    pub initial_partitions: Vec<PartitionId>,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub sync_every: u64,
    pub steal_stale_after: u64,
    pub seed: u64,
}

/// What one `run_step` did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub partition: PartitionId,
    pub read: usize,
    pub emitted: usize,
}

pub struct Node {
    cfg: NodeConfig,
    handler: Arc<dyn Handler>,
    window: WindowSpec,
    membership: BTreeSet<PartitionId>,
    env: RuntimeEnv,
    live: BTreeMap<PartitionId, PartitionState>,
    broadcast_cursor: u64,
    control_cursor: u64,
    /// Latest heartbeat time per partition, from any node, including this one.
    last_seen: BTreeMap<PartitionId, u64>,
    rng: ChaCha8Rng,
}

impl Node {
    /// Create a node and recover its initial partition assignment.
    pub fn new(
        cfg: NodeConfig,
        handler: Arc<dyn Handler>,
        window: WindowSpec,
        membership: BTreeSet<PartitionId>,
        env: RuntimeEnv,
    ) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut node = Self {
            cfg,
            handler,
            window,
            membership,
            env,
            live: BTreeMap::new(),
            broadcast_cursor: 0,
            control_cursor: 0,
            last_seen: BTreeMap::new(),
            rng,
        };
        for p in node.cfg.initial_partitions.clone() {
            node.recover(&p);
        }
        node
    }

    pub fn id(&self) -> &NodeId {
        &self.cfg.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn held_partitions(&self) -> impl Iterator<Item = &PartitionId> {
        self.live.keys()
    }

    pub fn partition_state(&self, p: &PartitionId) -> Option<&PartitionState> {
        self.live.get(p)
    }

    pub fn live_states(&self) -> &BTreeMap<PartitionId, PartitionState> {
        &self.live
    }

    fn ctx_for(&self, p: &PartitionId) -> HandlerCtx {
        HandlerCtx {
            partition: p.clone(),
            membership: self.membership.clone(),
            window: self.window,
        }
    }

    /// One executor step: process a batch, then run the periodic duties that
    /// are due at `step`. `now` is the driver clock, used for metrics and
    /// heartbeat staleness. Returns whether any input was consumed, letting
    /// callers back off when a node is idle.
    pub fn tick(&mut self, step: u64, now: u64) -> Result<bool, RuntimeError> {
        let mut progressed = false;
        if !self.live.is_empty() {
            progressed = self.run_step(now)?.read > 0;
        }
        if step % self.cfg.checkpoint_every == 0 {
            self.checkpoint_all();
        }
        if step % self.cfg.sync_every == 0 {
            self.sync_pump()?;
            self.flush_completed(now)?;
            self.emit_heartbeats(now)?;
            self.poll_control()?;
            let stale = self.detect_stale(now);
            self.work_steal(&stale);
        }
        Ok(progressed)
    }

    /// Load a partition into the live set from its checkpoint. Already-held
    /// partitions are left untouched.
    pub fn recover(&mut self, p: &PartitionId) {
        if self.live.contains_key(p) {
            return;
        }
        let (_, bytes) = self.env.checkpoints.get(p);
        let state = PartitionState::from_bytes(&bytes)
            .expect("checkpoint store holds canonical partition states");
        self.live.insert(p.clone(), state);
    }

    /// Process one batch for a randomly chosen held partition. An empty
    /// batch leaves the partition untouched.
    pub fn run_step(&mut self, now: u64) -> Result<StepOutcome, RuntimeError> {
        let p = {
            let keys: Vec<&PartitionId> = self.live.keys().collect();
            if keys.is_empty() {
                return Err(RuntimeError::NoPartitions);
            }
            keys[self.rng.gen_range(0..keys.len())].clone()
        };
        let ps = self.live.get_mut(&p).expect("picked held partition");
        let (batch, nxt_idx) = self.env.input.read(&p, ps.idx, self.cfg.batch_size)?;
        if batch.is_empty() {
            return Ok(StepOutcome {
                partition: p,
                read: 0,
                emitted: 0,
            });
        }
        let ctx = HandlerCtx {
            partition: p.clone(),
            membership: self.membership.clone(),
            window: self.window,
        };
        let outputs = self.handler.on_batch(&ctx, &mut ps.state, &batch)?;
        self.env.output.write_at(&p, ps.odx, &outputs)?;
        let old_idx = ps.idx;
        ps.idx = nxt_idx;
        ps.odx += outputs.len() as u64;
        self.env.observer.consumed(&p, old_idx, nxt_idx, now);
        for record in &outputs {
            if let Some(tag) = &record.meta {
                self.env.observer.emitted(&tag.partition, tag.window, now);
            }
        }
        Ok(StepOutcome {
            partition: p,
            read: batch.len(),
            emitted: outputs.len(),
        })
    }

    /// Checkpoint one held partition. The store keeps the largest index.
    pub fn maybe_checkpoint(&self, p: &PartitionId) {
        if let Some(ps) = self.live.get(p) {
            self.env.checkpoints.put(p, ps.idx, ps.to_bytes());
        }
    }

    pub fn checkpoint_all(&self) {
        for p in self.live.keys() {
            self.maybe_checkpoint(p);
        }
    }

    /// Publish snapshots of all held replicated state and merge in every
    /// snapshot published since the last pump. Unknown state names in a
    /// snapshot are skipped with a diagnostic.
    pub fn sync_pump(&mut self) -> Result<(), RuntimeError> {
        for (p, ps) in &self.live {
            if ps.state.wcrdts.is_empty() {
                continue;
            }
            let frame = BroadcastFrame::Snapshot(StateSnapshot {
                node: self.cfg.id.clone(),
                partition: p.clone(),
                wcrdts: ps.state.wcrdts.clone(),
            });
            self.env
                .broadcast
                .publish(Record::untagged(frame.to_bytes()))?;
        }
        let (frames, cursor) = self.env.broadcast.poll(self.broadcast_cursor)?;
        self.broadcast_cursor = cursor;
        for record in frames {
            let frame = BroadcastFrame::from_bytes(&record.payload)?;
            let BroadcastFrame::Snapshot(snapshot) = frame else {
                continue;
            };
            for (name, theirs) in &snapshot.wcrdts {
                for ps in self.live.values_mut() {
                    match ps.state.wcrdts.get_mut(name) {
                        Some(mine) => mine.merge_from(theirs).map_err(|source| {
                            RuntimeError::Handler {
                                partition: snapshot.partition.clone(),
                                source,
                            }
                        })?,
                        None => {
                            log::debug!(
                                "ignoring snapshot for unknown windowed state {name:?} from {}",
                                snapshot.node
                            );
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Run the handler over an empty batch for every held partition so that
    /// windows completed by merged-in progress get emitted even when the
    /// partition's input is drained.
    pub fn flush_completed(&mut self, now: u64) -> Result<(), RuntimeError> {
        let partitions: Vec<PartitionId> = self.live.keys().cloned().collect();
        for p in partitions {
            let ctx = self.ctx_for(&p);
            let ps = self.live.get_mut(&p).expect("held partition");
            let outputs = self.handler.on_batch(&ctx, &mut ps.state, &[])?;
            if outputs.is_empty() {
                continue;
            }
            self.env.output.write_at(&p, ps.odx, &outputs)?;
            ps.odx += outputs.len() as u64;
            for record in &outputs {
                if let Some(tag) = &record.meta {
                    self.env.observer.emitted(&tag.partition, tag.window, now);
                }
            }
        }
        Ok(())
    }

    /// Publish one heartbeat per held partition on the control topic.
    pub fn emit_heartbeats(&mut self, now: u64) -> Result<(), RuntimeError> {
        for (p, ps) in &self.live {
            let frame = BroadcastFrame::Heartbeat(Heartbeat {
                node: self.cfg.id.clone(),
                partition: p.clone(),
                nxt_idx: ps.idx,
                emitted_at: now,
            });
            self.env
                .control
                .publish(Record::untagged(frame.to_bytes()))?;
        }
        Ok(())
    }

    /// Consume new control frames and refresh the per-partition liveness map.
    pub fn poll_control(&mut self) -> Result<(), RuntimeError> {
        let (frames, cursor) = self.env.control.poll(self.control_cursor)?;
        self.control_cursor = cursor;
        for record in frames {
            if let BroadcastFrame::Heartbeat(hb) = BroadcastFrame::from_bytes(&record.payload)? {
                let seen = self.last_seen.entry(hb.partition).or_insert(0);
                *seen = (*seen).max(hb.emitted_at);
            }
        }
        Ok(())
    }

    /// Partitions whose latest heartbeat is older than the staleness
    /// threshold. Partitions never heard from count from time zero, so they
    /// become stale one threshold after startup.
    pub fn detect_stale(&self, now: u64) -> BTreeSet<PartitionId> {
        self.membership
            .iter()
            .filter(|p| {
                let last = self.last_seen.get(*p).copied().unwrap_or(0);
                now.saturating_sub(last) > self.cfg.steal_stale_after
            })
            .cloned()
            .collect()
    }

    /// Adopt stale partitions. Possibly duplicates work with a slow but
    /// alive owner, which is safe: execution is deterministic and the output
    /// log is idempotent.
    pub fn work_steal(&mut self, stale: &BTreeSet<PartitionId>) {
        for p in stale {
            self.recover(p);
        }
    }

    fn read_window(&self, name: &str, window: u64) -> Result<Option<AggregateValue>, RuntimeError> {
        for ps in self.live.values() {
            if let Some(w) = ps.state.wcrdts.get(name) {
                return Ok(w.window_value(window));
            }
        }
        Err(RuntimeError::NoPartitions)
    }

    /// Blocking (safe-mode) window read: drives the background sync until
    /// the window completes or `max_pumps` sync rounds have passed.
    pub fn await_window(
        &mut self,
        name: &str,
        window: u64,
        max_pumps: u64,
    ) -> Result<AggregateValue, RuntimeError> {
        for attempt in 0..=max_pumps {
            if let Some(value) = self.read_window(name, window)? {
                return Ok(value);
            }
            if attempt < max_pumps {
                self.sync_pump()?;
            }
        }
        Err(RuntimeError::AwaitTimeout {
            name: name.to_string(),
            window,
        })
    }

    /// Largest global watermark over all held instances of `name`. Probe for
    /// liveness measurements; `None` when nothing relevant is held.
    pub fn watermark_probe(&self, name: &str) -> Option<Timestamp> {
        self.live
            .values()
            .filter_map(|ps| ps.state.wcrdts.get(name).map(|w| w.global_watermark()))
            .max()
    }
}
