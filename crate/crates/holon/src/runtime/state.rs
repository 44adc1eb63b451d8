//! Checkpointable handler state and the broadcast/control frame formats.

use std::collections::BTreeMap;

use crate::encoding::{Canonical, CodecError, Decoder, Encoder};
use crate::runtime::NodeId;
use crate::stream_log::PartitionId;
use crate::windowed::{WLocal, WindowedCrdt};

/// Composite of all state a handler declares: replicated windowed values,
/// partition-local windowed values, and plain local cells. The whole
/// composite is checkpointed and recovered as a unit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HandlerState {
    pub wcrdts: BTreeMap<String, WindowedCrdt>,
    pub wlocals: BTreeMap<String, WLocal>,
    pub locals: BTreeMap<String, u64>,
}

impl HandlerState {
    pub fn wcrdt(&self, name: &str) -> &WindowedCrdt {
        self.wcrdts.get(name).expect("undeclared windowed state")
    }

    pub fn wcrdt_mut(&mut self, name: &str) -> &mut WindowedCrdt {
        self.wcrdts.get_mut(name).expect("undeclared windowed state")
    }

    pub fn wlocal_mut(&mut self, name: &str) -> &mut WLocal {
        self.wlocals.get_mut(name).expect("undeclared local windowed state")
    }

    pub fn local(&self, name: &str) -> u64 {
        *self.locals.get(name).expect("undeclared local cell")
    }

    pub fn set_local(&mut self, name: &str, value: u64) {
        *self.locals.get_mut(name).expect("undeclared local cell") = value;
    }

    /// Canonical bytes of the observable state: windowed lattice instances
    /// are encoded through their joined view so that replicas that merged in
    /// different orders compare equal once they have exchanged state.
    pub fn canonical_observable_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_u32(self.wcrdts.len() as u32);
        for (name, w) in &self.wcrdts {
            enc.put_str(name);
            enc.put_bytes(&w.canonical_observable_bytes());
        }
        enc.put_u32(self.wlocals.len() as u32);
        for (name, w) in &self.wlocals {
            enc.put_str(name);
            w.encode(&mut enc);
        }
        enc.put_u32(self.locals.len() as u32);
        for (name, v) in &self.locals {
            enc.put_str(name);
            enc.put_u64(*v);
        }
        enc.into_bytes()
    }
}

impl Canonical for HandlerState {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.wcrdts.len() as u32);
        for (name, w) in &self.wcrdts {
            enc.put_str(name);
            w.encode(enc);
        }
        enc.put_u32(self.wlocals.len() as u32);
        for (name, w) in &self.wlocals {
            enc.put_str(name);
            w.encode(enc);
        }
        enc.put_u32(self.locals.len() as u32);
        for (name, v) in &self.locals {
            enc.put_str(name);
            enc.put_u64(*v);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let mut state = HandlerState::default();
        for _ in 0..dec.u32()? {
            let name = dec.string()?;
            state.wcrdts.insert(name, WindowedCrdt::decode(dec)?);
        }
        for _ in 0..dec.u32()? {
            let name = dec.string()?;
            state.wlocals.insert(name, WLocal::decode(dec)?);
        }
        for _ in 0..dec.u32()? {
            let name = dec.string()?;
            state.locals.insert(name, dec.u64()?);
        }
        Ok(state)
    }
}

/// Per-partition execution state: the next input offset to read, the next
/// output offset to write, and the handler state. The handler state's own
/// contributions are a pure function of the input prefix `[0, idx)`, so a
/// checkpointed triple can be resumed by any node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionState {
    pub idx: u64,
    pub odx: u64,
    pub state: HandlerState,
}

impl PartitionState {
    pub fn initial(state: HandlerState) -> Self {
        Self {
            idx: 0,
            odx: 0,
            state,
        }
    }
}

impl Canonical for PartitionState {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.idx);
        enc.put_u64(self.odx);
        self.state.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(PartitionState {
            idx: dec.u64()?,
            odx: dec.u64()?,
            state: HandlerState::decode(dec)?,
        })
    }
}

/// Liveness signal for one held partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heartbeat {
    pub node: NodeId,
    pub partition: PartitionId,
    pub nxt_idx: u64,
    pub emitted_at: u64,
}

impl Canonical for Heartbeat {
    fn encode(&self, enc: &mut Encoder) {
        self.node.encode(enc);
        self.partition.encode(enc);
        enc.put_u64(self.nxt_idx);
        enc.put_u64(self.emitted_at);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Heartbeat {
            node: NodeId::decode(dec)?,
            partition: PartitionId::decode(dec)?,
            nxt_idx: dec.u64()?,
            emitted_at: dec.u64()?,
        })
    }
}

/// Snapshot of one partition's replicated windowed state, published on the
/// broadcast topic. Receivers merge entries into their own instances by
/// state name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub node: NodeId,
    pub partition: PartitionId,
    pub wcrdts: BTreeMap<String, WindowedCrdt>,
}

impl Canonical for StateSnapshot {
    fn encode(&self, enc: &mut Encoder) {
        self.node.encode(enc);
        self.partition.encode(enc);
        enc.put_u32(self.wcrdts.len() as u32);
        for (name, w) in &self.wcrdts {
            enc.put_str(name);
            w.encode(enc);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let node = NodeId::decode(dec)?;
        let partition = PartitionId::decode(dec)?;
        let mut wcrdts = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let name = dec.string()?;
            wcrdts.insert(name, WindowedCrdt::decode(dec)?);
        }
        Ok(StateSnapshot {
            node,
            partition,
            wcrdts,
        })
    }
}

const FRAME_SNAPSHOT: u8 = 0;
const FRAME_HEARTBEAT: u8 = 1;

/// Frame carried on the broadcast and control topics: a one-byte kind tag
/// followed by the canonical encoding of the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BroadcastFrame {
    Snapshot(StateSnapshot),
    Heartbeat(Heartbeat),
}

impl Canonical for BroadcastFrame {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            BroadcastFrame::Snapshot(s) => {
                enc.put_u8(FRAME_SNAPSHOT);
                s.encode(enc);
            }
            BroadcastFrame::Heartbeat(h) => {
                enc.put_u8(FRAME_HEARTBEAT);
                h.encode(enc);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            FRAME_SNAPSHOT => Ok(BroadcastFrame::Snapshot(StateSnapshot::decode(dec)?)),
            FRAME_HEARTBEAT => Ok(BroadcastFrame::Heartbeat(Heartbeat::decode(dec)?)),
            tag => Err(CodecError::BadTag {
                tag,
                context: "broadcast frame",
            }),
        }
    }
}
