//! Partitioned append-only logged topics and the checkpoint store.
//!
//! These are in-process stand-ins for a broker: offsets are dense and
//! per-partition, appended records never change, and reads are replayable.
//! The output side uses offset-addressed idempotent writes: a position that
//! is already occupied must receive byte-identical records, so the output
//! log is exactly-once at the (partition, offset) level and any divergence
//! between two executions of the same partition surfaces immediately as a
//! [`LogError::DeterminismViolation`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use crate::crdt::ReplicaId;
use crate::encoding::{Canonical, CodecError, Decoder, Encoder};

/// Partitions are the unit of logging, checkpointing, watermarking, and work
/// stealing; they double as the replica identity of all windowed state.
pub type PartitionId = ReplicaId;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("topic {topic} has no partition {partition}")]
    UnknownPartition { topic: String, partition: PartitionId },
    #[error(
        "write at offset {offset} of {topic}/{partition} leaves a gap (log length {len})"
    )]
    OffsetGap {
        topic: String,
        partition: PartitionId,
        offset: u64,
        len: u64,
    },
    #[error(
        "determinism violation: conflicting record at offset {offset} of {topic}/{partition}"
    )]
    DeterminismViolation {
        topic: String,
        partition: PartitionId,
        offset: u64,
    },
    #[error("codec error: {0}")]
    Codec(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Tag carried by window-scoped output records; consumers deduplicate on it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OutputTag {
    pub partition: PartitionId,
    pub window: u64,
}

/// One log entry. The payload is immutable once appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub payload: Vec<u8>,
    pub meta: Option<OutputTag>,
}

impl Record {
    pub fn untagged(payload: impl Into<Vec<u8>>) -> Self {
        Self {
            payload: payload.into(),
            meta: None,
        }
    }

    pub fn tagged(payload: impl Into<Vec<u8>>, partition: PartitionId, window: u64) -> Self {
        Self {
            payload: payload.into(),
            meta: Some(OutputTag { partition, window }),
        }
    }

    pub fn payload_str(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.payload)
    }
}

impl Canonical for Record {
    fn encode(&self, enc: &mut Encoder) {
        match &self.meta {
            None => enc.put_u8(0),
            Some(tag) => {
                enc.put_u8(1);
                tag.partition.encode(enc);
                enc.put_u64(tag.window);
            }
        }
        enc.put_bytes(&self.payload);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let meta = match dec.u8()? {
            0 => None,
            1 => Some(OutputTag {
                partition: PartitionId::decode(dec)?,
                window: dec.u64()?,
            }),
            tag => {
                return Err(CodecError::BadTag {
                    tag,
                    context: "record meta",
                })
            }
        };
        Ok(Record {
            meta,
            payload: dec.bytes()?,
        })
    }
}

/// Partitioned append-only log. Thread-safe: appends are atomic per
/// partition and reads return snapshots.
pub struct LoggedTopic {
    name: String,
    partitions: BTreeMap<PartitionId, RwLock<Vec<Record>>>,
}

impl LoggedTopic {
    pub fn new(name: impl Into<String>, partitions: impl IntoIterator<Item = PartitionId>) -> Self {
        Self {
            name: name.into(),
            partitions: partitions
                .into_iter()
                .map(|p| (p, RwLock::new(Vec::new())))
                .collect(),
        }
    }

    /// Topic with one partition, used for broadcast and control streams.
    pub fn single(name: impl Into<String>) -> Self {
        let p = PartitionId::new("0").expect("static id");
        Self::new(name, [p])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn partition_ids(&self) -> impl Iterator<Item = &PartitionId> {
        self.partitions.keys()
    }

    fn partition(&self, p: &PartitionId) -> Result<&RwLock<Vec<Record>>, LogError> {
        self.partitions
            .get(p)
            .ok_or_else(|| LogError::UnknownPartition {
                topic: self.name.clone(),
                partition: p.clone(),
            })
    }

    /// Append records at the end of a partition, returning the offset of the
    /// first one. Appending nothing returns the current end offset.
    pub fn append(&self, p: &PartitionId, records: &[Record]) -> Result<u64, LogError> {
        let mut log = self.partition(p)?.write().expect("log lock");
        let first = log.len() as u64;
        log.extend_from_slice(records);
        Ok(first)
    }

    /// Read up to `max_batch` records starting at `from`. Reading at or past
    /// the end yields an empty batch, not an error. Returns the records and
    /// the next offset to read.
    pub fn read(
        &self,
        p: &PartitionId,
        from: u64,
        max_batch: usize,
    ) -> Result<(Vec<Record>, u64), LogError> {
        let log = self.partition(p)?.read().expect("log lock");
        let len = log.len() as u64;
        if from >= len {
            return Ok((Vec::new(), from));
        }
        let end = len.min(from.saturating_add(max_batch as u64));
        let records = log[from as usize..end as usize].to_vec();
        Ok((records, end))
    }

    pub fn len(&self, p: &PartitionId) -> Result<u64, LogError> {
        Ok(self.partition(p)?.read().expect("log lock").len() as u64)
    }

    pub fn is_empty(&self, p: &PartitionId) -> Result<bool, LogError> {
        Ok(self.len(p)? == 0)
    }

    /// Idempotent offset-addressed write. Positions already occupied must
    /// receive byte-identical records (then the write is a no-op there);
    /// positions at the end are appended. Writing past the end is a gap
    /// error; a conflicting rewrite is a determinism violation.
    pub fn write_at(&self, p: &PartitionId, offset: u64, records: &[Record]) -> Result<(), LogError> {
        let mut log = self.partition(p)?.write().expect("log lock");
        let len = log.len() as u64;
        if offset > len {
            return Err(LogError::OffsetGap {
                topic: self.name.clone(),
                partition: p.clone(),
                offset,
                len,
            });
        }
        for (i, record) in records.iter().enumerate() {
            let pos = offset + i as u64;
            if pos < log.len() as u64 {
                if &log[pos as usize] != record {
                    return Err(LogError::DeterminismViolation {
                        topic: self.name.clone(),
                        partition: p.clone(),
                        offset: pos,
                    });
                }
            } else {
                log.push(record.clone());
            }
        }
        Ok(())
    }

    /// Append one frame to a single-partition topic.
    pub fn publish(&self, record: Record) -> Result<(), LogError> {
        debug_assert_eq!(self.partitions.len(), 1);
        let p = self.partitions.keys().next().expect("single partition");
        let mut log = self.partitions[p].write().expect("log lock");
        log.push(record);
        Ok(())
    }

    /// Read all frames past `cursor` from a single-partition topic and
    /// return them with the advanced cursor.
    pub fn poll(&self, cursor: u64) -> Result<(Vec<Record>, u64), LogError> {
        debug_assert_eq!(self.partitions.len(), 1);
        let p = self.partitions.keys().next().expect("single partition");
        self.read(p, cursor, usize::MAX)
    }

    /// Snapshot of a partition's full contents.
    pub fn snapshot(&self, p: &PartitionId) -> Result<Vec<Record>, LogError> {
        Ok(self.partition(p)?.read().expect("log lock").clone())
    }

    /// Persist every partition as a file of length-prefixed frames:
    /// big-endian u32 length, then the canonical record encoding.
    pub fn persist_to_dir(&self, dir: &Path) -> Result<(), LogError> {
        fs::create_dir_all(dir)?;
        for (p, log) in &self.partitions {
            let log = log.read().expect("log lock");
            let mut out = Vec::new();
            for record in log.iter() {
                let bytes = record.to_bytes();
                out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                out.extend_from_slice(&bytes);
            }
            let mut file = fs::File::create(dir.join(format!("{p}.log")))?;
            file.write_all(&out)?;
        }
        Ok(())
    }

    /// Load a topic previously written by [`LoggedTopic::persist_to_dir`].
    pub fn load_from_dir(
        name: impl Into<String>,
        dir: &Path,
        partitions: impl IntoIterator<Item = PartitionId>,
    ) -> Result<Self, LogError> {
        let topic = Self::new(name, partitions);
        for (p, log) in &topic.partitions {
            let path = dir.join(format!("{p}.log"));
            if !path.exists() {
                continue;
            }
            let mut data = Vec::new();
            fs::File::open(&path)?.read_to_end(&mut data)?;
            let mut pos = 0usize;
            let mut records = Vec::new();
            while pos < data.len() {
                if pos + 4 > data.len() {
                    return Err(CodecError::Eof(pos).into());
                }
                let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
                pos += 4;
                if pos + len > data.len() {
                    return Err(CodecError::Eof(pos).into());
                }
                records.push(Record::from_bytes(&data[pos..pos + len])?);
                pos += len;
            }
            *log.write().expect("log lock") = records;
        }
        Ok(topic)
    }
}

#[derive(Clone)]
struct StoredState {
    nxt_idx: u64,
    bytes: Vec<u8>,
}

/// Durable per-partition checkpoint store. Entries merge by keeping the
/// state with the largest next-input index; ties keep the existing entry.
pub struct CheckpointStore {
    initial: StoredState,
    entries: Mutex<BTreeMap<PartitionId, StoredState>>,
}

impl CheckpointStore {
    /// `initial_bytes` is the designated state returned for partitions that
    /// have never been checkpointed (next-input index zero).
    pub fn new(initial_bytes: Vec<u8>) -> Self {
        Self {
            initial: StoredState {
                nxt_idx: 0,
                bytes: initial_bytes,
            },
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Store `bytes` for `p` if `nxt_idx` is strictly larger than what is
    /// already stored.
    pub fn put(&self, p: &PartitionId, nxt_idx: u64, bytes: Vec<u8>) {
        let mut entries = self.entries.lock().expect("store lock");
        match entries.get(p) {
            Some(existing) if existing.nxt_idx >= nxt_idx => {}
            _ => {
                entries.insert(p.clone(), StoredState { nxt_idx, bytes });
            }
        }
    }

    /// Current stored bytes for `p`, or the initial state if absent.
    pub fn get(&self, p: &PartitionId) -> (u64, Vec<u8>) {
        let entries = self.entries.lock().expect("store lock");
        let state = entries.get(p).unwrap_or(&self.initial);
        (state.nxt_idx, state.bytes.clone())
    }

    /// Next-input index of the stored entry, if any. Useful for assertions.
    pub fn stored_nxt_idx(&self, p: &PartitionId) -> Option<u64> {
        self.entries
            .lock()
            .expect("store lock")
            .get(p)
            .map(|s| s.nxt_idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(s: &str) -> PartitionId {
        PartitionId::new(s).unwrap()
    }

    fn rec(s: &str) -> Record {
        Record::untagged(s.as_bytes().to_vec())
    }

    fn topic() -> LoggedTopic {
        LoggedTopic::new("t", [pid("p0"), pid("p1")])
    }

    #[test]
    fn append_assigns_dense_offsets() {
        let t = topic();
        let first = t.append(&pid("p0"), &[rec("a"), rec("b"), rec("c")]).unwrap();
        assert_eq!(first, 0);
        let next = t.append(&pid("p0"), &[rec("d")]).unwrap();
        assert_eq!(next, 3);
    }

    #[test]
    fn empty_append_returns_end_offset() {
        let t = topic();
        t.append(&pid("p0"), &[rec("a")]).unwrap();
        assert_eq!(t.append(&pid("p0"), &[]).unwrap(), 1);
        assert_eq!(t.len(&pid("p0")).unwrap(), 1);
    }

    #[test]
    fn unknown_partition_is_an_error() {
        let t = topic();
        assert!(matches!(
            t.append(&pid("x"), &[rec("a")]),
            Err(LogError::UnknownPartition { .. })
        ));
    }

    #[test]
    fn read_is_a_replayable_suffix() {
        let t = topic();
        t.append(&pid("p0"), &[rec("a"), rec("b"), rec("c")]).unwrap();
        let (batch, nxt) = t.read(&pid("p0"), 1, 10).unwrap();
        assert_eq!(batch, vec![rec("b"), rec("c")]);
        assert_eq!(nxt, 3);

        let (batch, nxt) = t.read(&pid("p0"), 3, 10).unwrap();
        assert!(batch.is_empty());
        assert_eq!(nxt, 3);

        let again = t.read(&pid("p0"), 0, 10).unwrap();
        assert_eq!(again, t.read(&pid("p0"), 0, 10).unwrap());
    }

    #[test]
    fn write_at_is_idempotent_for_identical_bytes() {
        let t = topic();
        t.write_at(&pid("p0"), 0, &[rec("a"), rec("b")]).unwrap();
        t.write_at(&pid("p0"), 0, &[rec("a"), rec("b"), rec("c")]).unwrap();
        assert_eq!(
            t.snapshot(&pid("p0")).unwrap(),
            vec![rec("a"), rec("b"), rec("c")]
        );
    }

    #[test]
    fn conflicting_rewrite_is_a_determinism_violation() {
        let t = topic();
        t.write_at(&pid("p0"), 0, &[rec("a")]).unwrap();
        assert!(matches!(
            t.write_at(&pid("p0"), 0, &[rec("x")]),
            Err(LogError::DeterminismViolation { offset: 0, .. })
        ));
    }

    #[test]
    fn gapped_write_is_a_usage_error() {
        let t = topic();
        t.append(&pid("p0"), &[rec("a"), rec("b"), rec("c")]).unwrap();
        assert!(matches!(
            t.write_at(&pid("p0"), 5, &[rec("x")]),
            Err(LogError::OffsetGap { offset: 5, .. })
        ));
    }

    #[test]
    fn checkpoint_keeps_largest_index() {
        let store = CheckpointStore::new(b"init".to_vec());
        store.put(&pid("p0"), 7, b"seven".to_vec());
        store.put(&pid("p0"), 10, b"ten".to_vec());
        assert_eq!(store.get(&pid("p0")), (10, b"ten".to_vec()));

        // Reversed order ends at the same state.
        let store = CheckpointStore::new(b"init".to_vec());
        store.put(&pid("p0"), 10, b"ten".to_vec());
        store.put(&pid("p0"), 7, b"seven".to_vec());
        assert_eq!(store.get(&pid("p0")), (10, b"ten".to_vec()));
    }

    #[test]
    fn checkpoint_tie_keeps_existing() {
        let store = CheckpointStore::new(b"init".to_vec());
        store.put(&pid("p0"), 5, b"first".to_vec());
        store.put(&pid("p0"), 5, b"second".to_vec());
        assert_eq!(store.get(&pid("p0")), (5, b"first".to_vec()));
    }

    #[test]
    fn checkpoint_get_defaults_to_initial() {
        let store = CheckpointStore::new(b"init".to_vec());
        assert_eq!(store.get(&pid("p9")), (0, b"init".to_vec()));
        store.put(&pid("p9"), 3, b"state".to_vec());
        assert_eq!(store.get(&pid("p9")), (3, b"state".to_vec()));
    }

    #[test]
    fn broadcast_publish_then_poll() {
        let t = LoggedTopic::single("broadcast");
        t.publish(rec("f1")).unwrap();
        let (frames, cursor) = t.poll(0).unwrap();
        assert_eq!(frames, vec![rec("f1")]);
        assert_eq!(cursor, 1);

        // Second poll from the advanced cursor is empty.
        let (frames, cursor) = t.poll(cursor).unwrap();
        assert!(frames.is_empty());
        assert_eq!(cursor, 1);

        // Two publishers interleave in some total log order.
        t.publish(rec("a")).unwrap();
        t.publish(rec("b")).unwrap();
        let (frames, _) = t.poll(1).unwrap();
        assert_eq!(frames, vec![rec("a"), rec("b")]);
    }

    #[test]
    fn persist_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = topic();
        t.append(&pid("p0"), &[rec("a"), Record::tagged(b"x".to_vec(), pid("p0"), 3)])
            .unwrap();
        t.append(&pid("p1"), &[rec("b")]).unwrap();
        t.persist_to_dir(dir.path()).unwrap();

        let loaded =
            LoggedTopic::load_from_dir("t", dir.path(), [pid("p0"), pid("p1")]).unwrap();
        assert_eq!(loaded.snapshot(&pid("p0")).unwrap(), t.snapshot(&pid("p0")).unwrap());
        assert_eq!(loaded.snapshot(&pid("p1")).unwrap(), t.snapshot(&pid("p1")).unwrap());
    }
}
