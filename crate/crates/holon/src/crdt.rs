//! Join-semilattice value types.
//!
//! All replicated state in this crate bottoms out in one of three lattice
//! families:
//!
//! - [`GCounter`]: grow-only counter, one non-negative slot per replica,
//!   merge is pointwise maximum, value is the sum of slots.
//! - [`MaxRegister`]: keeps the single best `(score, tiebreak)` pair under
//!   a total order (higher score wins, then the lexicographically smaller
//!   tiebreak key; absent is below everything).
//! - [`MapLattice`]: grow-only map from string keys to a nested lattice of
//!   a single kind; merge is key-union with per-key nested merge.
//!
//! [`LatticeValue`] is the dynamically-typed view used by the windowed
//! wrappers, checkpoints, and broadcast: merging two values of different
//! kinds is a usage error rather than a type error, because the concrete
//! kind is chosen at runtime by the workload.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::encoding::{Canonical, CodecError, Decoder, Encoder};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("cannot merge {left} with {right}")]
    TypeMismatch {
        left: LatticeKind,
        right: LatticeKind,
    },
    #[error("counter overflow for replica {0}")]
    CounterOverflow(ReplicaId),
    #[error("replica id must be non-empty")]
    EmptyReplicaId,
    #[error("update {update} does not apply to {target}")]
    UpdateMismatch {
        update: &'static str,
        target: LatticeKind,
    },
}

/// Identifier of a logical update source. In this system the update sources
/// are partitions: a stolen partition keeps its id, so its progress and
/// counter slots survive node failures.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicaId(String);

impl ReplicaId {
    pub fn new(id: impl Into<String>) -> Result<Self, LatticeError> {
        let id = id.into();
        if id.is_empty() {
            return Err(LatticeError::EmptyReplicaId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Canonical for ReplicaId {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self(dec.string()?))
    }
}

/// Discriminant of a lattice value, used in error reporting and merge
/// type checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    Counter,
    Max,
    Map,
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::Counter => f.write_str("counter"),
            LatticeKind::Max => f.write_str("max-register"),
            LatticeKind::Map => f.write_str("map"),
        }
    }
}

/// Grow-only counter: per-replica non-negative slots, summed on read.
///
/// The per-replica slot is a monotone function of that replica's input
/// prefix, which is what makes merge-by-maximum absorb replayed and
/// duplicated work.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GCounter {
    counts: BTreeMap<ReplicaId, u64>,
}

impl GCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `amount` to `replica`'s slot. Overflow is a hard error; a zero
    /// amount leaves the counter untouched (no slot is materialized).
    pub fn increment(&mut self, replica: &ReplicaId, amount: u64) -> Result<(), LatticeError> {
        if amount == 0 {
            return Ok(());
        }
        let slot = self.counts.entry(replica.clone()).or_insert(0);
        *slot = slot
            .checked_add(amount)
            .ok_or_else(|| LatticeError::CounterOverflow(replica.clone()))?;
        Ok(())
    }

    /// Sum of all slots.
    pub fn value(&self) -> u64 {
        self.counts
            .values()
            .try_fold(0u64, |acc, v| acc.checked_add(*v))
            .expect("counter sum overflow")
    }

    pub fn slot(&self, replica: &ReplicaId) -> u64 {
        self.counts.get(replica).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &GCounter) {
        for (r, v) in &other.counts {
            let slot = self.counts.entry(r.clone()).or_insert(0);
            *slot = (*slot).max(*v);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.counts.values().all(|v| *v == 0)
    }
}

/// The winning entry of a [`MaxRegister`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxEntry {
    pub score: i64,
    /// Opaque ordered key; ties on score are broken by the lexicographically
    /// smaller key. Fixed-width big-endian encodings of integers keep the
    /// lexicographic order aligned with the numeric one.
    pub key: Vec<u8>,
}

impl MaxEntry {
    /// True when `self` wins against `other` under (score desc, key asc).
    fn beats(&self, other: &MaxEntry) -> bool {
        match self.score.cmp(&other.score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.key < other.key,
        }
    }
}

/// Register that keeps the best `(score, tiebreak)` pair ever proposed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaxRegister {
    best: Option<MaxEntry>,
}

impl MaxRegister {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn propose(&mut self, candidate: MaxEntry) {
        match &self.best {
            Some(cur) if !candidate.beats(cur) => {}
            _ => self.best = Some(candidate),
        }
    }

    pub fn best(&self) -> Option<&MaxEntry> {
        self.best.as_ref()
    }

    pub fn merge(&mut self, other: &MaxRegister) {
        if let Some(entry) = &other.best {
            self.propose(entry.clone());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.best.is_none()
    }
}

/// Grow-only map from string keys to nested lattice values of one kind.
/// Deletion is unsupported.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MapLattice {
    entries: BTreeMap<String, LatticeValue>,
}

impl MapLattice {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&LatticeValue> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &LatticeValue)> {
        self.entries.iter()
    }

    pub fn merge(&mut self, other: &MapLattice) -> Result<(), LatticeError> {
        for (k, v) in &other.entries {
            match self.entries.get_mut(k) {
                Some(mine) => mine.merge(v)?,
                None => {
                    self.entries.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }
}

/// An update to apply at a single replica. The variant must match the
/// lattice kind it is applied to; map updates name the entry and carry the
/// nested update, and a missing entry is created with the kind implied by
/// the nested update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeUpdate {
    /// Add a non-negative amount to the applying replica's counter slot.
    Add(u64),
    /// Propose a candidate for a max register.
    Propose { score: i64, key: Vec<u8> },
    /// Apply a nested update under a map key.
    Entry(String, Box<LatticeUpdate>),
}

impl LatticeUpdate {
    fn name(&self) -> &'static str {
        match self {
            LatticeUpdate::Add(_) => "add",
            LatticeUpdate::Propose { .. } => "propose",
            LatticeUpdate::Entry(..) => "entry",
        }
    }

    /// Zero value of the lattice kind this update applies to.
    fn zero_target(&self) -> LatticeValue {
        match self {
            LatticeUpdate::Add(_) => LatticeValue::Counter(GCounter::new()),
            LatticeUpdate::Propose { .. } => LatticeValue::Max(MaxRegister::new()),
            LatticeUpdate::Entry(..) => LatticeValue::Map(MapLattice::new()),
        }
    }
}

/// Dynamically-typed lattice value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeValue {
    Counter(GCounter),
    Max(MaxRegister),
    Map(MapLattice),
}

impl LatticeValue {
    pub fn kind(&self) -> LatticeKind {
        match self {
            LatticeValue::Counter(_) => LatticeKind::Counter,
            LatticeValue::Max(_) => LatticeKind::Max,
            LatticeValue::Map(_) => LatticeKind::Map,
        }
    }

    /// Least upper bound, in place. Errors if the kinds differ.
    pub fn merge(&mut self, other: &LatticeValue) -> Result<(), LatticeError> {
        match (self, other) {
            (LatticeValue::Counter(a), LatticeValue::Counter(b)) => {
                a.merge(b);
                Ok(())
            }
            (LatticeValue::Max(a), LatticeValue::Max(b)) => {
                a.merge(b);
                Ok(())
            }
            (LatticeValue::Map(a), LatticeValue::Map(b)) => a.merge(b),
            (me, other) => Err(LatticeError::TypeMismatch {
                left: me.kind(),
                right: other.kind(),
            }),
        }
    }

    /// Functional merge of two values.
    pub fn merged(mut a: LatticeValue, b: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        a.merge(b)?;
        Ok(a)
    }

    /// Apply an update attributed to `replica`.
    pub fn apply(
        &mut self,
        update: &LatticeUpdate,
        replica: &ReplicaId,
    ) -> Result<(), LatticeError> {
        match (self, update) {
            (LatticeValue::Counter(c), LatticeUpdate::Add(amount)) => {
                c.increment(replica, *amount)
            }
            (LatticeValue::Max(m), LatticeUpdate::Propose { score, key }) => {
                m.propose(MaxEntry {
                    score: *score,
                    key: key.clone(),
                });
                Ok(())
            }
            (LatticeValue::Map(m), LatticeUpdate::Entry(key, nested)) => {
                let entry = m
                    .entries
                    .entry(key.clone())
                    .or_insert_with(|| nested.zero_target());
                entry.apply(nested, replica)
            }
            (me, update) => Err(LatticeError::UpdateMismatch {
                update: update.name(),
                target: me.kind(),
            }),
        }
    }

    /// Pure read of the aggregate value.
    pub fn value(&self) -> AggregateValue {
        match self {
            LatticeValue::Counter(c) => AggregateValue::Count(c.value()),
            LatticeValue::Max(m) => AggregateValue::Best(m.best().cloned()),
            LatticeValue::Map(m) => AggregateValue::Map(
                m.entries
                    .iter()
                    .map(|(k, v)| (k.clone(), v.value()))
                    .collect(),
            ),
        }
    }

    /// True when the value is indistinguishable from the zero of its kind.
    pub fn is_zero(&self) -> bool {
        match self {
            LatticeValue::Counter(c) => c.is_zero(),
            LatticeValue::Max(m) => m.is_zero(),
            LatticeValue::Map(m) => m.is_zero(),
        }
    }
}

/// Result of reading a lattice value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregateValue {
    Count(u64),
    Best(Option<MaxEntry>),
    Map(BTreeMap<String, AggregateValue>),
}

impl AggregateValue {
    pub fn as_count(&self) -> Option<u64> {
        match self {
            AggregateValue::Count(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_best(&self) -> Option<&Option<MaxEntry>> {
        match self {
            AggregateValue::Best(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, AggregateValue>> {
        match self {
            AggregateValue::Map(m) => Some(m),
            _ => None,
        }
    }
}

const TAG_COUNTER: u8 = 0;
const TAG_MAX: u8 = 1;
const TAG_MAP: u8 = 2;

impl Canonical for LatticeValue {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            LatticeValue::Counter(c) => {
                enc.put_u8(TAG_COUNTER);
                enc.put_u32(c.counts.len() as u32);
                for (r, v) in &c.counts {
                    r.encode(enc);
                    enc.put_u64(*v);
                }
            }
            LatticeValue::Max(m) => {
                enc.put_u8(TAG_MAX);
                match &m.best {
                    None => enc.put_u8(0),
                    Some(e) => {
                        enc.put_u8(1);
                        enc.put_i64(e.score);
                        enc.put_bytes(&e.key);
                    }
                }
            }
            LatticeValue::Map(m) => {
                enc.put_u8(TAG_MAP);
                enc.put_u32(m.entries.len() as u32);
                for (k, v) in &m.entries {
                    enc.put_str(k);
                    v.encode(enc);
                }
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            TAG_COUNTER => {
                let n = dec.u32()?;
                let mut counts = BTreeMap::new();
                for _ in 0..n {
                    let r = ReplicaId::decode(dec)?;
                    let v = dec.u64()?;
                    counts.insert(r, v);
                }
                Ok(LatticeValue::Counter(GCounter { counts }))
            }
            TAG_MAX => {
                let best = match dec.u8()? {
                    0 => None,
                    1 => Some(MaxEntry {
                        score: dec.i64()?,
                        key: dec.bytes()?,
                    }),
                    tag => {
                        return Err(CodecError::BadTag {
                            tag,
                            context: "max-register entry",
                        })
                    }
                };
                Ok(LatticeValue::Max(MaxRegister { best }))
            }
            TAG_MAP => {
                let n = dec.u32()?;
                let mut entries = BTreeMap::new();
                for _ in 0..n {
                    let k = dec.string()?;
                    let v = LatticeValue::decode(dec)?;
                    entries.insert(k, v);
                }
                Ok(LatticeValue::Map(MapLattice { entries }))
            }
            tag => Err(CodecError::BadTag {
                tag,
                context: "lattice value",
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn counter(slots: &[(&str, u64)]) -> LatticeValue {
        let mut c = GCounter::new();
        for (r, v) in slots {
            c.increment(&rid(r), *v).unwrap();
        }
        LatticeValue::Counter(c)
    }

    fn max(entry: Option<(i64, &[u8])>) -> LatticeValue {
        let mut m = MaxRegister::new();
        if let Some((score, key)) = entry {
            m.propose(MaxEntry {
                score,
                key: key.to_vec(),
            });
        }
        LatticeValue::Max(m)
    }

    #[test]
    fn replica_id_rejects_empty() {
        assert_eq!(ReplicaId::new("").unwrap_err(), LatticeError::EmptyReplicaId);
    }

    #[test]
    fn gcounter_merge_is_pointwise_max() {
        let merged =
            LatticeValue::merged(counter(&[("p1", 3)]), &counter(&[("p1", 1), ("p2", 2)]))
                .unwrap();
        assert_eq!(merged, counter(&[("p1", 3), ("p2", 2)]));
        assert_eq!(merged.value().as_count(), Some(5));
    }

    #[test]
    fn merge_is_idempotent_on_samples() {
        for v in [
            counter(&[("p1", 3)]),
            max(Some((10, b"b2"))),
            LatticeValue::Map(MapLattice::new()),
        ] {
            assert_eq!(LatticeValue::merged(v.clone(), &v).unwrap(), v);
        }
    }

    #[test]
    fn max_register_tie_breaks_on_smaller_key() {
        let merged = LatticeValue::merged(max(Some((10, b"b2"))), &max(Some((10, b"b7")))).unwrap();
        assert_eq!(merged, max(Some((10, b"b2"))));
        // And in the other merge order.
        let merged = LatticeValue::merged(max(Some((10, b"b7"))), &max(Some((10, b"b2")))).unwrap();
        assert_eq!(merged, max(Some((10, b"b2"))));
    }

    #[test]
    fn gcounter_increment_examples() {
        let mut c = GCounter::new();
        c.increment(&rid("p1"), 1).unwrap();
        assert_eq!(LatticeValue::Counter(c.clone()), counter(&[("p1", 1)]));

        let mut c = GCounter::new();
        c.increment(&rid("p1"), 4).unwrap();
        let before = c.clone();
        c.increment(&rid("p1"), 0).unwrap();
        assert_eq!(c, before);

        c.increment(&rid("p2"), 3).unwrap();
        assert_eq!(LatticeValue::Counter(c.clone()), counter(&[("p1", 4), ("p2", 3)]));
        assert_eq!(c.value(), 7);
    }

    #[test]
    fn gcounter_overflow_is_an_error() {
        let mut c = GCounter::new();
        c.increment(&rid("p1"), u64::MAX).unwrap();
        assert_eq!(
            c.increment(&rid("p1"), 1).unwrap_err(),
            LatticeError::CounterOverflow(rid("p1"))
        );
    }

    #[test]
    fn lattice_value_reads() {
        assert_eq!(counter(&[("p1", 3), ("p2", 2)]).value().as_count(), Some(5));
        assert_eq!(max(None).value(), AggregateValue::Best(None));

        let mut map = LatticeValue::Map(MapLattice::new());
        map.apply(
            &LatticeUpdate::Entry("A".into(), Box::new(LatticeUpdate::Add(2))),
            &rid("p1"),
        )
        .unwrap();
        let got = map.value();
        let entries = got.as_map().unwrap();
        assert_eq!(entries["A"].as_count(), Some(2));
    }

    #[test]
    fn merge_type_mismatch_is_an_error() {
        let err = LatticeValue::merged(counter(&[]), &max(None)).unwrap_err();
        assert_eq!(
            err,
            LatticeError::TypeMismatch {
                left: LatticeKind::Counter,
                right: LatticeKind::Max
            }
        );
    }

    #[test]
    fn nested_map_update_mismatch_is_an_error() {
        let mut map = LatticeValue::Map(MapLattice::new());
        map.apply(
            &LatticeUpdate::Entry("A".into(), Box::new(LatticeUpdate::Add(1))),
            &rid("p1"),
        )
        .unwrap();
        let err = map
            .apply(
                &LatticeUpdate::Entry(
                    "A".into(),
                    Box::new(LatticeUpdate::Propose {
                        score: 1,
                        key: vec![],
                    }),
                ),
                &rid("p1"),
            )
            .unwrap_err();
        assert!(matches!(err, LatticeError::UpdateMismatch { .. }));
    }

    /// Brute force: any interleaving of a fixed multiset of updates applied
    /// at their replicas followed by merges yields the same value.
    #[test]
    fn update_order_does_not_matter() {
        let updates: Vec<(ReplicaId, LatticeUpdate)> = vec![
            (rid("p1"), LatticeUpdate::Add(1)),
            (rid("p1"), LatticeUpdate::Add(2)),
            (rid("p2"), LatticeUpdate::Add(3)),
            (rid("p2"), LatticeUpdate::Add(1)),
            (rid("p3"), LatticeUpdate::Add(5)),
        ];

        // Expected: each replica applies its own updates in order, then all
        // replica states merge. Per-replica order within an interleaving is
        // preserved, so enumerate interleavings as permutations filtered to
        // keep per-replica relative order.
        fn interleavings(
            updates: &[(ReplicaId, LatticeUpdate)],
            used: &mut Vec<bool>,
            current: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if current.len() == updates.len() {
                out.push(current.clone());
                return;
            }
            let mut seen_replicas = Vec::new();
            for (i, (r, _)) in updates.iter().enumerate() {
                if used[i] || seen_replicas.contains(&r) {
                    continue;
                }
                // Only the earliest unused update per replica preserves order.
                seen_replicas.push(r);
                used[i] = true;
                current.push(i);
                interleavings(updates, used, current, out);
                current.pop();
                used[i] = false;
            }
        }

        let mut orders = Vec::new();
        interleavings(
            &updates,
            &mut vec![false; updates.len()],
            &mut Vec::new(),
            &mut orders,
        );
        assert!(!orders.is_empty());

        let mut expected: Option<AggregateValue> = None;
        for order in orders {
            let mut replicas: BTreeMap<ReplicaId, LatticeValue> = BTreeMap::new();
            for idx in order {
                let (r, u) = &updates[idx];
                replicas
                    .entry(r.clone())
                    .or_insert_with(|| LatticeValue::Counter(GCounter::new()))
                    .apply(u, r)
                    .unwrap();
            }
            let mut total = LatticeValue::Counter(GCounter::new());
            for v in replicas.values() {
                total.merge(v).unwrap();
            }
            let value = total.value();
            match &expected {
                None => expected = Some(value),
                Some(e) => assert_eq!(e, &value),
            }
        }
        assert_eq!(expected.unwrap().as_count(), Some(12));
    }

    fn arb_replica() -> impl Strategy<Value = ReplicaId> {
        prop_oneof![Just(rid("p1")), Just(rid("p2")), Just(rid("p3"))]
    }

    fn arb_counter() -> impl Strategy<Value = LatticeValue> {
        proptest::collection::btree_map(arb_replica(), 0u64..100, 0..4).prop_map(|m| {
            let mut c = GCounter::new();
            for (r, v) in m {
                c.increment(&r, v).unwrap();
            }
            LatticeValue::Counter(c)
        })
    }

    fn arb_max() -> impl Strategy<Value = LatticeValue> {
        proptest::option::of((any::<i16>(), proptest::collection::vec(any::<u8>(), 0..4)))
            .prop_map(|best| {
                let mut m = MaxRegister::new();
                if let Some((score, key)) = best {
                    m.propose(MaxEntry {
                        score: score as i64,
                        key,
                    });
                }
                LatticeValue::Max(m)
            })
    }

    fn arb_map() -> impl Strategy<Value = LatticeValue> {
        proptest::collection::btree_map("[a-c]", arb_counter(), 0..4).prop_map(|entries| {
            let mut m = MapLattice::new();
            for (k, v) in entries {
                m.entries.insert(k, v);
            }
            LatticeValue::Map(m)
        })
    }

    fn check_laws(a: &LatticeValue, b: &LatticeValue, c: &LatticeValue) {
        let ab = LatticeValue::merged(a.clone(), b).unwrap();
        let ba = LatticeValue::merged(b.clone(), a).unwrap();
        assert_eq!(ab, ba, "commutativity");

        let ab_c = LatticeValue::merged(ab.clone(), c).unwrap();
        let bc = LatticeValue::merged(b.clone(), c).unwrap();
        let a_bc = LatticeValue::merged(a.clone(), &bc).unwrap();
        assert_eq!(ab_c, a_bc, "associativity");

        assert_eq!(LatticeValue::merged(a.clone(), a).unwrap(), *a, "idempotence");
    }

    proptest! {
        #[test]
        fn counter_lattice_laws(a in arb_counter(), b in arb_counter(), c in arb_counter()) {
            check_laws(&a, &b, &c);
        }

        #[test]
        fn max_lattice_laws(a in arb_max(), b in arb_max(), c in arb_max()) {
            check_laws(&a, &b, &c);
        }

        #[test]
        fn map_lattice_laws(a in arb_map(), b in arb_map(), c in arb_map()) {
            check_laws(&a, &b, &c);
        }

        #[test]
        fn counter_merge_is_inflationary(a in arb_counter(), b in arb_counter()) {
            let merged = LatticeValue::merged(a.clone(), &b).unwrap();
            prop_assert!(merged.value().as_count() >= a.value().as_count());
        }

        #[test]
        fn encoding_round_trips(v in prop_oneof![arb_counter(), arb_max(), arb_map()]) {
            let bytes = v.to_bytes();
            let back = LatticeValue::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
