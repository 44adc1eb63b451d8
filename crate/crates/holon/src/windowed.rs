//! Windowed lattice state with progress watermarks.
//!
//! [`WindowedCrdt`] slices an infinite stream of updates into tumbling
//! windows of a nested lattice value and tracks one progress watermark per
//! member partition. A window is *complete* once the global watermark (the
//! minimum progress over all members) reaches the window's end boundary;
//! from that point its value is final and equal on every replica that
//! observes it, no matter how replica states were merged or duplicated.
//!
//! Insertions are segregated from merged-in remote state. A replica's own
//! contribution to each window is a deterministic function of its input
//! prefix, so a node that re-executes a partition from a checkpoint simply
//! recomputes the same contribution; state gossiped back to it from a
//! further-ahead duplicate of the same partition lands in the remote half
//! and is joined on read. Pointwise-maximum merges then absorb replayed,
//! duplicated, and stolen work without double counting.
//!
//! [`WLocal`] is the partition-local sibling: same windowing, but
//! completeness is judged against the local watermark only and there is no
//! merging, so it works for plain (non-lattice) per-partition aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crdt::{AggregateValue, LatticeError, LatticeUpdate, LatticeValue, ReplicaId};
use crate::encoding::{Canonical, CodecError, Decoder, Encoder};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("late event: ts {ts} is below watermark {watermark} of {replica}")]
    LateEvent {
        ts: Timestamp,
        watermark: Timestamp,
        replica: ReplicaId,
    },
    #[error("{0} is not a member of this windowed state")]
    NotMember(ReplicaId),
    #[error("timestamp {ts} is before the window origin {origin}")]
    BeforeOrigin { ts: Timestamp, origin: Timestamp },
    #[error("cannot merge windowed states with different specs, zero kinds, or membership")]
    IncompatibleMerge,
    #[error("cannot drop window {window}: only windows below {first_incomplete} are complete")]
    DropIncomplete { window: u64, first_incomplete: u64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Event-time instant. Totally ordered, zero is the minimum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Canonical for Timestamp {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Timestamp(dec.u64()?))
    }
}

/// Tumbling window layout: window `w` covers
/// `[origin + w * length, origin + (w + 1) * length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    length: u64,
    origin: Timestamp,
}

impl WindowSpec {
    /// Panics if `length` is zero.
    pub fn new(length: u64, origin: Timestamp) -> Self {
        assert!(length >= 1, "window length must be at least 1");
        Self { length, origin }
    }

    pub fn of_length(length: u64) -> Self {
        Self::new(length, Timestamp::ZERO)
    }

    pub fn length(&self) -> u64 {
        self.length
    }

    pub fn origin(&self) -> Timestamp {
        self.origin
    }

    /// Index of the window containing `ts`.
    pub fn window_of(&self, ts: Timestamp) -> Result<u64, WindowError> {
        if ts < self.origin {
            return Err(WindowError::BeforeOrigin {
                ts,
                origin: self.origin,
            });
        }
        Ok((ts.0 - self.origin.0) / self.length)
    }

    /// End boundary of window `w`, computed wide to avoid overflow.
    fn window_end(&self, window: u64) -> u128 {
        self.origin.0 as u128 + (window as u128 + 1) * self.length as u128
    }

    /// First window index that is not complete at watermark `at`: all
    /// windows strictly below the returned index have ended.
    pub fn first_incomplete(&self, at: Timestamp) -> u64 {
        if at < self.origin {
            return 0;
        }
        // Window w is complete iff end(w) <= at, i.e. (w + 1) * len <= at - origin.
        ((at.0 - self.origin.0) / self.length).min(u64::MAX)
    }

    /// True when window `w` has ended at watermark `at`.
    pub fn is_complete(&self, window: u64, at: Timestamp) -> bool {
        (at.0 as u128) >= self.window_end(window)
    }
}

impl Canonical for WindowSpec {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.length);
        self.origin.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let length = dec.u64()?;
        let origin = Timestamp::decode(dec)?;
        Ok(WindowSpec {
            length: length.max(1),
            origin,
        })
    }
}

fn encode_window_map(map: &BTreeMap<u64, LatticeValue>, enc: &mut Encoder) {
    enc.put_u32(map.len() as u32);
    for (w, v) in map {
        enc.put_u64(*w);
        v.encode(enc);
    }
}

fn decode_window_map(dec: &mut Decoder<'_>) -> Result<BTreeMap<u64, LatticeValue>, CodecError> {
    let n = dec.u32()?;
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let w = dec.u64()?;
        let v = LatticeValue::decode(dec)?;
        map.insert(w, v);
    }
    Ok(map)
}

fn encode_progress_map(map: &BTreeMap<ReplicaId, Timestamp>, enc: &mut Encoder) {
    enc.put_u32(map.len() as u32);
    for (r, ts) in map {
        r.encode(enc);
        ts.encode(enc);
    }
}

fn decode_progress_map(
    dec: &mut Decoder<'_>,
) -> Result<BTreeMap<ReplicaId, Timestamp>, CodecError> {
    let n = dec.u32()?;
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let r = ReplicaId::decode(dec)?;
        let ts = Timestamp::decode(dec)?;
        map.insert(r, ts);
    }
    Ok(map)
}

/// Windowed replicated lattice with per-member progress watermarks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedCrdt {
    spec: WindowSpec,
    zero: LatticeValue,
    membership: BTreeSet<ReplicaId>,
    /// Contributions inserted through this instance, keyed by window. A pure
    /// function of the owning partition's input prefix.
    own_windows: BTreeMap<u64, LatticeValue>,
    /// State received through merges, keyed by window.
    remote_windows: BTreeMap<u64, LatticeValue>,
    /// Watermarks raised through this instance.
    own_progress: BTreeMap<ReplicaId, Timestamp>,
    /// Watermarks received through merges.
    remote_progress: BTreeMap<ReplicaId, Timestamp>,
}

impl WindowedCrdt {
    pub fn new(
        spec: WindowSpec,
        zero: LatticeValue,
        membership: impl IntoIterator<Item = ReplicaId>,
    ) -> Self {
        Self {
            spec,
            zero,
            membership: membership.into_iter().collect(),
            own_windows: BTreeMap::new(),
            remote_windows: BTreeMap::new(),
            own_progress: BTreeMap::new(),
            remote_progress: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn zero(&self) -> &LatticeValue {
        &self.zero
    }

    pub fn membership(&self) -> &BTreeSet<ReplicaId> {
        &self.membership
    }

    fn require_member(&self, replica: &ReplicaId) -> Result<(), WindowError> {
        if self.membership.contains(replica) {
            Ok(())
        } else {
            Err(WindowError::NotMember(replica.clone()))
        }
    }

    /// Effective watermark of a member: join of everything inserted locally
    /// and received remotely; absent members sit at zero.
    fn progress_of(&self, replica: &ReplicaId) -> Timestamp {
        let own = self.own_progress.get(replica).copied().unwrap_or_default();
        let remote = self
            .remote_progress
            .get(replica)
            .copied()
            .unwrap_or_default();
        own.max(remote)
    }

    /// Insert an update for timestamp `ts` on behalf of `this_replica`.
    ///
    /// Rejects timestamps below the replica's own watermark: that signals a
    /// violated partition-order contract upstream. Equality is allowed.
    pub fn insert(
        &mut self,
        update: &LatticeUpdate,
        ts: Timestamp,
        this_replica: &ReplicaId,
    ) -> Result<(), WindowError> {
        self.require_member(this_replica)?;
        let watermark = self
            .own_progress
            .get(this_replica)
            .copied()
            .unwrap_or_default();
        if ts < watermark {
            return Err(WindowError::LateEvent {
                ts,
                watermark,
                replica: this_replica.clone(),
            });
        }
        let window = self.spec.window_of(ts)?;
        let slot = self
            .own_windows
            .entry(window)
            .or_insert_with(|| self.zero.clone());
        slot.apply(update, this_replica)?;
        Ok(())
    }

    /// Raise `this_replica`'s watermark to `ts`. Stale values are a no-op.
    pub fn increment_watermark(
        &mut self,
        ts: Timestamp,
        this_replica: &ReplicaId,
    ) -> Result<(), WindowError> {
        self.require_member(this_replica)?;
        let slot = self
            .own_progress
            .entry(this_replica.clone())
            .or_insert(Timestamp::ZERO);
        if *slot < ts {
            *slot = ts;
        }
        Ok(())
    }

    /// Minimum progress over the full membership. Members never heard from
    /// count as zero, so an unstarted partition holds every window open.
    pub fn global_watermark(&self) -> Timestamp {
        self.membership
            .iter()
            .map(|m| self.progress_of(m))
            .min()
            .unwrap_or_default()
    }

    /// Read the value of `window` if it is complete, `None` otherwise.
    ///
    /// A present result is final: re-reads here and reads of the same window
    /// on any other replica return an equal value. A complete window that
    /// never saw an insert reads as the zero prototype's value.
    pub fn window_value(&self, window: u64) -> Option<AggregateValue> {
        if !self.spec.is_complete(window, self.global_watermark()) {
            return None;
        }
        Some(self.effective_window(window).value())
    }

    fn effective_window(&self, window: u64) -> LatticeValue {
        let mut value = self.zero.clone();
        if let Some(own) = self.own_windows.get(&window) {
            value.merge(own).expect("own window kind matches zero");
        }
        if let Some(remote) = self.remote_windows.get(&window) {
            value
                .merge(remote)
                .expect("remote window kind matches zero");
        }
        value
    }

    /// Merge another replica's state into this one. Requires equal specs,
    /// zero kinds, and membership. Commutative, associative, and idempotent
    /// in terms of the observable (joined) state.
    pub fn merge_from(&mut self, other: &WindowedCrdt) -> Result<(), WindowError> {
        if self.spec != other.spec
            || self.zero.kind() != other.zero.kind()
            || self.membership != other.membership
        {
            return Err(WindowError::IncompatibleMerge);
        }
        for (w, theirs) in other.own_windows.iter().chain(other.remote_windows.iter()) {
            match self.remote_windows.get_mut(w) {
                Some(mine) => mine.merge(theirs)?,
                None => {
                    self.remote_windows.insert(*w, theirs.clone());
                }
            }
        }
        for (r, ts) in other
            .own_progress
            .iter()
            .chain(other.remote_progress.iter())
        {
            let slot = self
                .remote_progress
                .entry(r.clone())
                .or_insert(Timestamp::ZERO);
            if *slot < *ts {
                *slot = *ts;
            }
        }
        Ok(())
    }

    /// Functional form of [`WindowedCrdt::merge_from`].
    pub fn merged(mut a: WindowedCrdt, b: &WindowedCrdt) -> Result<WindowedCrdt, WindowError> {
        a.merge_from(b)?;
        Ok(a)
    }

    /// Drop windows below `keep_from` from local storage. Every dropped
    /// window must already be complete; the caller is responsible for having
    /// emitted them. A later merge with a peer that still carries dropped
    /// windows may resurrect them, which is harmless: their values are final.
    pub fn gc_completed_windows(&mut self, keep_from: u64) -> Result<(), WindowError> {
        let first_incomplete = self.spec.first_incomplete(self.global_watermark());
        if keep_from > first_incomplete {
            return Err(WindowError::DropIncomplete {
                window: keep_from,
                first_incomplete,
            });
        }
        self.own_windows.retain(|w, _| *w >= keep_from);
        self.remote_windows.retain(|w, _| *w >= keep_from);
        Ok(())
    }

    /// Observable windows: join of own and remote halves, with entries that
    /// are indistinguishable from zero dropped so that replicas that took
    /// different merge paths normalize to the same view.
    pub fn effective_windows(&self) -> BTreeMap<u64, LatticeValue> {
        let mut out = BTreeMap::new();
        for w in self
            .own_windows
            .keys()
            .chain(self.remote_windows.keys())
            .copied()
            .collect::<BTreeSet<_>>()
        {
            let value = self.effective_window(w);
            if !value.is_zero() {
                out.insert(w, value);
            }
        }
        out
    }

    /// Observable progress: one entry per member, absent members at zero.
    pub fn effective_progress(&self) -> BTreeMap<ReplicaId, Timestamp> {
        self.membership
            .iter()
            .map(|m| (m.clone(), self.progress_of(m)))
            .collect()
    }

    /// Canonical bytes of the observable state, used for equality checks
    /// between replicas. Two replicas that have fully exchanged state encode
    /// identically here even if their internal own/remote splits differ.
    pub fn canonical_observable_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.spec.encode(&mut enc);
        self.zero.encode(&mut enc);
        encode_window_map(&self.effective_windows(), &mut enc);
        encode_progress_map(&self.effective_progress(), &mut enc);
        enc.put_u32(self.membership.len() as u32);
        for m in &self.membership {
            m.encode(&mut enc);
        }
        enc.into_bytes()
    }
}

impl Canonical for WindowedCrdt {
    fn encode(&self, enc: &mut Encoder) {
        self.spec.encode(enc);
        self.zero.encode(enc);
        enc.put_u32(self.membership.len() as u32);
        for m in &self.membership {
            m.encode(enc);
        }
        encode_window_map(&self.own_windows, enc);
        encode_window_map(&self.remote_windows, enc);
        encode_progress_map(&self.own_progress, enc);
        encode_progress_map(&self.remote_progress, enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let spec = WindowSpec::decode(dec)?;
        let zero = LatticeValue::decode(dec)?;
        let n = dec.u32()?;
        let mut membership = BTreeSet::new();
        for _ in 0..n {
            membership.insert(ReplicaId::decode(dec)?);
        }
        Ok(WindowedCrdt {
            spec,
            zero,
            membership,
            own_windows: decode_window_map(dec)?,
            remote_windows: decode_window_map(dec)?,
            own_progress: decode_progress_map(dec)?,
            remote_progress: decode_progress_map(dec)?,
        })
    }
}

/// Partition-local windowed aggregate: same windowing semantics as
/// [`WindowedCrdt`] but completeness is judged against the local watermark
/// only, and there is no membership or merging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WLocal {
    spec: WindowSpec,
    zero: LatticeValue,
    windows: BTreeMap<u64, LatticeValue>,
    local_watermark: Timestamp,
    owner: ReplicaId,
}

impl WLocal {
    pub fn new(spec: WindowSpec, zero: LatticeValue, owner: ReplicaId) -> Self {
        Self {
            spec,
            zero,
            windows: BTreeMap::new(),
            local_watermark: Timestamp::ZERO,
            owner,
        }
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn local_watermark(&self) -> Timestamp {
        self.local_watermark
    }

    pub fn insert(&mut self, update: &LatticeUpdate, ts: Timestamp) -> Result<(), WindowError> {
        if ts < self.local_watermark {
            return Err(WindowError::LateEvent {
                ts,
                watermark: self.local_watermark,
                replica: self.owner.clone(),
            });
        }
        let window = self.spec.window_of(ts)?;
        let slot = self
            .windows
            .entry(window)
            .or_insert_with(|| self.zero.clone());
        slot.apply(update, &self.owner)?;
        Ok(())
    }

    pub fn increment_watermark(&mut self, ts: Timestamp) {
        if self.local_watermark < ts {
            self.local_watermark = ts;
        }
    }

    pub fn window_value(&self, window: u64) -> Option<AggregateValue> {
        if !self.spec.is_complete(window, self.local_watermark) {
            return None;
        }
        Some(
            self.windows
                .get(&window)
                .unwrap_or(&self.zero)
                .value(),
        )
    }
}

impl Canonical for WLocal {
    fn encode(&self, enc: &mut Encoder) {
        self.spec.encode(enc);
        self.zero.encode(enc);
        self.owner.encode(enc);
        encode_window_map(&self.windows, enc);
        self.local_watermark.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let spec = WindowSpec::decode(dec)?;
        let zero = LatticeValue::decode(dec)?;
        let owner = ReplicaId::decode(dec)?;
        let windows = decode_window_map(dec)?;
        let local_watermark = Timestamp::decode(dec)?;
        Ok(WLocal {
            spec,
            zero,
            windows,
            local_watermark,
            owner,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::GCounter;
    use proptest::prelude::*;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn counter_wcrdt(length: u64, members: &[&str]) -> WindowedCrdt {
        WindowedCrdt::new(
            WindowSpec::of_length(length),
            LatticeValue::Counter(GCounter::new()),
            members.iter().map(|m| rid(m)),
        )
    }

    fn add(n: u64) -> LatticeUpdate {
        LatticeUpdate::Add(n)
    }

    #[test]
    fn insert_lands_in_the_window_of_its_timestamp() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.insert(&add(1), Timestamp(7), &rid("p1")).unwrap();
        let windows = w.effective_windows();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[&1].value().as_count(), Some(1));
    }

    #[test]
    fn insert_below_watermark_is_a_late_event() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.increment_watermark(Timestamp(5), &rid("p1")).unwrap();
        let err = w.insert(&add(1), Timestamp(3), &rid("p1")).unwrap_err();
        assert!(matches!(err, WindowError::LateEvent { .. }));
    }

    #[test]
    fn insert_at_watermark_is_accepted() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.increment_watermark(Timestamp(5), &rid("p1")).unwrap();
        w.insert(&add(1), Timestamp(5), &rid("p1")).unwrap();
        assert_eq!(w.effective_windows()[&1].value().as_count(), Some(1));
    }

    #[test]
    fn insert_by_non_member_is_rejected() {
        let mut w = counter_wcrdt(5, &["p1"]);
        let err = w.insert(&add(1), Timestamp(0), &rid("p9")).unwrap_err();
        assert_eq!(err, WindowError::NotMember(rid("p9")));
    }

    #[test]
    fn watermark_moves_forward_only() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.increment_watermark(Timestamp(3), &rid("p1")).unwrap();
        w.increment_watermark(Timestamp(7), &rid("p1")).unwrap();
        assert_eq!(w.progress_of(&rid("p1")), Timestamp(7));
        w.increment_watermark(Timestamp(3), &rid("p1")).unwrap();
        assert_eq!(w.progress_of(&rid("p1")), Timestamp(7));
    }

    #[test]
    fn watermark_to_zero_on_fresh_instance() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.increment_watermark(Timestamp(0), &rid("p1")).unwrap();
        assert_eq!(w.effective_progress()[&rid("p1")], Timestamp(0));
        assert_eq!(w.global_watermark(), Timestamp(0));
    }

    #[test]
    fn global_watermark_is_min_over_membership() {
        let mut w = counter_wcrdt(5, &["p1", "p2"]);
        w.increment_watermark(Timestamp(5), &rid("p1")).unwrap();
        w.increment_watermark(Timestamp(3), &rid("p2")).unwrap();
        assert_eq!(w.global_watermark(), Timestamp(3));
    }

    #[test]
    fn absent_member_holds_global_watermark_at_zero() {
        let mut w = counter_wcrdt(5, &["p1", "p2"]);
        w.increment_watermark(Timestamp(5), &rid("p1")).unwrap();
        assert_eq!(w.global_watermark(), Timestamp(0));
    }

    #[test]
    fn singleton_membership_watermark() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.increment_watermark(Timestamp(9), &rid("p1")).unwrap();
        assert_eq!(w.global_watermark(), Timestamp(9));
    }

    #[test]
    fn window_value_gates_on_completeness() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.insert(&add(2), Timestamp(6), &rid("p1")).unwrap();
        w.increment_watermark(Timestamp(10), &rid("p1")).unwrap();
        // Window 1 covers [5, 10): complete at watermark 10.
        assert_eq!(w.window_value(1).unwrap().as_count(), Some(2));
        // Window 2 ends at 15: not complete.
        assert_eq!(w.window_value(2), None);
        // Window 0 never saw an insert: reads as zero.
        assert_eq!(w.window_value(0).unwrap().as_count(), Some(0));
    }

    #[test]
    fn merge_joins_windows_and_progress() {
        let mut a = counter_wcrdt(5, &["p1", "p2"]);
        a.insert(&add(2), Timestamp(0), &rid("p1")).unwrap();
        a.increment_watermark(Timestamp(5), &rid("p1")).unwrap();

        let mut b = counter_wcrdt(5, &["p1", "p2"]);
        b.insert(&add(3), Timestamp(1), &rid("p2")).unwrap();
        b.insert(&add(1), Timestamp(6), &rid("p2")).unwrap();
        b.increment_watermark(Timestamp(7), &rid("p2")).unwrap();

        let merged = WindowedCrdt::merged(a.clone(), &b).unwrap();
        let windows = merged.effective_windows();
        assert_eq!(windows[&0].value().as_count(), Some(5));
        assert_eq!(windows[&1].value().as_count(), Some(1));
        let progress = merged.effective_progress();
        assert_eq!(progress[&rid("p1")], Timestamp(5));
        assert_eq!(progress[&rid("p2")], Timestamp(7));

        // Symmetric merge observes the same state.
        let other = WindowedCrdt::merged(b, &a).unwrap();
        assert_eq!(
            merged.canonical_observable_bytes(),
            other.canonical_observable_bytes()
        );

        // Idempotent.
        let again = WindowedCrdt::merged(merged.clone(), &merged).unwrap();
        assert_eq!(
            again.canonical_observable_bytes(),
            merged.canonical_observable_bytes()
        );
    }

    #[test]
    fn merge_requires_compatible_instances() {
        let a = counter_wcrdt(5, &["p1"]);
        let b = counter_wcrdt(6, &["p1"]);
        assert_eq!(
            WindowedCrdt::merged(a.clone(), &b).unwrap_err(),
            WindowError::IncompatibleMerge
        );
        let c = counter_wcrdt(5, &["p1", "p2"]);
        assert_eq!(
            WindowedCrdt::merged(a, &c).unwrap_err(),
            WindowError::IncompatibleMerge
        );
    }

    #[test]
    fn reexecution_after_merge_does_not_double_count() {
        // A partition processed ahead by one node, gossiped back, and
        // re-executed from an earlier point by another node must converge to
        // the same totals.
        let p = rid("p1");
        let mut ahead = counter_wcrdt(10, &["p1"]);
        for ts in [1u64, 2, 3, 4] {
            ahead.insert(&add(1), Timestamp(ts), &p).unwrap();
            ahead.increment_watermark(Timestamp(ts), &p).unwrap();
        }

        // Re-execution starts from scratch (checkpoint at index 0), but has
        // already merged the ahead state.
        let mut behind = counter_wcrdt(10, &["p1"]);
        behind.merge_from(&ahead).unwrap();
        for ts in [1u64, 2, 3, 4] {
            behind.insert(&add(1), Timestamp(ts), &p).unwrap();
            behind.increment_watermark(Timestamp(ts), &p).unwrap();
        }
        behind.increment_watermark(Timestamp(10), &p).unwrap();
        assert_eq!(behind.window_value(0).unwrap().as_count(), Some(4));
    }

    #[test]
    fn gc_drops_only_complete_windows() {
        let mut w = counter_wcrdt(2, &["p1"]);
        for ts in 0..10 {
            w.insert(&add(1), Timestamp(ts), &rid("p1")).unwrap();
            w.increment_watermark(Timestamp(ts), &rid("p1")).unwrap();
        }
        w.increment_watermark(Timestamp(10), &rid("p1")).unwrap();
        // Watermark 10, length 2: first incomplete window is 5.
        w.gc_completed_windows(4).unwrap();
        let windows = w.effective_windows();
        assert!(windows.keys().all(|k| *k >= 4));

        let err = w.gc_completed_windows(7).unwrap_err();
        assert_eq!(
            err,
            WindowError::DropIncomplete {
                window: 7,
                first_incomplete: 5
            }
        );
    }

    #[test]
    fn gc_on_empty_map_is_a_noop() {
        let mut w = counter_wcrdt(5, &["p1"]);
        w.gc_completed_windows(0).unwrap();
        assert!(w.effective_windows().is_empty());
    }

    #[test]
    fn wlocal_counts_and_gates_on_local_watermark() {
        let mut w = WLocal::new(
            WindowSpec::of_length(5),
            LatticeValue::Counter(GCounter::new()),
            rid("p1"),
        );
        for _ in 0..3 {
            w.insert(&add(1), Timestamp(2)).unwrap();
        }
        w.increment_watermark(Timestamp(10));
        assert_eq!(w.window_value(0).unwrap().as_count(), Some(3));
        assert_eq!(w.window_value(1).unwrap().as_count(), Some(0));
        assert_eq!(w.window_value(2), None);
    }

    #[test]
    fn wlocal_rejects_late_events() {
        let mut w = WLocal::new(
            WindowSpec::of_length(5),
            LatticeValue::Counter(GCounter::new()),
            rid("p1"),
        );
        w.increment_watermark(Timestamp(5));
        assert!(matches!(
            w.insert(&add(1), Timestamp(4)).unwrap_err(),
            WindowError::LateEvent { .. }
        ));
    }

    #[test]
    fn encoding_round_trips_preserve_state() {
        let mut w = counter_wcrdt(5, &["p1", "p2"]);
        w.insert(&add(2), Timestamp(3), &rid("p1")).unwrap();
        w.increment_watermark(Timestamp(4), &rid("p1")).unwrap();
        let mut other = counter_wcrdt(5, &["p1", "p2"]);
        other.insert(&add(7), Timestamp(1), &rid("p2")).unwrap();
        w.merge_from(&other).unwrap();

        let back = WindowedCrdt::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        assert_eq!(
            back.canonical_observable_bytes(),
            w.canonical_observable_bytes()
        );
    }

    /// Scripted operations for a replica: inserts carry (amount, ts), and
    /// watermark raises carry ts. Within a replica, timestamps are
    /// non-decreasing (partition order).
    #[derive(Clone, Debug)]
    enum Op {
        Insert(u64, u64),
        Watermark(u64),
    }

    fn arb_script(max_ts: u64) -> impl Strategy<Value = Vec<Op>> {
        proptest::collection::vec((0u64..max_ts, 1u64..4, any::<bool>()), 0..5).prop_map(
            |steps| {
                let mut ts = 0;
                let mut ops = Vec::new();
                for (advance, amount, watermark) in steps {
                    ts += advance % 3;
                    if watermark {
                        ops.push(Op::Watermark(ts));
                    } else {
                        ops.push(Op::Insert(amount, ts));
                    }
                }
                ops
            },
        )
    }

    proptest! {
        /// Global watermark never decreases across local ops and merges,
        /// and completed values never change once observed.
        #[test]
        fn monotone_global_watermark_and_stable_reads(
            script_a in arb_script(12),
            script_b in arb_script(12),
            merge_points in proptest::collection::vec(any::<bool>(), 10),
        ) {
            let members = ["p1", "p2"];
            let mut a = counter_wcrdt(4, &members);
            let mut b = counter_wcrdt(4, &members);
            let mut gw = Timestamp::ZERO;
            let mut observed: BTreeMap<u64, u64> = BTreeMap::new();

            let mut ia = script_a.iter();
            let mut ib = script_b.iter();
            for do_merge in merge_points {
                if let Some(op) = ia.next() {
                    match op {
                        Op::Insert(n, ts) => { let _ = a.insert(&add(*n), Timestamp(*ts), &rid("p1")); }
                        Op::Watermark(ts) => { a.increment_watermark(Timestamp(*ts), &rid("p1")).unwrap(); }
                    }
                }
                if let Some(op) = ib.next() {
                    match op {
                        Op::Insert(n, ts) => { let _ = b.insert(&add(*n), Timestamp(*ts), &rid("p2")); }
                        Op::Watermark(ts) => { b.increment_watermark(Timestamp(*ts), &rid("p2")).unwrap(); }
                    }
                }
                if do_merge {
                    let snapshot = b.clone();
                    a.merge_from(&snapshot).unwrap();
                    b.merge_from(&a.clone()).unwrap();
                }
                let next = a.global_watermark();
                prop_assert!(next >= gw, "global watermark went backwards");
                gw = next;

                for w in 0..4u64 {
                    if let Some(v) = a.window_value(w) {
                        let count = v.as_count().unwrap();
                        if let Some(prev) = observed.insert(w, count) {
                            prop_assert_eq!(prev, count, "completed window changed value");
                        }
                    }
                }
            }
        }

        /// No insert is ever accepted into a window that is complete at the
        /// inserting replica's current global watermark.
        #[test]
        fn completeness_soundness(
            script in arb_script(16),
            remote_watermark in 0u64..16,
        ) {
            let members = ["p1", "p2"];
            let mut w = counter_wcrdt(4, &members);
            // A peer advances arbitrarily far and merges in.
            let mut peer = counter_wcrdt(4, &members);
            peer.increment_watermark(Timestamp(remote_watermark), &rid("p2")).unwrap();
            w.merge_from(&peer).unwrap();

            for op in script {
                match op {
                    Op::Watermark(ts) => { w.increment_watermark(Timestamp(ts), &rid("p1")).unwrap(); }
                    Op::Insert(n, ts) => {
                        let window = w.spec().window_of(Timestamp(ts)).unwrap();
                        let complete = w.spec().is_complete(window, w.global_watermark());
                        let result = w.insert(&add(n), Timestamp(ts), &rid("p1"));
                        if complete {
                            prop_assert!(result.is_err(), "insert accepted into complete window");
                        }
                    }
                }
            }
        }
    }
}
