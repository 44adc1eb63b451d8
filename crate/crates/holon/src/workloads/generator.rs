//! Seeded event generation.
//!
//! The generator is a pure function of its config: the same seed and
//! settings produce byte-identical per-partition event logs on any platform
//! (the stream cipher rng and fixed-width arithmetic carry no platform
//! state). Each partition's log ends with a watermark-flush event placed on
//! the first window boundary after the globally latest data event, so every
//! data window eventually completes on every partition.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stream_log::PartitionId;
use crate::windowed::Timestamp;
use crate::workloads::{EventKind, NexmarkEvent, WorkloadError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub seed: u64,
    pub partitions: u32,
    pub events_per_partition: u64,
    pub window_length: u64,
    #[serde(default = "default_category_count")]
    pub category_count: u32,
    #[serde(default = "default_price_min")]
    pub price_min: u64,
    #[serde(default = "default_price_max")]
    pub price_max: u64,
    #[serde(default = "default_bid_fraction")]
    pub bid_fraction: f64,
}

fn default_category_count() -> u32 {
    5
}

fn default_price_min() -> u64 {
    1
}

fn default_price_max() -> u64 {
    100
}

fn default_bid_fraction() -> f64 {
    0.8
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |msg: &str| Err(WorkloadError::InvalidConfig(msg.to_string()));
        if self.partitions == 0 {
            return fail("partitions must be at least 1");
        }
        if self.window_length == 0 {
            return fail("window_length must be at least 1");
        }
        if self.category_count == 0 {
            return fail("category_count must be at least 1");
        }
        if self.price_min == 0 || self.price_min > self.price_max {
            return fail("prices must satisfy 1 <= price_min <= price_max");
        }
        if !(0.0..=1.0).contains(&self.bid_fraction) {
            return fail("bid_fraction must be within [0, 1]");
        }
        Ok(())
    }
}

/// Generated input: per-partition event sequences including the trailing
/// flush events, plus the derived windowing facts the harness needs.
#[derive(Debug, Clone)]
pub struct EventLogs {
    pub partitions: BTreeMap<PartitionId, Vec<NexmarkEvent>>,
    pub window_length: u64,
    /// Window boundary the flush events sit on; `None` for empty logs.
    pub flush_boundary: Option<Timestamp>,
    /// Number of windows that complete once all partitions reach the flush
    /// boundary: windows `0..complete_windows`.
    pub complete_windows: u64,
}

impl EventLogs {
    pub fn partition_ids(&self) -> impl Iterator<Item = &PartitionId> {
        self.partitions.keys()
    }

    pub fn total_events(&self) -> u64 {
        self.partitions.values().map(|v| v.len() as u64).sum()
    }

    /// Events excluding the trailing flush sentinels.
    fn data_events(&self) -> Vec<NexmarkEvent> {
        let mut all: Vec<NexmarkEvent> = Vec::new();
        for events in self.partitions.values() {
            let data_len = match self.flush_boundary {
                Some(_) => events.len().saturating_sub(1),
                None => events.len(),
            };
            all.extend_from_slice(&events[..data_len]);
        }
        all
    }
}

pub fn partition_name(index: u32) -> PartitionId {
    PartitionId::new(format!("p{index:03}")).expect("static partition name")
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the pair; keeps per-partition streams
    // decorrelated under small seed deltas.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate per-partition event logs.
pub fn generate(cfg: &GeneratorConfig) -> Result<EventLogs, WorkloadError> {
    cfg.validate()?;
    let mut partitions: BTreeMap<PartitionId, Vec<NexmarkEvent>> = BTreeMap::new();
    for i in 0..cfg.partitions {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, i as u64 + 1));
        let mut ts = 0u64;
        let mut events = Vec::with_capacity(cfg.events_per_partition as usize);
        for j in 0..cfg.events_per_partition {
            ts += rng.gen_range(0..=3);
            let kind = if rng.gen_bool(cfg.bid_fraction) {
                EventKind::Bid
            } else {
                EventKind::Other
            };
            events.push(NexmarkEvent {
                kind,
                ts: Timestamp(ts),
                auction_id: rng.gen_range(0..1000),
                price: rng.gen_range(cfg.price_min..=cfg.price_max),
                category: rng.gen_range(0..cfg.category_count),
                bid_id: i as u64 * cfg.events_per_partition + j,
            });
        }
        partitions.insert(partition_name(i), events);
    }
    Ok(finalize(partitions, cfg.window_length))
}

/// Append flush events and derive windowing facts. `partitions` must hold
/// data events only, partition-ordered by timestamp.
fn finalize(
    mut partitions: BTreeMap<PartitionId, Vec<NexmarkEvent>>,
    window_length: u64,
) -> EventLogs {
    let max_ts = partitions
        .values()
        .flat_map(|events| events.iter().map(|e| e.ts.value()))
        .max();
    let flush_boundary = max_ts.map(|ts| Timestamp((ts / window_length + 1) * window_length));
    if let Some(boundary) = flush_boundary {
        for events in partitions.values_mut() {
            events.push(NexmarkEvent {
                kind: EventKind::Other,
                ts: boundary,
                auction_id: 0,
                price: 0,
                category: 0,
                bid_id: 0,
            });
        }
    }
    let complete_windows = flush_boundary
        .map(|b| b.value() / window_length)
        .unwrap_or(0);
    EventLogs {
        partitions,
        window_length,
        flush_boundary,
        complete_windows,
    }
}

/// Split the same event multiset across a different partition count.
/// Data events are merged, ordered by timestamp, dealt round-robin, and
/// re-finalized; per-window global aggregates are invariant under this.
pub fn redistribute(logs: &EventLogs, partitions: u32) -> EventLogs {
    assert!(partitions >= 1);
    let mut data = logs.data_events();
    data.sort_by_key(|e| e.ts);
    let mut split: BTreeMap<PartitionId, Vec<NexmarkEvent>> = (0..partitions)
        .map(|i| (partition_name(i), Vec::new()))
        .collect();
    for (i, event) in data.into_iter().enumerate() {
        let p = partition_name((i % partitions as usize) as u32);
        split.get_mut(&p).expect("partition exists").push(event);
    }
    finalize(split, logs.window_length)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            partitions: 3,
            events_per_partition: 50,
            window_length: 10,
            category_count: 4,
            price_min: 1,
            price_max: 20,
            bid_fraction: 0.7,
        }
    }

    #[test]
    fn same_seed_means_identical_logs() {
        let a = generate(&cfg(7)).unwrap();
        let b = generate(&cfg(7)).unwrap();
        assert_eq!(a.partitions, b.partitions);
        let c = generate(&cfg(8)).unwrap();
        assert_ne!(a.partitions, c.partitions);
    }

    #[test]
    fn timestamps_are_non_decreasing_per_partition() {
        let logs = generate(&cfg(3)).unwrap();
        for events in logs.partitions.values() {
            for pair in events.windows(2) {
                assert!(pair[0].ts <= pair[1].ts);
            }
        }
    }

    #[test]
    fn zero_events_means_empty_logs() {
        let mut c = cfg(1);
        c.events_per_partition = 0;
        let logs = generate(&c).unwrap();
        assert!(logs.partitions.values().all(|v| v.is_empty()));
        assert_eq!(logs.flush_boundary, None);
        assert_eq!(logs.complete_windows, 0);
    }

    #[test]
    fn flush_events_sit_on_a_shared_boundary() {
        let logs = generate(&cfg(5)).unwrap();
        let boundary = logs.flush_boundary.unwrap();
        assert_eq!(boundary.value() % logs.window_length, 0);
        for events in logs.partitions.values() {
            let last = events.last().unwrap();
            assert_eq!(last.kind, EventKind::Other);
            assert_eq!(last.ts, boundary);
        }
        // The boundary is past every data event.
        let max_data = logs
            .partitions
            .values()
            .flat_map(|e| e[..e.len() - 1].iter().map(|e| e.ts))
            .max()
            .unwrap();
        assert!(boundary > max_data);
    }

    #[test]
    fn redistribute_preserves_the_data_multiset() {
        let logs = generate(&cfg(11)).unwrap();
        let split = redistribute(&logs, 5);
        assert_eq!(split.partitions.len(), 5);
        assert_eq!(split.complete_windows, logs.complete_windows);

        let mut before: Vec<String> = logs.data_events().iter().map(|e| e.to_line()).collect();
        let mut after: Vec<String> = split.data_events().iter().map(|e| e.to_line()).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);

        for events in split.partitions.values() {
            for pair in events.windows(2) {
                assert!(pair[0].ts <= pair[1].ts);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(1);
        c.bid_fraction = 1.5;
        assert!(generate(&c).is_err());
        let mut c = cfg(1);
        c.window_length = 0;
        assert!(generate(&c).is_err());
        let mut c = cfg(1);
        c.price_min = 50;
        c.price_max = 10;
        assert!(generate(&c).is_err());
    }
}
