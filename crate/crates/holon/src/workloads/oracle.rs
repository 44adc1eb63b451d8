//! Sequential reference results.
//!
//! The oracle folds directly over the generated event logs with plain
//! arithmetic: no lattices, no watermark machinery, no runtime. It produces
//! the same canonical result lines as a deduplicated distributed run, which
//! makes it an independent equivalence check for the whole system.

use std::collections::BTreeMap;

use crate::workloads::{format_fraction, EventLogs, WorkloadKind};

/// Ground-truth result lines, sorted. Line shapes per workload:
///
/// - q0: `partition,offset,event-line` (outputs equal inputs)
/// - q1: `partition,window,ratio`
/// - q4: `partition,window,category,average`
/// - q7: `partition,window,price,bid` or `partition,window,none`
///
/// Global queries (q4, q7) repeat the global answer once per partition,
/// matching what every partition of the distributed run emits.
pub fn oracle_results(kind: WorkloadKind, logs: &EventLogs) -> Vec<String> {
    let mut lines = match kind {
        WorkloadKind::Q0 => passthrough_lines(logs),
        WorkloadKind::Q1 => ratio_lines(logs),
        WorkloadKind::Q4 => category_average_lines(logs),
        WorkloadKind::Q7 => highest_bid_lines(logs),
    };
    lines.sort();
    lines
}

fn passthrough_lines(logs: &EventLogs) -> Vec<String> {
    let mut lines = Vec::new();
    for (p, events) in &logs.partitions {
        for (offset, event) in events.iter().enumerate() {
            lines.push(format!("{p},{offset},{}", event.to_line()));
        }
    }
    lines
}

fn window_of(ts: u64, length: u64) -> u64 {
    ts / length
}

fn ratio_lines(logs: &EventLogs) -> Vec<String> {
    let windows = logs.complete_windows;
    let mut total: BTreeMap<u64, u64> = BTreeMap::new();
    let mut local: BTreeMap<(&crate::stream_log::PartitionId, u64), u64> = BTreeMap::new();
    for (p, events) in &logs.partitions {
        for event in events.iter().filter(|e| e.is_bid()) {
            let w = window_of(event.ts.value(), logs.window_length);
            *total.entry(w).or_insert(0) += 1;
            *local.entry((p, w)).or_insert(0) += 1;
        }
    }
    let mut lines = Vec::new();
    for p in logs.partitions.keys() {
        for w in 0..windows {
            let t = total.get(&w).copied().unwrap_or(0);
            let l = local.get(&(p, w)).copied().unwrap_or(0);
            lines.push(format!("{p},{w},{}", format_fraction(l, t)));
        }
    }
    lines
}

fn category_average_lines(logs: &EventLogs) -> Vec<String> {
    let windows = logs.complete_windows;
    // (window, category) -> (price sum, bid count)
    let mut stats: BTreeMap<(u64, u32), (u64, u64)> = BTreeMap::new();
    for events in logs.partitions.values() {
        for event in events.iter().filter(|e| e.is_bid()) {
            let w = window_of(event.ts.value(), logs.window_length);
            let slot = stats.entry((w, event.category)).or_insert((0, 0));
            slot.0 += event.price;
            slot.1 += 1;
        }
    }
    let mut lines = Vec::new();
    for p in logs.partitions.keys() {
        for w in 0..windows {
            for ((_, category), (sum, count)) in stats.range((w, 0)..=(w, u32::MAX)) {
                lines.push(format!(
                    "{p},{w},{category},{}",
                    format_fraction(*sum, *count)
                ));
            }
        }
    }
    lines
}

fn highest_bid_lines(logs: &EventLogs) -> Vec<String> {
    let windows = logs.complete_windows;
    // window -> (price, bid id) winner, higher price then lower id.
    let mut best: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for events in logs.partitions.values() {
        for event in events.iter().filter(|e| e.is_bid()) {
            let w = window_of(event.ts.value(), logs.window_length);
            let candidate = (event.price, event.bid_id);
            best.entry(w)
                .and_modify(|cur| {
                    if candidate.0 > cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                        *cur = candidate;
                    }
                })
                .or_insert(candidate);
        }
    }
    let mut lines = Vec::new();
    for p in logs.partitions.keys() {
        for w in 0..windows {
            match best.get(&w) {
                Some((price, bid)) => lines.push(format!("{p},{w},{price},{bid}")),
                None => lines.push(format!("{p},{w},none")),
            }
        }
    }
    lines
}
