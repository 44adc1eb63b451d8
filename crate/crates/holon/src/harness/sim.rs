//! Deterministic single-threaded simulation driver.
//!
//! One tick of simulated time ingests the due input events, applies any
//! scheduled failure transitions, and then ticks every running node in a
//! seeded-shuffled order. With a fixed scenario and seed the entire run,
//! including failure recovery, is bit-reproducible.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::harness::scenario::{node_seed, DriverKind, FailurePlan, RunPlan};
use crate::harness::{result_lines, HarnessError, MetricsReport, MetricsSink, ScenarioConfig};
use crate::runtime::{Handler, Node, NodeId, PartitionState, RuntimeEnv};
use crate::stream_log::{CheckpointStore, LoggedTopic, PartitionId, Record};
use crate::windowed::Timestamp;
use crate::workloads::{generate, EventLogs, NexmarkEvent};
use crate::encoding::Canonical;

/// Everything a finished run leaves behind.
pub struct ScenarioOutcome {
    pub report: MetricsReport,
    /// Raw (already offset-deduplicated) output logs per partition.
    pub outputs: BTreeMap<PartitionId, Vec<Record>>,
    /// Canonical sorted result lines, consumer-deduplicated.
    pub deduped: Vec<String>,
    /// Driver time at which the run stopped (ticks or clock units).
    pub end_units: u64,
    /// Live partition states per surviving node at the end of the run.
    pub final_states: BTreeMap<NodeId, BTreeMap<PartitionId, PartitionState>>,
    /// Per-tick probe of the largest global watermark visible on any live
    /// node (sim driver only, workloads with replicated state only).
    pub watermark_trace: Vec<(u64, u64)>,
    /// True when every partition consumed its whole input.
    pub completed: bool,
}

/// Run a scenario end to end with its workload's handler.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, HarnessError> {
    let plan = RunPlan::from_config(cfg)?;
    let handler = plan.workload.handler();
    match plan.driver {
        DriverKind::Sim => run_sim(&plan, handler),
        DriverKind::Threaded => crate::harness::run_threaded(&plan, handler),
    }
}

/// Ingestion schedule: events of one partition available by the end of
/// tick `t`.
fn ingest_target(t: u64, rate: f64, total: u64) -> u64 {
    (((t + 1) as f64) * rate).floor().min(total as f64) as u64
}

/// First tick at which `needed` events of a partition are available.
fn ingest_tick_for(needed: u64, rate: f64, total: u64) -> u64 {
    debug_assert!(needed <= total);
    if needed == 0 {
        return 0;
    }
    let mut t = ((needed as f64 / rate).ceil() as u64).saturating_sub(1);
    while ingest_target(t, rate, total) < needed {
        t += 1;
    }
    while t > 0 && ingest_target(t - 1, rate, total) >= needed {
        t -= 1;
    }
    t
}

/// Driver time at which each window's inputs are fully ingested: for every
/// partition, the first event at or past the window end boundary must have
/// been appended (the flush event guarantees one exists).
pub(crate) fn window_end_units(
    logs: &EventLogs,
    rate_of: impl Fn(&PartitionId) -> f64,
) -> BTreeMap<u64, u64> {
    let mut ends = BTreeMap::new();
    for w in 0..logs.complete_windows {
        let end_ts = Timestamp((w + 1) * logs.window_length);
        let mut end_unit = 0u64;
        for (p, events) in &logs.partitions {
            let needed = match events.iter().position(|e| e.ts >= end_ts) {
                Some(i) => i as u64 + 1,
                None => events.len() as u64,
            };
            end_unit = end_unit.max(ingest_tick_for(
                needed,
                rate_of(p),
                events.len() as u64,
            ));
        }
        ends.insert(w, end_unit);
    }
    ends
}

enum SlotState {
    Running(Box<Node>),
    Stopped,
    Crashed,
}

struct Slot {
    index: u32,
    restarts: u32,
    state: SlotState,
}

/// Run a plan under the simulation driver with an explicit handler
/// (normally the workload's; tests may inject a faulty one).
pub fn run_sim(plan: &RunPlan, handler: Arc<dyn Handler>) -> Result<ScenarioOutcome, HarnessError> {
    let logs = generate(&plan.generator)?;
    let partition_ids: Vec<PartitionId> = plan.membership.iter().cloned().collect();

    let initial =
        PartitionState::initial(handler.initial_state(plan.window, &plan.membership));
    let sink = Arc::new(MetricsSink::new(plan.sim.tick_seconds));
    let env = RuntimeEnv {
        input: Arc::new(LoggedTopic::new("input", partition_ids.clone())),
        output: Arc::new(LoggedTopic::new("output", partition_ids.clone())),
        broadcast: Arc::new(LoggedTopic::single("broadcast")),
        control: Arc::new(LoggedTopic::single("control")),
        checkpoints: Arc::new(CheckpointStore::new(initial.to_bytes())),
        observer: sink.clone(),
    };

    let mut slots: BTreeMap<NodeId, Slot> = plan
        .node_configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let node = Node::new(
                cfg.clone(),
                handler.clone(),
                plan.window,
                plan.membership.clone(),
                env.clone(),
            );
            (
                cfg.id.clone(),
                Slot {
                    index: i as u32,
                    restarts: 0,
                    state: SlotState::Running(Box::new(node)),
                },
            )
        })
        .collect();

    // Failure transitions keyed by tick.
    let mut stops: BTreeMap<u64, Vec<&FailurePlan>> = BTreeMap::new();
    let mut restarts: BTreeMap<u64, Vec<&FailurePlan>> = BTreeMap::new();
    for f in &plan.failures {
        stops.entry(f.stop_at.round() as u64).or_default().push(f);
        if let Some(r) = f.restart_at {
            restarts.entry(r.round() as u64).or_default().push(f);
        }
    }

    let probe_name = plan.workload.wcrdt_name();
    let mut driver_rng = ChaCha8Rng::seed_from_u64(node_seed(plan.seed, u32::MAX, 0));
    let rate = plan.sim.ingest_per_tick;
    let mut appended: BTreeMap<PartitionId, u64> =
        partition_ids.iter().map(|p| (p.clone(), 0)).collect();
    let expected: BTreeMap<PartitionId, u64> = logs
        .partitions
        .iter()
        .map(|(p, e)| (p.clone(), e.len() as u64))
        .collect();

    let mut watermark_trace: Vec<(u64, u64)> = Vec::new();
    let mut all_consumed_at: Option<u64> = None;
    let mut end_tick = plan.max_ticks;
    let mut completed = false;

    for tick in 0..plan.max_ticks {
        // Failure transitions first: a stop and a restart on the same tick
        // would be a config error (restart_at > stop_at is validated).
        if let Some(fs) = stops.get(&tick) {
            for f in fs {
                let slot = slots.get_mut(&f.node).expect("validated node");
                slot.state = match f.restart_at {
                    Some(_) => SlotState::Stopped,
                    None => SlotState::Crashed,
                };
            }
        }
        if let Some(fs) = restarts.get(&tick) {
            for f in fs {
                let slot = slots.get_mut(&f.node).expect("validated node");
                if matches!(slot.state, SlotState::Stopped) {
                    slot.restarts += 1;
                    // A restarted node re-enters with its original id, an
                    // empty partition set, and fresh cursors; it re-acquires
                    // work by stealing stale partitions.
                    let cfg = crate::runtime::NodeConfig {
                        initial_partitions: Vec::new(),
                        seed: node_seed(plan.seed, slot.index, slot.restarts),
                        ..plan.node_configs[slot.index as usize].clone()
                    };
                    let node = Node::new(
                        cfg,
                        handler.clone(),
                        plan.window,
                        plan.membership.clone(),
                        env.clone(),
                    );
                    slot.state = SlotState::Running(Box::new(node));
                }
            }
        }

        // Ingest the events due this tick.
        for (p, events) in &logs.partitions {
            let done = appended.get_mut(p).expect("known partition");
            let target = ingest_target(tick, rate, events.len() as u64);
            if *done < target {
                let batch: Vec<Record> = events[*done as usize..target as usize]
                    .iter()
                    .map(NexmarkEvent::to_record)
                    .collect();
                env.input.append(p, &batch)?;
                *done = target;
            }
        }

        // Tick every running node in seeded order.
        let mut order: Vec<NodeId> = slots
            .iter()
            .filter(|(_, s)| matches!(s.state, SlotState::Running(_)))
            .map(|(id, _)| id.clone())
            .collect();
        order.shuffle(&mut driver_rng);
        for id in order {
            let slot = slots.get_mut(&id).expect("known node");
            if let SlotState::Running(node) = &mut slot.state {
                node.tick(tick, tick).map_err(HarnessError::Runtime)?;
            }
        }

        if let Some(name) = probe_name {
            let gw = slots
                .values()
                .filter_map(|s| match &s.state {
                    SlotState::Running(node) => node.watermark_probe(name),
                    _ => None,
                })
                .max();
            if let Some(gw) = gw {
                watermark_trace.push((tick, gw.value()));
            }
        }

        if all_consumed_at.is_none() {
            let consumed_everything = expected
                .iter()
                .all(|(p, total)| sink.high_water(p) >= *total);
            if consumed_everything {
                all_consumed_at = Some(tick);
            }
        }
        if let Some(t0) = all_consumed_at {
            if tick >= t0 + plan.drain_ticks {
                end_tick = tick;
                completed = true;
                break;
            }
        }
    }

    let mut outputs = BTreeMap::new();
    for p in &partition_ids {
        outputs.insert(p.clone(), env.output.snapshot(p)?);
    }
    let deduped = result_lines(&outputs)?;

    let window_ends = if plan.measure_window_latency {
        window_end_units(&logs, |_| rate)
    } else {
        BTreeMap::new()
    };
    let report = sink.finalize(&window_ends, end_tick);

    let final_states = slots
        .iter()
        .filter_map(|(id, slot)| match &slot.state {
            SlotState::Running(node) => Some((id.clone(), node.live_states().clone())),
            _ => None,
        })
        .collect();

    Ok(ScenarioOutcome {
        report,
        outputs,
        deduped,
        end_units: end_tick,
        final_states,
        watermark_trace,
        completed,
    })
}

/// Ground-truth result lines for a scenario, computed by the sequential
/// oracle over the same generated inputs.
pub fn oracle_lines(cfg: &ScenarioConfig) -> Result<Vec<String>, HarnessError> {
    let plan = RunPlan::from_config(cfg)?;
    let logs = generate(&plan.generator)?;
    Ok(crate::workloads::oracle_results(plan.workload, &logs))
}
