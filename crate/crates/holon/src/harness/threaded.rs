//! Threaded driver: one worker thread per node over the shared thread-safe
//! topics, used for throughput measurement. Outputs remain deterministic
//! (the idempotent output log enforces that); timings do not, so reports
//! from this driver are not bit-reproducible.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::encoding::Canonical;
use crate::harness::scenario::{node_seed, RunPlan};
use crate::harness::sim::{window_end_units, ScenarioOutcome};
use crate::harness::{result_lines, HarnessError, MetricsSink};
use crate::runtime::{Handler, Node, NodeConfig, NodeId, PartitionState, RuntimeEnv, RuntimeError};
use crate::stream_log::{CheckpointStore, LoggedTopic, PartitionId, Record};
use crate::workloads::{generate, NexmarkEvent};

const NODE_RUNNING: u8 = 0;
const NODE_STOPPED: u8 = 1;
const NODE_CRASHED: u8 = 2;
const NODE_RESTART: u8 = 3;

/// Clock units are milliseconds since run start.
fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub fn run_threaded(
    plan: &RunPlan,
    handler: Arc<dyn Handler>,
) -> Result<ScenarioOutcome, HarnessError> {
    let logs = generate(&plan.generator)?;
    let partition_ids: Vec<PartitionId> = plan.membership.iter().cloned().collect();

    let initial = PartitionState::initial(handler.initial_state(plan.window, &plan.membership));
    // One clock unit is a millisecond.
    let sink = Arc::new(MetricsSink::new(0.001));
    let env = RuntimeEnv {
        input: Arc::new(LoggedTopic::new("input", partition_ids.clone())),
        output: Arc::new(LoggedTopic::new("output", partition_ids.clone())),
        broadcast: Arc::new(LoggedTopic::single("broadcast")),
        control: Arc::new(LoggedTopic::single("control")),
        checkpoints: Arc::new(CheckpointStore::new(initial.to_bytes())),
        observer: sink.clone(),
    };

    // Staleness and ingestion settings, mapped from sim units to wall time.
    let stale_after_ms = ((plan.node_configs[0].steal_stale_after as f64
        * plan.sim.tick_seconds
        * 1000.0)
        .round() as u64)
        .max(1);
    let rate_per_sec = plan
        .threaded
        .ingest_rate
        .unwrap_or(plan.sim.ingest_per_tick / plan.sim.tick_seconds);
    let rate_per_ms = rate_per_sec / 1000.0;
    let horizon_ms = (plan.threaded.horizon_secs * 1000.0).round() as u64;

    let start = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let first_error: Arc<Mutex<Option<RuntimeError>>> = Arc::new(Mutex::new(None));

    // Ingest thread: appends each partition's events on the shared schedule.
    let ingest = {
        let env = env.clone();
        let logs = logs.clone();
        let stop = stop.clone();
        thread::spawn(move || -> Result<(), HarnessError> {
            let mut appended: BTreeMap<PartitionId, usize> =
                logs.partitions.keys().map(|p| (p.clone(), 0)).collect();
            loop {
                if stop.load(Ordering::Relaxed) {
                    return Ok(());
                }
                let now = elapsed_ms(start);
                let mut pending = false;
                for (p, events) in &logs.partitions {
                    let done = appended.get_mut(p).expect("known partition");
                    let target = (((now + 1) as f64 * rate_per_ms).floor() as usize)
                        .min(events.len());
                    if *done < target {
                        let batch: Vec<Record> = events[*done..target]
                            .iter()
                            .map(NexmarkEvent::to_record)
                            .collect();
                        env.input.append(p, &batch)?;
                        *done = target;
                    }
                    pending |= *done < events.len();
                }
                if !pending {
                    return Ok(());
                }
                thread::sleep(Duration::from_millis(1));
            }
        })
    };

    // Node worker threads.
    let mut statuses: BTreeMap<NodeId, Arc<AtomicU8>> = BTreeMap::new();
    let mut workers = Vec::new();
    for (index, cfg) in plan.node_configs.iter().enumerate() {
        let status = Arc::new(AtomicU8::new(NODE_RUNNING));
        statuses.insert(cfg.id.clone(), status.clone());
        let base_cfg = NodeConfig {
            steal_stale_after: stale_after_ms,
            ..cfg.clone()
        };
        let handler = handler.clone();
        let env = env.clone();
        let stop = stop.clone();
        let first_error = first_error.clone();
        let membership = plan.membership.clone();
        let window = plan.window;
        let master_seed = plan.seed;
        workers.push(thread::spawn(
            move || -> Option<(NodeId, BTreeMap<PartitionId, PartitionState>)> {
                let mut restarts = 0u32;
                let mut node = Node::new(
                    base_cfg.clone(),
                    handler.clone(),
                    window,
                    membership.clone(),
                    env.clone(),
                );
                let mut step = 0u64;
                loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    match status.load(Ordering::Relaxed) {
                        NODE_RUNNING => {
                            match node.tick(step, elapsed_ms(start)) {
                                Ok(progressed) => {
                                    if !progressed {
                                        thread::sleep(Duration::from_micros(300));
                                    }
                                }
                                Err(e) => {
                                    let mut slot = first_error.lock().expect("error slot");
                                    if slot.is_none() {
                                        *slot = Some(e);
                                    }
                                    stop.store(true, Ordering::Relaxed);
                                    break;
                                }
                            }
                            step += 1;
                        }
                        NODE_STOPPED => thread::sleep(Duration::from_millis(1)),
                        NODE_CRASHED => return None,
                        NODE_RESTART => {
                            restarts += 1;
                            node = Node::new(
                                NodeConfig {
                                    initial_partitions: Vec::new(),
                                    seed: node_seed(master_seed, index as u32, restarts),
                                    ..base_cfg.clone()
                                },
                                handler.clone(),
                                window,
                                membership.clone(),
                                env.clone(),
                            );
                            step = 0;
                            status.store(NODE_RUNNING, Ordering::Relaxed);
                        }
                        _ => unreachable!("unknown node status"),
                    }
                }
                Some((node.id().clone(), node.live_states().clone()))
            },
        ));
    }

    // Failure controller.
    let controller = {
        let stop = stop.clone();
        let mut events: Vec<(u64, Arc<AtomicU8>, u8)> = Vec::new();
        for f in &plan.failures {
            let status = statuses[&f.node].clone();
            let stop_ms = (f.stop_at * 1000.0).round() as u64;
            match f.restart_at {
                Some(r) => {
                    events.push((stop_ms, status.clone(), NODE_STOPPED));
                    events.push(((r * 1000.0).round() as u64, status, NODE_RESTART));
                }
                None => events.push((stop_ms, status, NODE_CRASHED)),
            }
        }
        events.sort_by_key(|(t, _, _)| *t);
        thread::spawn(move || {
            for (at_ms, status, value) in events {
                loop {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    if elapsed_ms(start) >= at_ms {
                        status.store(value, Ordering::Relaxed);
                        break;
                    }
                    thread::sleep(Duration::from_millis(1));
                }
            }
        })
    };

    // Monitor: stop once everything is consumed and the outputs settle, or
    // at the horizon.
    let total_expected: u64 = logs.total_events();
    let mut stable_polls = 0;
    let mut last_lens: Vec<u64> = Vec::new();
    let end_ms;
    loop {
        thread::sleep(Duration::from_millis(10));
        let now = elapsed_ms(start);
        if first_error.lock().expect("error slot").is_some() || now >= horizon_ms {
            end_ms = now;
            stop.store(true, Ordering::Relaxed);
            break;
        }
        if sink.total_consumed() >= total_expected {
            let lens: Vec<u64> = partition_ids
                .iter()
                .map(|p| env.output.len(p).unwrap_or(0))
                .collect();
            if lens == last_lens {
                stable_polls += 1;
            } else {
                stable_polls = 0;
                last_lens = lens;
            }
            if stable_polls >= 5 {
                end_ms = now;
                stop.store(true, Ordering::Relaxed);
                break;
            }
        }
    }

    ingest
        .join()
        .map_err(|_| HarnessError::Config("ingest thread panicked".into()))??;
    controller
        .join()
        .map_err(|_| HarnessError::Config("controller thread panicked".into()))?;
    let mut final_states = BTreeMap::new();
    for worker in workers {
        if let Some((id, states)) = worker
            .join()
            .map_err(|_| HarnessError::Config("node thread panicked".into()))?
        {
            final_states.insert(id, states);
        }
    }
    if let Some(e) = first_error.lock().expect("error slot").take() {
        return Err(HarnessError::Runtime(e));
    }

    let mut outputs = BTreeMap::new();
    for p in &partition_ids {
        outputs.insert(p.clone(), env.output.snapshot(p)?);
    }
    let deduped = result_lines(&outputs)?;
    let window_ends = if plan.measure_window_latency {
        window_end_units(&logs, |_| rate_per_ms)
    } else {
        BTreeMap::new()
    };
    let report = sink.finalize(&window_ends, end_ms);
    let completed = report.total_consumed >= total_expected;

    Ok(ScenarioOutcome {
        report,
        outputs,
        deduped,
        end_units: end_ms,
        final_states,
        watermark_trace: Vec::new(),
        completed,
    })
}
