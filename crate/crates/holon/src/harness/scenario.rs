//! Scenario files and their resolution into an executable plan.
//!
//! Scenarios are TOML documents mirroring [`ScenarioConfig`]; every key is
//! documented in the project README. Validation is strict: partitions must
//! be fully covered by the node assignment and failure times must fall
//! within the run horizon.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::HarnessError;
use crate::runtime::{NodeConfig, NodeId};
use crate::stream_log::PartitionId;
use crate::windowed::{Timestamp, WindowSpec};
use crate::workloads::{GeneratorConfig, WorkloadKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    #[default]
    Sim,
    Threaded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub workload: WorkloadKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub driver: DriverKind,
    #[serde(default = "default_true")]
    pub measure_window_latency: bool,
    pub generator: GeneratorConfig,
    pub nodes: NodeSettings,
    /// Partition -> node. Empty means round-robin by index.
    #[serde(default)]
    pub assignment: BTreeMap<String, String>,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub threaded: ThreadedSettings,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSettings {
    pub count: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every_n_steps: u64,
    #[serde(default = "default_sync_every")]
    pub sync_every_n_steps: u64,
    #[serde(default = "default_steal_stale_after")]
    pub steal_stale_after: u64,
}

fn default_batch_size() -> usize {
    16
}

fn default_checkpoint_every() -> u64 {
    4
}

fn default_sync_every() -> u64 {
    2
}

fn default_steal_stale_after() -> u64 {
    50
}

/// Stop a node at `stop_at` and optionally bring it back at `restart_at`;
/// no restart means a permanent crash. Times are ticks under the sim driver
/// and seconds under the threaded driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    pub node: String,
    pub stop_at: f64,
    #[serde(default)]
    pub restart_at: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Events ingested per partition per tick.
    #[serde(default = "default_ingest_per_tick")]
    pub ingest_per_tick: f64,
    /// Scale from ticks to reported seconds.
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    /// Hard tick limit; derived generously from the workload when absent.
    #[serde(default)]
    pub max_ticks: Option<u64>,
    /// Ticks to keep running after all input is consumed, letting final
    /// syncs, flushes, and checkpoints settle. Derived when absent.
    #[serde(default)]
    pub drain_ticks: Option<u64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            ingest_per_tick: default_ingest_per_tick(),
            tick_seconds: default_tick_seconds(),
            max_ticks: None,
            drain_ticks: None,
        }
    }
}

fn default_ingest_per_tick() -> f64 {
    8.0
}

fn default_tick_seconds() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadedSettings {
    /// Wall-clock cap in seconds.
    #[serde(default = "default_horizon_secs")]
    pub horizon_secs: f64,
    /// Ingestion rate in events per second per partition; defaults to the
    /// sim rate mapped through `tick_seconds`.
    #[serde(default)]
    pub ingest_rate: Option<f64>,
}

impl Default for ThreadedSettings {
    fn default() -> Self {
        Self {
            horizon_secs: default_horizon_secs(),
            ingest_rate: None,
        }
    }
}

fn default_horizon_secs() -> f64 {
    300.0
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Scenario with the failure schedule removed, used as the sensitivity
    /// baseline.
    pub fn without_failures(&self) -> Self {
        let mut cfg = self.clone();
        cfg.failures.clear();
        cfg
    }
}

/// A failure event resolved against a node id. Times stay in config units;
/// each driver interprets them (ticks or seconds).
#[derive(Debug, Clone)]
pub struct FailurePlan {
    pub node: NodeId,
    pub stop_at: f64,
    pub restart_at: Option<f64>,
}

/// Everything a driver needs to execute a scenario.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub workload: WorkloadKind,
    pub seed: u64,
    pub driver: DriverKind,
    pub measure_window_latency: bool,
    pub generator: GeneratorConfig,
    pub window: WindowSpec,
    pub membership: BTreeSet<PartitionId>,
    pub node_configs: Vec<NodeConfig>,
    pub failures: Vec<FailurePlan>,
    pub sim: SimSettings,
    pub threaded: ThreadedSettings,
    pub max_ticks: u64,
    pub drain_ticks: u64,
}

pub fn node_name(index: u32) -> NodeId {
    NodeId::new(format!("n{index}"))
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a node's rng; varied per restart so a restarted node does not
/// replay its previous random choices.
pub fn node_seed(master: u64, node_index: u32, restarts: u32) -> u64 {
    mix_seed(master, 0x4E0D_0000 + node_index as u64 + ((restarts as u64) << 32))
}

impl RunPlan {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));

        if cfg.nodes.count == 0 {
            return fail("nodes.count must be at least 1".into());
        }
        if cfg.nodes.batch_size == 0
            || cfg.nodes.checkpoint_every_n_steps == 0
            || cfg.nodes.sync_every_n_steps == 0
            || cfg.nodes.steal_stale_after == 0
        {
            return fail("node settings must all be positive".into());
        }
        if cfg.sim.ingest_per_tick <= 0.0 || cfg.sim.tick_seconds <= 0.0 {
            return fail("sim settings must be positive".into());
        }

        let mut generator = cfg.generator.clone();
        if generator.seed == 0 {
            generator.seed = cfg.seed;
        }
        generator
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;

        let membership: BTreeSet<PartitionId> = (0..generator.partitions)
            .map(crate::workloads::partition_name)
            .collect();
        let node_ids: Vec<NodeId> = (0..cfg.nodes.count).map(node_name).collect();

        // Resolve the assignment: explicit map or round-robin by index.
        let mut assigned: BTreeMap<NodeId, Vec<PartitionId>> =
            node_ids.iter().map(|n| (n.clone(), Vec::new())).collect();
        if cfg.assignment.is_empty() {
            for (i, p) in membership.iter().enumerate() {
                let node = &node_ids[i % node_ids.len()];
                assigned.get_mut(node).expect("known node").push(p.clone());
            }
        } else {
            let mut covered: BTreeSet<PartitionId> = BTreeSet::new();
            for (p, n) in &cfg.assignment {
                let p = PartitionId::new(p.clone())
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                if !membership.contains(&p) {
                    return fail(format!("assignment names unknown partition {p}"));
                }
                let n = NodeId::new(n.clone());
                let Some(slot) = assigned.get_mut(&n) else {
                    return fail(format!("assignment names unknown node {n}"));
                };
                slot.push(p.clone());
                covered.insert(p);
            }
            if covered.len() != membership.len() {
                return fail("assignment must cover every partition".into());
            }
        }

        let node_configs: Vec<NodeConfig> = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| NodeConfig {
                id: id.clone(),
                initial_partitions: assigned[id].clone(),
                batch_size: cfg.nodes.batch_size,
                checkpoint_every: cfg.nodes.checkpoint_every_n_steps,
                sync_every: cfg.nodes.sync_every_n_steps,
                steal_stale_after: cfg.nodes.steal_stale_after,
                seed: node_seed(cfg.seed, i as u32, 0),
            })
            .collect();

        // Horizon: derive a generous default when not pinned by the config.
        let batches_per_partition =
            (generator.events_per_partition + 1).div_ceil(cfg.nodes.batch_size as u64) + 1;
        let ingest_ticks = ((generator.events_per_partition + 1) as f64
            / cfg.sim.ingest_per_tick)
            .ceil() as u64;
        let total_batches = batches_per_partition * generator.partitions as u64;
        let derived_max = 1_000 + 10 * (ingest_ticks + total_batches);
        let max_ticks = cfg.sim.max_ticks.unwrap_or(derived_max);
        let drain_ticks = cfg.sim.drain_ticks.unwrap_or(
            6 * cfg.nodes.sync_every_n_steps + 2 * cfg.nodes.checkpoint_every_n_steps + 10,
        );

        let known: BTreeSet<&NodeId> = node_ids.iter().collect();
        let horizon = match cfg.driver {
            DriverKind::Sim => max_ticks as f64,
            DriverKind::Threaded => cfg.threaded.horizon_secs,
        };
        let mut failures = Vec::new();
        for f in &cfg.failures {
            let node = NodeId::new(f.node.clone());
            if !known.contains(&node) {
                return fail(format!("failure names unknown node {node}"));
            }
            if let Some(r) = f.restart_at {
                if r <= f.stop_at {
                    return fail("restart_at must be after stop_at".into());
                }
            }
            if f.stop_at < 0.0 || f.stop_at >= horizon {
                return fail(format!(
                    "failure stop_at {} outside the run horizon {horizon}",
                    f.stop_at
                ));
            }
            failures.push(FailurePlan {
                node,
                stop_at: f.stop_at,
                restart_at: f.restart_at,
            });
        }

        Ok(RunPlan {
            workload: cfg.workload,
            seed: cfg.seed,
            driver: cfg.driver,
            measure_window_latency: cfg.measure_window_latency,
            window: WindowSpec::new(generator.window_length, Timestamp::ZERO),
            generator,
            membership,
            node_configs,
            failures,
            sim: cfg.sim.clone(),
            threaded: cfg.threaded.clone(),
            max_ticks,
            drain_ticks,
        })
    }
}
