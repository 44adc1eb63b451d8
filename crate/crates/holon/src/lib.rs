//! Decentralized exactly-once stream processing built on windowed CRDTs.
//!
//! The crate is organized bottom-up:
//!
//! - [`crdt`]: join-semilattice value types (grow-only counters, max
//!   registers, grow-only maps) and their canonical byte encodings.
//! - [`windowed`]: tumbling-window wrappers around the lattice types with
//!   per-partition progress watermarks. A window's value becomes readable,
//!   and permanently immutable, once the global watermark passes its end.
//! - [`stream_log`]: in-process partitioned append-only topics with
//!   offset-addressed reads and idempotent offset-addressed writes, plus a
//!   keep-largest-index checkpoint store. These stand in for a broker.
//! - [`runtime`]: the per-node executor. Each node batch-processes a set of
//!   partitions, checkpoints them, gossips lattice state over a broadcast
//!   topic, emits heartbeats, and opportunistically steals partitions whose
//!   heartbeats have gone stale.
//! - [`workloads`]: a seeded auction-event generator, the four benchmark
//!   handlers (pass-through, per-partition bid ratio, average price per
//!   category, highest bid), and an independent sequential oracle.
//! - [`harness`]: scenario configuration, the deterministic single-threaded
//!   simulation driver, a threaded driver for throughput runs, failure
//!   injection, metrics, and CSV reporting.
//!
//! Everything that crosses a checkpoint or broadcast boundary uses a
//! canonical, platform-independent byte encoding so that two runs with the
//! same seed produce byte-identical artifacts.

pub mod crdt;
pub mod encoding;
pub mod harness;
pub mod runtime;
pub mod stream_log;
pub mod windowed;
pub mod workloads;
