//! Deterministic trace-replay simulator for multi-tenant block storage QoS.
//!
//! Volumes replay recorded or synthetic request streams against a shared
//! device model under one of four throughput policies: a fixed cap, a
//! credit-based burst allowance, an adaptive gear ladder that promotes and
//! demotes the cap with observed demand, or no limit at all. The engine
//! tracks queueing latency, per-gear reservation time, and the resulting
//! capacity and throughput bills so policies can be compared on identical
//! workloads.

pub mod device;
pub mod engine;
pub mod metering;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod trace;

pub use device::{device_allocate, effective_iops_capacity, storage_util, DeviceCounters, DeviceProfile};
pub use engine::{bins_from_records, run, RunInput, SimulationResult, TickLog, VolumeTick};
pub use metering::{capacity_bill, hourly_bills, qos_bill, qos_bill_flat, round_cents, total_bill, MeterLedger, PriceBook};
pub use policy::{
    build_gears, credit_step, pool_admit, resolve_contention, tune_execute, tune_judge,
    CreditState, GStateState, GearTable, PolicyConfig, TuneDecision,
};
pub use report::{analyze, compare_policies, emit_reports, replay, ReportBundle};
pub use scenario::{load_scenario, prepare, Scenario};
pub use trace::{
    bin_iops, burst_share, generate_synthetic, multiplex_stats, nearest_rank, parse_trace,
    parse_trace_str, percentile_iops, IopsSeries, MultiplexReport, OpKind, SyntheticPhaseSpec,
    TraceRecord,
};
