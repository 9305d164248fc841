//! Deterministic 1-second-tick replay loop.
//!
//! Each tick: per-volume demand (carried queue + arrivals) is capped by the
//! volume's policy, the device allocates capacity across volumes, queues
//! drain FIFO in a fluid (real-valued) model, overdue requests may abandon,
//! device counters and utilization update, and the tuning loop adjusts gear
//! levels for the next tick. Per-request schedule latencies are recovered
//! from the fluid model by treating each second's arrivals as uniformly
//! spaced and draining their queue positions through the per-tick granted
//! rates.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::device::{
    device_allocate, effective_iops_capacity, storage_util, DeviceCounters, DeviceProfile,
};
use crate::metering::MeterLedger;
use crate::policy::{
    build_gears, pool_admit, resolve_contention, resolve_contention_fairness, tune_execute,
    tune_judge, ContentionCandidate, ContentionStrategy, CreditState, GStateState, GearTable,
    IoType, PolicyConfig, TuneDecision, CREDITS_PER_GB,
};
use crate::trace::{TraceRecord, OpKind, USEC_PER_SEC};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("volume '{id}' has {bins} arrival bins but the horizon is {horizon} ticks")]
    BinsMismatch { id: String, bins: usize, horizon: u64 },
    #[error("duplicate volume id '{0}'")]
    DuplicateVolume(String),
    #[error("invalid policy for volume '{id}': {msg}")]
    InvalidPolicy { id: String, msg: String },
    #[error("invalid device profile: {0}")]
    InvalidDevice(String),
}

/// Integer arrivals of one volume in one 1-second bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArrivalBin {
    pub read: u64,
    pub write: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

impl ArrivalBin {
    pub fn count(&self) -> u64 {
        self.read + self.write
    }

    pub fn reads(n: u64) -> Self {
        ArrivalBin {
            read: n,
            read_bytes: n * 4096,
            ..Default::default()
        }
    }
}

/// Bin trace records into per-second arrival counts for one volume.
pub fn bins_from_records(records: &[TraceRecord], horizon: u64) -> Vec<ArrivalBin> {
    let mut bins = vec![ArrivalBin::default(); horizon as usize];
    for r in records {
        let idx = (r.timestamp_us / USEC_PER_SEC) as usize;
        if idx >= bins.len() {
            continue;
        }
        match r.op {
            OpKind::Read => {
                bins[idx].read += 1;
                bins[idx].read_bytes += r.size;
            }
            OpKind::Write => {
                bins[idx].write += 1;
                bins[idx].write_bytes += r.size;
            }
        }
    }
    bins
}

/// Horizon (in whole seconds) covering every record.
pub fn records_horizon(records: &[TraceRecord]) -> u64 {
    records
        .last()
        .map(|r| r.timestamp_us / USEC_PER_SEC + 1)
        .unwrap_or(0)
}

/// One volume ready for replay.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    pub id: String,
    pub size_gb: f64,
    pub policy: PolicyConfig,
    pub io_type: IoType,
    pub bins: Vec<ArrivalBin>,
}

#[derive(Debug, Clone)]
pub struct RunInput {
    pub device: DeviceProfile,
    pub volumes: Vec<PreparedVolume>,
    pub horizon: u64,
    /// Abandonment threshold in seconds; None disables abandonment.
    pub abandonment_threshold: Option<f64>,
    /// Total shared reservation for pool-mode gear volumes. Defaults to the
    /// sum of their baselines when absent.
    pub pool_total_iops: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeTick {
    pub arrivals: f64,
    pub granted: f64,
    pub queue_after: f64,
    pub cap: f64,
    pub gear_level: Option<usize>,
    pub credit_balance: Option<f64>,
    pub abandoned: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TickLog {
    pub tick: u64,
    pub volumes: BTreeMap<String, VolumeTick>,
    pub counters: DeviceCounters,
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct VolumeTotals {
    pub arrivals: f64,
    pub granted: f64,
    pub abandoned: f64,
    pub final_queue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationResult {
    pub horizon: u64,
    pub ticks: Vec<TickLog>,
    /// Schedule latency of every completed request, in arrival order.
    pub latencies: BTreeMap<String, Vec<f64>>,
    /// Gear-duration ledgers (gear volumes only).
    pub ledgers: BTreeMap<String, MeterLedger>,
    /// Reserved (billed) IOPS per tick per volume.
    pub reserved_series: BTreeMap<String, Vec<f64>>,
    pub totals: BTreeMap<String, VolumeTotals>,
}

/// Wait contributed by a queue position at a fixed service rate.
pub fn fluid_latency(queue_position: f64, service_rate: f64) -> f64 {
    if queue_position <= 0.0 {
        return 0.0;
    }
    queue_position / service_rate
}

/// Piecewise drain time of a queue position through per-tick rates; a
/// zero-rate tick accrues a full second. None if the position never drains
/// within the given rates.
pub fn drain_time(position: f64, rates: &[f64]) -> Option<f64> {
    if position <= 0.0 {
        return Some(0.0);
    }
    let mut served = 0.0;
    for (i, &r) in rates.iter().enumerate() {
        if served + r >= position {
            return Some(i as f64 + (position - served) / r);
        }
        served += r;
    }
    None
}

/// Fluid abandonment rule: the queued volume whose projected wait at the
/// current rate exceeds the threshold, i.e. everything beyond rate*threshold.
pub fn abandon_overdue(queue: f64, rate: f64, threshold: f64) -> f64 {
    (queue - rate * threshold).max(0.0)
}

#[derive(Debug, Clone)]
enum PolicyRt {
    Static {
        cap: f64,
    },
    Unlimited,
    Leaky {
        state: CreditState,
    },
    Gears {
        state: GStateState,
        gears: GearTable,
        pool_mode: bool,
        contention: ContentionStrategy,
    },
}

impl PolicyRt {
    fn from_config(cfg: &PolicyConfig, size_gb: f64) -> Result<Self, String> {
        match cfg {
            PolicyConfig::Static { cap } => {
                if !(*cap > 0.0) {
                    return Err(format!("static cap must be > 0, got {cap}"));
                }
                Ok(PolicyRt::Static { cap: *cap })
            }
            PolicyConfig::Unlimited => Ok(PolicyRt::Unlimited),
            PolicyConfig::LeakyBucket {
                baseline_iops,
                burst_iops,
                max_balance,
                initial_balance,
            } => {
                let baseline = baseline_iops.unwrap_or(CREDITS_PER_GB * size_gb);
                if !(baseline > 0.0) {
                    return Err(format!("leaky_bucket baseline must be > 0, got {baseline}"));
                }
                if *burst_iops < baseline {
                    return Err(format!(
                        "burst_iops {burst_iops} below baseline {baseline}"
                    ));
                }
                if *max_balance < 0.0 || *initial_balance < 0.0 || initial_balance > max_balance {
                    return Err("credit balances must satisfy 0 <= initial <= max".to_string());
                }
                Ok(PolicyRt::Leaky {
                    state: CreditState {
                        balance: *initial_balance,
                        max_balance: *max_balance,
                        baseline_iops: baseline,
                        burst_iops: *burst_iops,
                    },
                })
            }
            PolicyConfig::Gstates {
                baseline_iops,
                num_levels,
                promote_threshold_factor,
                util_threshold,
                pool_mode,
                contention,
            } => {
                let gears = build_gears(*baseline_iops, *num_levels).map_err(|e| e.to_string())?;
                if !(*promote_threshold_factor > 0.0 && *promote_threshold_factor <= 1.0) {
                    return Err(format!(
                        "promote_threshold_factor must be in (0, 1], got {promote_threshold_factor}"
                    ));
                }
                if !(*util_threshold > 0.0) {
                    return Err(format!("util_threshold must be > 0, got {util_threshold}"));
                }
                Ok(PolicyRt::Gears {
                    state: GStateState::new(*promote_threshold_factor, *util_threshold),
                    gears,
                    pool_mode: *pool_mode,
                    contention: *contention,
                })
            }
        }
    }

    fn cap(&self) -> f64 {
        match self {
            PolicyRt::Static { cap } => *cap,
            PolicyRt::Unlimited => f64::INFINITY,
            PolicyRt::Leaky { state } => state.allowance(),
            PolicyRt::Gears { state, gears, .. } => gears.cap(state.level),
        }
    }

    /// IOPS reservation billed for one tick.
    fn reserved(&self) -> f64 {
        match self {
            PolicyRt::Static { cap } => *cap,
            PolicyRt::Unlimited => 0.0,
            PolicyRt::Leaky { state } => state.baseline_iops,
            PolicyRt::Gears { state, gears, .. } => gears.cap(state.level),
        }
    }
}

struct VolRt {
    id: String,
    io_type: IoType,
    policy: PolicyRt,
    // fluid queue, split by op class, with byte backlogs for bandwidth
    q_read: f64,
    q_write: f64,
    qb_read: f64,
    qb_write: f64,
    // queued arrival-index ranges, front = oldest
    intervals: VecDeque<(f64, f64)>,
    arrived: f64,
    abandoned_total: f64,
    abandoned_ranges: Vec<(f64, f64)>,
    ledger: MeterLedger,
    reserved_series: Vec<f64>,
    // per-tick records for latency reconstruction
    rates: Vec<f64>,
    queue_at_start: Vec<f64>,
    arrival_counts: Vec<u64>,
    total_arrivals: f64,
    total_granted: f64,
}

impl VolRt {
    fn queue(&self) -> f64 {
        self.q_read + self.q_write
    }

    fn pop_front(&mut self, mut amount: f64) {
        while amount > 1e-12 {
            let Some(front) = self.intervals.front_mut() else {
                break;
            };
            let len = front.1 - front.0;
            if len <= amount + 1e-12 {
                amount -= len;
                self.intervals.pop_front();
            } else {
                front.0 += amount;
                amount = 0.0;
            }
        }
    }

    fn pop_back(&mut self, mut amount: f64) {
        while amount > 1e-12 {
            let Some(back) = self.intervals.back_mut() else {
                break;
            };
            let len = back.1 - back.0;
            if len <= amount + 1e-12 {
                amount -= len;
                let range = *back;
                self.intervals.pop_back();
                self.abandoned_ranges.push(range);
            } else {
                let cut = (back.1 - amount, back.1);
                back.1 -= amount;
                self.abandoned_ranges.push(cut);
                amount = 0.0;
            }
        }
    }
}

/// Run a prepared scenario to completion. Deterministic: identical inputs
/// produce identical results.
pub fn run(input: &RunInput) -> Result<SimulationResult, EngineError> {
    input
        .device
        .validate()
        .map_err(EngineError::InvalidDevice)?;

    let mut vols: Vec<VolRt> = Vec::with_capacity(input.volumes.len());
    for spec in &input.volumes {
        if vols.iter().any(|v| v.id == spec.id) {
            return Err(EngineError::DuplicateVolume(spec.id.clone()));
        }
        if spec.bins.len() != input.horizon as usize {
            return Err(EngineError::BinsMismatch {
                id: spec.id.clone(),
                bins: spec.bins.len(),
                horizon: input.horizon,
            });
        }
        let policy =
            PolicyRt::from_config(&spec.policy, spec.size_gb).map_err(|msg| {
                EngineError::InvalidPolicy {
                    id: spec.id.clone(),
                    msg,
                }
            })?;
        vols.push(VolRt {
            id: spec.id.clone(),
            io_type: spec.io_type,
            policy,
            q_read: 0.0,
            q_write: 0.0,
            qb_read: 0.0,
            qb_write: 0.0,
            intervals: VecDeque::new(),
            arrived: 0.0,
            abandoned_total: 0.0,
            abandoned_ranges: Vec::new(),
            ledger: MeterLedger::default(),
            reserved_series: Vec::with_capacity(input.horizon as usize),
            rates: Vec::with_capacity(input.horizon as usize),
            queue_at_start: Vec::with_capacity(input.horizon as usize),
            arrival_counts: Vec::with_capacity(input.horizon as usize),
            total_arrivals: 0.0,
            total_granted: 0.0,
        });
    }

    let pool_total = input.pool_total_iops.unwrap_or_else(|| {
        vols.iter()
            .filter_map(|v| match &v.policy {
                PolicyRt::Gears {
                    gears,
                    pool_mode: true,
                    ..
                } => Some(gears.baseline_iops),
                _ => None,
            })
            .sum()
    });

    let mut ticks = Vec::with_capacity(input.horizon as usize);

    for tick in 0..input.horizon {
        // (1)-(2) demand and policy caps
        let mut demands = BTreeMap::new();
        let mut caps = BTreeMap::new();
        let mut tick_demand = Vec::with_capacity(vols.len());
        for (vi, vol) in vols.iter_mut().enumerate() {
            let bin = input.volumes[vi].bins[tick as usize];
            vol.queue_at_start.push(vol.queue());
            vol.arrival_counts.push(bin.count());
            let d_read = vol.q_read + bin.read as f64;
            let d_write = vol.q_write + bin.write as f64;
            let db_read = vol.qb_read + bin.read_bytes as f64;
            let db_write = vol.qb_write + bin.write_bytes as f64;
            let cap = vol.policy.cap();
            demands.insert(vol.id.clone(), d_read + d_write);
            caps.insert(vol.id.clone(), cap);
            tick_demand.push((d_read, d_write, db_read, db_write, cap));
        }

        // (3) device allocation at this tick's read/write mix
        let mut want_total = 0.0;
        let mut want_read = 0.0;
        for (d_read, d_write, _, _, cap) in &tick_demand {
            let d = d_read + d_write;
            let want = d.min(*cap);
            want_total += want;
            if d > 0.0 {
                want_read += want * d_read / d;
            }
        }
        let read_fraction = if want_total > 0.0 {
            want_read / want_total
        } else {
            0.5
        };
        let capacity = effective_iops_capacity(&input.device, read_fraction);
        let grants = device_allocate(&demands, &caps, capacity);

        // (4)-(5) drain queues, abandon overdue
        let mut counters = DeviceCounters::default();
        let mut vol_ticks = BTreeMap::new();
        for (vi, vol) in vols.iter_mut().enumerate() {
            let bin = input.volumes[vi].bins[tick as usize];
            let (d_read, d_write, db_read, db_write, cap) = tick_demand[vi];
            let d = d_read + d_write;
            let g = grants[&vol.id];
            let (g_read, g_write) = if d > 0.0 {
                (g * d_read / d, g * d_write / d)
            } else {
                (0.0, 0.0)
            };
            let sb_read = if d_read > 0.0 { g_read * db_read / d_read } else { 0.0 };
            let sb_write = if d_write > 0.0 {
                g_write * db_write / d_write
            } else {
                0.0
            };
            vol.q_read = (d_read - g_read).max(0.0);
            vol.q_write = (d_write - g_write).max(0.0);
            vol.qb_read = (db_read - sb_read).max(0.0);
            vol.qb_write = (db_write - sb_write).max(0.0);

            let count = bin.count();
            if count > 0 {
                vol.intervals.push_back((vol.arrived, vol.arrived + count as f64));
                vol.arrived += count as f64;
            }
            vol.pop_front(g);

            let mut abandoned = 0.0;
            if let Some(threshold) = input.abandonment_threshold {
                let queue_now = vol.queue();
                abandoned = abandon_overdue(queue_now, g, threshold);
                if abandoned > 0.0 {
                    let scale = (queue_now - abandoned) / queue_now;
                    vol.q_read *= scale;
                    vol.q_write *= scale;
                    vol.qb_read *= scale;
                    vol.qb_write *= scale;
                    vol.pop_back(abandoned);
                    vol.abandoned_total += abandoned;
                }
            }

            counters.riops += g_read;
            counters.wiops += g_write;
            counters.rbw += sb_read;
            counters.wbw += sb_write;

            vol.rates.push(g);
            vol.total_arrivals += count as f64;
            vol.total_granted += g;

            let (gear_level, credit_balance) = match &vol.policy {
                PolicyRt::Gears { state, .. } => (Some(state.level), None),
                PolicyRt::Leaky { state } => (None, Some(state.balance)),
                _ => (None, None),
            };
            vol_ticks.insert(
                vol.id.clone(),
                VolumeTick {
                    arrivals: count as f64,
                    granted: g,
                    queue_after: vol.queue(),
                    cap,
                    gear_level,
                    credit_balance,
                    abandoned,
                },
            );

            // (8) meter this tick at the level that served it
            match &vol.policy {
                PolicyRt::Gears { state, .. } => vol.ledger.add(state.level, 1.0),
                _ => {}
            }
            vol.reserved_series.push(vol.policy.reserved());

            // store the read/write mix observed this tick for io_type selection
            tick_demand[vi] = (g_read, g_write, sb_read, sb_write, cap);
        }

        // (6) device utilization from the just-completed tick
        let utilization = storage_util(&counters, &input.device);

        // (7) tuning: settle credits, judge and execute gear transitions
        let pool_granted: f64 = vols
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v.policy, PolicyRt::Gears { pool_mode: true, .. }))
            .map(|(vi, _)| tick_demand[vi].0 + tick_demand[vi].1)
            .sum();
        let pool_unused = (pool_total - pool_granted).max(0.0);

        let mut pool_candidates: Vec<(ContentionCandidate, usize)> = Vec::new();
        let mut pool_strategy = ContentionStrategy::Efficiency;
        for (vi, vol) in vols.iter_mut().enumerate() {
            let (g_read, g_write, _, _, _) = tick_demand[vi];
            let g = g_read + g_write;
            match &mut vol.policy {
                PolicyRt::Leaky { state } => {
                    *state = state.settle(g);
                }
                PolicyRt::Gears {
                    state,
                    gears,
                    pool_mode,
                    contention,
                } => {
                    let observed = match vol.io_type {
                        IoType::Total => g,
                        IoType::Read => g_read,
                        IoType::Write => g_write,
                    };
                    let decision = tune_judge(state, gears, observed, utilization);
                    match decision {
                        TuneDecision::Demote => {
                            let (next, _) = tune_execute(state, decision, gears)
                                .expect("judge guarantees a valid demotion");
                            *state = next;
                        }
                        TuneDecision::Promote if *pool_mode => {
                            let delta = gears.cap(state.level + 1) - gears.cap(state.level);
                            let unmet = (demands[&vol.id] - g).max(0.0);
                            pool_strategy = *contention;
                            pool_candidates.push((
                                ContentionCandidate {
                                    volume_id: vol.id.clone(),
                                    promotion_delta: delta,
                                    unmet_demand: unmet,
                                },
                                state.level,
                            ));
                        }
                        TuneDecision::Promote => {
                            let (next, _) = tune_execute(state, decision, gears)
                                .expect("judge guarantees a valid promotion");
                            *state = next;
                        }
                        TuneDecision::None => {}
                    }
                }
                _ => {}
            }
        }
        if !pool_candidates.is_empty() {
            let admitted: Vec<&(ContentionCandidate, usize)> = pool_candidates
                .iter()
                .filter(|(c, _)| pool_admit(pool_unused, c.promotion_delta))
                .collect();
            let flat: Vec<ContentionCandidate> =
                admitted.iter().map(|(c, _)| c.clone()).collect();
            let chosen = match pool_strategy {
                ContentionStrategy::Efficiency => resolve_contention(&flat, pool_unused),
                ContentionStrategy::Fairness => {
                    let with_levels: Vec<(ContentionCandidate, usize)> =
                        admitted.iter().map(|x| (*x).clone()).collect();
                    resolve_contention_fairness(&with_levels, pool_unused)
                }
            };
            for vol in vols.iter_mut() {
                if !chosen.contains(&vol.id) {
                    continue;
                }
                if let PolicyRt::Gears { state, gears, .. } = &mut vol.policy {
                    let (next, _) = tune_execute(state, TuneDecision::Promote, gears)
                        .expect("candidate level below top");
                    *state = next;
                }
            }
        }

        ticks.push(TickLog {
            tick,
            volumes: vol_ticks,
            counters,
            utilization,
        });
    }

    // per-request schedule latencies from the fluid model
    let mut latencies = BTreeMap::new();
    for vol in &vols {
        latencies.insert(vol.id.clone(), resolve_latencies(vol));
    }

    let mut ledgers = BTreeMap::new();
    let mut reserved_series = BTreeMap::new();
    let mut totals = BTreeMap::new();
    for vol in vols {
        totals.insert(
            vol.id.clone(),
            VolumeTotals {
                arrivals: vol.total_arrivals,
                granted: vol.total_granted,
                abandoned: vol.abandoned_total,
                final_queue: vol.queue(),
            },
        );
        reserved_series.insert(vol.id.clone(), vol.reserved_series);
        if matches!(vol.policy, PolicyRt::Gears { .. }) {
            ledgers.insert(vol.id, vol.ledger);
        }
    }

    Ok(SimulationResult {
        horizon: input.horizon,
        ticks,
        latencies,
        ledgers,
        reserved_series,
        totals,
    })
}

fn resolve_latencies(vol: &VolRt) -> Vec<f64> {
    let n = vol.rates.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &r in &vol.rates {
        prefix.push(prefix.last().unwrap() + r);
    }

    let mut abandoned = vol.abandoned_ranges.clone();
    abandoned.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let is_abandoned = |idx: f64| -> bool {
        let pos = abandoned.partition_point(|&(lo, _)| lo <= idx);
        pos > 0 && abandoned[pos - 1].1 > idx
    };

    let mut samples = Vec::new();
    let mut global_index = 0u64;
    for t in 0..n {
        let queue_before = vol.queue_at_start[t];
        let count = vol.arrival_counts[t];
        for i in 0..count {
            let gi = global_index as f64 + 0.5;
            global_index += 1;
            if is_abandoned(gi) {
                continue;
            }
            let position = queue_before + i as f64;
            if position <= 0.0 {
                samples.push(0.0);
                continue;
            }
            // first tick m >= t whose cumulative service reaches the position
            let target = position + prefix[t];
            let mut lo = t;
            let mut hi = n;
            while lo < hi {
                let mid = (lo + hi) / 2;
                if prefix[mid + 1] < target {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            if lo >= n {
                continue; // still queued at end of run
            }
            let rate = vol.rates[lo];
            debug_assert!(rate > 0.0);
            let lat = (lo - t) as f64 + (position - (prefix[lo] - prefix[t])) / rate;
            samples.push(lat);
        }
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceProfile;

    fn single_volume(policy: PolicyConfig, arrivals: &[u64]) -> RunInput {
        let bins: Vec<ArrivalBin> = arrivals.iter().map(|&n| ArrivalBin::reads(n)).collect();
        RunInput {
            device: DeviceProfile::unbounded(),
            volumes: vec![PreparedVolume {
                id: "v".to_string(),
                size_gb: 100.0,
                policy,
                io_type: IoType::Total,
                bins,
            }],
            horizon: arrivals.len() as u64,
            abandonment_threshold: None,
            pool_total_iops: None,
        }
    }

    #[test]
    fn step_no_contention() {
        let result = run(&single_volume(PolicyConfig::Static { cap: 600.0 }, &[500])).unwrap();
        let v = &result.ticks[0].volumes["v"];
        assert_eq!(v.granted, 500.0);
        assert_eq!(v.queue_after, 0.0);
    }

    #[test]
    fn step_caps_and_carries_queue() {
        let result =
            run(&single_volume(PolicyConfig::Static { cap: 600.0 }, &[1200, 0])).unwrap();
        let t0 = &result.ticks[0].volumes["v"];
        assert_eq!(t0.granted, 600.0);
        assert_eq!(t0.queue_after, 600.0);
        let t1 = &result.ticks[1].volumes["v"];
        assert_eq!(t1.granted, 600.0);
        assert_eq!(t1.queue_after, 0.0);
        // the 600 carried requests complete next tick with latency >= 1.0s
        let lats = &result.latencies["v"];
        assert_eq!(lats.len(), 1200);
        for &lat in &lats[600..] {
            assert!(lat >= 1.0, "carried latency {lat} < 1.0");
        }
        for &lat in &lats[..600] {
            assert!(lat < 1.0);
        }
    }

    #[test]
    fn fluid_latency_examples() {
        assert_eq!(fluid_latency(0.0, 600.0), 0.0);
        assert!((fluid_latency(300.0, 600.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn drain_time_piecewise() {
        // 600 served in the first tick, remaining 300 at 1200 next tick
        let lat = drain_time(900.0, &[600.0, 1200.0]).unwrap();
        assert!((lat - 1.25).abs() < 1e-12);
        assert_eq!(drain_time(0.0, &[600.0]), Some(0.0));
        assert_eq!(drain_time(10.0, &[0.0, 0.0]), None);
        // zero-rate tick accrues a full second
        let lat = drain_time(100.0, &[0.0, 200.0]).unwrap();
        assert!((lat - 1.5).abs() < 1e-12);
    }

    #[test]
    fn abandon_overdue_examples() {
        assert_eq!(abandon_overdue(1200.0, 600.0, 1.0), 600.0);
        assert_eq!(abandon_overdue(100.0, 600.0, 1.0), 0.0);
    }

    #[test]
    fn unlimited_never_queues() {
        let result = run(&single_volume(PolicyConfig::Unlimited, &[5000, 8000, 100])).unwrap();
        for t in &result.ticks {
            assert_eq!(t.volumes["v"].queue_after, 0.0);
        }
        for &lat in &result.latencies["v"] {
            assert!(lat < 1.0);
        }
        assert_eq!(result.totals["v"].abandoned, 0.0);
    }

    #[test]
    fn conservation_holds() {
        let arrivals: Vec<u64> = (0..50).map(|i| (i * 37) % 900).collect();
        let result = run(&single_volume(PolicyConfig::Static { cap: 400.0 }, &arrivals)).unwrap();
        let t = &result.totals["v"];
        assert!(
            (t.arrivals - (t.granted + t.abandoned + t.final_queue)).abs() < 1e-6,
            "conservation violated"
        );
    }

    #[test]
    fn conservation_with_abandonment() {
        let arrivals: Vec<u64> = (0..60).map(|i| if i % 7 == 0 { 2000 } else { 100 }).collect();
        let mut input = single_volume(PolicyConfig::Static { cap: 300.0 }, &arrivals);
        input.abandonment_threshold = Some(1.0);
        let result = run(&input).unwrap();
        let t = &result.totals["v"];
        assert!(t.abandoned > 0.0);
        assert!((t.arrivals - (t.granted + t.abandoned + t.final_queue)).abs() < 1e-6);
    }

    #[test]
    fn abandonment_disabled_means_zero() {
        let arrivals = vec![5000u64; 10];
        let result = run(&single_volume(PolicyConfig::Static { cap: 300.0 }, &arrivals)).unwrap();
        assert_eq!(result.totals["v"].abandoned, 0.0);
    }

    #[test]
    fn determinism() {
        let arrivals: Vec<u64> = (0..200).map(|i| (i * 131) % 1500).collect();
        let input = single_volume(
            PolicyConfig::Gstates {
                baseline_iops: 300.0,
                num_levels: 4,
                promote_threshold_factor: 0.95,
                util_threshold: 0.8,
                pool_mode: false,
                contention: ContentionStrategy::Efficiency,
            },
            &arrivals,
        );
        let a = run(&input).unwrap();
        let b = run(&input).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn gear_ledger_covers_horizon() {
        let arrivals: Vec<u64> = (0..100).map(|i| if i % 10 < 3 { 2000 } else { 200 }).collect();
        let input = single_volume(
            PolicyConfig::Gstates {
                baseline_iops: 600.0,
                num_levels: 4,
                promote_threshold_factor: 0.95,
                util_threshold: 0.8,
                pool_mode: false,
                contention: ContentionStrategy::Efficiency,
            },
            &arrivals,
        );
        let result = run(&input).unwrap();
        assert!((result.ledgers["v"].total_duration() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_volume_rejected() {
        let mut input = single_volume(PolicyConfig::Unlimited, &[1]);
        input.volumes.push(input.volumes[0].clone());
        assert!(matches!(run(&input), Err(EngineError::DuplicateVolume(_))));
    }
}
