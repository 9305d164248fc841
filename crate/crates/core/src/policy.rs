//! Per-volume rate-control policies: the gear ladder with its
//! promote/demote decision logic, leaky-bucket I/O credits, static caps,
//! and promotion-contention resolution under a shared reservation pool.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("gear table requires baseline_iops >= 1 and num_levels >= 1, got ({baseline_iops}, {num_levels})")]
    InvalidGearTable { baseline_iops: f64, num_levels: usize },
    #[error("cannot {action} at level {level} of {num_levels}")]
    InvalidTransition {
        action: &'static str,
        level: usize,
        num_levels: usize,
    },
}

/// Ordered IOPS caps G0..Gn-1 with cap(i) = baseline * 2^i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GearTable {
    pub baseline_iops: f64,
    pub num_levels: usize,
}

impl GearTable {
    pub fn new(baseline_iops: f64, num_levels: usize) -> Result<Self, PolicyError> {
        if !(baseline_iops >= 1.0) || num_levels < 1 {
            return Err(PolicyError::InvalidGearTable {
                baseline_iops,
                num_levels,
            });
        }
        Ok(GearTable {
            baseline_iops,
            num_levels,
        })
    }

    pub fn cap(&self, level: usize) -> f64 {
        debug_assert!(level < self.num_levels);
        self.baseline_iops * (1u64 << level) as f64
    }

    pub fn top_level(&self) -> usize {
        self.num_levels - 1
    }

    pub fn caps(&self) -> Vec<f64> {
        (0..self.num_levels).map(|l| self.cap(l)).collect()
    }
}

/// Build the doubling gear ladder.
pub fn build_gears(baseline_iops: f64, num_levels: usize) -> Result<GearTable, PolicyError> {
    GearTable::new(baseline_iops, num_levels)
}

/// Control state of a gear-driven volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GStateState {
    pub level: usize,
    pub promote_threshold_factor: f64,
    pub util_threshold: f64,
}

impl GStateState {
    pub fn new(promote_threshold_factor: f64, util_threshold: f64) -> Self {
        GStateState {
            level: 0,
            promote_threshold_factor,
            util_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneDecision {
    Promote,
    Demote,
    None,
}

/// Decide a gear transition from the monitored IOPS of the last tick and
/// the device utilization. Promote when the observed rate crosses the
/// trigger fraction of the current cap, there is a higher gear, and the
/// device has headroom; demote when the rate falls under the next lower
/// gear's cap.
pub fn tune_judge(
    state: &GStateState,
    gears: &GearTable,
    observed_iops: f64,
    device_util: f64,
) -> TuneDecision {
    let cap = gears.cap(state.level);
    if observed_iops > cap * state.promote_threshold_factor
        && state.level < gears.top_level()
        && device_util < state.util_threshold
    {
        return TuneDecision::Promote;
    }
    if state.level > 0 && observed_iops < gears.cap(state.level - 1) {
        return TuneDecision::Demote;
    }
    TuneDecision::None
}

/// Apply a gear transition: promote moves one level up (cap doubles),
/// demote one level down (cap halves). A transition invalid for the current
/// level signals a judge/execute mismatch.
pub fn tune_execute(
    state: &GStateState,
    decision: TuneDecision,
    gears: &GearTable,
) -> Result<(GStateState, f64), PolicyError> {
    let mut next = *state;
    match decision {
        TuneDecision::Promote => {
            if state.level >= gears.top_level() {
                return Err(PolicyError::InvalidTransition {
                    action: "promote",
                    level: state.level,
                    num_levels: gears.num_levels,
                });
            }
            next.level += 1;
        }
        TuneDecision::Demote => {
            if state.level == 0 {
                return Err(PolicyError::InvalidTransition {
                    action: "demote",
                    level: state.level,
                    num_levels: gears.num_levels,
                });
            }
            next.level -= 1;
        }
        TuneDecision::None => {}
    }
    let cap = gears.cap(next.level);
    Ok((next, cap))
}

/// Leaky-bucket credit state. One credit buys one I/O above baseline;
/// unused baseline accrues as balance up to `max_balance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditState {
    pub balance: f64,
    pub max_balance: f64,
    pub baseline_iops: f64,
    pub burst_iops: f64,
}

impl CreditState {
    /// The rate the bucket allows this second: baseline plus whatever part
    /// of the balance fits under the burst ceiling.
    pub fn allowance(&self) -> f64 {
        self.baseline_iops + self.balance.min(self.burst_iops - self.baseline_iops)
    }

    /// Account one second of actual consumption `used` against the bucket.
    pub fn settle(&self, used: f64) -> CreditState {
        let mut next = *self;
        if used < self.baseline_iops {
            next.balance = (self.balance + (self.baseline_iops - used)).min(self.max_balance);
        } else {
            next.balance = (self.balance - (used - self.baseline_iops)).max(0.0);
        }
        next
    }
}

/// One second of leaky-bucket arbitration: returns the allowed rate for the
/// given demand and the updated credit state.
pub fn credit_step(state: &CreditState, demand: f64) -> (f64, CreditState) {
    let allowed = demand.min(state.allowance());
    (allowed, state.settle(allowed))
}

/// Shared-reservation-pool admission: a promotion may proceed only when the
/// unused pool reservation covers the promotion delta. Equality admits.
pub fn pool_admit(pool_unused_iops: f64, promotion_delta: f64) -> bool {
    pool_unused_iops >= promotion_delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentionCandidate {
    pub volume_id: String,
    pub promotion_delta: f64,
    pub unmet_demand: f64,
}

/// Efficiency-first promotion contention: greedily pick candidates in
/// descending order of expected utilization gain min(unmet, delta),
/// skipping any whose delta no longer fits the remaining headroom. Ties
/// break by ascending volume id for determinism.
pub fn resolve_contention(
    candidates: &[ContentionCandidate],
    headroom_iops: f64,
) -> BTreeSet<String> {
    let mut order: Vec<&ContentionCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        let ga = a.unmet_demand.min(a.promotion_delta);
        let gb = b.unmet_demand.min(b.promotion_delta);
        gb.partial_cmp(&ga)
            .unwrap()
            .then_with(|| a.volume_id.cmp(&b.volume_id))
    });
    let mut remaining = headroom_iops;
    let mut chosen = BTreeSet::new();
    for cand in order {
        if cand.promotion_delta <= remaining {
            remaining -= cand.promotion_delta;
            chosen.insert(cand.volume_id.clone());
        }
    }
    chosen
}

/// Fairness-first alternative: lowest current gear level is promoted first.
pub fn resolve_contention_fairness(
    candidates: &[(ContentionCandidate, usize)],
    headroom_iops: f64,
) -> BTreeSet<String> {
    let mut order: Vec<&(ContentionCandidate, usize)> = candidates.iter().collect();
    order.sort_by(|(a, la), (b, lb)| la.cmp(lb).then_with(|| a.volume_id.cmp(&b.volume_id)));
    let mut remaining = headroom_iops;
    let mut chosen = BTreeSet::new();
    for (cand, _) in order {
        if cand.promotion_delta <= remaining {
            remaining -= cand.promotion_delta;
            chosen.insert(cand.volume_id.clone());
        }
    }
    chosen
}

/// Which counter drives the control loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoType {
    #[default]
    Total,
    Read,
    Write,
}

/// Contention strategy for shared-pool promotion conflicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentionStrategy {
    #[default]
    Efficiency,
    Fairness,
}

pub const DEFAULT_NUM_LEVELS: usize = 4;
pub const DEFAULT_PROMOTE_FACTOR: f64 = 0.95;
pub const DEFAULT_UTIL_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MAX_BALANCE: f64 = 5.4e6;
pub const DEFAULT_BURST_IOPS: f64 = 3000.0;
pub const CREDITS_PER_GB: f64 = 3.0;

fn default_num_levels() -> usize {
    DEFAULT_NUM_LEVELS
}
fn default_promote_factor() -> f64 {
    DEFAULT_PROMOTE_FACTOR
}
fn default_util_threshold() -> f64 {
    DEFAULT_UTIL_THRESHOLD
}
fn default_max_balance() -> f64 {
    DEFAULT_MAX_BALANCE
}
fn default_burst_iops() -> f64 {
    DEFAULT_BURST_IOPS
}

/// Scenario-facing policy selection with kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Static {
        cap: f64,
    },
    LeakyBucket {
        /// Defaults to 3 IOPS per GB of volume size when omitted.
        #[serde(skip_serializing_if = "Option::is_none")]
        baseline_iops: Option<f64>,
        #[serde(default = "default_burst_iops")]
        burst_iops: f64,
        #[serde(default = "default_max_balance")]
        max_balance: f64,
        #[serde(default)]
        initial_balance: f64,
    },
    Gstates {
        baseline_iops: f64,
        #[serde(default = "default_num_levels")]
        num_levels: usize,
        #[serde(default = "default_promote_factor")]
        promote_threshold_factor: f64,
        #[serde(default = "default_util_threshold")]
        util_threshold: f64,
        #[serde(default)]
        pool_mode: bool,
        #[serde(default)]
        contention: ContentionStrategy,
    },
    Unlimited,
}

impl PolicyConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PolicyConfig::Static { .. } => "static",
            PolicyConfig::LeakyBucket { .. } => "leaky_bucket",
            PolicyConfig::Gstates { .. } => "gstates",
            PolicyConfig::Unlimited => "unlimited",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gear_tables_from_workload_configs() {
        assert_eq!(
            build_gears(600.0, 4).unwrap().caps(),
            vec![600.0, 1200.0, 2400.0, 4800.0]
        );
        assert_eq!(
            build_gears(1300.0, 4).unwrap().caps(),
            vec![1300.0, 2600.0, 5200.0, 10400.0]
        );
        assert_eq!(build_gears(100.0, 1).unwrap().caps(), vec![100.0]);
    }

    #[test]
    fn gear_table_rejects_bad_inputs() {
        assert!(build_gears(0.0, 4).is_err());
        assert!(build_gears(-5.0, 4).is_err());
        assert!(build_gears(600.0, 0).is_err());
    }

    fn gstate(level: usize) -> GStateState {
        GStateState {
            level,
            promote_threshold_factor: DEFAULT_PROMOTE_FACTOR,
            util_threshold: 0.8,
        }
    }

    #[test]
    fn judge_promotes_near_cap_with_headroom() {
        let gears = build_gears(600.0, 4).unwrap();
        // level 1 cap 1200, trigger 1140
        let d = tune_judge(&gstate(1), &gears, 1150.0, 0.4);
        assert_eq!(d, TuneDecision::Promote);
    }

    #[test]
    fn judge_demotes_below_lower_gear() {
        let gears = build_gears(600.0, 4).unwrap();
        let d = tune_judge(&gstate(2), &gears, 1000.0, 0.4);
        assert_eq!(d, TuneDecision::Demote);
    }

    #[test]
    fn judge_floor_case() {
        let gears = build_gears(600.0, 4).unwrap();
        assert_eq!(tune_judge(&gstate(0), &gears, 100.0, 0.1), TuneDecision::None);
    }

    #[test]
    fn judge_never_promotes_when_saturated() {
        let gears = build_gears(600.0, 4).unwrap();
        assert_eq!(
            tune_judge(&gstate(1), &gears, 1199.0, 0.85),
            TuneDecision::None
        );
        assert_eq!(
            tune_judge(&gstate(1), &gears, 1199.0, 0.8),
            TuneDecision::None
        );
    }

    #[test]
    fn judge_no_promote_above_top() {
        let gears = build_gears(600.0, 4).unwrap();
        assert_eq!(
            tune_judge(&gstate(3), &gears, 4800.0, 0.1),
            TuneDecision::None
        );
    }

    #[test]
    fn execute_promote_demote() {
        let gears = build_gears(600.0, 4).unwrap();
        let (s, cap) = tune_execute(&gstate(1), TuneDecision::Promote, &gears).unwrap();
        assert_eq!((s.level, cap), (2, 2400.0));
        let (s, cap) = tune_execute(&gstate(2), TuneDecision::Demote, &gears).unwrap();
        assert_eq!((s.level, cap), (1, 1200.0));
    }

    #[test]
    fn execute_guards_boundaries() {
        let gears = build_gears(600.0, 4).unwrap();
        assert!(tune_execute(&gstate(3), TuneDecision::Promote, &gears).is_err());
        assert!(tune_execute(&gstate(0), TuneDecision::Demote, &gears).is_err());
    }

    fn credit(balance: f64) -> CreditState {
        CreditState {
            balance,
            max_balance: 5.4e6,
            baseline_iops: 300.0,
            burst_iops: 3000.0,
        }
    }

    #[test]
    fn credit_accrues_unused_baseline() {
        let mut state = credit(0.0);
        for _ in 0..10 {
            let (allowed, next) = credit_step(&state, 0.0);
            assert_eq!(allowed, 0.0);
            state = next;
        }
        assert_eq!(state.balance, 3000.0);
    }

    #[test]
    fn credit_burst_drains_balance() {
        let state = credit(2700.0);
        let (allowed, next) = credit_step(&state, 3000.0);
        assert_eq!(allowed, 3000.0);
        assert_eq!(next.balance, 0.0);
    }

    #[test]
    fn credit_balance_caps_at_max() {
        let mut state = credit(0.0);
        state.max_balance = 100.0;
        state.balance = 100.0;
        let (_, next) = credit_step(&state, 0.0);
        assert_eq!(next.balance, 100.0);
    }

    #[test]
    fn pool_admit_boundary() {
        assert!(pool_admit(2000.0, 1200.0));
        assert!(!pool_admit(1000.0, 1200.0));
        assert!(pool_admit(1200.0, 1200.0));
    }

    fn cand(id: &str, delta: f64, unmet: f64) -> ContentionCandidate {
        ContentionCandidate {
            volume_id: id.to_string(),
            promotion_delta: delta,
            unmet_demand: unmet,
        }
    }

    #[test]
    fn contention_single_candidate() {
        let chosen = resolve_contention(&[cand("a", 600.0, 600.0)], 1000.0);
        assert!(chosen.contains("a"));
    }

    #[test]
    fn contention_prefers_larger_gain() {
        let chosen = resolve_contention(
            &[cand("a", 600.0, 600.0), cand("b", 1200.0, 1200.0)],
            1200.0,
        );
        assert_eq!(chosen.into_iter().collect::<Vec<_>>(), vec!["b"]);
    }

    #[test]
    fn contention_no_headroom() {
        let chosen = resolve_contention(&[cand("a", 600.0, 600.0)], 0.0);
        assert!(chosen.is_empty());
    }

    #[test]
    fn contention_sum_of_deltas_bounded() {
        let cands = vec![
            cand("a", 600.0, 900.0),
            cand("b", 1200.0, 400.0),
            cand("c", 300.0, 300.0),
        ];
        let chosen = resolve_contention(&cands, 1000.0);
        let used: f64 = cands
            .iter()
            .filter(|c| chosen.contains(&c.volume_id))
            .map(|c| c.promotion_delta)
            .sum();
        assert!(used <= 1000.0);
    }

    #[test]
    fn fairness_prefers_lowest_level() {
        let cands = vec![(cand("a", 600.0, 600.0), 2), (cand("b", 600.0, 100.0), 0)];
        let chosen = resolve_contention_fairness(&cands, 600.0);
        assert_eq!(chosen.into_iter().collect::<Vec<_>>(), vec!["b"]);
    }
}
