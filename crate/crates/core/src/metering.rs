//! Per-gear duration metering and bill computation.
//!
//! QoS charges accrue per gear as rate(level) * duration, where
//! rate(level) = per_iops_rate * cap(level), prorated against a 30-day
//! month. Capacity charges are per GB-month. All accumulation is full
//! precision; rounding to cents happens only at presentation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::GearTable;

pub const SECONDS_PER_MONTH: f64 = 2_592_000.0;
pub const TICKS_PER_HOUR: u64 = 3600;

fn default_seconds_per_month() -> f64 {
    SECONDS_PER_MONTH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceBook {
    /// Currency per GB-month of provisioned space.
    pub per_gb_rate: f64,
    /// Currency per provisioned-IOPS-month.
    pub per_iops_rate: f64,
    #[serde(default = "default_seconds_per_month")]
    pub seconds_per_month: f64,
}

impl Default for PriceBook {
    fn default() -> Self {
        // io1-style rates
        PriceBook {
            per_gb_rate: 0.125,
            per_iops_rate: 0.065,
            seconds_per_month: SECONDS_PER_MONTH,
        }
    }
}

/// Active seconds per gear level for one volume.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeterLedger {
    pub durations: BTreeMap<usize, f64>,
}

impl MeterLedger {
    pub fn add(&mut self, level: usize, seconds: f64) {
        *self.durations.entry(level).or_insert(0.0) += seconds;
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.values().sum()
    }
}

/// Capacity charge for a volume over the given period.
pub fn capacity_bill(vol_size_gb: f64, book: &PriceBook, period_secs: f64) -> f64 {
    book.per_gb_rate * vol_size_gb * (period_secs / book.seconds_per_month)
}

/// QoS charge of a gear ledger: sum over levels of
/// per_iops_rate * cap(level) * duration / seconds_per_month.
pub fn qos_bill(ledger: &MeterLedger, gears: &GearTable, book: &PriceBook) -> f64 {
    ledger
        .durations
        .iter()
        .map(|(&level, &secs)| book.per_iops_rate * gears.cap(level) * secs / book.seconds_per_month)
        .sum()
}

/// QoS charge of a fixed reservation held for `duration_secs`; used for
/// static caps and leaky-bucket baselines (credits are free).
pub fn qos_bill_flat(cap_iops: f64, duration_secs: f64, book: &PriceBook) -> f64 {
    book.per_iops_rate * cap_iops * duration_secs / book.seconds_per_month
}

pub fn total_bill(capacity: f64, qos: f64) -> f64 {
    capacity + qos
}

/// Per-hour QoS charges from the per-tick reservation series (the active
/// cap each second). A partial final hour is billed for its actual length.
pub fn hourly_bills(reserved_iops_per_tick: &[f64], book: &PriceBook) -> Vec<f64> {
    reserved_iops_per_tick
        .chunks(TICKS_PER_HOUR as usize)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&cap| book.per_iops_rate * cap / book.seconds_per_month)
                .sum()
        })
        .collect()
}

/// Round to whole cents for presentation.
pub fn round_cents(amount: f64) -> f64 {
    (amount * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::build_gears;

    #[test]
    fn capacity_bill_full_month() {
        let book = PriceBook::default();
        assert_eq!(
            round_cents(capacity_bill(100.0, &book, SECONDS_PER_MONTH)),
            12.50
        );
    }

    #[test]
    fn capacity_bill_zero_size() {
        assert_eq!(capacity_bill(0.0, &PriceBook::default(), SECONDS_PER_MONTH), 0.0);
    }

    #[test]
    fn capacity_bill_prorates_linearly() {
        let book = PriceBook::default();
        assert_eq!(
            round_cents(capacity_bill(100.0, &book, SECONDS_PER_MONTH / 2.0)),
            6.25
        );
    }

    #[test]
    fn qos_bill_static_full_month() {
        let book = PriceBook::default();
        assert_eq!(
            round_cents(qos_bill_flat(5000.0, SECONDS_PER_MONTH, &book)),
            325.00
        );
    }

    #[test]
    fn qos_bill_empty_ledger() {
        let gears = build_gears(600.0, 4).unwrap();
        assert_eq!(qos_bill(&MeterLedger::default(), &gears, &PriceBook::default()), 0.0);
    }

    #[test]
    fn qos_bill_two_gear_ledger() {
        let gears = build_gears(600.0, 4).unwrap();
        let mut ledger = MeterLedger::default();
        ledger.add(0, 1800.0);
        ledger.add(1, 1800.0);
        let bill = qos_bill(&ledger, &gears, &PriceBook::default());
        let expected = 0.065 * (600.0 * 1800.0 + 1200.0 * 1800.0) / 2_592_000.0;
        assert!((bill - expected).abs() < 1e-12);
        assert!((bill - 0.08125).abs() < 1e-9);
    }

    #[test]
    fn total_bill_sums() {
        assert_eq!(total_bill(12.50, 325.00), 337.50);
        assert_eq!(total_bill(0.0, 0.0), 0.0);
        assert_eq!(total_bill(12.5, 0.0), 12.5);
    }

    #[test]
    fn hourly_bill_static_hour() {
        let book = PriceBook::default();
        let bills = hourly_bills(&vec![1100.0; 3600], &book);
        assert_eq!(bills.len(), 1);
        let expected = 0.065 * 1100.0 * 3600.0 / 2_592_000.0;
        assert!((bills[0] - expected).abs() < 1e-12);
        assert!((bills[0] - 0.0993).abs() < 1e-4);
    }

    #[test]
    fn hourly_bill_gear_at_baseline_matches_static() {
        let book = PriceBook::default();
        let gear_series = vec![600.0; 3600];
        let static_series = vec![600.0; 3600];
        assert_eq!(hourly_bills(&gear_series, &book), hourly_bills(&static_series, &book));
    }

    #[test]
    fn ledger_equivalence_single_level() {
        // a gear ledger entirely at level L bills like a static cap(L)
        let gears = build_gears(600.0, 4).unwrap();
        let book = PriceBook::default();
        let mut ledger = MeterLedger::default();
        ledger.add(2, 7200.0);
        let a = qos_bill(&ledger, &gears, &book);
        let b = qos_bill_flat(2400.0, 7200.0, &book);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bill_monotone_in_duration() {
        let gears = build_gears(600.0, 4).unwrap();
        let book = PriceBook::default();
        let mut ledger = MeterLedger::default();
        ledger.add(1, 100.0);
        let before = qos_bill(&ledger, &gears, &book);
        ledger.add(3, 50.0);
        assert!(qos_bill(&ledger, &gears, &book) > before);
    }
}
