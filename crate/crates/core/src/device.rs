//! Shared physical volume model: capability profile, per-tick consumption
//! counters, real-time utilization, and the fluid sharing rule applied when
//! the sum of per-volume caps exceeds device capacity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Offline-measured maxima of the physical volume backing all logical
/// volumes. All four limits must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub max_read_iops: f64,
    pub max_write_iops: f64,
    pub max_read_bw: f64,
    pub max_write_bw: f64,
}

impl DeviceProfile {
    /// A profile large enough that allocation never binds; used when a
    /// scenario omits the device section to isolate policy effects.
    pub fn unbounded() -> Self {
        DeviceProfile {
            max_read_iops: 1e12,
            max_write_iops: 1e12,
            max_read_bw: 1e18,
            max_write_bw: 1e18,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_read_iops", self.max_read_iops),
            ("max_write_iops", self.max_write_iops),
            ("max_read_bw", self.max_read_bw),
            ("max_write_bw", self.max_write_bw),
        ] {
            if !(v > 0.0) {
                return Err(format!("device.{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// I/O consumed on the device over the last tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DeviceCounters {
    pub riops: f64,
    pub wiops: f64,
    pub rbw: f64,
    pub wbw: f64,
}

/// Device utilization: the larger of additive IOPS utilization and additive
/// bandwidth utilization. Not clamped; can exceed 1 transiently.
pub fn storage_util(counters: &DeviceCounters, profile: &DeviceProfile) -> f64 {
    let iops_util =
        counters.riops / profile.max_read_iops + counters.wiops / profile.max_write_iops;
    let bw_util = counters.rbw / profile.max_read_bw + counters.wbw / profile.max_write_bw;
    iops_util.max(bw_util)
}

/// Effective IOPS capacity for a tick with the given read demand fraction:
/// the harmonic blend 1 / (fr/MaxRIOPS + fw/MaxWIOPS), which saturates
/// exactly when the additive IOPS utilization reaches 1.
pub fn effective_iops_capacity(profile: &DeviceProfile, read_fraction: f64) -> f64 {
    let fr = read_fraction.clamp(0.0, 1.0);
    let fw = 1.0 - fr;
    1.0 / (fr / profile.max_read_iops + fw / profile.max_write_iops)
}

/// Fluid allocation of device capacity across volumes. Each volume wants
/// min(demand, cap); if the total fits within capacity everyone gets their
/// want, otherwise grants scale proportionally so the sum equals capacity.
pub fn device_allocate(
    demands: &BTreeMap<String, f64>,
    caps: &BTreeMap<String, f64>,
    capacity: f64,
) -> BTreeMap<String, f64> {
    let wants: BTreeMap<String, f64> = demands
        .iter()
        .map(|(id, &d)| {
            let cap = caps.get(id).copied().unwrap_or(f64::INFINITY);
            (id.clone(), d.min(cap).max(0.0))
        })
        .collect();
    let total: f64 = wants.values().sum();
    if total <= capacity || total == 0.0 {
        return wants;
    }
    let scale = capacity / total;
    wants.into_iter().map(|(id, w)| (id, w * scale)).collect()
}
