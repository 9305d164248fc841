//! Assembly of evaluation tables from run telemetry and their emission as
//! machine-readable CSV/JSON reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, EngineError, SimulationResult, VolumeTotals};
use crate::metering::{capacity_bill, hourly_bills, total_bill, PriceBook, TICKS_PER_HOUR};
use crate::scenario::{prepare, Scenario, ScenarioError};
use crate::trace::{bin_iops, multiplex_stats, nearest_rank, IopsSeries, MultiplexReport};

pub const IOPS_PERCENTILES: [f64; 6] = [50.0, 85.0, 90.0, 95.0, 99.0, 99.9];
pub const LATENCY_PERCENTILES: [f64; 3] = [50.0, 90.0, 99.0];
pub const MULTIPLEX_PERCENTILES: [f64; 4] = [90.0, 95.0, 99.0, 99.9];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown policy name '{0}' (not in the scenario's policies map)")]
    UnknownPolicy(String),
    #[error("compared runs diverged: arrivals differ at tick {tick} for volume '{volume}'")]
    ArrivalMismatch { tick: u64, volume: String },
    #[error("cannot write report '{path}': {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// Everything needed to print one policy's rows in the comparison tables.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeReport {
    /// Nearest-rank percentiles of per-second granted throughput.
    pub granted_percentiles: Vec<f64>,
    /// Nearest-rank percentiles of per-request schedule latency; empty when
    /// the run produced no completed requests.
    pub latency_percentiles: Vec<f64>,
    /// Gear-level active seconds per hour (gear volumes only).
    pub gear_hours: Vec<BTreeMap<usize, f64>>,
    pub hourly_qos_bills: Vec<f64>,
    pub capacity_bill: f64,
    pub qos_bill: f64,
    pub total_bill: f64,
    pub totals: VolumeTotals,
    /// Fraction of ticks whose demand was fully served (no carried queue).
    pub satisfied_ratio: f64,
    /// Fraction of arrivals ultimately granted.
    pub served_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyReport {
    pub volumes: BTreeMap<String, VolumeReport>,
    pub utilization: Vec<f64>,
    pub aggregate_served_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub scenario_hash: String,
    pub seed: u64,
    pub iops_percentiles: Vec<f64>,
    pub latency_percentile_points: Vec<f64>,
    /// Percentiles of per-second arrivals, shared by all compared runs.
    pub arrival_percentiles: BTreeMap<String, Vec<u64>>,
    pub policies: BTreeMap<String, PolicyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplex: Option<MultiplexReport>,
    #[serde(skip)]
    pub report_selection: Option<Vec<String>>,
    #[serde(skip)]
    pub normalized_scenario: String,
}

fn percentiles_f64(values: &[f64], points: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    points
        .iter()
        .map(|&p| nearest_rank(values, p).expect("non-empty"))
        .collect()
}

fn volume_report(
    result: &SimulationResult,
    id: &str,
    size_gb: f64,
    book: &PriceBook,
) -> VolumeReport {
    let granted: Vec<f64> = result
        .ticks
        .iter()
        .map(|t| t.volumes[id].granted)
        .collect();
    let granted_percentiles = percentiles_f64(&granted, &IOPS_PERCENTILES);

    let mut latencies = result.latencies[id].clone();
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let latency_percentiles = percentiles_f64(&latencies, &LATENCY_PERCENTILES);

    let mut gear_hours = Vec::new();
    if result.ledgers.contains_key(id) {
        for chunk in result
            .ticks
            .chunks(TICKS_PER_HOUR as usize)
        {
            let mut hour: BTreeMap<usize, f64> = BTreeMap::new();
            for t in chunk {
                if let Some(level) = t.volumes[id].gear_level {
                    *hour.entry(level).or_insert(0.0) += 1.0;
                }
            }
            gear_hours.push(hour);
        }
    }

    let reserved = &result.reserved_series[id];
    let hourly_qos_bills = hourly_bills(reserved, book);
    let qos: f64 = hourly_qos_bills.iter().sum();
    let capacity = capacity_bill(size_gb, book, result.horizon as f64);
    let totals = result.totals[id];

    let satisfied = result
        .ticks
        .iter()
        .filter(|t| t.volumes[id].queue_after <= 1e-6)
        .count();
    let satisfied_ratio = if result.ticks.is_empty() {
        1.0
    } else {
        satisfied as f64 / result.ticks.len() as f64
    };
    let served_ratio = if totals.arrivals > 0.0 {
        totals.granted / totals.arrivals
    } else {
        1.0
    };

    VolumeReport {
        granted_percentiles,
        latency_percentiles,
        gear_hours,
        hourly_qos_bills,
        capacity_bill: capacity,
        qos_bill: qos,
        total_bill: total_bill(capacity, qos),
        totals,
        satisfied_ratio,
        served_ratio,
    }
}

fn policy_report(scenario: &Scenario, result: &SimulationResult) -> PolicyReport {
    let mut volumes = BTreeMap::new();
    for vol in &scenario.volumes {
        volumes.insert(
            vol.id.clone(),
            volume_report(result, &vol.id, vol.size_gb, &scenario.price_book),
        );
    }
    let utilization = result.ticks.iter().map(|t| t.utilization).collect();
    let arrivals: f64 = volumes.values().map(|v| v.totals.arrivals).sum();
    let granted: f64 = volumes.values().map(|v| v.totals.granted).sum();
    PolicyReport {
        volumes,
        utilization,
        aggregate_served_ratio: if arrivals > 0.0 { granted / arrivals } else { 1.0 },
    }
}

fn arrival_percentiles(
    scenario: &Scenario,
    result: &SimulationResult,
) -> BTreeMap<String, Vec<u64>> {
    let mut out = BTreeMap::new();
    for vol in &scenario.volumes {
        let series: Vec<u64> = result
            .ticks
            .iter()
            .map(|t| t.volumes[&vol.id].arrivals.round() as u64)
            .collect();
        let values = IOPS_PERCENTILES
            .iter()
            .map(|&p| nearest_rank(&series, p).unwrap_or(0))
            .collect();
        out.insert(vol.id.clone(), values);
    }
    out
}

/// Run one scenario as configured and assemble a single-policy bundle.
pub fn replay(scenario: &Scenario, base_dir: &Path) -> Result<ReportBundle, ReportError> {
    let input = prepare(scenario, base_dir)?;
    let result = run(&input)?;
    let mut policies = BTreeMap::new();
    policies.insert("configured".to_string(), policy_report(scenario, &result));
    Ok(ReportBundle {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        iops_percentiles: IOPS_PERCENTILES.to_vec(),
        latency_percentile_points: LATENCY_PERCENTILES.to_vec(),
        arrival_percentiles: arrival_percentiles(scenario, &result),
        policies,
        multiplex: None,
        report_selection: scenario.reports.clone(),
        normalized_scenario: scenario.to_canonical_json(),
    })
}

/// Run the scenario template once per named policy with identical arrivals
/// and align the results into comparison tables.
pub fn compare_policies(
    scenario: &Scenario,
    policy_names: &[String],
    base_dir: &Path,
) -> Result<ReportBundle, ReportError> {
    let names: Vec<String> = if policy_names.is_empty() {
        scenario.policies.keys().cloned().collect()
    } else {
        policy_names.to_vec()
    };

    let mut policies = BTreeMap::new();
    let mut arrivals: Option<BTreeMap<String, Vec<u64>>> = None;
    let mut reference: Option<Vec<(String, Vec<f64>)>> = None;

    for name in &names {
        let policy = scenario
            .policies
            .get(name)
            .ok_or_else(|| ReportError::UnknownPolicy(name.clone()))?;
        let variant = scenario.with_policy(policy);
        let input = prepare(&variant, base_dir)?;
        let result = run(&input)?;

        // cross-policy tables must use identical arrival streams
        let this_arrivals: Vec<(String, Vec<f64>)> = variant
            .volumes
            .iter()
            .map(|v| {
                (
                    v.id.clone(),
                    result.ticks.iter().map(|t| t.volumes[&v.id].arrivals).collect(),
                )
            })
            .collect();
        if let Some(reference) = &reference {
            for ((id, series), (_, ref_series)) in this_arrivals.iter().zip(reference) {
                if let Some(tick) = series.iter().zip(ref_series).position(|(a, b)| a != b) {
                    return Err(ReportError::ArrivalMismatch {
                        tick: tick as u64,
                        volume: id.clone(),
                    });
                }
            }
        } else {
            reference = Some(this_arrivals);
            arrivals = Some(arrival_percentiles(&variant, &result));
        }

        policies.insert(name.clone(), policy_report(&variant, &result));
    }

    Ok(ReportBundle {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        iops_percentiles: IOPS_PERCENTILES.to_vec(),
        latency_percentile_points: LATENCY_PERCENTILES.to_vec(),
        arrival_percentiles: arrivals.unwrap_or_default(),
        policies,
        multiplex: None,
        report_selection: scenario.reports.clone(),
        normalized_scenario: scenario.to_canonical_json(),
    })
}

/// Trace statistics without simulation: per-volume percentiles and the
/// multiplexing table over the scenario's workload sources.
pub fn analyze(scenario: &Scenario, base_dir: &Path) -> Result<MultiplexReport, ReportError> {
    let mut set: BTreeMap<String, IopsSeries> = BTreeMap::new();
    let mut horizon = scenario.horizon_secs.unwrap_or(0);
    let mut all_records = Vec::with_capacity(scenario.volumes.len());
    for i in 0..scenario.volumes.len() {
        let records = crate::scenario::volume_records(scenario, i, base_dir)?;
        if scenario.horizon_secs.is_none() {
            horizon = horizon.max(crate::engine::records_horizon(&records));
        }
        all_records.push(records);
    }
    for (vol, records) in scenario.volumes.iter().zip(&all_records) {
        let series = bin_iops(records, horizon).map_err(|source| {
            ReportError::Scenario(ScenarioError::Trace {
                id: vol.id.clone(),
                source,
            })
        })?;
        set.insert(vol.id.clone(), series);
    }
    multiplex_stats(&set, &MULTIPLEX_PERCENTILES).map_err(|source| {
        ReportError::Scenario(ScenarioError::Trace {
            id: "<aggregate>".to_string(),
            source,
        })
    })
}

fn selected(selection: &Option<Vec<String>>, name: &str) -> bool {
    match selection {
        None => true,
        Some(list) => list.iter().any(|s| s == name),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

pub fn multiplex_csv(report: &MultiplexReport) -> String {
    let mut out = String::from("volume,average");
    for p in &report.percentiles {
        out.push_str(&format!(",p{p}"));
    }
    out.push('\n');
    for (id, row) in &report.per_volume {
        out.push_str(&format!("{id},{}", row.average));
        for v in &row.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    for (label, row) in [("Sum", &report.sum), ("Multiplex", &report.multiplex)] {
        out.push_str(&format!("{label},{}", row.average));
        for v in &row.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Write the bundle's tables into `out_dir`. Reruns produce byte-identical
/// files; column order is stable.
pub fn emit_reports(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let sel = &bundle.report_selection;

    if selected(sel, "iops_distribution") {
        let mut csv = String::from("policy,volume");
        for p in &bundle.iops_percentiles {
            csv.push_str(&format!(",p{p}"));
        }
        csv.push('\n');
        for (vol, values) in &bundle.arrival_percentiles {
            csv.push_str(&format!("arrivals,{vol}"));
            for v in values {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        for (name, policy) in &bundle.policies {
            for (vol, report) in &policy.volumes {
                csv.push_str(&format!("{name},{vol}"));
                for v in &report.granted_percentiles {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
        }
        written.push(write_file(out_dir, "iops_distribution.csv", &csv)?);
    }

    if selected(sel, "latency_percentiles") {
        let mut csv = String::from("policy,volume");
        for p in &bundle.latency_percentile_points {
            csv.push_str(&format!(",p{p}"));
        }
        csv.push('\n');
        for (name, policy) in &bundle.policies {
            for (vol, report) in &policy.volumes {
                csv.push_str(&format!("{name},{vol}"));
                if report.latency_percentiles.is_empty() {
                    for _ in &bundle.latency_percentile_points {
                        csv.push_str(",");
                    }
                } else {
                    for v in &report.latency_percentiles {
                        csv.push_str(&format!(",{v}"));
                    }
                }
                csv.push('\n');
            }
        }
        written.push(write_file(out_dir, "latency_percentiles.csv", &csv)?);
    }

    if selected(sel, "gear_durations") {
        let mut csv = String::from("policy,volume,hour,level,seconds\n");
        for (name, policy) in &bundle.policies {
            for (vol, report) in &policy.volumes {
                for (hour, levels) in report.gear_hours.iter().enumerate() {
                    for (level, secs) in levels {
                        csv.push_str(&format!("{name},{vol},{hour},{level},{secs}\n"));
                    }
                }
            }
        }
        written.push(write_file(out_dir, "gear_durations.csv", &csv)?);
    }

    if selected(sel, "bills") {
        let mut csv = String::from("policy,volume,hour,qos_bill\n");
        for (name, policy) in &bundle.policies {
            for (vol, report) in &policy.volumes {
                for (hour, bill) in report.hourly_qos_bills.iter().enumerate() {
                    csv.push_str(&format!("{name},{vol},{hour},{bill}\n"));
                }
                csv.push_str(&format!("{name},{vol},total,{}\n", report.qos_bill));
            }
        }
        written.push(write_file(out_dir, "bills.csv", &csv)?);
    }

    if selected(sel, "utilization") {
        let mut csv = String::from("policy,tick,utilization\n");
        for (name, policy) in &bundle.policies {
            for (tick, util) in policy.utilization.iter().enumerate() {
                csv.push_str(&format!("{name},{tick},{util}\n"));
            }
        }
        written.push(write_file(out_dir, "utilization.csv", &csv)?);
    }

    if let Some(multiplex) = &bundle.multiplex {
        if selected(sel, "multiplex") {
            written.push(write_file(out_dir, "multiplex.csv", &multiplex_csv(multiplex))?);
        }
    }

    let summary = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    written.push(write_file(out_dir, "summary.json", &format!("{summary}\n"))?);
    written.push(write_file(
        out_dir,
        "normalized_scenario.json",
        &bundle.normalized_scenario,
    )?);

    Ok(written)
}
