//! Block I/O trace parsing, synthetic workload generation, and per-second
//! IOPS statistics.
//!
//! The canonical trace format is UTF-8 CSV, one request per line:
//! `timestamp_usec,volume_id,op,offset_bytes,size_bytes` with
//! `op in {read,write}`. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const USEC_PER_SEC: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("expected 5 fields, found {found} at line {line}")]
    FieldCount { line: usize, found: usize },
    #[error("invalid {field} '{value}' at line {line}")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("unknown op '{op}' at line {line}")]
    UnknownOp { line: usize, op: String },
    #[error("zero request size at line {line}")]
    ZeroSize { line: usize },
    #[error("i/o error reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("record at {timestamp_us}us lies beyond horizon of {horizon}s")]
    BeyondHorizon { timestamp_us: u64, horizon: u64 },
    #[error("cannot take a percentile of an empty series")]
    EmptySeries,
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("series horizons differ: {a} vs {b} bins")]
    HorizonMismatch { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        }
    }
}

/// One block I/O arrival. Timestamps are microseconds since the trace epoch
/// (the first record's timestamp is shifted to zero by the parser).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp_us: u64,
    pub volume_id: String,
    pub op: OpKind,
    pub offset: u64,
    pub size: u64,
}

/// Parse the canonical CSV trace format. Records are returned sorted by
/// timestamp with the epoch shifted so the earliest record is at t=0.
pub fn parse_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(TraceError::FieldCount {
                line: lineno,
                found: fields.len(),
            });
        }
        let timestamp_us: u64 =
            fields[0]
                .trim()
                .parse()
                .map_err(|_| TraceError::InvalidField {
                    line: lineno,
                    field: "timestamp",
                    value: fields[0].trim().to_string(),
                })?;
        let volume_id = fields[1].trim().to_string();
        let op = match fields[2].trim() {
            "read" => OpKind::Read,
            "write" => OpKind::Write,
            other => {
                return Err(TraceError::UnknownOp {
                    line: lineno,
                    op: other.to_string(),
                })
            }
        };
        let offset: u64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| TraceError::InvalidField {
                line: lineno,
                field: "offset",
                value: fields[3].trim().to_string(),
            })?;
        let size: u64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| TraceError::InvalidField {
                line: lineno,
                field: "size",
                value: fields[4].trim().to_string(),
            })?;
        if size == 0 {
            return Err(TraceError::ZeroSize { line: lineno });
        }
        records.push(TraceRecord {
            timestamp_us,
            volume_id,
            op,
            offset,
            size,
        });
    }
    records.sort_by_key(|r| r.timestamp_us);
    if let Some(epoch) = records.first().map(|r| r.timestamp_us) {
        for r in &mut records {
            r.timestamp_us -= epoch;
        }
    }
    Ok(records)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    parse_trace(text.as_bytes())
}

/// Serialize records back to the canonical CSV format.
pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::from("# timestamp_usec,volume_id,op,offset_bytes,size_bytes\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.timestamp_us,
            r.volume_id,
            r.op.as_str(),
            r.offset,
            r.size
        ));
    }
    out
}

/// Per-second request counts split by op type. Bin width is fixed at one
/// second; `total(i) = read[i] + write[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IopsSeries {
    pub read: Vec<u64>,
    pub write: Vec<u64>,
}

impl IopsSeries {
    pub fn horizon(&self) -> usize {
        self.read.len()
    }

    pub fn total(&self) -> Vec<u64> {
        self.read
            .iter()
            .zip(&self.write)
            .map(|(r, w)| r + w)
            .collect()
    }

    pub fn request_count(&self) -> u64 {
        self.read.iter().sum::<u64>() + self.write.iter().sum::<u64>()
    }
}

/// Count records into 1-second bins over the given horizon.
pub fn bin_iops(records: &[TraceRecord], horizon_secs: u64) -> Result<IopsSeries, TraceError> {
    let n = horizon_secs as usize;
    let mut read = vec![0u64; n];
    let mut write = vec![0u64; n];
    for r in records {
        let bin = (r.timestamp_us / USEC_PER_SEC) as usize;
        if bin >= n {
            return Err(TraceError::BeyondHorizon {
                timestamp_us: r.timestamp_us,
                horizon: horizon_secs,
            });
        }
        match r.op {
            OpKind::Read => read[bin] += 1,
            OpKind::Write => write[bin] += 1,
        }
    }
    Ok(IopsSeries { read, write })
}

/// Nearest-rank percentile: sort ascending, take element ceil(p/100*N)-1.
pub fn nearest_rank<T: Copy + PartialOrd>(values: &[T], p: f64) -> Result<T, TraceError> {
    if values.is_empty() {
        return Err(TraceError::EmptySeries);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(TraceError::BadPercentile(p));
    }
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-comparable value"));
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Nearest-rank percentile of a series' per-second totals.
pub fn percentile_iops(series: &IopsSeries, p: f64) -> Result<u64, TraceError> {
    nearest_rank(&series.total(), p)
}

/// One fixed-rate workload phase: exactly `target_iops` arrivals per whole
/// second for `duration_secs` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPhaseSpec {
    pub duration_secs: u64,
    pub target_iops: u64,
    #[serde(default = "default_read_fraction")]
    pub read_fraction: f64,
    #[serde(default = "default_request_size")]
    pub request_size: u64,
}

fn default_read_fraction() -> f64 {
    1.0
}

fn default_request_size() -> u64 {
    4096
}

/// Generate a phased fixed-rate workload. Arrival offsets are spread
/// uniformly within each second by the seeded generator, so the output is
/// deterministic for a fixed seed and bins back to exactly `target_iops`
/// per second.
pub fn generate_synthetic(
    volume_id: &str,
    phases: &[SyntheticPhaseSpec],
    seed: u64,
) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut second = 0u64;
    let mut next_offset = 0u64;
    for phase in phases {
        for _ in 0..phase.duration_secs {
            let n = phase.target_iops as usize;
            let mut arrivals: Vec<(u64, OpKind)> = (0..n)
                .map(|_| {
                    let off = rng.random_range(0..USEC_PER_SEC);
                    let op = if rng.random_bool(phase.read_fraction.clamp(0.0, 1.0)) {
                        OpKind::Read
                    } else {
                        OpKind::Write
                    };
                    (off, op)
                })
                .collect();
            arrivals.sort_by_key(|(off, _)| *off);
            for (off, op) in arrivals {
                records.push(TraceRecord {
                    timestamp_us: second * USEC_PER_SEC + off,
                    volume_id: volume_id.to_string(),
                    op,
                    offset: next_offset,
                    size: phase.request_size,
                });
                next_offset = next_offset.wrapping_add(phase.request_size);
            }
            second += 1;
        }
    }
    records
}

/// Per-volume percentiles, their column sums, and percentiles of the
/// bin-wise aggregate series, in the shape of a multiplexing table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplexReport {
    pub percentiles: Vec<f64>,
    pub per_volume: BTreeMap<String, MultiplexRow>,
    pub sum: MultiplexRow,
    pub multiplex: MultiplexRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplexRow {
    pub average: f64,
    pub values: Vec<u64>,
}

fn series_average(totals: &[u64]) -> f64 {
    if totals.is_empty() {
        return 0.0;
    }
    totals.iter().sum::<u64>() as f64 / totals.len() as f64
}

/// Compare the sum of per-volume percentiles against percentiles of the
/// bin-wise aggregate series. All series must share one horizon.
pub fn multiplex_stats(
    series_set: &BTreeMap<String, IopsSeries>,
    percentiles: &[f64],
) -> Result<MultiplexReport, TraceError> {
    let mut iter = series_set.values();
    let horizon = iter.next().ok_or(TraceError::EmptySeries)?.horizon();
    for s in iter {
        if s.horizon() != horizon {
            return Err(TraceError::HorizonMismatch {
                a: horizon,
                b: s.horizon(),
            });
        }
    }

    let mut per_volume = BTreeMap::new();
    let mut aggregate = vec![0u64; horizon];
    for (id, series) in series_set {
        let totals = series.total();
        for (agg, t) in aggregate.iter_mut().zip(&totals) {
            *agg += t;
        }
        let values = percentiles
            .iter()
            .map(|&p| nearest_rank(&totals, p))
            .collect::<Result<Vec<_>, _>>()?;
        per_volume.insert(
            id.clone(),
            MultiplexRow {
                average: series_average(&totals),
                values,
            },
        );
    }

    let sum_values = (0..percentiles.len())
        .map(|i| per_volume.values().map(|row| row.values[i]).sum())
        .collect();
    let sum_average = per_volume.values().map(|row| row.average).sum();
    let multiplex_values = percentiles
        .iter()
        .map(|&p| nearest_rank(&aggregate, p))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(MultiplexReport {
        percentiles: percentiles.to_vec(),
        per_volume,
        sum: MultiplexRow {
            average: sum_average,
            values: sum_values,
        },
        multiplex: MultiplexRow {
            average: series_average(&aggregate),
            values: multiplex_values,
        },
    })
}

/// Fraction of all requests carried by the busiest `top_fraction` of
/// 1-second bins.
pub fn burst_share(series: &IopsSeries, top_fraction: f64) -> f64 {
    let mut totals = series.total();
    let all: u64 = totals.iter().sum();
    if all == 0 || totals.is_empty() {
        return 0.0;
    }
    totals.sort_unstable_by(|a, b| b.cmp(a));
    let k = ((top_fraction.clamp(0.0, 1.0) * totals.len() as f64).ceil() as usize).min(totals.len());
    totals[..k].iter().sum::<u64>() as f64 / all as f64
}
