//! Python bindings over the simulator core. Scenario I/O crosses the
//! boundary as JSON strings; small stateful pieces (gear tables, credit
//! buckets) are wrapped directly.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gearsim::policy;
use gearsim::report;
use gearsim::scenario;
use gearsim::trace;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Gear ladder: cap(level) = baseline * 2^level.
#[pyclass]
#[derive(Clone)]
struct GearTable {
    inner: policy::GearTable,
}

#[pymethods]
impl GearTable {
    #[new]
    #[pyo3(signature = (baseline_iops, num_levels = 4))]
    fn new(baseline_iops: f64, num_levels: usize) -> PyResult<Self> {
        Ok(GearTable {
            inner: policy::build_gears(baseline_iops, num_levels).map_err(value_err)?,
        })
    }

    fn cap(&self, level: usize) -> f64 {
        self.inner.cap(level)
    }

    fn caps(&self) -> Vec<f64> {
        self.inner.caps()
    }

    #[getter]
    fn top_level(&self) -> usize {
        self.inner.top_level()
    }

    fn __repr__(&self) -> String {
        format!(
            "GearTable(baseline_iops={}, num_levels={})",
            self.inner.baseline_iops, self.inner.num_levels
        )
    }
}

/// Credit-based burst allowance with accrual below baseline.
#[pyclass]
struct CreditBucket {
    inner: policy::CreditState,
}

#[pymethods]
impl CreditBucket {
    #[new]
    #[pyo3(signature = (baseline_iops, burst_iops = policy::DEFAULT_BURST_IOPS, max_balance = policy::DEFAULT_MAX_BALANCE, balance = 0.0))]
    fn new(baseline_iops: f64, burst_iops: f64, max_balance: f64, balance: f64) -> Self {
        CreditBucket {
            inner: policy::CreditState {
                balance,
                max_balance,
                baseline_iops,
                burst_iops,
            },
        }
    }

    #[getter]
    fn balance(&self) -> f64 {
        self.inner.balance
    }

    fn allowance(&self) -> f64 {
        self.inner.allowance()
    }

    fn settle(&mut self, used: f64) {
        self.inner = self.inner.settle(used);
    }
}

/// Parse trace text into (timestamp_us, volume_id, op, offset, size) tuples.
#[pyfunction]
fn parse_trace(text: &str) -> PyResult<Vec<(u64, String, String, u64, u64)>> {
    let records = trace::parse_trace_str(text).map_err(value_err)?;
    Ok(records
        .into_iter()
        .map(|r| {
            (
                r.timestamp_us,
                r.volume_id,
                r.op.as_str().to_string(),
                r.offset,
                r.size,
            )
        })
        .collect())
}

/// Per-second read/write/total request counts of a trace.
#[pyfunction]
#[pyo3(signature = (text, horizon_secs = None))]
fn iops_series(text: &str, horizon_secs: Option<u64>) -> PyResult<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    let records = trace::parse_trace_str(text).map_err(value_err)?;
    let horizon = horizon_secs.unwrap_or_else(|| gearsim::engine::records_horizon(&records));
    let series = trace::bin_iops(&records, horizon).map_err(value_err)?;
    let total = series.total();
    Ok((series.read, series.write, total))
}

/// Nearest-rank percentile of a sample.
#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> PyResult<f64> {
    trace::nearest_rank(&values, p).map_err(value_err)
}

/// Generate a phased fixed-rate workload as trace text. Each phase is a
/// dict with duration_secs, target_iops and optional read_fraction,
/// request_size.
#[pyfunction]
#[pyo3(signature = (volume_id, phases_json, seed = 0))]
fn synthesize(volume_id: &str, phases_json: &str, seed: u64) -> PyResult<String> {
    let phases: Vec<trace::SyntheticPhaseSpec> =
        serde_json::from_str(phases_json).map_err(value_err)?;
    if phases.is_empty() {
        return Err(value_err("at least one phase required"));
    }
    Ok(trace::format_trace(&trace::generate_synthetic(
        volume_id, &phases, seed,
    )))
}

/// Device load metric: max of the IOPS-normalized and bandwidth-normalized
/// totals across read and write channels.
#[pyfunction]
fn storage_util(
    riops: f64,
    wiops: f64,
    rbw: f64,
    wbw: f64,
    max_read_iops: f64,
    max_write_iops: f64,
    max_read_bw: f64,
    max_write_bw: f64,
) -> f64 {
    gearsim::device::storage_util(
        &gearsim::device::DeviceCounters {
            riops,
            wiops,
            rbw,
            wbw,
        },
        &gearsim::device::DeviceProfile {
            max_read_iops,
            max_write_iops,
            max_read_bw,
            max_write_bw,
        },
    )
}

fn load_from_json(config_json: &str) -> PyResult<scenario::Scenario> {
    let mut s: scenario::Scenario = serde_json::from_str(config_json).map_err(value_err)?;
    s.normalize();
    Ok(s)
}

/// Run a scenario (JSON text) and return the summary document as JSON.
/// Relative trace paths resolve against base_dir.
#[pyfunction]
#[pyo3(signature = (config_json, base_dir = "."))]
fn run_scenario(config_json: &str, base_dir: &str) -> PyResult<String> {
    let s = load_from_json(config_json)?;
    let base = Path::new(base_dir);
    s.validate(base).map_err(value_err)?;
    let bundle = report::replay(&s, base).map_err(runtime_err)?;
    serde_json::to_string_pretty(&bundle).map_err(runtime_err)
}

/// Run a scenario once per named policy (all of them when names is empty)
/// and return the comparison summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, policy_names = vec![], base_dir = "."))]
fn compare_policies(
    config_json: &str,
    policy_names: Vec<String>,
    base_dir: &str,
) -> PyResult<String> {
    let s = load_from_json(config_json)?;
    let base = Path::new(base_dir);
    s.validate(base).map_err(value_err)?;
    let bundle = report::compare_policies(&s, &policy_names, base).map_err(runtime_err)?;
    serde_json::to_string_pretty(&bundle).map_err(runtime_err)
}

#[pymodule]
fn gearsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GearTable>()?;
    m.add_class::<CreditBucket>()?;
    m.add_function(wrap_pyfunction!(parse_trace, m)?)?;
    m.add_function(wrap_pyfunction!(iops_series, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(storage_util, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(compare_policies, m)?)?;
    Ok(())
}
