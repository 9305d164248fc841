//! Scenario configuration: a JSON file describing the device, the volumes
//! with their policies and workload sources, pricing, and run settings.
//! Loading validates every cross-reference and applies defaults so a
//! normalized scenario round-trips byte-identically.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::DeviceProfile;
use crate::engine::{bins_from_records, records_horizon, PreparedVolume, RunInput};
use crate::metering::PriceBook;
use crate::policy::{IoType, PolicyConfig, CREDITS_PER_GB};
use crate::trace::{generate_synthetic, parse_trace, SyntheticPhaseSpec, TraceError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario '{path}': {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("trace error for volume '{id}': {source}")]
    Trace { id: String, source: TraceError },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbandonmentConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_abandon_threshold")]
    pub threshold_secs: f64,
}

fn default_abandon_threshold() -> f64 {
    1.0
}

impl Default for AbandonmentConfig {
    fn default() -> Self {
        AbandonmentConfig {
            enabled: false,
            threshold_secs: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Path to a canonical CSV trace, relative to the scenario file.
    Trace { path: String },
    /// Inline phased fixed-rate workload.
    Synthetic { phases: Vec<SyntheticPhaseSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeDef {
    pub id: String,
    pub size_gb: f64,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub io_type: IoType,
    pub source: SourceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Run length in seconds; defaults to the longest workload source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_secs: Option<u64>,
    /// Omitted device means an effectively unbounded one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceProfile>,
    #[serde(default = "PriceBook::default")]
    pub price_book: PriceBook,
    #[serde(default)]
    pub abandonment: AbandonmentConfig,
    pub volumes: Vec<VolumeDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_total_iops: Option<f64>,
    /// Named policy variants for `compare`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub policies: BTreeMap<String, PolicyConfig>,
    /// Report selection; None means all reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<String>>,
}

impl Scenario {
    pub fn device_profile(&self) -> DeviceProfile {
        self.device.unwrap_or_else(DeviceProfile::unbounded)
    }

    /// Fill in derivable defaults (leaky-bucket baselines from volume size)
    /// so serialization is canonical.
    pub fn normalize(&mut self) {
        for vol in &mut self.volumes {
            if let PolicyConfig::LeakyBucket { baseline_iops, .. } = &mut vol.policy {
                if baseline_iops.is_none() {
                    *baseline_iops = Some(CREDITS_PER_GB * vol.size_gb);
                }
            }
        }
    }

    pub fn validate(&self, base_dir: &Path) -> Result<(), ScenarioError> {
        if self.volumes.is_empty() {
            return Err(invalid("volumes", "at least one volume is required"));
        }
        if let Some(device) = &self.device {
            device.validate().map_err(|msg| invalid("device", msg))?;
        }
        if self.price_book.per_gb_rate < 0.0 || self.price_book.per_iops_rate < 0.0 {
            return Err(invalid("price_book", "rates must be >= 0"));
        }
        if !(self.price_book.seconds_per_month > 0.0) {
            return Err(invalid("price_book.seconds_per_month", "must be > 0"));
        }
        if self.abandonment.enabled && !(self.abandonment.threshold_secs > 0.0) {
            return Err(invalid("abandonment.threshold_secs", "must be > 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, vol) in self.volumes.iter().enumerate() {
            let field = format!("volumes[{i}]");
            if vol.id.is_empty() {
                return Err(invalid(format!("{field}.id"), "must be non-empty"));
            }
            if !seen.insert(vol.id.clone()) {
                return Err(invalid(
                    format!("{field}.id"),
                    format!("duplicate volume id '{}'", vol.id),
                ));
            }
            if !(vol.size_gb > 0.0) {
                return Err(invalid(format!("{field}.size_gb"), "must be > 0"));
            }
            validate_policy(&vol.policy, &format!("{field}.policy"))?;
            match &vol.source {
                SourceConfig::Trace { path } => {
                    let resolved = base_dir.join(path);
                    if !resolved.is_file() {
                        return Err(invalid(
                            format!("{field}.source.path"),
                            format!("trace file '{}' does not exist", resolved.display()),
                        ));
                    }
                }
                SourceConfig::Synthetic { phases } => {
                    if phases.is_empty() {
                        return Err(invalid(
                            format!("{field}.source.phases"),
                            "at least one phase is required",
                        ));
                    }
                    for (j, phase) in phases.iter().enumerate() {
                        if !(0.0..=1.0).contains(&phase.read_fraction) {
                            return Err(invalid(
                                format!("{field}.source.phases[{j}].read_fraction"),
                                "must be within [0, 1]",
                            ));
                        }
                        if phase.request_size == 0 {
                            return Err(invalid(
                                format!("{field}.source.phases[{j}].request_size"),
                                "must be > 0",
                            ));
                        }
                    }
                }
            }
        }
        for (name, policy) in &self.policies {
            validate_policy(policy, &format!("policies.{name}"))?;
        }
        if let Some(pool) = self.pool_total_iops {
            if !(pool > 0.0) {
                return Err(invalid("pool_total_iops", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Canonical JSON form; byte-stable across reruns.
    pub fn to_canonical_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("scenario serializes");
        json.push('\n');
        json
    }

    /// Short content hash identifying the normalized scenario.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Clone the scenario with every volume switched to the given policy.
    pub fn with_policy(&self, policy: &PolicyConfig) -> Scenario {
        let mut out = self.clone();
        for vol in &mut out.volumes {
            vol.policy = policy.clone();
        }
        out.normalize();
        out
    }
}

fn validate_policy(policy: &PolicyConfig, field: &str) -> Result<(), ScenarioError> {
    match policy {
        PolicyConfig::Static { cap } => {
            if !(*cap > 0.0) {
                return Err(invalid(format!("{field}.cap"), "must be > 0"));
            }
        }
        PolicyConfig::LeakyBucket {
            baseline_iops,
            burst_iops,
            max_balance,
            initial_balance,
        } => {
            if let Some(baseline) = baseline_iops {
                if !(*baseline > 0.0) {
                    return Err(invalid(format!("{field}.baseline_iops"), "must be > 0"));
                }
                if burst_iops < baseline {
                    return Err(invalid(
                        format!("{field}.burst_iops"),
                        "must be >= baseline_iops",
                    ));
                }
            }
            if *max_balance < 0.0 {
                return Err(invalid(format!("{field}.max_balance"), "must be >= 0"));
            }
            if *initial_balance < 0.0 || initial_balance > max_balance {
                return Err(invalid(
                    format!("{field}.initial_balance"),
                    "must be within [0, max_balance]",
                ));
            }
        }
        PolicyConfig::Gstates {
            baseline_iops,
            num_levels,
            promote_threshold_factor,
            util_threshold,
            ..
        } => {
            if !(*baseline_iops >= 1.0) {
                return Err(invalid(format!("{field}.baseline_iops"), "must be >= 1"));
            }
            if *num_levels < 1 {
                return Err(invalid(format!("{field}.num_levels"), "must be >= 1"));
            }
            if !(*promote_threshold_factor > 0.0 && *promote_threshold_factor <= 1.0) {
                return Err(invalid(
                    format!("{field}.promote_threshold_factor"),
                    "must be in (0, 1]",
                ));
            }
            if !(*util_threshold > 0.0) {
                return Err(invalid(format!("{field}.util_threshold"), "must be > 0"));
            }
        }
        PolicyConfig::Unlimited => {}
    }
    Ok(())
}

/// Load, normalize, and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut scenario: Scenario = serde_json::from_str(&text)?;
    scenario.normalize();
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    scenario.validate(base_dir)?;
    Ok(scenario)
}

/// Per-volume synthetic seed; independent of policy so compared runs see
/// identical arrivals.
fn volume_seed(scenario_seed: u64, index: usize) -> u64 {
    scenario_seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Materialize every volume's arrival bins and assemble the engine input.
pub fn prepare(scenario: &Scenario, base_dir: &Path) -> Result<RunInput, ScenarioError> {
    let mut sources = Vec::with_capacity(scenario.volumes.len());
    let mut horizon = scenario.horizon_secs.unwrap_or(0);
    for (i, vol) in scenario.volumes.iter().enumerate() {
        let records = match &vol.source {
            SourceConfig::Trace { path } => {
                let resolved = base_dir.join(path);
                let file = fs::File::open(&resolved).map_err(|source| ScenarioError::Read {
                    path: resolved.display().to_string(),
                    source,
                })?;
                parse_trace(BufReader::new(file)).map_err(|source| ScenarioError::Trace {
                    id: vol.id.clone(),
                    source,
                })?
            }
            SourceConfig::Synthetic { phases } => {
                generate_synthetic(&vol.id, phases, volume_seed(scenario.seed, i))
            }
        };
        if scenario.horizon_secs.is_none() {
            horizon = horizon.max(records_horizon(&records));
        }
        sources.push(records);
    }

    let volumes = scenario
        .volumes
        .iter()
        .zip(&sources)
        .map(|(vol, records)| PreparedVolume {
            id: vol.id.clone(),
            size_gb: vol.size_gb,
            policy: vol.policy.clone(),
            io_type: vol.io_type,
            bins: bins_from_records(records, horizon),
        })
        .collect();

    Ok(RunInput {
        device: scenario.device_profile(),
        volumes,
        horizon,
        abandonment_threshold: scenario
            .abandonment
            .enabled
            .then_some(scenario.abandonment.threshold_secs),
        pool_total_iops: scenario.pool_total_iops,
    })
}

/// Resolve the on-disk trace or regenerate the synthetic workload for one
/// volume (used by the `synth` subcommand and trace analysis).
pub fn volume_records(
    scenario: &Scenario,
    index: usize,
    base_dir: &Path,
) -> Result<Vec<crate::trace::TraceRecord>, ScenarioError> {
    let vol = &scenario.volumes[index];
    match &vol.source {
        SourceConfig::Trace { path } => {
            let resolved = base_dir.join(path);
            let file = fs::File::open(&resolved).map_err(|source| ScenarioError::Read {
                path: resolved.display().to_string(),
                source,
            })?;
            parse_trace(BufReader::new(file)).map_err(|source| ScenarioError::Trace {
                id: vol.id.clone(),
                source,
            })
        }
        SourceConfig::Synthetic { phases } => Ok(generate_synthetic(
            &vol.id,
            phases,
            volume_seed(scenario.seed, index),
        )),
    }
}

pub fn scenario_base_dir(path: &Path) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}
