//! Scenario configuration files: a strict TOML schema with a versioned
//! header, a single `defaults` section holding every tunable default, and
//! eager validation of all cross-module invariants.
//!
//! Parsing is strict: unknown keys are rejected (with a nearest-match
//! suggestion) so typos in threshold tables never pass silently.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::congestion::CrLimitTable;
use crate::harq::FeedbackMode;
use crate::mode1::GrantType;
use crate::phy::{LinkBudget, McsTable, RsrpSource};
use crate::radio::{
    build_resource_pool, flat_rsrp_thresholds, Bwp, CyclicPrefix, Numerology, PoolConfig,
    PoolKind, PoolRole, SlotFormat,
};
use crate::scenario::{
    CongestionConfig, DciEvent, ExceptionalWindow, HarqConfig, LaneConfig, MetricsConfig,
    MobilityTrace, Mode1GrantConfig, RoadConfig, Scenario, ScenarioError, UeConfig, UeMode,
};
use crate::sci::{SciCodec, SciFieldWidths, DEFAULT_ALLOWED_PERIODS_MS};
use crate::sensing::SelectionConfig;
use crate::traffic::{
    CastType, Destination, SyncPreference, SyncSource, TbTemplate, TrafficPattern,
};

/// The schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{key}`{suggestion}", suggestion = suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },
    #[error("unsupported schema_version {found}; this build reads version {SCHEMA_VERSION}")]
    UnsupportedSchemaVersion { found: u32 },
    #[error("validation error: {0}")]
    Validation(#[from] ScenarioError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

// ---------------------------------------------------------------------------
// Raw TOML schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    scenario: RawScenario,
    numerology: RawNumerology,
    bwp: RawBwp,
    pools: Vec<RawPool>,
    #[serde(default)]
    road: Option<RawRoad>,
    traffic: Vec<RawTraffic>,
    populations: Vec<RawPopulation>,
    #[serde(default)]
    dci: Vec<RawDci>,
    #[serde(default)]
    exceptional: Vec<RawExceptional>,
    #[serde(default)]
    mobility_trace: Option<RawMobilityTrace>,
    #[serde(default)]
    defaults: RawDefaults,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    seed: u64,
    duration_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerology {
    mu: u8,
    #[serde(default = "default_cp")]
    cp: String,
}

fn default_cp() -> String {
    "normal".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBwp {
    carrier_freq_mhz: f64,
    bandwidth_mhz: u16,
    #[serde(default)]
    prb_count: Option<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPool {
    id: u32,
    #[serde(default = "default_pool_kind")]
    kind: String,
    #[serde(default = "default_pool_role")]
    role: String,
    subchannel_size_prb: u16,
    #[serde(default)]
    num_subchannels: Option<u16>,
    /// Periodic bitmap as a string of '0'/'1', e.g. "1" or "10010".
    #[serde(default = "default_bitmap")]
    slot_bitmap: String,
    #[serde(default)]
    psfch_period_slots: u8,
    #[serde(default = "default_cbr_busy_threshold")]
    cbr_busy_threshold_dbm: f64,
    #[serde(default)]
    preemption_enabled: bool,
    #[serde(default = "default_preemption_threshold")]
    preemption_priority_threshold: u8,
    /// Flat RSRP exclusion threshold applied to every priority pair.
    #[serde(default = "default_rsrp_threshold")]
    rsrp_threshold_dbm: f64,
    /// Full 8x8 table indexed [rx priority][own priority]; overrides the
    /// flat threshold.
    #[serde(default)]
    rsrp_threshold_table: Option<Vec<Vec<f64>>>,
}

fn default_pool_kind() -> String {
    "normal".into()
}
fn default_pool_role() -> String {
    "both".into()
}
fn default_bitmap() -> String {
    "1".into()
}
fn default_cbr_busy_threshold() -> f64 {
    -94.0
}
fn default_preemption_threshold() -> u8 {
    4
}
fn default_rsrp_threshold() -> f64 {
    -90.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoad {
    length_m: f64,
    lanes: Vec<RawLane>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLane {
    y_m: f64,
    speed_mps: f64,
    #[serde(default = "default_direction")]
    direction: String,
}

fn default_direction() -> String {
    "east".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    name: String,
    /// Optional template: platooning, extended_sensors, remote_driving.
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    period_ms: Option<f64>,
    #[serde(default)]
    jitter_ms: Option<f64>,
    #[serde(default)]
    offset_ms: Option<f64>,
    #[serde(default)]
    mean_interarrival_ms: Option<f64>,
    #[serde(default)]
    size_bytes: Option<u32>,
    #[serde(default)]
    priority: Option<u8>,
    #[serde(default)]
    pdb_ms: Option<u32>,
    #[serde(default)]
    cast: Option<String>,
    #[serde(default)]
    comm_range_m: Option<f64>,
    /// none | ack_nack | nack_only; defaults by cast type.
    #[serde(default)]
    feedback: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPopulation {
    count: u32,
    #[serde(default = "default_mode")]
    mode: String,
    pool: u32,
    traffic: String,
    #[serde(default = "default_l_subch")]
    l_subch: u16,
    #[serde(default = "default_mcs")]
    mcs: u8,
    /// Lanes the population cycles through; all lanes when empty.
    #[serde(default)]
    lanes: Vec<u8>,
    #[serde(default = "default_sync")]
    sync: Vec<String>,
    #[serde(default)]
    grant_type: Option<String>,
    #[serde(default)]
    grant_period_ms: Option<u16>,
}

fn default_mode() -> String {
    "mode2".into()
}
fn default_l_subch() -> u16 {
    1
}
fn default_mcs() -> u8 {
    5
}
fn default_sync() -> Vec<String> {
    vec!["gnss".into(), "internal".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDci {
    time_ms: u64,
    ue: u32,
    action: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExceptional {
    ue: u32,
    from_ms: u64,
    to_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMobilityTrace {
    path: String,
}

/// Every module default in one place, so a scenario file is
/// self-describing once resolved.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefaults {
    #[serde(default)]
    channel: RawChannel,
    #[serde(default)]
    selection: RawSelection,
    #[serde(default)]
    harq: RawHarq,
    #[serde(default)]
    congestion: RawCongestion,
    #[serde(default)]
    sci: RawSci,
    #[serde(default)]
    metrics: RawMetrics,
    #[serde(default)]
    sync_preference: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawChannel {
    tx_power_dbm: f64,
    pathloss_exponent: f64,
    reference_loss_db: f64,
    shadowing_sigma_db: f64,
    noise_dbm: f64,
    rsrp_source: String,
    mcs_thresholds_db: Option<Vec<f64>>,
}

impl Default for RawChannel {
    fn default() -> Self {
        let b = LinkBudget::default();
        Self {
            tx_power_dbm: b.tx_power_dbm,
            pathloss_exponent: b.pathloss_exponent,
            reference_loss_db: b.reference_loss_db,
            shadowing_sigma_db: b.shadowing_sigma_db,
            noise_dbm: b.noise_dbm,
            rsrp_source: "pscch".into(),
            mcs_thresholds_db: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSelection {
    t0_ms: u32,
    sensing_gap_ms: u32,
    t_proc0_slots: u32,
    t_proc1_slots: u32,
    candidate_ratio_by_priority: Vec<f64>,
    relax_step_db: f64,
    max_reserved: u8,
    reselection_counter_min: u32,
    reselection_counter_max: u32,
    reeval_lead_slots: u32,
    rank_candidates_by_rsrp: bool,
}

impl Default for RawSelection {
    fn default() -> Self {
        let s = SelectionConfig::default();
        Self {
            t0_ms: s.t0_ms,
            sensing_gap_ms: s.sensing_gap_ms,
            t_proc0_slots: s.t_proc0_slots,
            t_proc1_slots: s.t_proc1_slots,
            candidate_ratio_by_priority: s.candidate_ratio_by_priority.to_vec(),
            relax_step_db: s.relax_step_db,
            max_reserved: s.max_reserved,
            reselection_counter_min: s.reselection_counter_min,
            reselection_counter_max: s.reselection_counter_max,
            reeval_lead_slots: s.reeval_lead_slots,
            rank_candidates_by_rsrp: s.rank_candidates_by_rsrp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawHarq {
    max_tx: u32,
    rv_sequence: Vec<u8>,
    psfch_min_gap_slots: u64,
    lossy_psfch: bool,
}

impl Default for RawHarq {
    fn default() -> Self {
        let h = HarqConfig::default();
        Self {
            max_tx: h.max_tx,
            rv_sequence: h.rv_sequence,
            psfch_min_gap_slots: h.psfch_min_gap_slots,
            lossy_psfch: h.lossy_psfch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCongestion {
    cbr_interval_ms: u32,
    cr_past_ms: u64,
    cr_future_ms: u64,
    cbr_bucket_edges: Vec<f64>,
    cr_limits: Vec<Vec<f64>>,
    trace_interval_ms: u64,
}

impl Default for RawCongestion {
    fn default() -> Self {
        let c = CongestionConfig::default();
        Self {
            cbr_interval_ms: c.cbr_interval_ms,
            cr_past_ms: c.cr_past_ms,
            cr_future_ms: c.cr_future_ms,
            cbr_bucket_edges: c.cr_limits.cbr_bucket_edges,
            cr_limits: c.cr_limits.limits.iter().map(|r| r.to_vec()).collect(),
            trace_interval_ms: c.trace_interval_ms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSci {
    reserved_bits: u8,
    allowed_periods_ms: Vec<u16>,
    source_id_bits: u8,
    destination_id_bits: u8,
}

impl Default for RawSci {
    fn default() -> Self {
        let w = SciFieldWidths::default();
        Self {
            reserved_bits: w.reserved,
            allowed_periods_ms: DEFAULT_ALLOWED_PERIODS_MS.to_vec(),
            source_id_bits: w.source_id,
            destination_id_bits: w.destination_id,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMetrics {
    prr_bin_m: f64,
}

impl Default for RawMetrics {
    fn default() -> Self {
        Self {
            prr_bin_m: MetricsConfig::default().prr_bin_m,
        }
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// A loaded scenario plus the fully resolved configuration (all defaults
/// materialized, overrides applied) for self-describing experiment outputs.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub resolved_toml: String,
}

/// Command-line overrides applied before assembly, so the resolved
/// configuration reflects what actually ran.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration_ms: Option<u64>,
}

/// Loads, parses, and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    Ok(load_scenario_full(path)?.scenario)
}

/// Like [`load_scenario`] but also returns the resolved configuration.
pub fn load_scenario_full(path: &Path) -> Result<LoadedScenario, ConfigError> {
    load_scenario_with(path, Overrides::default())
}

/// Loads a scenario with command-line overrides applied.
pub fn load_scenario_with(path: &Path, overrides: Overrides) -> Result<LoadedScenario, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut raw: RawConfig = toml::from_str(&text).map_err(classify_toml_error)?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::UnsupportedSchemaVersion {
            found: raw.schema_version,
        });
    }
    if let Some(seed) = overrides.seed {
        raw.scenario.seed = seed;
    }
    if let Some(duration_ms) = overrides.duration_ms {
        raw.scenario.duration_ms = duration_ms;
    }
    let scenario = assemble(&raw, path.parent().unwrap_or(Path::new(".")))?;
    scenario.validate()?;
    let resolved_toml = toml::to_string_pretty(&raw)
        .map_err(|e| invalid(format!("cannot serialize resolved config: {e}")))?;
    Ok(LoadedScenario {
        scenario,
        resolved_toml,
    })
}

/// Maps a TOML deserialization error to either an unknown-key error with a
/// nearest-match suggestion or a plain parse error with location info.
fn classify_toml_error(err: toml::de::Error) -> ConfigError {
    let message = err.to_string();
    if let Some(rest) = message.split("unknown field `").nth(1) {
        let key = rest.split('`').next().unwrap_or("").to_string();
        let suggestion = rest
            .split("expected")
            .nth(1)
            .map(|expected| {
                expected
                    .split('`')
                    .skip(1)
                    .step_by(2)
                    .map(str::to_string)
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default()
            .into_iter()
            .min_by_key(|candidate| strsim::levenshtein(&key, candidate));
        return ConfigError::UnknownKey { key, suggestion };
    }
    ConfigError::Parse(message.trim_end().to_string())
}

fn parse_enum<T>(value: &str, options: &[(&str, T)], what: &str) -> Result<T, ConfigError>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            invalid(format!(
                "invalid {what} `{value}`; expected one of {}",
                names.join(", ")
            ))
        })
}

fn parse_bitmap(s: &str) -> Result<Vec<bool>, ConfigError> {
    if s.is_empty() {
        return Err(invalid("slot_bitmap must not be empty"));
    }
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(invalid(format!(
                "slot_bitmap may only contain '0' and '1' (found '{other}')"
            ))),
        })
        .collect()
}

struct TrafficSpec {
    pattern: TrafficPattern,
    template: TbTemplate,
    feedback: Option<FeedbackMode>,
    cast: CastType,
}

/// Use-case presets; explicit keys override preset values.
fn preset_values(name: &str) -> Result<RawTraffic, ConfigError> {
    let mut t = RawTraffic {
        name: String::new(),
        preset: None,
        kind: Some("periodic".into()),
        period_ms: None,
        jitter_ms: None,
        offset_ms: None,
        mean_interarrival_ms: None,
        size_bytes: None,
        priority: None,
        pdb_ms: None,
        cast: None,
        comm_range_m: None,
        feedback: None,
    };
    match name {
        "platooning" => {
            t.period_ms = Some(20.0);
            t.size_bytes = Some(300);
            t.priority = Some(2);
            t.pdb_ms = Some(20);
            t.cast = Some("groupcast".into());
            t.comm_range_m = Some(150.0);
        }
        "extended_sensors" => {
            t.period_ms = Some(100.0);
            t.size_bytes = Some(1000);
            t.priority = Some(3);
            t.pdb_ms = Some(100);
            t.cast = Some("groupcast".into());
            t.comm_range_m = Some(200.0);
        }
        "remote_driving" => {
            t.period_ms = Some(20.0);
            t.size_bytes = Some(1000);
            t.priority = Some(1);
            t.pdb_ms = Some(20);
            t.cast = Some("unicast".into());
        }
        other => {
            return Err(invalid(format!(
                "unknown traffic preset `{other}`; expected platooning, extended_sensors, or remote_driving"
            )))
        }
    }
    Ok(t)
}

fn build_traffic_spec(raw: &RawTraffic) -> Result<TrafficSpec, ConfigError> {
    let preset = match &raw.preset {
        Some(name) => Some(preset_values(name)?),
        None => None,
    };
    let pick = |own: &Option<f64>, pre: fn(&RawTraffic) -> Option<f64>| -> Option<f64> {
        own.or_else(|| preset.as_ref().and_then(pre))
    };
    let kind = raw
        .kind
        .clone()
        .or_else(|| preset.as_ref().and_then(|p| p.kind.clone()))
        .unwrap_or_else(|| "periodic".into());
    let pattern = match kind.as_str() {
        "disabled" => TrafficPattern::Disabled,
        "periodic" => TrafficPattern::Periodic {
            period_ms: pick(&raw.period_ms, |p| p.period_ms)
                .ok_or_else(|| invalid(format!("traffic `{}`: periodic needs period_ms", raw.name)))?,
            jitter_ms: pick(&raw.jitter_ms, |p| p.jitter_ms).unwrap_or(0.0),
            offset_ms: pick(&raw.offset_ms, |p| p.offset_ms).unwrap_or(0.0),
        },
        "aperiodic" => TrafficPattern::Aperiodic {
            mean_interarrival_ms: pick(&raw.mean_interarrival_ms, |p| p.mean_interarrival_ms)
                .ok_or_else(|| {
                    invalid(format!(
                        "traffic `{}`: aperiodic needs mean_interarrival_ms",
                        raw.name
                    ))
                })?,
        },
        other => {
            return Err(invalid(format!(
                "traffic `{}`: invalid kind `{other}`; expected periodic, aperiodic, or disabled",
                raw.name
            )))
        }
    };
    let cast_name = raw
        .cast
        .clone()
        .or_else(|| preset.as_ref().and_then(|p| p.cast.clone()))
        .unwrap_or_else(|| "broadcast".into());
    let cast = parse_enum(
        &cast_name,
        &[
            ("broadcast", CastType::Broadcast),
            ("groupcast", CastType::Groupcast),
            ("unicast", CastType::Unicast),
        ],
        "cast",
    )?;
    let comm_range_m = raw
        .comm_range_m
        .or(preset.as_ref().and_then(|p| p.comm_range_m));
    let feedback = match raw.feedback.as_deref() {
        None => None,
        Some("none") => Some(FeedbackMode::None),
        Some("ack_nack") => Some(FeedbackMode::AckNack),
        Some("nack_only") => Some(FeedbackMode::NackOnly),
        Some(other) => {
            return Err(invalid(format!(
                "traffic `{}`: invalid feedback `{other}`; expected none, ack_nack, or nack_only",
                raw.name
            )))
        }
    };
    let template = TbTemplate {
        size_bytes: raw
            .size_bytes
            .or(preset.as_ref().and_then(|p| p.size_bytes))
            .unwrap_or(300),
        priority: raw
            .priority
            .or(preset.as_ref().and_then(|p| p.priority))
            .unwrap_or(3),
        pdb_ms: raw
            .pdb_ms
            .or(preset.as_ref().and_then(|p| p.pdb_ms))
            .unwrap_or(100),
        cast_type: cast,
        destination: Destination::All, // patched per UE
        comm_range_m,
    };
    Ok(TrafficSpec {
        pattern,
        template,
        feedback,
        cast,
    })
}

fn parse_sync_source(name: &str) -> Result<SyncSource, ConfigError> {
    match name {
        "gnss" => Ok(SyncSource::gnss()),
        "gnb" => Ok(SyncSource::gnb()),
        "syncref1" => Ok(SyncSource::sync_ref(1)),
        "syncref2" => Ok(SyncSource::sync_ref(2)),
        "internal" => Ok(SyncSource::internal()),
        other => Err(invalid(format!(
            "invalid sync source `{other}`; expected gnss, gnb, syncref1, syncref2, or internal"
        ))),
    }
}

fn assemble(raw: &RawConfig, base_dir: &Path) -> Result<Scenario, ConfigError> {
    let cp = parse_enum(
        &raw.numerology.cp,
        &[
            ("normal", CyclicPrefix::Normal),
            ("extended", CyclicPrefix::Extended),
        ],
        "cyclic prefix",
    )?;
    let numerology = Numerology::new(raw.numerology.mu, cp).map_err(ScenarioError::from)?;
    let bwp = match raw.bwp.prb_count {
        Some(prb) => Bwp::with_prb_count(raw.bwp.carrier_freq_mhz, raw.bwp.bandwidth_mhz, numerology, prb),
        None => Bwp::new(raw.bwp.carrier_freq_mhz, raw.bwp.bandwidth_mhz, numerology),
    }
    .map_err(ScenarioError::from)?;

    let mut pools = Vec::new();
    let mut any_psfch = false;
    for p in &raw.pools {
        let kind = parse_enum(
            &p.kind,
            &[
                ("normal", PoolKind::Normal),
                ("exceptional", PoolKind::Exceptional),
            ],
            "pool kind",
        )?;
        let role = parse_enum(
            &p.role,
            &[
                ("transmit", PoolRole::Transmit),
                ("receive", PoolRole::Receive),
                ("both", PoolRole::Both),
            ],
            "pool role",
        )?;
        let thresholds = match &p.rsrp_threshold_table {
            Some(table) => {
                if table.len() != 8 || table.iter().any(|row| row.len() != 8) {
                    return Err(invalid(format!(
                        "pool {}: rsrp_threshold_table must be 8x8",
                        p.id
                    )));
                }
                let mut out = [[0.0; 8]; 8];
                for (i, row) in table.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        out[i][j] = *v;
                    }
                }
                out
            }
            None => flat_rsrp_thresholds(p.rsrp_threshold_dbm),
        };
        let pool = build_resource_pool(
            &bwp,
            &PoolConfig {
                pool_id: p.id,
                subchannel_size_prb: p.subchannel_size_prb,
                num_subchannels: p.num_subchannels,
                slot_bitmap: parse_bitmap(&p.slot_bitmap)?,
                psfch_period_slots: p.psfch_period_slots,
                rsrp_thresholds_dbm: thresholds,
                cbr_busy_threshold_dbm: p.cbr_busy_threshold_dbm,
                preemption_enabled: p.preemption_enabled,
                preemption_priority_threshold: p.preemption_priority_threshold,
                kind,
                role,
            },
        )
        .map_err(ScenarioError::from)?;
        any_psfch |= pool.psfch_period_slots > 0;
        pools.push(Arc::new(pool));
    }
    if pools.is_empty() {
        return Err(invalid("at least one pool is required"));
    }
    {
        let mut ids: Vec<u32> = pools.iter().map(|p| p.pool_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != pools.len() {
            return Err(invalid("pool ids must be unique"));
        }
    }

    let road = match &raw.road {
        Some(r) => {
            let lanes = r
                .lanes
                .iter()
                .map(|l| {
                    let east = parse_enum(&l.direction, &[("east", true), ("west", false)], "lane direction")?;
                    Ok(LaneConfig {
                        y_m: l.y_m,
                        speed_mps: l.speed_mps,
                        heading_rad: if east { 0.0 } else { std::f64::consts::PI },
                    })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            RoadConfig {
                length_m: r.length_m,
                lanes,
            }
        }
        None => RoadConfig::default(),
    };

    let mut traffic_specs: BTreeMap<&str, TrafficSpec> = BTreeMap::new();
    for t in &raw.traffic {
        if traffic_specs.contains_key(t.name.as_str()) {
            return Err(invalid(format!("duplicate traffic template `{}`", t.name)));
        }
        traffic_specs.insert(&t.name, build_traffic_spec(t)?);
    }

    // Expand populations into UEs: ids sequential, positions evenly spaced
    // over the road, lanes cycled per population.
    let total_count: u32 = raw.populations.iter().map(|p| p.count).sum();
    if total_count == 0 {
        return Err(invalid("populations are empty"));
    }
    let spacing = road.length_m / total_count as f64;
    let mut ues = Vec::with_capacity(total_count as usize);
    let mut next_ue_id = 0u32;
    for (pop_idx, pop) in raw.populations.iter().enumerate() {
        let mode = parse_enum(
            &pop.mode,
            &[("mode1", UeMode::Mode1), ("mode2", UeMode::Mode2)],
            "mode",
        )?;
        let spec = traffic_specs.get(pop.traffic.as_str()).ok_or_else(|| {
            invalid(format!(
                "population {pop_idx} references unknown traffic template `{}`",
                pop.traffic
            ))
        })?;
        let mode1_grant = match mode {
            UeMode::Mode1 => {
                let grant_type = parse_enum(
                    pop.grant_type.as_deref().unwrap_or("type1"),
                    &[("type1", GrantType::Type1), ("type2", GrantType::Type2)],
                    "grant type",
                )?;
                let period_ms = pop.grant_period_ms.ok_or_else(|| {
                    invalid(format!("mode-1 population {pop_idx} needs grant_period_ms"))
                })?;
                Some(Mode1GrantConfig {
                    grant_type,
                    period_ms,
                })
            }
            UeMode::Mode2 => None,
        };
        let sync_candidates = pop
            .sync
            .iter()
            .map(|s| parse_sync_source(s))
            .collect::<Result<Vec<_>, _>>()?;
        let lane_cycle: Vec<u8> = if pop.lanes.is_empty() {
            (0..road.lanes.len() as u8).collect()
        } else {
            pop.lanes.clone()
        };
        let feedback_mode = spec.feedback.unwrap_or(match spec.cast {
            CastType::Broadcast => FeedbackMode::None,
            CastType::Unicast => {
                if any_psfch {
                    FeedbackMode::AckNack
                } else {
                    FeedbackMode::None
                }
            }
            CastType::Groupcast => {
                if any_psfch && spec.template.comm_range_m.is_some() {
                    FeedbackMode::NackOnly
                } else if any_psfch {
                    FeedbackMode::AckNack
                } else {
                    FeedbackMode::None
                }
            }
        });
        let first_id = next_ue_id;
        for k in 0..pop.count {
            let ue_id = next_ue_id;
            next_ue_id += 1;
            let destination = match spec.cast {
                CastType::Broadcast => Destination::All,
                CastType::Groupcast => Destination::Group(pop_idx as u32),
                // Adjacent pairing within the population: 2k <-> 2k+1.
                CastType::Unicast => {
                    if pop.count % 2 != 0 {
                        return Err(invalid(format!(
                            "unicast population {pop_idx} needs an even UE count"
                        )));
                    }
                    let local = ue_id - first_id;
                    let peer = if local % 2 == 0 { ue_id + 1 } else { ue_id - 1 };
                    Destination::Ue(peer)
                }
            };
            ues.push(UeConfig {
                ue_id,
                mode,
                tx_pool_id: pop.pool,
                traffic: spec.pattern.clone(),
                template: TbTemplate {
                    destination,
                    ..spec.template.clone()
                },
                feedback_mode,
                l_subch: pop.l_subch,
                mcs: pop.mcs,
                lane: lane_cycle[(k as usize) % lane_cycle.len()],
                initial_x_m: (ue_id as f64 + 0.5) * spacing,
                sync_candidates: sync_candidates.clone(),
                mode1_grant,
                group_id: (spec.cast == CastType::Groupcast).then_some(pop_idx as u32),
            });
        }
    }

    let d = &raw.defaults;
    let link_budget = LinkBudget {
        tx_power_dbm: d.channel.tx_power_dbm,
        pathloss_exponent: d.channel.pathloss_exponent,
        reference_loss_db: d.channel.reference_loss_db,
        shadowing_sigma_db: d.channel.shadowing_sigma_db,
        noise_dbm: d.channel.noise_dbm,
    };
    let mcs_table = match &d.channel.mcs_thresholds_db {
        Some(t) => McsTable {
            thresholds_db: t.clone(),
        },
        None => McsTable::default(),
    };
    let rsrp_source = parse_enum(
        &d.channel.rsrp_source,
        &[("pscch", RsrpSource::Pscch), ("pssch", RsrpSource::Pssch)],
        "rsrp source",
    )?;

    if d.selection.candidate_ratio_by_priority.len() != 8 {
        return Err(invalid(
            "selection.candidate_ratio_by_priority needs exactly 8 entries",
        ));
    }
    let mut ratios = [0.0; 8];
    ratios.copy_from_slice(&d.selection.candidate_ratio_by_priority);
    let selection = SelectionConfig {
        t0_ms: d.selection.t0_ms,
        sensing_gap_ms: d.selection.sensing_gap_ms,
        t_proc0_slots: d.selection.t_proc0_slots,
        t_proc1_slots: d.selection.t_proc1_slots,
        candidate_ratio_by_priority: ratios,
        relax_step_db: d.selection.relax_step_db,
        max_reserved: d.selection.max_reserved,
        l_subch: 1, // per-UE value applied by the engine
        reselection_counter_min: d.selection.reselection_counter_min,
        reselection_counter_max: d.selection.reselection_counter_max,
        reeval_lead_slots: d.selection.reeval_lead_slots,
        rank_candidates_by_rsrp: d.selection.rank_candidates_by_rsrp,
    };

    let harq = HarqConfig {
        max_tx: d.harq.max_tx,
        rv_sequence: d.harq.rv_sequence.clone(),
        psfch_min_gap_slots: d.harq.psfch_min_gap_slots,
        lossy_psfch: d.harq.lossy_psfch,
    };

    let mut cr_limit_rows = Vec::new();
    for row in &d.congestion.cr_limits {
        if row.len() != 8 {
            return Err(invalid("congestion.cr_limits rows need exactly 8 entries"));
        }
        let mut fixed = [0.0; 8];
        fixed.copy_from_slice(row);
        cr_limit_rows.push(fixed);
    }
    let congestion = CongestionConfig {
        cbr_interval_ms: d.congestion.cbr_interval_ms,
        cr_past_ms: d.congestion.cr_past_ms,
        cr_future_ms: d.congestion.cr_future_ms,
        cr_limits: CrLimitTable {
            cbr_bucket_edges: d.congestion.cbr_bucket_edges.clone(),
            limits: cr_limit_rows,
        },
        trace_interval_ms: d.congestion.trace_interval_ms,
    };

    // Size the SCI time assignment for the largest delay budget in use.
    let max_pdb_slots = ues
        .iter()
        .map(|u| numerology.ms_to_slots(u.template.pdb_ms as u64))
        .max()
        .unwrap_or(255);
    let reference_pool = ues
        .first()
        .and_then(|u| pools.iter().find(|p| p.pool_id == u.tx_pool_id))
        .unwrap_or(&pools[0]);
    let widths = SciFieldWidths {
        reserved: d.sci.reserved_bits,
        source_id: d.sci.source_id_bits,
        destination_id: d.sci.destination_id_bits,
        ..SciFieldWidths::for_pool(reference_pool, max_pdb_slots)
    };
    let sci = SciCodec::new(widths, d.sci.allowed_periods_ms.clone())
        .map_err(ScenarioError::from)?;

    let sync_preference = match d.sync_preference.as_deref() {
        None | Some("gnss_first") => SyncPreference::GnssFirst,
        Some("gnb_first") => SyncPreference::GnbFirst,
        Some(other) => {
            return Err(invalid(format!(
                "invalid sync_preference `{other}`; expected gnss_first or gnb_first"
            )))
        }
    };

    let dci_events = raw
        .dci
        .iter()
        .map(|e| {
            let activate = parse_enum(
                &e.action,
                &[("activate", true), ("deactivate", false)],
                "dci action",
            )?;
            Ok(DciEvent {
                time_ms: e.time_ms,
                ue_id: e.ue,
                activate,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;

    let exceptional_windows = raw
        .exceptional
        .iter()
        .map(|w| ExceptionalWindow {
            ue_id: w.ue,
            from_ms: w.from_ms,
            to_ms: w.to_ms,
        })
        .collect();

    let mobility_trace = match &raw.mobility_trace {
        Some(t) => Some(load_mobility_trace(&base_dir.join(&t.path))?),
        None => None,
    };

    Ok(Scenario {
        seed: raw.scenario.seed,
        duration_ms: raw.scenario.duration_ms,
        numerology,
        slot_format: SlotFormat::nr_default(&numerology, any_psfch),
        pools,
        link_budget,
        mcs_table,
        rsrp_source,
        selection,
        harq,
        congestion,
        metrics: MetricsConfig {
            prr_bin_m: d.metrics.prr_bin_m,
        },
        road,
        ues,
        dci_events,
        exceptional_windows,
        mobility_trace,
        sci,
        sync_preference,
    })
}

/// Reads a mobility trace CSV with columns `time_ms,ue_id,x,y`.
pub fn load_mobility_trace(path: &Path) -> Result<MobilityTrace, ConfigError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => ConfigError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => ConfigError::Parse(e.to_string()),
    })?;
    {
        let headers = reader
            .headers()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        let expected = ["time_ms", "ue_id", "x", "y"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ConfigError::Parse(format!(
                "mobility trace must have header {}",
                expected.join(",")
            )));
        }
    }
    let mut trace = MobilityTrace::default();
    for record in reader.records() {
        let record = record.map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parse_f = |idx: usize| -> Result<f64, ConfigError> {
            record[idx]
                .trim()
                .parse()
                .map_err(|_| ConfigError::Parse(format!("bad number `{}` in trace", &record[idx])))
        };
        let time_ms = parse_f(0)?;
        let ue_id: u32 = record[1]
            .trim()
            .parse()
            .map_err(|_| ConfigError::Parse(format!("bad ue_id `{}` in trace", &record[1])))?;
        let x = parse_f(2)?;
        let y = parse_f(3)?;
        trace.samples.entry(ue_id).or_default().push((time_ms, x, y));
    }
    for samples in trace.samples.values_mut() {
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    Ok(trace)
}

/// The documented configuration schema, printed by the `schema` CLI
/// subcommand.
pub fn schema_text() -> String {
    include_str!("config_schema.txt").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_config() -> String {
        r#"
schema_version = 1

[scenario]
seed = 7
duration_ms = 100

[numerology]
mu = 0

[bwp]
carrier_freq_mhz = 5900.0
bandwidth_mhz = 10

[[pools]]
id = 0
subchannel_size_prb = 10

[[traffic]]
name = "cam"
kind = "periodic"
period_ms = 100.0

[[populations]]
count = 4
pool = 0
traffic = "cam"
"#
        .to_string()
    }

    fn load_str(text: &str) -> Result<Scenario, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        load_scenario(&path)
    }

    #[test]
    fn minimal_config_loads() {
        let scenario = load_str(&minimal_config()).unwrap();
        assert_eq!(scenario.ues.len(), 4);
        assert_eq!(scenario.seed, 7);
        assert_eq!(scenario.pools[0].num_subchannels, 5);
        // Defaults materialized.
        assert_eq!(scenario.selection.t0_ms, 1100);
        assert_eq!(scenario.harq.max_tx, 3);
    }

    #[test]
    fn unknown_key_suggestion() {
        let bad = minimal_config().replace("duration_ms = 100", "duraton_ms = 100");
        match load_str(&bad) {
            Err(ConfigError::UnknownKey { key, suggestion }) => {
                assert_eq!(key, "duraton_ms");
                assert_eq!(suggestion.as_deref(), Some("duration_ms"));
            }
            other => panic!("expected unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn subchannel_rule_named_in_error() {
        let bad = minimal_config().replace("subchannel_size_prb = 10", "subchannel_size_prb = 8");
        match load_str(&bad) {
            Err(ConfigError::Validation(e)) => {
                assert!(e.to_string().contains("10 PRB minimum"), "{e}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_location() {
        let bad = minimal_config().replace("duration_ms = 100", "duration_ms = ");
        match load_str(&bad) {
            Err(ConfigError::Parse(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_version_checked() {
        let bad = minimal_config().replace("schema_version = 1", "schema_version = 99");
        assert!(matches!(
            load_str(&bad),
            Err(ConfigError::UnsupportedSchemaVersion { found: 99 })
        ));
    }

    #[test]
    fn presets_fill_fields() {
        let cfg = minimal_config().replace(
            "kind = \"periodic\"\nperiod_ms = 100.0",
            "preset = \"extended_sensors\"",
        );
        let scenario = load_str(&cfg).unwrap();
        let ue = &scenario.ues[0];
        assert_eq!(ue.template.priority, 3);
        assert_eq!(ue.template.pdb_ms, 100);
        assert_eq!(ue.template.cast_type, CastType::Groupcast);
        assert_eq!(ue.template.comm_range_m, Some(200.0));
        // No PSFCH configured, so the groupcast falls back to no feedback.
        assert_eq!(ue.feedback_mode, FeedbackMode::None);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        fs::write(&path, minimal_config()).unwrap();
        let loaded = load_scenario_full(&path).unwrap();
        // The resolved text parses again and yields the same scenario shape.
        let resolved_path = dir.path().join("resolved.toml");
        fs::write(&resolved_path, &loaded.resolved_toml).unwrap();
        let again = load_scenario(&resolved_path).unwrap();
        assert_eq!(again.ues.len(), loaded.scenario.ues.len());
        assert_eq!(again.duration_ms, loaded.scenario.duration_ms);
    }

    #[test]
    fn mobility_trace_loads() {
        let dir = tempfile::tempdir().unwrap();
        let trace_path = dir.path().join("trace.csv");
        fs::write(&trace_path, "time_ms,ue_id,x,y\n0,0,10.0,0.0\n500,0,25.0,0.0\n").unwrap();
        let cfg = minimal_config() + "\n[mobility_trace]\npath = \"trace.csv\"\n";
        let path = dir.path().join("scenario.toml");
        fs::write(&path, cfg).unwrap();
        let scenario = load_scenario(&path).unwrap();
        let trace = scenario.mobility_trace.unwrap();
        assert_eq!(trace.position_at(0, 0.0), Some((10.0, 0.0)));
        assert_eq!(trace.position_at(0, 499.0), Some((10.0, 0.0)));
        assert_eq!(trace.position_at(0, 600.0), Some((25.0, 0.0)));
    }
}
