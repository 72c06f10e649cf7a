//! Scenario description: everything a simulation run needs, validated
//! eagerly so an invalid setup never reaches the slot loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::congestion::{CongestionError, CrLimitTable, DEFAULT_CR_FUTURE_MS, DEFAULT_CR_PAST_MS};
use crate::harq::{FeedbackMode, HarqError, HarqProcess, DEFAULT_RV_SEQUENCE};
use crate::mode1::GrantType;
use crate::phy::{LinkBudget, McsTable, PhyError, RsrpSource};
use crate::radio::{GridError, Numerology, PoolKind, ResourcePool, SlotFormat};
use crate::sci::{AssignmentGeometry, SciCodec, SciError};
use crate::sensing::{SelectionConfig, SensingError};
use crate::traffic::{
    CastType, Destination, SyncPreference, SyncSource, TbTemplate, TrafficError, TrafficPattern,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("UE {ue} references unknown pool {pool}")]
    UnknownPool { ue: u32, pool: u32 },
    #[error("duplicate UE id {0}")]
    DuplicateUeId(u32),
    #[error("no UEs configured")]
    NoUes,
    #[error("pool {0} is used for transmission by both mode-1 and mode-2 UEs; pools must stay disjoint per mode")]
    PoolModeConflict(u32),
    #[error("UE {0} transmits on an exceptional pool; exceptional pools are fallback-only")]
    TxOnExceptionalPool(u32),
    #[error("exceptional windows are configured but no exceptional pool exists")]
    MissingExceptionalPool,
    #[error("UE {ue}: delay budget of {pdb_ms} ms leaves no slot after T_proc1")]
    PdbTooSmall { ue: u32, pdb_ms: u32 },
    #[error("UE {ue}: delay budget of {pdb_ms} ms exceeds the SCI time-assignment range of {max_offset_slots} slots")]
    PdbExceedsSciRange {
        ue: u32,
        pdb_ms: u32,
        max_offset_slots: u64,
    },
    #[error("UE {0}: HARQ feedback requires PSFCH resources on its pool (psfch_period_slots > 0)")]
    FeedbackNeedsPsfch(u32),
    #[error("UE {ue}: l_subch {l_subch} exceeds the pool's {available} subchannels")]
    LSubchTooLarge {
        ue: u32,
        l_subch: u16,
        available: u16,
    },
    #[error("UE {0} is mode 1 but has no configured-grant parameters")]
    MissingMode1Grant(u32),
    #[error("UE {0} is mode 2 but carries configured-grant parameters")]
    UnexpectedMode1Grant(u32),
    #[error("no lanes configured")]
    NoLanes,
    #[error("UE {ue} references lane {lane} but only {lanes} exist")]
    BadLane { ue: u32, lane: u8, lanes: usize },
    #[error("UE {ue}: unicast destination {dest} does not exist or is the sender")]
    BadUnicastPeer { ue: u32, dest: u32 },
    #[error("UE {ue}: groupcast needs a destination group")]
    MissingGroup { ue: u32 },
    #[error("DCI event at {time_ms} ms targets UE {ue}, which has no Type 2 grant")]
    BadDciTarget { time_ms: u64, ue: u32 },
    #[error("mobility trace references unknown UE {0}")]
    TraceUnknownUe(u32),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sci(#[from] SciError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Congestion(#[from] CongestionError),
    #[error(transparent)]
    Harq(#[from] HarqError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

/// HARQ parameters shared by all UEs.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqConfig {
    pub max_tx: u32,
    pub rv_sequence: Vec<u8>,
    /// Earliest PSFCH opportunity after a transmission.
    pub psfch_min_gap_slots: u64,
    /// When set, PSFCH receptions are subject to the channel; otherwise
    /// feedback delivery is ideal.
    pub lossy_psfch: bool,
}

impl Default for HarqConfig {
    fn default() -> Self {
        Self {
            max_tx: 3,
            rv_sequence: DEFAULT_RV_SEQUENCE.to_vec(),
            psfch_min_gap_slots: 2,
            lossy_psfch: false,
        }
    }
}

/// Congestion-control parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestionConfig {
    /// CBR recomputation cadence; 1 or 2 ms.
    pub cbr_interval_ms: u32,
    pub cr_past_ms: u64,
    pub cr_future_ms: u64,
    pub cr_limits: CrLimitTable,
    /// Cadence of the per-UE load trace in the metrics output.
    pub trace_interval_ms: u64,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        Self {
            cbr_interval_ms: 1,
            cr_past_ms: DEFAULT_CR_PAST_MS,
            cr_future_ms: DEFAULT_CR_FUTURE_MS,
            cr_limits: CrLimitTable::default(),
            trace_interval_ms: 100,
        }
    }
}

/// Metrics shaping.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// PRR distance-bin width in meters.
    pub prr_bin_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { prr_bin_m: 100.0 }
    }
}

/// One lane of the wrap-around highway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneConfig {
    pub y_m: f64,
    pub speed_mps: f64,
    /// Heading in radians; 0 = +x, pi = -x.
    pub heading_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadConfig {
    pub length_m: f64,
    pub lanes: Vec<LaneConfig>,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length_m: 2000.0,
            lanes: vec![
                LaneConfig {
                    y_m: 0.0,
                    speed_mps: 30.0,
                    heading_rad: 0.0,
                },
                LaneConfig {
                    y_m: 4.0,
                    speed_mps: 30.0,
                    heading_rad: std::f64::consts::PI,
                },
            ],
        }
    }
}

/// Resource-allocation mode of a UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UeMode {
    Mode1,
    Mode2,
}

/// Mode-1 configured-grant parameters for one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode1GrantConfig {
    pub grant_type: GrantType,
    pub period_ms: u16,
}

/// Full per-UE configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct UeConfig {
    pub ue_id: u32,
    pub mode: UeMode,
    pub tx_pool_id: u32,
    pub traffic: TrafficPattern,
    pub template: TbTemplate,
    pub feedback_mode: FeedbackMode,
    pub l_subch: u16,
    pub mcs: u8,
    pub lane: u8,
    pub initial_x_m: f64,
    pub sync_candidates: Vec<SyncSource>,
    pub mode1_grant: Option<Mode1GrantConfig>,
    /// Group membership for groupcast traffic.
    pub group_id: Option<u32>,
}

/// Scheduled DCI activation/deactivation of a UE's Type 2 grant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DciEvent {
    pub time_ms: u64,
    pub ue_id: u32,
    pub activate: bool,
}

/// Interval during which a UE is in an exceptional condition (RLF or
/// handover) and must fall back to the exceptional pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceptionalWindow {
    pub ue_id: u32,
    pub from_ms: u64,
    pub to_ms: u64,
}

/// Recorded positions overriding lane kinematics for listed UEs:
/// (time_ms, x, y) samples per UE, applied stepwise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MobilityTrace {
    pub samples: BTreeMap<u32, Vec<(f64, f64, f64)>>,
}

impl MobilityTrace {
    /// Position of a UE at `time_ms`: the latest sample at or before it
    /// (or the first sample when none precedes it).
    pub fn position_at(&self, ue_id: u32, time_ms: f64) -> Option<(f64, f64)> {
        let samples = self.samples.get(&ue_id)?;
        let mut current = None;
        for &(t, x, y) in samples {
            if t <= time_ms {
                current = Some((x, y));
            } else {
                break;
            }
        }
        current.or_else(|| samples.first().map(|&(_, x, y)| (x, y)))
    }
}

/// A complete, validated simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: u64,
    pub numerology: Numerology,
    pub slot_format: SlotFormat,
    pub pools: Vec<Arc<ResourcePool>>,
    pub link_budget: LinkBudget,
    pub mcs_table: McsTable,
    pub rsrp_source: RsrpSource,
    pub selection: SelectionConfig,
    pub harq: HarqConfig,
    pub congestion: CongestionConfig,
    pub metrics: MetricsConfig,
    pub road: RoadConfig,
    pub ues: Vec<UeConfig>,
    pub dci_events: Vec<DciEvent>,
    pub exceptional_windows: Vec<ExceptionalWindow>,
    pub mobility_trace: Option<MobilityTrace>,
    pub sci: SciCodec,
    pub sync_preference: SyncPreference,
}

impl Scenario {
    pub fn total_slots(&self) -> u64 {
        self.numerology.ms_to_slots(self.duration_ms)
    }

    pub fn pool(&self, pool_id: u32) -> Option<&Arc<ResourcePool>> {
        self.pools.iter().find(|p| p.pool_id == pool_id)
    }

    pub fn exceptional_pool(&self) -> Option<&Arc<ResourcePool>> {
        self.pools.iter().find(|p| p.kind == PoolKind::Exceptional)
    }

    /// Checks every cross-module invariant eagerly.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(ScenarioError::ZeroDuration);
        }
        if self.ues.is_empty() {
            return Err(ScenarioError::NoUes);
        }
        if self.road.lanes.is_empty() {
            return Err(ScenarioError::NoLanes);
        }
        self.link_budget.validate()?;
        self.selection.validate()?;
        self.congestion.cr_limits.validate()?;
        if !matches!(self.congestion.cbr_interval_ms, 1 | 2) {
            return Err(CongestionError::BadCbrInterval(self.congestion.cbr_interval_ms).into());
        }
        self.sci.widths.validate()?;
        if self.harq.max_tx == 0 {
            return Err(HarqError::ZeroMaxTx.into());
        }
        if self.harq.rv_sequence.is_empty() {
            return Err(HarqError::EmptyRvSequence.into());
        }

        let geometry = AssignmentGeometry::from_widths(&self.sci.widths);
        let max_offset_slots = (1u64 << geometry.slot_offset_bits) - 1;

        let mut seen = BTreeSet::new();
        let mut mode1_pools = BTreeSet::new();
        let mut mode2_pools = BTreeSet::new();
        let mut group_sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for ue in &self.ues {
            if !seen.insert(ue.ue_id) {
                return Err(ScenarioError::DuplicateUeId(ue.ue_id));
            }
            if let Some(gid) = ue.group_id {
                *group_sizes.entry(gid).or_insert(0) += 1;
            }
        }
        for ue in &self.ues {
            let pool = self
                .pool(ue.tx_pool_id)
                .ok_or(ScenarioError::UnknownPool {
                    ue: ue.ue_id,
                    pool: ue.tx_pool_id,
                })?;
            if pool.kind == PoolKind::Exceptional {
                return Err(ScenarioError::TxOnExceptionalPool(ue.ue_id));
            }
            match ue.mode {
                UeMode::Mode1 => {
                    mode1_pools.insert(ue.tx_pool_id);
                    if ue.mode1_grant.is_none() {
                        return Err(ScenarioError::MissingMode1Grant(ue.ue_id));
                    }
                }
                UeMode::Mode2 => {
                    mode2_pools.insert(ue.tx_pool_id);
                    if ue.mode1_grant.is_some() {
                        return Err(ScenarioError::UnexpectedMode1Grant(ue.ue_id));
                    }
                }
            }
            ue.traffic.validate()?;
            ue.template.validate()?;
            self.mcs_table.threshold(ue.mcs)?;
            if ue.l_subch == 0 || ue.l_subch > pool.num_subchannels {
                return Err(ScenarioError::LSubchTooLarge {
                    ue: ue.ue_id,
                    l_subch: ue.l_subch,
                    available: pool.num_subchannels,
                });
            }
            if ue.lane as usize >= self.road.lanes.len() {
                return Err(ScenarioError::BadLane {
                    ue: ue.ue_id,
                    lane: ue.lane,
                    lanes: self.road.lanes.len(),
                });
            }
            let pdb_slots = self.numerology.ms_to_slots(ue.template.pdb_ms as u64);
            if ue.mode == UeMode::Mode2 && pdb_slots <= self.selection.t_proc1_slots as u64 {
                return Err(ScenarioError::PdbTooSmall {
                    ue: ue.ue_id,
                    pdb_ms: ue.template.pdb_ms,
                });
            }
            if ue.mode == UeMode::Mode2 && pdb_slots > max_offset_slots {
                return Err(ScenarioError::PdbExceedsSciRange {
                    ue: ue.ue_id,
                    pdb_ms: ue.template.pdb_ms,
                    max_offset_slots,
                });
            }
            if ue.feedback_mode != FeedbackMode::None && pool.psfch_period_slots == 0 {
                return Err(ScenarioError::FeedbackNeedsPsfch(ue.ue_id));
            }
            // Exercise the HARQ invariants (cast/feedback/range combos).
            HarqProcess::new(
                0,
                0,
                ue.template.cast_type,
                ue.feedback_mode,
                ue.template.comm_range_m,
                self.harq.max_tx,
                self.harq.rv_sequence.clone(),
            )?;
            match (ue.template.cast_type, ue.template.destination) {
                (CastType::Unicast, Destination::Ue(dest)) => {
                    if dest == ue.ue_id || !seen.contains(&dest) {
                        return Err(ScenarioError::BadUnicastPeer {
                            ue: ue.ue_id,
                            dest,
                        });
                    }
                }
                (CastType::Unicast, _) => {
                    return Err(ScenarioError::BadUnicastPeer {
                        ue: ue.ue_id,
                        dest: u32::MAX,
                    })
                }
                (CastType::Groupcast, Destination::Group(_)) => {
                    if ue.group_id.is_none() {
                        return Err(ScenarioError::MissingGroup { ue: ue.ue_id });
                    }
                }
                (CastType::Groupcast, _) => {
                    return Err(ScenarioError::MissingGroup { ue: ue.ue_id })
                }
                (CastType::Broadcast, _) => {}
            }
        }
        if let Some(conflict) = mode1_pools.intersection(&mode2_pools).next() {
            return Err(ScenarioError::PoolModeConflict(*conflict));
        }
        if !self.exceptional_windows.is_empty() && self.exceptional_pool().is_none() {
            return Err(ScenarioError::MissingExceptionalPool);
        }
        for dci in &self.dci_events {
            let target = self.ues.iter().find(|u| u.ue_id == dci.ue_id);
            let ok = target
                .and_then(|u| u.mode1_grant)
                .map(|g| g.grant_type == GrantType::Type2)
                .unwrap_or(false);
            if !ok {
                return Err(ScenarioError::BadDciTarget {
                    time_ms: dci.time_ms,
                    ue: dci.ue_id,
                });
            }
        }
        if let Some(trace) = &self.mobility_trace {
            for ue_id in trace.samples.keys() {
                if !seen.contains(ue_id) {
                    return Err(ScenarioError::TraceUnknownUe(*ue_id));
                }
            }
        }
        Ok(())
    }
}
