//! Mode-2 autonomous resource selection: sensing database, candidate
//! generation over the selection window, RSRP exclusion with iterative 3 dB
//! threshold relaxation, random MAC selection, re-evaluation against late
//! SCIs, and preemption handling.
//!
//! Priority convention used throughout: numerically lower value = higher
//! priority.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::phy::RxObservation;
use crate::radio::{Numerology, Resource, ResourcePool};
use crate::sci::SciCodec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("selection window is empty: delay budget of {pdb_slots} slots leaves no slot after T_proc1 = {t_proc1} slots")]
    EmptySelectionWindow { pdb_slots: u64, t_proc1: u32 },
    #[error("{needed} resources requested but only {available} candidates survive")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("candidate ratio {0} is not one of 0.20, 0.35, 0.50")]
    InvalidCandidateRatio(f64),
    #[error("sensing window depth ({t0_ms} ms) must exceed the sensing gap ({gap_ms} ms)")]
    BadWindow { t0_ms: u32, gap_ms: u32 },
    #[error("threshold relaxation step must be 3.0 dB (got {0})")]
    BadRelaxStep(f64),
    #[error("reselection counter range [{min}, {max}] is invalid")]
    BadCounterRange { min: u32, max: u32 },
    #[error("max_reserved must be 1..=3 (got {0})")]
    BadMaxReserved(u8),
    #[error("l_subch must be at least 1")]
    ZeroSubchannels,
    #[error("priority {0} out of range 0..=7")]
    BadPriority(u8),
}

/// One decoded-SCI observation in the sensing database.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingEntry {
    pub observed_slot: u64,
    /// Reservation expanded over the database horizon, anchor included.
    pub reserved_resources: Vec<Resource>,
    pub rsrp_dbm: f64,
    /// Priority announced in the received 1st-stage SCI.
    pub rx_priority: u8,
    pub reservation_period_ms: u16,
}

/// Per-UE sensing database. Entries are kept in observation order, so
/// eviction pops from the front and age filters can stop early; entries
/// outlive their usefulness after `t0`. Reservations are expanded eagerly
/// at record time over a configurable horizon so the selection and
/// re-evaluation paths only do overlap tests.
#[derive(Debug, Clone)]
pub struct SensingDb {
    entries: VecDeque<SensingEntry>,
    t0_slots: u64,
    expansion_horizon_slots: u64,
    codec: SciCodec,
}

impl SensingDb {
    pub fn new(t0_slots: u64, expansion_horizon_slots: u64, codec: SciCodec) -> Self {
        Self {
            entries: VecDeque::new(),
            t0_slots,
            expansion_horizon_slots,
            codec,
        }
    }

    /// Records one decoded SCI. Undecoded observations leave the database
    /// unchanged; raw energy goes to the congestion module instead.
    pub fn record_sensing(
        &mut self,
        slot: u64,
        obs: &RxObservation,
        anchor: &Resource,
        pool: &ResourcePool,
    ) {
        let Some(sci) = obs.sci1.as_ref().filter(|_| obs.decoded) else {
            return;
        };
        debug_assert!(obs.rsrp_dbm.is_finite());
        let reserved = self
            .codec
            .reserved_resources(sci, anchor, pool, self.expansion_horizon_slots)
            .unwrap_or_else(|_| {
                // A malformed assignment from a decoded SCI cannot happen for
                // transmissions generated inside the simulator; keep the
                // anchor so sensing still sees the slot as used.
                debug_assert!(false, "malformed reservation in decoded SCI");
                vec![*anchor]
            });
        self.entries.push_back(SensingEntry {
            observed_slot: slot,
            reserved_resources: reserved,
            rsrp_dbm: obs.rsrp_dbm,
            rx_priority: sci.priority,
            reservation_period_ms: sci.resource_reservation_period_ms,
        });
        self.evict(slot);
    }

    /// Drops entries older than the sensing-window depth. Entries arrive in
    /// observation order, so this pops from the front.
    pub fn evict(&mut self, now_slot: u64) {
        let min_slot = now_slot.saturating_sub(self.t0_slots);
        while self
            .entries
            .front()
            .map(|e| e.observed_slot < min_slot)
            .unwrap_or(false)
        {
            self.entries.pop_front();
        }
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &SensingEntry> {
        self.entries.iter()
    }

    pub fn newest(&self) -> Option<&SensingEntry> {
        self.entries.back()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a pre-expanded entry; used by tests and trace replay.
    /// Entries must be pushed in nondecreasing `observed_slot` order.
    pub fn push_entry(&mut self, entry: SensingEntry) {
        debug_assert!(self
            .entries
            .back()
            .map(|last| last.observed_slot <= entry.observed_slot)
            .unwrap_or(true));
        self.entries.push_back(entry);
    }

    /// Writes one line per entry:
    /// `observed_slot,rsrp_dbm,rx_priority,period_ms,slot:start:len;...`
    pub fn export_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            let resources: Vec<String> = e
                .reserved_resources
                .iter()
                .map(|r| format!("{}:{}:{}", r.slot_index, r.subchannel_start, r.subchannel_len))
                .collect();
            writeln!(
                out,
                "{},{:.3},{},{},{}",
                e.observed_slot,
                e.rsrp_dbm,
                e.rx_priority,
                e.reservation_period_ms,
                resources.join(";")
            )?;
        }
        Ok(())
    }
}

/// Mode-2 selection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Sensing-window depth in ms.
    pub t0_ms: u32,
    /// Gap between the end of the sensing window and the trigger, in ms.
    pub sensing_gap_ms: u32,
    /// Processing time before the trigger, in slots. The effective window
    /// edge is `max(sensing_gap_ms in slots, t_proc0_slots)`.
    pub t_proc0_slots: u32,
    /// Processing time between trigger and the first selectable slot.
    pub t_proc1_slots: u32,
    /// Required candidate fraction per own priority; each entry is one of
    /// 0.20, 0.35, 0.50.
    pub candidate_ratio_by_priority: [f64; 8],
    pub relax_step_db: f64,
    pub max_reserved: u8,
    /// Subchannels per transmission; candidates align to every
    /// (slot, subchannel-start) with this length.
    pub l_subch: u16,
    pub reselection_counter_min: u32,
    pub reselection_counter_max: u32,
    /// How many slots before a granted resource the re-evaluation runs.
    pub reeval_lead_slots: u32,
    /// Alternative reading of the candidate floor: keep only the lowest-RSRP
    /// candidates (exactly the required count) before the random MAC choice.
    pub rank_candidates_by_rsrp: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            t0_ms: 1100,
            sensing_gap_ms: 100,
            t_proc0_slots: 2,
            t_proc1_slots: 4,
            candidate_ratio_by_priority: [0.2; 8],
            relax_step_db: 3.0,
            max_reserved: 3,
            l_subch: 1,
            reselection_counter_min: 5,
            reselection_counter_max: 15,
            reeval_lead_slots: 4,
            rank_candidates_by_rsrp: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SensingError> {
        if self.t0_ms <= self.sensing_gap_ms {
            return Err(SensingError::BadWindow {
                t0_ms: self.t0_ms,
                gap_ms: self.sensing_gap_ms,
            });
        }
        for &ratio in &self.candidate_ratio_by_priority {
            ratio_percent(ratio)?;
        }
        if self.relax_step_db != 3.0 {
            return Err(SensingError::BadRelaxStep(self.relax_step_db));
        }
        if self.reselection_counter_min == 0
            || self.reselection_counter_min > self.reselection_counter_max
        {
            return Err(SensingError::BadCounterRange {
                min: self.reselection_counter_min,
                max: self.reselection_counter_max,
            });
        }
        if self.max_reserved == 0 || self.max_reserved > 3 {
            return Err(SensingError::BadMaxReserved(self.max_reserved));
        }
        if self.l_subch == 0 {
            return Err(SensingError::ZeroSubchannels);
        }
        Ok(())
    }

    pub fn t0_slots(&self, numerology: &Numerology) -> u64 {
        numerology.ms_to_slots(self.t0_ms as u64)
    }

    /// Effective sensing-window upper-edge distance from the trigger.
    pub fn gap_slots(&self, numerology: &Numerology) -> u64 {
        numerology
            .ms_to_slots(self.sensing_gap_ms as u64)
            .max(self.t_proc0_slots as u64)
    }
}

/// Converts an allowed candidate ratio to an exact integer percentage so
/// the floor test is free of float rounding.
pub fn ratio_percent(ratio: f64) -> Result<u64, SensingError> {
    for pct in [20u64, 35, 50] {
        if (ratio - pct as f64 / 100.0).abs() < 1e-9 {
            return Ok(pct);
        }
    }
    Err(SensingError::InvalidCandidateRatio(ratio))
}

/// A UE's selected and reserved set of resources.
#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    /// Up to `max_reserved` resources, sorted by (slot, subchannel).
    pub resources: Vec<Resource>,
    /// 0 = one-shot grant.
    pub period_ms: u16,
    /// Remaining periods before a reselection is forced; `None` for
    /// one-shot grants.
    pub reselection_counter: Option<u32>,
    pub creating_priority: u8,
    /// Trigger slot of the selection that produced this grant.
    pub selected_at_slot: u64,
    /// Upper edge of the sensing window used at selection time;
    /// re-evaluation only considers SCIs decoded after this slot.
    pub sensing_cutoff_slot: u64,
}

/// Output of [`select_candidates`].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSelection {
    /// Surviving candidates in (slot, subchannel-start) order.
    pub candidates: Vec<Resource>,
    /// Size of the total candidate set before exclusion.
    pub total_candidates: usize,
    /// Number of 3 dB relaxation rounds that were needed.
    pub relaxations: u32,
    pub trigger_slot: u64,
    pub sensing_cutoff_slot: u64,
}

type ReservationIndex = HashMap<u64, Vec<(u16, u16, f64, u8)>>;

fn candidate_excluded(
    candidate: &Resource,
    index: &ReservationIndex,
    pool: &ResourcePool,
    own_priority: u8,
    relax_db: f64,
) -> bool {
    let Some(list) = index.get(&candidate.slot_index) else {
        return false;
    };
    list.iter().any(|&(start, len, rsrp, rx_pri)| {
        (start as u32) < candidate.subchannel_start as u32 + candidate.subchannel_len as u32
            && (candidate.subchannel_start as u32) < start as u32 + len as u32
            && rsrp > pool.exclusion_threshold_dbm(rx_pri, own_priority) + relax_db
    })
}

/// Candidate generation for one selection trigger.
///
/// 1. Sensing window: entries observed in `[n - t0, n - gap]`.
/// 2. Selection window: sidelink slots in `[n + t_proc1, n + pdb]`.
/// 3. Total set: every (slot, start) position with `l_subch` subchannels.
/// 4. Exclude candidates overlapping a sensed reservation whose RSRP is
///    above the (rx priority, own priority) threshold.
/// 5. While fewer than the configured fraction of the total set survives,
///    raise all thresholds by 3 dB and redo the exclusion.
pub fn select_candidates(
    db: &SensingDb,
    pool: &ResourcePool,
    trigger_slot: u64,
    pdb_slots: u64,
    own_priority: u8,
    cfg: &SelectionConfig,
) -> Result<CandidateSelection, SensingError> {
    if own_priority > 7 {
        return Err(SensingError::BadPriority(own_priority));
    }
    let numerology = &pool.numerology;
    let t_proc1 = cfg.t_proc1_slots as u64;
    let sel_lo = trigger_slot + t_proc1;
    let sel_hi = trigger_slot + pdb_slots;
    let slots = if pdb_slots > t_proc1 {
        pool.sl_slots_in(sel_lo, sel_hi)
    } else {
        Vec::new()
    };
    if slots.is_empty() {
        return Err(SensingError::EmptySelectionWindow {
            pdb_slots,
            t_proc1: cfg.t_proc1_slots,
        });
    }

    let starts_per_slot = pool
        .num_subchannels
        .checked_sub(cfg.l_subch)
        .map(|d| d + 1)
        .unwrap_or(0);
    let mut total: Vec<Resource> = Vec::with_capacity(slots.len() * starts_per_slot as usize);
    for &slot in &slots {
        for start in 0..starts_per_slot {
            total.push(Resource::new(slot, start, cfg.l_subch));
        }
    }

    let gap = cfg.gap_slots(numerology);
    let window_lo = trigger_slot.saturating_sub(cfg.t0_slots(numerology));
    let window_hi = trigger_slot.saturating_sub(gap);
    let window_valid = gap <= trigger_slot;

    let mut index: ReservationIndex = HashMap::new();
    let mut max_rsrp = f64::NEG_INFINITY;
    if window_valid {
        for entry in db.iter() {
            if entry.observed_slot < window_lo || entry.observed_slot > window_hi {
                continue;
            }
            for r in &entry.reserved_resources {
                if r.slot_index < sel_lo || r.slot_index > sel_hi {
                    continue;
                }
                index.entry(r.slot_index).or_default().push((
                    r.subchannel_start,
                    r.subchannel_len,
                    entry.rsrp_dbm,
                    entry.rx_priority,
                ));
                max_rsrp = max_rsrp.max(entry.rsrp_dbm);
            }
        }
    }

    let pct = ratio_percent(cfg.candidate_ratio_by_priority[own_priority as usize])?;
    let required_ratio_met =
        |survivors: usize| survivors as u64 * 100 >= pct * total.len() as u64;

    // After finitely many +3 dB rounds every threshold exceeds the largest
    // sensed RSRP, so the loop always terminates within this bound.
    let relax_bound = if index.is_empty() {
        0
    } else {
        let span = max_rsrp - pool.min_threshold_dbm();
        (span / cfg.relax_step_db).ceil().max(0.0) as u32 + 1
    };

    for relaxations in 0..=relax_bound {
        let relax_db = relaxations as f64 * cfg.relax_step_db;
        let mut survivors: Vec<Resource> = total
            .iter()
            .filter(|c| !candidate_excluded(c, &index, pool, own_priority, relax_db))
            .copied()
            .collect();
        if required_ratio_met(survivors.len()) {
            if cfg.rank_candidates_by_rsrp {
                rank_by_rsrp(&mut survivors, &index, pct, total.len());
            }
            return Ok(CandidateSelection {
                candidates: survivors,
                total_candidates: total.len(),
                relaxations,
                trigger_slot,
                sensing_cutoff_slot: if window_valid { window_hi } else { 0 },
            });
        }
    }
    unreachable!("relaxation loop must satisfy the candidate ratio within its bound");
}

/// Keeps only the `ceil(pct * total / 100)` candidates with the lowest
/// observed RSRP (untouched candidates rank lowest), preserving the
/// deterministic (slot, start) order among ties.
fn rank_by_rsrp(survivors: &mut Vec<Resource>, index: &ReservationIndex, pct: u64, total: usize) {
    let required = ((pct * total as u64).div_ceil(100)) as usize;
    if survivors.len() <= required {
        return;
    }
    let mut keyed: Vec<(f64, usize, Resource)> = survivors
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let worst = index
                .get(&c.slot_index)
                .map(|list| {
                    list.iter()
                        .filter(|&&(start, len, _, _)| {
                            (start as u32) < c.subchannel_start as u32 + c.subchannel_len as u32
                                && (c.subchannel_start as u32) < start as u32 + len as u32
                        })
                        .map(|&(_, _, rsrp, _)| rsrp)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .unwrap_or(f64::NEG_INFINITY);
            (worst, i, *c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.truncate(required);
    keyed.sort_by_key(|&(_, i, _)| i);
    *survivors = keyed.into_iter().map(|(_, _, c)| c).collect();
}

/// Random MAC-layer choice of `n_tx` resources from the surviving
/// candidates, drawn uniformly without replacement.
pub fn mac_select(
    selection: &CandidateSelection,
    n_tx: usize,
    period_ms: u16,
    own_priority: u8,
    cfg: &SelectionConfig,
    rng: &mut impl Rng,
) -> Result<Grant, SensingError> {
    if n_tx > selection.candidates.len() {
        return Err(SensingError::InsufficientCandidates {
            needed: n_tx,
            available: selection.candidates.len(),
        });
    }
    debug_assert!(n_tx <= cfg.max_reserved as usize);
    let mut resources: Vec<Resource> =
        rand::seq::index::sample(rng, selection.candidates.len(), n_tx)
            .into_iter()
            .map(|i| selection.candidates[i])
            .collect();
    resources.sort_unstable();
    let reselection_counter = if period_ms > 0 {
        Some(rng.gen_range(cfg.reselection_counter_min..=cfg.reselection_counter_max))
    } else {
        None
    };
    Ok(Grant {
        resources,
        period_ms,
        reselection_counter,
        creating_priority: own_priority,
        selected_at_slot: selection.trigger_slot,
        sensing_cutoff_slot: selection.sensing_cutoff_slot,
    })
}

/// Outcome of a pre-transmission re-evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Reevaluation {
    Keep,
    /// These granted resources would now be excluded and need reselection.
    Reselect(Vec<Resource>),
}

/// Re-runs the exclusion test for the grant's imminent resources against
/// SCIs decoded after the original sensing window (no relaxation applied).
pub fn reevaluate(
    grant: &Grant,
    db: &SensingDb,
    now_slot: u64,
    own_priority: u8,
    cfg: &SelectionConfig,
    pool: &ResourcePool,
) -> Reevaluation {
    let lead = cfg.reeval_lead_slots as u64;
    let imminent: Vec<&Resource> = grant
        .resources
        .iter()
        .filter(|r| r.slot_index > now_slot && r.slot_index <= now_slot + lead)
        .collect();
    if imminent.is_empty() {
        return Reevaluation::Keep;
    }

    // Entries are ordered by observation slot; only the ones decoded after
    // the original sensing window matter, so walk from the newest and stop
    // at the cutoff.
    let mut failed = Vec::new();
    for resource in imminent {
        let hit = db
            .iter()
            .rev()
            .take_while(|e| e.observed_slot > grant.sensing_cutoff_slot)
            .any(|e| {
                e.rsrp_dbm > pool.exclusion_threshold_dbm(e.rx_priority, own_priority)
                    && e.reserved_resources.iter().any(|r| r.overlaps(resource))
            });
        if hit {
            failed.push(*resource);
        }
    }
    if failed.is_empty() {
        Reevaluation::Keep
    } else {
        Reevaluation::Reselect(failed)
    }
}

/// Result of checking an incoming reservation against an own grant.
#[derive(Debug, Clone, PartialEq)]
pub enum PreemptionCheck {
    /// No contested resources, or the incoming traffic does not outrank us.
    None,
    /// Release every granted resource in these slots; the incoming traffic
    /// preempts ours.
    Release(Vec<u64>),
    /// The incoming reservation blocks resources we outrank and the pool
    /// will not auto-release them; escalate a preemption request.
    RequestPreemption,
}

/// Evaluates an incoming SCI (already expanded to `incoming_resources`)
/// against our grant.
///
/// - With pool preemption enabled, strictly higher-priority incoming traffic
///   overlapping the grant forces a release of all granted resources in the
///   contested slots. Lower or equal priority leaves the grant untouched
///   (the other side runs the same check and yields).
/// - With preemption disabled, occupied resources can only be reclaimed by
///   escalation: that is allowed when the incoming priority is below the
///   pool threshold and below our own.
pub fn preemption_check(
    grant: &Grant,
    incoming_priority: u8,
    incoming_resources: &[Resource],
    pool: &ResourcePool,
    own_priority: u8,
) -> PreemptionCheck {
    let contested: BTreeSet<u64> = grant
        .resources
        .iter()
        .flat_map(|own| {
            incoming_resources
                .iter()
                .filter(move |inc| inc.overlaps(own))
                .map(|inc| inc.slot_index)
        })
        .collect();
    if contested.is_empty() {
        return PreemptionCheck::None;
    }
    if pool.preemption_enabled {
        if incoming_priority < own_priority {
            return PreemptionCheck::Release(contested.into_iter().collect());
        }
        return PreemptionCheck::None;
    }
    if incoming_priority > pool.preemption_priority_threshold && incoming_priority > own_priority {
        return PreemptionCheck::RequestPreemption;
    }
    PreemptionCheck::None
}

/// Events that can force a grant reselection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReselectionEvent {
    CounterExpired,
    PreemptionRelease,
    ReevaluationFail,
    NewTbNoGrant,
    PdbViolation,
}

/// Whether the event triggers reselection of the grant. Counter expiry only
/// applies to periodic grants.
pub fn reselection_trigger(grant: &Grant, event: ReselectionEvent) -> bool {
    match event {
        ReselectionEvent::CounterExpired => grant.period_ms > 0,
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::RxObservation;
    use crate::radio::{
        build_resource_pool, flat_rsrp_thresholds, Bwp, CyclicPrefix, PoolConfig, PoolKind,
        PoolRole,
    };
    use crate::sci::Sci1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool_with(num_subchannels: u16, thresholds: [[f64; 8]; 8]) -> ResourcePool {
        let n = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        let bwp = Bwp::with_prb_count(5900.0, 10, n, num_subchannels * 10).unwrap();
        build_resource_pool(
            &bwp,
            &PoolConfig {
                pool_id: 0,
                subchannel_size_prb: 10,
                num_subchannels: Some(num_subchannels),
                slot_bitmap: vec![true],
                psfch_period_slots: 0,
                rsrp_thresholds_dbm: thresholds,
                cbr_busy_threshold_dbm: -94.0,
                preemption_enabled: false,
                preemption_priority_threshold: 4,
                kind: PoolKind::Normal,
                role: PoolRole::Both,
            },
        )
        .unwrap()
    }

    fn entry(observed_slot: u64, rsrp: f64, resources: Vec<Resource>) -> SensingEntry {
        SensingEntry {
            observed_slot,
            reserved_resources: resources,
            rsrp_dbm: rsrp,
            rx_priority: 3,
            reservation_period_ms: 0,
        }
    }

    fn db_with(mut entries: Vec<SensingEntry>) -> SensingDb {
        let mut db = SensingDb::new(1100, 2000, SciCodec::default());
        entries.sort_by_key(|e| e.observed_slot);
        for e in entries {
            db.push_entry(e);
        }
        db
    }

    fn cfg() -> SelectionConfig {
        SelectionConfig::default()
    }

    #[test]
    fn empty_db_returns_full_window() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![]);
        let sel = select_candidates(&db, &pool, 2000, 20, 3, &cfg()).unwrap();
        // Window [2004, 2020] -> 17 slots x 5 starts.
        assert_eq!(sel.total_candidates, 17 * 5);
        assert_eq!(sel.candidates.len(), sel.total_candidates);
        assert_eq!(sel.relaxations, 0);
    }

    #[test]
    fn empty_selection_window_rejected() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![]);
        assert!(matches!(
            select_candidates(&db, &pool, 2000, 3, 3, &cfg()),
            Err(SensingError::EmptySelectionWindow { .. })
        ));
    }

    #[test]
    fn one_relaxation_recovers_the_floor() {
        // 5 subchannels x 20 slots = 100 candidates. Reserve 90 of them at
        // an RSRP above the base threshold but below threshold + 3 dB: pass
        // one leaves 10 < 20 required, one relaxation admits everything.
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let mut cfg = cfg();
        cfg.t_proc1_slots = 4;
        let trigger = 2000u64;
        let mut reserved = Vec::new();
        for slot in 2004..2022 {
            for start in 0..5 {
                reserved.push(Resource::new(slot, start, 1));
            }
        }
        assert_eq!(reserved.len(), 90);
        let db = db_with(vec![entry(1000, -88.5, reserved)]);
        let sel = select_candidates(&db, &pool, trigger, 23, 3, &cfg).unwrap();
        assert_eq!(sel.total_candidates, 100);
        assert_eq!(sel.relaxations, 1);
        assert_eq!(sel.candidates.len(), 100);
    }

    #[test]
    fn exclusion_respects_threshold_table() {
        let mut th = flat_rsrp_thresholds(-90.0);
        // Own priority 0 tolerates everything from rx priority 3.
        for rx in 0..8 {
            th[rx][0] = 0.0;
        }
        let pool = pool_with(2, th);
        let reserved = vec![Resource::new(2004, 0, 1)];
        let db = db_with(vec![entry(1000, -60.0, reserved)]);

        let high = select_candidates(&db, &pool, 2000, 10, 0, &cfg()).unwrap();
        assert_eq!(high.candidates.len(), high.total_candidates);

        let low = select_candidates(&db, &pool, 2000, 10, 3, &cfg()).unwrap();
        assert_eq!(low.candidates.len(), low.total_candidates - 1);
        assert!(!low.candidates.contains(&Resource::new(2004, 0, 1)));
    }

    #[test]
    fn entries_outside_sensing_window_ignored() {
        let pool = pool_with(2, flat_rsrp_thresholds(-90.0));
        let cfg = cfg();
        // Window for trigger 2000 is [900, 1900] at mu = 0.
        let within = entry(1500, -60.0, vec![Resource::new(2004, 0, 1)]);
        let too_old = entry(800, -60.0, vec![Resource::new(2004, 1, 1)]);
        let too_new = entry(1950, -60.0, vec![Resource::new(2005, 0, 1)]);
        let db = db_with(vec![within, too_old, too_new]);
        let sel = select_candidates(&db, &pool, 2000, 10, 3, &cfg).unwrap();
        assert!(!sel.candidates.contains(&Resource::new(2004, 0, 1)));
        assert!(sel.candidates.contains(&Resource::new(2004, 1, 1)));
        assert!(sel.candidates.contains(&Resource::new(2005, 0, 1)));
    }

    #[test]
    fn record_and_evict() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let mut db = SensingDb::new(1100, 2000, SciCodec::default());
        let obs = RxObservation {
            rsrp_dbm: -70.0,
            sinr_db: 20.0,
            decoded: true,
            sci1: Some(Sci1::default()),
            energy_dbm: -70.0,
        };
        db.record_sensing(100, &obs, &Resource::new(104, 0, 1), &pool);
        assert_eq!(db.len(), 1);
        assert_eq!(db.newest().unwrap().reserved_resources, vec![Resource::new(104, 0, 1)]);

        let undecoded = RxObservation {
            decoded: false,
            sci1: None,
            ..obs.clone()
        };
        db.record_sensing(101, &undecoded, &Resource::new(105, 0, 1), &pool);
        assert_eq!(db.len(), 1);

        // Aged beyond 1100 slots (mu = 0 -> 1100 ms).
        db.record_sensing(1300, &obs, &Resource::new(1304, 0, 1), &pool);
        assert_eq!(db.len(), 1);
        assert_eq!(db.newest().unwrap().observed_slot, 1300);
    }

    #[test]
    fn mac_select_is_deterministic_and_duplicate_free() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![]);
        let cfg = cfg();
        let sel = select_candidates(&db, &pool, 2000, 25, 3, &cfg).unwrap();
        assert!(sel.candidates.len() >= 100);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grant = mac_select(&sel, 3, 100, 3, &cfg, &mut rng).unwrap();
        assert_eq!(grant.resources.len(), 3);
        let unique: BTreeSet<_> = grant.resources.iter().collect();
        assert_eq!(unique.len(), 3);
        assert!(grant.reselection_counter.unwrap() >= cfg.reselection_counter_min);
        assert!(grant.reselection_counter.unwrap() <= cfg.reselection_counter_max);

        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let grant2 = mac_select(&sel, 3, 100, 3, &cfg, &mut rng2).unwrap();
        assert_eq!(grant, grant2);

        for r in &grant.resources {
            assert!(r.slot_index >= 2000 + cfg.t_proc1_slots as u64);
        }
    }

    #[test]
    fn mac_select_single_candidate() {
        let sel = CandidateSelection {
            candidates: vec![Resource::new(10, 0, 1)],
            total_candidates: 1,
            relaxations: 0,
            trigger_slot: 5,
            sensing_cutoff_slot: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grant = mac_select(&sel, 1, 0, 2, &cfg(), &mut rng).unwrap();
        assert_eq!(grant.resources, vec![Resource::new(10, 0, 1)]);
        assert_eq!(grant.reselection_counter, None);
    }

    #[test]
    fn mac_select_insufficient() {
        let sel = CandidateSelection {
            candidates: vec![Resource::new(10, 0, 1)],
            total_candidates: 1,
            relaxations: 0,
            trigger_slot: 5,
            sensing_cutoff_slot: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            mac_select(&sel, 2, 0, 2, &cfg(), &mut rng),
            Err(SensingError::InsufficientCandidates { .. })
        ));
    }

    fn grant_at(slots: &[u64]) -> Grant {
        Grant {
            resources: slots.iter().map(|&s| Resource::new(s, 0, 1)).collect(),
            period_ms: 100,
            reselection_counter: Some(5),
            creating_priority: 3,
            selected_at_slot: 2000,
            sensing_cutoff_slot: 1900,
        }
    }

    #[test]
    fn reevaluation_keeps_without_new_scis() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![entry(1500, -60.0, vec![Resource::new(2010, 0, 1)])]);
        let grant = grant_at(&[2010]);
        // Entry observed before the cutoff: it was already part of selection.
        assert_eq!(
            reevaluate(&grant, &db, 2006, 3, &cfg(), &pool),
            Reevaluation::Keep
        );
    }

    #[test]
    fn reevaluation_flags_late_reservation() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![entry(1950, -60.0, vec![Resource::new(2010, 0, 1)])]);
        let grant = grant_at(&[2010]);
        assert_eq!(
            reevaluate(&grant, &db, 2006, 3, &cfg(), &pool),
            Reevaluation::Reselect(vec![Resource::new(2010, 0, 1)])
        );
    }

    #[test]
    fn reevaluation_ignores_other_subchannels() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![entry(1950, -60.0, vec![Resource::new(2010, 2, 1)])]);
        let grant = grant_at(&[2010]);
        assert_eq!(
            reevaluate(&grant, &db, 2006, 3, &cfg(), &pool),
            Reevaluation::Keep
        );
    }

    #[test]
    fn reevaluation_only_looks_at_imminent_resources() {
        let pool = pool_with(5, flat_rsrp_thresholds(-90.0));
        let db = db_with(vec![entry(1950, -60.0, vec![Resource::new(2050, 0, 1)])]);
        let grant = grant_at(&[2050]);
        // 2050 is far beyond now + lead.
        assert_eq!(
            reevaluate(&grant, &db, 2006, 3, &cfg(), &pool),
            Reevaluation::Keep
        );
    }

    fn preemption_pool(enabled: bool) -> ResourcePool {
        let n = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        let bwp = Bwp::with_prb_count(5900.0, 10, n, 50).unwrap();
        build_resource_pool(
            &bwp,
            &PoolConfig {
                pool_id: 0,
                subchannel_size_prb: 10,
                num_subchannels: Some(5),
                slot_bitmap: vec![true],
                psfch_period_slots: 0,
                rsrp_thresholds_dbm: flat_rsrp_thresholds(-90.0),
                cbr_busy_threshold_dbm: -94.0,
                preemption_enabled: enabled,
                preemption_priority_threshold: 4,
                kind: PoolKind::Normal,
                role: PoolRole::Both,
            },
        )
        .unwrap()
    }

    #[test]
    fn preemption_release_on_higher_priority_overlap() {
        let pool = preemption_pool(true);
        let grant = grant_at(&[2010, 2020]);
        let incoming = vec![Resource::new(2010, 0, 2)];
        assert_eq!(
            preemption_check(&grant, 1, &incoming, &pool, 3),
            PreemptionCheck::Release(vec![2010])
        );
    }

    #[test]
    fn preemption_none_for_lower_priority() {
        let pool = preemption_pool(true);
        let grant = grant_at(&[2010]);
        let incoming = vec![Resource::new(2010, 0, 2)];
        assert_eq!(
            preemption_check(&grant, 6, &incoming, &pool, 3),
            PreemptionCheck::None
        );
        // Equal priority never preempts either.
        assert_eq!(
            preemption_check(&grant, 3, &incoming, &pool, 3),
            PreemptionCheck::None
        );
    }

    #[test]
    fn preemption_disabled_threshold_rules() {
        let pool = preemption_pool(false);
        let grant = grant_at(&[2010]);
        let incoming = vec![Resource::new(2010, 0, 2)];
        // Incoming priority above the pool threshold (value 2 < 4): no
        // escalation even though it is below our own priority 1.
        assert_eq!(
            preemption_check(&grant, 2, &incoming, &pool, 1),
            PreemptionCheck::None
        );
        // Below the threshold and below our priority: escalate.
        assert_eq!(
            preemption_check(&grant, 6, &incoming, &pool, 3),
            PreemptionCheck::RequestPreemption
        );
    }

    #[test]
    fn preemption_requires_overlap() {
        let pool = preemption_pool(true);
        let grant = grant_at(&[2010]);
        let incoming = vec![Resource::new(2011, 0, 2)];
        assert_eq!(
            preemption_check(&grant, 0, &incoming, &pool, 3),
            PreemptionCheck::None
        );
    }

    #[test]
    fn reselection_events() {
        let periodic = grant_at(&[2010]);
        assert!(reselection_trigger(&periodic, ReselectionEvent::CounterExpired));
        assert!(reselection_trigger(&periodic, ReselectionEvent::PreemptionRelease));
        assert!(reselection_trigger(&periodic, ReselectionEvent::ReevaluationFail));
        assert!(reselection_trigger(&periodic, ReselectionEvent::NewTbNoGrant));
        assert!(reselection_trigger(&periodic, ReselectionEvent::PdbViolation));

        let one_shot = Grant {
            period_ms: 0,
            reselection_counter: None,
            ..grant_at(&[2010])
        };
        assert!(!reselection_trigger(&one_shot, ReselectionEvent::CounterExpired));
        assert!(reselection_trigger(&one_shot, ReselectionEvent::PreemptionRelease));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut bad = cfg();
        bad.candidate_ratio_by_priority[2] = 0.25;
        assert!(matches!(
            bad.validate(),
            Err(SensingError::InvalidCandidateRatio(_))
        ));
        let mut bad = cfg();
        bad.relax_step_db = 2.0;
        assert_eq!(bad.validate(), Err(SensingError::BadRelaxStep(2.0)));
        let mut bad = cfg();
        bad.t0_ms = 50;
        assert!(matches!(bad.validate(), Err(SensingError::BadWindow { .. })));
    }
}
