//! The slot-driven event loop tying every subsystem together.
//!
//! Each slot runs a fixed phase order: (1) traffic arrivals and resource
//! selection, (2) transmissions, (3) channel evaluation with half-duplex,
//! (4) sensing and RSSI recording, (5) re-evaluation and preemption checks,
//! (6) HARQ feedback on PSFCH slots, (7) congestion measurement and CR
//! enforcement, (8) mobility. The outer loop is slot-sequential; all
//! randomness comes from per-UE, per-purpose substreams of the scenario
//! seed, so runs are reproducible bit for bit.
//!
//! Modeling notes: resource pools are independent frequency islands (no
//! cross-pool interference); PSFCH feedback transmissions occupy their own
//! symbols and do not count against the data half-duplex constraint;
//! sensing only records SCIs received on the UE's own transmit pool.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::congestion::{ChannelLoadState, CrEnforcement};
use crate::harq::{
    generate_feedback, on_feedback, psfch_slot_for, Feedback, FeedbackMode, HarqProcess, HarqStep,
};
use crate::metrics::{EventRecord, LoadSample, Metrics, PairRecord, TbOutcome, TbRecord};
use crate::mode1::{DciAction, Mode1Error, Mode1Scheduler};
use crate::phy::{decode_outcome, dbm_to_mw, mw_to_dbm, rsrp_at, sinr_db, PhyError, RxObservation};
use crate::radio::{Resource, ResourcePool};
use crate::rng::{shadow_sample_db, substream};
use crate::scenario::{Scenario, ScenarioError, UeMode};
use crate::sci::{pack_assignments, AssignmentGeometry, ExtraReservation, Sci1, Sci2, SciError};
use crate::sensing::{
    mac_select, preemption_check, reevaluate, reselection_trigger, select_candidates, Grant,
    PreemptionCheck, Reevaluation, ReselectionEvent, SelectionConfig, SensingDb, SensingError,
};
use crate::traffic::{
    advance_mobility, select_sync_source, wrap_distance, CastType, Destination, SyncSource,
    TrafficGenerator, TransportBlock, UeKinematics,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ScenarioError),
    #[error("slot {slot}: {source}")]
    Phy {
        slot: u64,
        #[source]
        source: PhyError,
    },
    #[error("slot {slot}, UE {ue}: {source}")]
    Sensing {
        slot: u64,
        ue: u32,
        #[source]
        source: SensingError,
    },
    #[error("slot {slot}, UE {ue}: {source}")]
    Sci {
        slot: u64,
        ue: u32,
        #[source]
        source: SciError,
    },
    #[error("slot {slot}: {source}")]
    Mode1 {
        slot: u64,
        #[source]
        source: Mode1Error,
    },
}

/// One transmission placed on a pool resource.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub ue_id: u32,
    pub pool_id: u32,
    pub resource: Resource,
    pub sci1: Sci1,
    pub sci2: Sci2,
    pub tx_power_dbm: f64,
    pub tb_id: u64,
}

/// One reception attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct RxRecord {
    pub ue_id: u32,
    pub tx_ue_id: u32,
    pub tb_id: u64,
    pub observation: RxObservation,
    pub co_channel_interferers: usize,
    pub half_duplex_blocked: bool,
}

/// One HARQ feedback bit delivered on the PSFCH.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRecord {
    pub from_ue: u32,
    pub to_ue: u32,
    pub tb_id: u64,
    pub feedback: Feedback,
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotEvent {
    pub slot: u64,
    pub txs: Vec<TxRecord>,
    pub rxs: Vec<RxRecord>,
    pub feedback: Vec<FeedbackRecord>,
}

impl SlotEvent {
    /// No UE may appear as both a transmitter and a decoded receiver.
    pub fn half_duplex_ok(&self) -> bool {
        let transmitters: BTreeSet<u32> = self.txs.iter().map(|t| t.ue_id).collect();
        self.rxs
            .iter()
            .all(|r| !(r.observation.decoded && transmitters.contains(&r.ue_id)))
    }
}

/// Why a transport block reached its terminal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FinalizeCause {
    HarqDone,
    HarqFailed,
    Expired,
    DroppedCr,
}

struct PendingFeedback {
    deliver_slot: u64,
    entries: Vec<(u32, Feedback)>,
}

struct ActiveTb {
    tb: TransportBlock,
    deadline_slot: u64,
    proc: HarqProcess,
    needs_tx: bool,
    decoded_by: BTreeSet<u32>,
    /// (receiver, distance at first transmission); fixed once.
    intended: Vec<(u32, f64)>,
    first_tx_slot: Option<u64>,
    delivered_at_slot: Option<u64>,
    pending_feedback: Option<PendingFeedback>,
}

impl ActiveTb {
    fn update_delivery(&mut self, slot: u64) {
        if self.delivered_at_slot.is_some() || self.intended.is_empty() {
            return;
        }
        let delivered = match self.tb.cast_type {
            CastType::Unicast | CastType::Groupcast => self
                .intended
                .iter()
                .all(|(rx, _)| self.decoded_by.contains(rx)),
            CastType::Broadcast => self
                .intended
                .iter()
                .any(|(rx, _)| self.decoded_by.contains(rx)),
        };
        if delivered {
            self.delivered_at_slot = Some(slot);
        }
    }
}

struct ActiveGrant {
    grant: Grant,
    pool_id: u32,
    /// Future, not-yet-used resources of the current period, ascending.
    pending: Vec<Resource>,
    period_slots: u64,
    next_rollover: u64,
    periods_left: u32,
    /// Exceptional-pool allocation; temporary, never periodic.
    temporary: bool,
}

struct UeState {
    pool: Arc<ResourcePool>,
    kin: UeKinematics,
    generator: TrafficGenerator,
    sensing: SensingDb,
    load: ChannelLoadState,
    selection_cfg: SelectionConfig,
    grant: Option<ActiveGrant>,
    queue: VecDeque<TransportBlock>,
    active: Option<ActiveTb>,
    select_rng: ChaCha8Rng,
    exceptional_rng: ChaCha8Rng,
    harq_seq: u8,
    sync: SyncSource,
    exceptional_windows: Vec<(u64, u64)>,
    desired_tx: usize,
}

impl UeState {
    fn in_exceptional_window(&self, slot: u64) -> bool {
        self.exceptional_windows
            .iter()
            .any(|&(from, to)| slot >= from && slot <= to)
    }
}

/// The running simulation.
pub struct World {
    scenario: Scenario,
    ues: Vec<UeState>,
    ue_index_by_id: BTreeMap<u32, usize>,
    groups: BTreeMap<u32, Vec<u32>>,
    schedulers: Vec<Mode1Scheduler>,
    /// DCI actions keyed by slot: (scheduler index, grant id, action).
    dci_by_slot: BTreeMap<u64, Vec<(usize, u32, DciAction)>>,
    geometry: AssignmentGeometry,
    slot: u64,
    metrics: Metrics,
    cbr_interval_slots: u64,
    trace_interval_slots: u64,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let numerology = scenario.numerology;
        let spm = numerology.slots_per_ms();
        let max_pdb_slots = scenario
            .ues
            .iter()
            .map(|u| numerology.ms_to_slots(u.template.pdb_ms as u64))
            .max()
            .unwrap_or(0);
        let t0_slots = scenario.selection.t0_slots(&numerology);
        let expansion_horizon = t0_slots + max_pdb_slots + 64;

        let mut ue_index_by_id = BTreeMap::new();
        let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (i, ue) in scenario.ues.iter().enumerate() {
            ue_index_by_id.insert(ue.ue_id, i);
            if let Some(gid) = ue.group_id {
                groups.entry(gid).or_default().push(ue.ue_id);
            }
        }

        let mut ues = Vec::with_capacity(scenario.ues.len());
        for cfg in &scenario.ues {
            let pool = scenario.pool(cfg.tx_pool_id).expect("validated").clone();
            let lane = scenario.road.lanes[cfg.lane as usize];
            let kin = UeKinematics {
                position_m: (cfg.initial_x_m.rem_euclid(scenario.road.length_m), lane.y_m),
                speed_mps: lane.speed_mps,
                lane: cfg.lane,
                heading_rad: lane.heading_rad,
            };
            let generator = TrafficGenerator::new(
                cfg.ue_id,
                cfg.traffic.clone(),
                cfg.template.clone(),
                &numerology,
                substream(scenario.seed, "traffic", &[cfg.ue_id as u64]),
            )
            .map_err(ScenarioError::from)?;
            let mut selection_cfg = scenario.selection.clone();
            selection_cfg.l_subch = cfg.l_subch;
            let desired_tx = if cfg.feedback_mode != FeedbackMode::None || scenario.harq.max_tx > 1
            {
                (scenario.harq.max_tx as usize).min(selection_cfg.max_reserved as usize)
            } else {
                1
            };
            ues.push(UeState {
                sensing: SensingDb::new(t0_slots, expansion_horizon, scenario.sci.clone()),
                load: ChannelLoadState::new(
                    &pool,
                    scenario.congestion.cr_past_ms,
                    scenario.congestion.cr_future_ms,
                ),
                selection_cfg,
                pool,
                kin,
                generator,
                grant: None,
                queue: VecDeque::new(),
                active: None,
                select_rng: substream(scenario.seed, "select", &[cfg.ue_id as u64]),
                exceptional_rng: substream(scenario.seed, "exceptional", &[cfg.ue_id as u64]),
                harq_seq: 0,
                sync: select_sync_source(&cfg.sync_candidates, scenario.sync_preference),
                exceptional_windows: scenario
                    .exceptional_windows
                    .iter()
                    .filter(|w| w.ue_id == cfg.ue_id)
                    .map(|w| (numerology.ms_to_slots(w.from_ms), numerology.ms_to_slots(w.to_ms)))
                    .collect(),
                desired_tx,
            });
        }

        // Mode-1 schedulers: one per mode-1 pool, grants packed first-fit in
        // UE order.
        let mut schedulers: Vec<Mode1Scheduler> = Vec::new();
        let mut scheduler_of_pool: BTreeMap<u32, usize> = BTreeMap::new();
        let mut grant_of_ue: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
        let mode1_pool_ids: BTreeSet<u32> = scenario
            .ues
            .iter()
            .filter(|u| u.mode == UeMode::Mode1)
            .map(|u| u.tx_pool_id)
            .collect();
        for pool_id in mode1_pool_ids {
            let pool = scenario.pool(pool_id).expect("validated");
            let members: Vec<u32> = scenario
                .ues
                .iter()
                .filter(|u| u.mode == UeMode::Mode1 && u.tx_pool_id == pool_id)
                .map(|u| u.ue_id)
                .collect();
            scheduler_of_pool.insert(pool_id, schedulers.len());
            schedulers.push(Mode1Scheduler::new((**pool).clone(), members));
        }
        for cfg in &scenario.ues {
            if cfg.mode != UeMode::Mode1 {
                continue;
            }
            let grant_cfg = cfg.mode1_grant.expect("validated");
            let sched_idx = scheduler_of_pool[&cfg.tx_pool_id];
            let period_slots = numerology.ms_to_slots(grant_cfg.period_ms as u64);
            let scheduler = &mut schedulers[sched_idx];
            let pattern = scheduler
                .find_free_pattern(period_slots, cfg.l_subch)
                .map_err(|source| SimError::Mode1 { slot: 0, source })?;
            let grant_id = scheduler
                .configure_grant(cfg.ue_id, grant_cfg.grant_type, pattern, grant_cfg.period_ms)
                .map_err(|source| SimError::Mode1 { slot: 0, source })?;
            grant_of_ue.insert(cfg.ue_id, (sched_idx, grant_id));
        }
        let mut dci_by_slot: BTreeMap<u64, Vec<(usize, u32, DciAction)>> = BTreeMap::new();
        for dci in &scenario.dci_events {
            let (sched_idx, grant_id) = grant_of_ue[&dci.ue_id];
            let action = if dci.activate {
                DciAction::Activate
            } else {
                DciAction::Deactivate
            };
            dci_by_slot
                .entry(numerology.ms_to_slots(dci.time_ms))
                .or_default()
                .push((sched_idx, grant_id, action));
        }

        let geometry = AssignmentGeometry::from_widths(&scenario.sci.widths);
        let cbr_interval_slots = (scenario.congestion.cbr_interval_ms as u64 * spm).max(1);
        let trace_interval_slots = (scenario.congestion.trace_interval_ms * spm).max(1);
        let mut metrics = Metrics {
            seed: scenario.seed,
            duration_ms: scenario.duration_ms,
            prr_bin_m: scenario.metrics.prr_bin_m,
            ..Metrics::default()
        };
        for (cfg, ue) in scenario.ues.iter().zip(&ues) {
            metrics.events.push(EventRecord {
                slot: 0,
                kind: "sync_source",
                ue_id: cfg.ue_id,
                detail: format!("{:?} hops={}", ue.sync.kind, ue.sync.hops),
            });
        }
        Ok(Self {
            scenario,
            ues,
            ue_index_by_id,
            groups,
            schedulers,
            dci_by_slot,
            geometry,
            slot: 0,
            metrics,
            cbr_interval_slots,
            trace_interval_slots,
        })
    }

    pub fn current_slot(&self) -> u64 {
        self.slot
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// The synchronization source a UE settled on at startup.
    pub fn sync_source(&self, ue_id: u32) -> Option<SyncSource> {
        self.ue_index_by_id.get(&ue_id).map(|&i| self.ues[i].sync)
    }

    /// Sensing-database trace of one UE (one line per entry), for debugging.
    pub fn export_sensing_trace(&self, ue_id: u32, out: &mut impl std::io::Write) -> std::io::Result<()> {
        if let Some(&i) = self.ue_index_by_id.get(&ue_id) {
            self.ues[i].sensing.export_trace(out)?;
        }
        Ok(())
    }

    /// Mode-1 grant tables as CSV, one string per scheduler.
    pub fn mode1_grant_tables(&self) -> Vec<String> {
        self.schedulers.iter().map(|s| s.grants_csv()).collect()
    }

    fn event(&mut self, slot: u64, kind: &'static str, ue_id: u32, detail: String) {
        self.metrics.events.push(EventRecord {
            slot,
            kind,
            ue_id,
            detail,
        });
    }

    fn deadline_slot(&self, tb: &TransportBlock) -> u64 {
        tb.created_at_slot + self.scenario.numerology.ms_to_slots(tb.pdb_ms as u64)
    }

    fn slot_ms(&self) -> f64 {
        1.0 / self.scenario.numerology.slots_per_ms() as f64
    }

    /// Runs one slot through all phases.
    pub fn advance_slot(&mut self) -> Result<SlotEvent, SimError> {
        let slot = self.slot;

        // DCI signaling scheduled for this slot.
        if let Some(actions) = self.dci_by_slot.remove(&slot) {
            for (sched_idx, grant_id, action) in actions {
                let ue_id = self.schedulers[sched_idx]
                    .handle_dci(grant_id, action, slot)
                    .map_err(|source| SimError::Mode1 { slot, source })?
                    .ue_id;
                self.event(slot, "dci", ue_id, format!("grant={grant_id} action={action:?}"));
            }
        }

        // Phase 1: arrivals, expiry, promotion, grant upkeep and selection.
        for i in 0..self.ues.len() {
            self.phase1_traffic(i, slot)?;
        }

        // Phase 2: transmissions.
        let txs = self.phase2_transmissions(slot)?;

        // Phase 3: channel.
        let (rxs, energies_mw) = self.phase3_channel(slot, &txs)?;

        // Phase 4: sensing, RSSI, delivery bookkeeping, feedback generation.
        let fresh_scis = self.phase4_record(slot, &txs, &rxs, energies_mw);

        // Phase 5: re-evaluation and preemption for future slots.
        self.phase5_reeval_preempt(slot, &fresh_scis)?;

        // Phase 6: HARQ feedback delivery.
        let feedback = self.phase6_feedback(slot);

        // Phase 7: congestion measurement and CR enforcement.
        self.phase7_congestion(slot);

        // Phase 8: mobility.
        self.phase8_mobility(slot);

        self.slot += 1;
        self.metrics.slots_processed += 1;
        let event = SlotEvent {
            slot,
            txs,
            rxs,
            feedback,
        };
        debug_assert!(event.half_duplex_ok());
        Ok(event)
    }

    fn phase1_traffic(&mut self, i: usize, slot: u64) -> Result<(), SimError> {
        let ue_id = self.scenario.ues[i].ue_id;

        // Arrivals.
        let arrivals = self.ues[i].generator.next_arrivals(slot);
        self.metrics.generated_tbs += arrivals.len() as u64;
        self.ues[i].queue.extend(arrivals);

        // Periodic grant rollover / counter expiry.
        let mut drop_grant = false;
        {
            let ue = &mut self.ues[i];
            if let Some(g) = ue.grant.as_mut() {
                if g.period_slots > 0 && slot >= g.next_rollover {
                    g.periods_left = g.periods_left.saturating_sub(1);
                    if g.periods_left == 0 {
                        drop_grant =
                            reselection_trigger(&g.grant, ReselectionEvent::CounterExpired);
                    } else {
                        let period = g.period_slots;
                        for r in &mut g.grant.resources {
                            r.slot_index += period;
                        }
                        g.pending = g.grant.resources.clone();
                        g.next_rollover += period;
                        for r in &g.pending {
                            ue.load.record_reservation(r.slot_index, r.subchannel_len);
                        }
                    }
                }
            }
        }
        if drop_grant {
            self.release_grant(i);
            self.metrics.counter_reselections += 1;
            self.event(slot, "reselect_counter", ue_id, String::new());
        }

        // Expire queued TBs whose budget has passed.
        loop {
            let expired = match self.ues[i].queue.front() {
                Some(tb) if slot > self.deadline_slot(tb) => self.ues[i].queue.pop_front(),
                _ => None,
            };
            match expired {
                Some(tb) => self.finalize_tb_record(slot, i, tb, FinalizeCause::Expired, 0, None),
                None => break,
            }
        }

        // Expire the active TB if it still needs transmissions it can no
        // longer get; TBs already awaiting feedback run to completion.
        let active_expired = matches!(
            &self.ues[i].active,
            Some(a) if a.needs_tx && slot > a.deadline_slot
        );
        if active_expired {
            self.finalize_active(slot, i, FinalizeCause::Expired);
        }

        // Promote the next TB.
        if self.ues[i].active.is_none() {
            if let Some(tb) = self.ues[i].queue.pop_front() {
                let deadline_slot = self.deadline_slot(&tb);
                let cfg = &self.scenario.ues[i];
                let harq_id = self.ues[i].harq_seq & 0x0f;
                self.ues[i].harq_seq = self.ues[i].harq_seq.wrapping_add(1);
                let proc = HarqProcess::new(
                    harq_id,
                    tb.tb_id,
                    tb.cast_type,
                    cfg.feedback_mode,
                    tb.comm_range_m,
                    self.scenario.harq.max_tx,
                    self.scenario.harq.rv_sequence.clone(),
                )
                .expect("validated at scenario load");
                self.ues[i].active = Some(ActiveTb {
                    tb,
                    deadline_slot,
                    proc,
                    needs_tx: true,
                    decoded_by: BTreeSet::new(),
                    intended: Vec::new(),
                    first_tx_slot: None,
                    delivered_at_slot: None,
                    pending_feedback: None,
                });
            }
        }

        // Resource acquisition for mode-2 UEs.
        if self.scenario.ues[i].mode == UeMode::Mode2 {
            let needs_resource = matches!(&self.ues[i].active, Some(a) if a.needs_tx)
                && !self.ues[i]
                    .grant
                    .as_ref()
                    .map(|g| g.pending.iter().any(|r| r.slot_index >= slot))
                    .unwrap_or(false);
            if needs_resource {
                // A consumed one-shot grant is gone; a periodic grant refills
                // at its next rollover.
                let keep_waiting = matches!(
                    &self.ues[i].grant,
                    Some(g) if g.period_slots > 0 && g.periods_left > 0
                );
                if !keep_waiting {
                    if self.ues[i].grant.is_some() {
                        self.release_grant(i);
                    }
                    if self.ues[i].in_exceptional_window(slot) {
                        self.allocate_exceptional_grant(i, slot)?;
                    } else {
                        self.run_selection(i, slot)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Drops the grant and cancels its still-registered future reservations.
    /// Temporary (exceptional-pool) grants never entered the CR bookkeeping.
    fn release_grant(&mut self, i: usize) {
        if let Some(g) = self.ues[i].grant.take() {
            if !g.temporary {
                for r in &g.pending {
                    self.ues[i].load.cancel_reservation(r.slot_index, r.subchannel_len);
                }
            }
        }
    }

    fn allocate_exceptional_grant(&mut self, i: usize, slot: u64) -> Result<(), SimError> {
        let Some(pool) = self.scenario.exceptional_pool().cloned() else {
            return Ok(());
        };
        let ue_id = self.scenario.ues[i].ue_id;
        let deadline = self.ues[i].active.as_ref().expect("caller checked").deadline_slot;
        if deadline <= slot + 1 {
            self.finalize_active(slot, i, FinalizeCause::Expired);
            return Ok(());
        }
        let l_subch = self.scenario.ues[i].l_subch.min(pool.num_subchannels);
        let resource = match crate::mode1::allocate_exceptional(
            &pool,
            l_subch,
            slot,
            deadline - slot,
            &mut self.ues[i].exceptional_rng,
        ) {
            Ok(r) => r,
            Err(Mode1Error::EmptyExceptionalWindow) => {
                self.finalize_active(slot, i, FinalizeCause::Expired);
                return Ok(());
            }
            Err(source) => return Err(SimError::Mode1 { slot, source }),
        };
        self.ues[i].grant = Some(ActiveGrant {
            grant: Grant {
                resources: vec![resource],
                period_ms: 0,
                reselection_counter: None,
                creating_priority: self.scenario.ues[i].template.priority,
                selected_at_slot: slot,
                sensing_cutoff_slot: slot,
            },
            pool_id: pool.pool_id,
            pending: vec![resource],
            period_slots: 0,
            next_rollover: u64::MAX,
            periods_left: 0,
            temporary: true,
        });
        self.event(
            slot,
            "exceptional_alloc",
            ue_id,
            format!("slot={} start={}", resource.slot_index, resource.subchannel_start),
        );
        Ok(())
    }

    /// Full sensing-based selection for the active TB.
    fn run_selection(&mut self, i: usize, slot: u64) -> Result<(), SimError> {
        let ue_id = self.scenario.ues[i].ue_id;
        let priority = self.ues[i].active.as_ref().expect("caller checked").tb.priority;
        let deadline = self.ues[i].active.as_ref().expect("caller checked").deadline_slot;
        let pdb_slots = deadline.saturating_sub(slot);
        let pool = self.ues[i].pool.clone();
        let selection = match select_candidates(
            &self.ues[i].sensing,
            &pool,
            slot,
            pdb_slots,
            priority,
            &self.ues[i].selection_cfg,
        ) {
            Ok(sel) => sel,
            Err(SensingError::EmptySelectionWindow { .. }) => {
                self.finalize_active(slot, i, FinalizeCause::Expired);
                return Ok(());
            }
            Err(source) => return Err(SimError::Sensing { slot, ue: ue_id, source }),
        };
        let distinct_slots: BTreeSet<u64> =
            selection.candidates.iter().map(|r| r.slot_index).collect();
        let n_tx = self.ues[i].desired_tx.min(distinct_slots.len()).max(1);
        let period_ms = self.scenario.ues[i].traffic.period_ms_or_zero();
        let ue = &mut self.ues[i];
        let grant = mac_select(
            &selection,
            n_tx,
            period_ms,
            priority,
            &ue.selection_cfg,
            &mut ue.select_rng,
        )
        .map_err(|source| SimError::Sensing { slot, ue: ue_id, source })?;
        let period_slots = self.scenario.numerology.ms_to_slots(period_ms as u64);
        let periods_left = grant.reselection_counter.unwrap_or(1);
        for r in &grant.resources {
            ue.load.record_reservation(r.slot_index, r.subchannel_len);
        }
        let detail = format!(
            "resources={} total={} relaxations={} period_ms={}",
            grant.resources.len(),
            selection.total_candidates,
            selection.relaxations,
            period_ms
        );
        ue.grant = Some(ActiveGrant {
            pending: grant.resources.clone(),
            pool_id: pool.pool_id,
            period_slots,
            next_rollover: if period_slots > 0 {
                slot + period_slots
            } else {
                u64::MAX
            },
            periods_left,
            temporary: false,
            grant,
        });
        self.event(slot, "selection", ue_id, detail);
        Ok(())
    }

    /// Replacement selection after a release (preemption or re-evaluation).
    fn reselect_replacements(&mut self, i: usize, slot: u64, count: usize) -> Result<(), SimError> {
        let ue_id = self.scenario.ues[i].ue_id;
        let priority = self.ues[i]
            .grant
            .as_ref()
            .map(|g| g.grant.creating_priority)
            .unwrap_or(self.scenario.ues[i].template.priority);
        let horizon = match (&self.ues[i].active, &self.ues[i].grant) {
            (Some(a), _) if a.needs_tx => a.deadline_slot.saturating_sub(slot),
            (_, Some(g)) if g.period_slots > 0 => g.next_rollover.saturating_sub(slot),
            _ => self
                .scenario
                .numerology
                .ms_to_slots(self.scenario.ues[i].template.pdb_ms as u64),
        };
        let pool = self.ues[i].pool.clone();
        let selection = match select_candidates(
            &self.ues[i].sensing,
            &pool,
            slot,
            horizon,
            priority,
            &self.ues[i].selection_cfg,
        ) {
            Ok(sel) => sel,
            Err(SensingError::EmptySelectionWindow { .. }) => return Ok(()),
            Err(source) => return Err(SimError::Sensing { slot, ue: ue_id, source }),
        };
        // Avoid slots the grant already uses.
        let used: BTreeSet<u64> = self.ues[i]
            .grant
            .as_ref()
            .map(|g| g.grant.resources.iter().map(|r| r.slot_index).collect())
            .unwrap_or_default();
        let mut filtered = selection.clone();
        filtered.candidates.retain(|r| !used.contains(&r.slot_index));
        let distinct: BTreeSet<u64> = filtered.candidates.iter().map(|r| r.slot_index).collect();
        let n = count.min(distinct.len());
        if n == 0 {
            return Ok(());
        }
        let ue = &mut self.ues[i];
        let replacement = mac_select(&filtered, n, 0, priority, &ue.selection_cfg, &mut ue.select_rng)
            .map_err(|source| SimError::Sensing { slot, ue: ue_id, source })?;
        if let Some(g) = ue.grant.as_mut() {
            for r in &replacement.resources {
                ue.load.record_reservation(r.slot_index, r.subchannel_len);
                g.grant.resources.push(*r);
                g.pending.push(*r);
            }
            g.grant.resources.sort_unstable();
            g.pending.sort_unstable();
            // Late SCIs for the replacements are judged against this slot.
            g.grant.sensing_cutoff_slot = g.grant.sensing_cutoff_slot.max(selection.sensing_cutoff_slot);
        }
        self.event(slot, "reselection", ue_id, format!("resources={n}"));
        Ok(())
    }

    fn phase2_transmissions(&mut self, slot: u64) -> Result<Vec<TxRecord>, SimError> {
        let mut txs: Vec<TxRecord> = Vec::new();

        // Mode-1 scheduled transmissions, collision-free by construction.
        let mut scheduled: Vec<(u32, Resource)> = Vec::new();
        for scheduler in &self.schedulers {
            scheduled.extend(scheduler.transmissions_at(slot));
        }
        scheduled.sort_by_key(|&(ue, _)| ue);
        for (ue_id, resource) in scheduled {
            let i = self.ue_index_by_id[&ue_id];
            let wants_tx = matches!(&self.ues[i].active, Some(a) if a.needs_tx);
            if wants_tx {
                let period_ms = self.scenario.ues[i]
                    .mode1_grant
                    .map(|g| g.period_ms)
                    .unwrap_or(0);
                let tx = self.emit_tx(i, slot, resource, self.ues[i].pool.pool_id, period_ms, &[])?;
                txs.push(tx);
            }
        }

        // Mode-2 and exceptional transmissions from local grants.
        for i in 0..self.ues.len() {
            if self.scenario.ues[i].mode != UeMode::Mode2 {
                continue;
            }
            loop {
                let due = match self.ues[i].grant.as_ref() {
                    Some(g) => g.pending.first().map(|r| r.slot_index <= slot).unwrap_or(false),
                    None => false,
                };
                if !due {
                    break;
                }
                let g = self.ues[i].grant.as_mut().expect("checked above");
                let resource = g.pending.remove(0);
                let pool_id = g.pool_id;
                let period_ms = g.grant.period_ms;
                if resource.slot_index < slot {
                    // A resource that lapsed while no TB was ready.
                    continue;
                }
                let wants_tx = matches!(&self.ues[i].active, Some(a) if a.needs_tx);
                if wants_tx {
                    let extras: Vec<Resource> = self.ues[i]
                        .grant
                        .as_ref()
                        .map(|g| g.pending.iter().take(2).copied().collect())
                        .unwrap_or_default();
                    let tx = self.emit_tx(i, slot, resource, pool_id, period_ms, &extras)?;
                    txs.push(tx);
                } else {
                    // Unused reservation lapses; CR bookkeeping is pruned at
                    // the end of the slot.
                }
                break;
            }
            // Drop fully consumed one-shot grants.
            let consumed = matches!(
                &self.ues[i].grant,
                Some(g) if g.period_slots == 0 && g.pending.is_empty()
            );
            let tb_done = self.ues[i].active.is_none()
                || matches!(&self.ues[i].active, Some(a) if !a.needs_tx);
            if consumed && tb_done {
                self.ues[i].grant = None;
            }
        }
        Ok(txs)
    }

    fn emit_tx(
        &mut self,
        i: usize,
        slot: u64,
        resource: Resource,
        pool_id: u32,
        period_ms: u16,
        extras: &[Resource],
    ) -> Result<TxRecord, SimError> {
        let cfg = &self.scenario.ues[i];
        let ue_id = cfg.ue_id;
        let w = &self.scenario.sci.widths;
        let extra_reservations: Vec<ExtraReservation> = extras
            .iter()
            .filter(|r| r.slot_index > slot)
            .take(2)
            .map(|r| ExtraReservation {
                slot_offset: (r.slot_index - slot) as u32,
                subchannel_start: r.subchannel_start,
                subchannel_len: r.subchannel_len,
            })
            .collect();
        let (time_field, freq_field) = pack_assignments(&extra_reservations, &self.geometry)
            .map_err(|source| SimError::Sci { slot, ue: ue_id, source })?;

        let destination_id = match cfg.template.destination {
            Destination::Ue(dest) => dest & mask32(w.destination_id),
            Destination::Group(gid) => gid & mask32(w.destination_id),
            Destination::All => mask32(w.destination_id),
        };
        let mcs = cfg.mcs;
        let source_id = ue_id & mask32(w.source_id);
        let min_gap = self.scenario.harq.psfch_min_gap_slots;
        let tx_pool = self.ues[i].pool.clone();

        let atb = self.ues[i].active.as_mut().expect("caller checked");
        let ndi = atb.proc.tx_count == 0;
        let rv = atb.proc.record_tx();
        let sci1 = Sci1 {
            priority: atb.tb.priority,
            freq_resource_assignment: freq_field,
            time_resource_assignment: time_field,
            resource_reservation_period_ms: period_ms,
            dmrs_pattern: 0,
            sci2_format: 0,
            mcs,
            reserved: 0,
            beta_offset: 0,
            dmrs_ports: 0,
        };
        let sci2 = Sci2 {
            harq_process_id: atb.proc.harq_id,
            new_data_indicator: ndi,
            redundancy_version: rv,
            source_id,
            destination_id,
            csi_request: false,
        };
        atb.needs_tx = false;
        let tb_id = atb.tb.tb_id;

        // Feedback opportunity for this attempt. No-feedback processes step
        // immediately in phase 6 of the same slot.
        let deliver_slot = if atb.proc.feedback_mode == FeedbackMode::None {
            slot
        } else {
            psfch_slot_for(slot, &tx_pool, min_gap)
                .expect("validated: feedback modes require PSFCH resources")
        };
        atb.proc.pending_feedback_slot = Some(deliver_slot);
        atb.pending_feedback = Some(PendingFeedback {
            deliver_slot,
            entries: Vec::new(),
        });

        let needs_intended = atb.first_tx_slot.is_none();
        if needs_intended {
            atb.first_tx_slot = Some(slot);
        }
        if needs_intended {
            let intended = self.intended_receivers(i);
            let atb = self.ues[i].active.as_mut().expect("still there");
            atb.intended = intended;
            if atb.intended.is_empty() {
                atb.delivered_at_slot = Some(slot);
            }
        }
        self.ues[i].load.record_tx(slot, resource.subchannel_len);

        Ok(TxRecord {
            ue_id,
            pool_id,
            resource,
            sci1,
            sci2,
            tx_power_dbm: self.scenario.link_budget.tx_power_dbm,
            tb_id,
        })
    }

    /// Receivers a TB is meant for, with TX-RX distances at first
    /// transmission. A configured communication range filters the set.
    fn intended_receivers(&self, i: usize) -> Vec<(u32, f64)> {
        let cfg = &self.scenario.ues[i];
        let atb = self.ues[i].active.as_ref().expect("caller checked");
        let my_pos = self.ues[i].kin.position_m;
        let road = self.scenario.road.length_m;
        let candidates: Vec<u32> = match atb.tb.destination {
            Destination::Ue(dest) => vec![dest],
            Destination::Group(gid) => self
                .groups
                .get(&gid)
                .map(|members| members.iter().copied().filter(|&m| m != cfg.ue_id).collect())
                .unwrap_or_default(),
            Destination::All => self
                .scenario
                .ues
                .iter()
                .map(|u| u.ue_id)
                .filter(|&u| u != cfg.ue_id)
                .collect(),
        };
        candidates
            .into_iter()
            .filter_map(|rx| {
                let rx_idx = *self.ue_index_by_id.get(&rx)?;
                let d = wrap_distance(my_pos, self.ues[rx_idx].kin.position_m, road);
                match atb.tb.comm_range_m {
                    Some(range) if d > range => None,
                    _ => Some((rx, d)),
                }
            })
            .collect()
    }

    /// Channel evaluation: per-receiver RSRP/SINR/decoding for every
    /// transmission, plus per-subchannel received energy for the CBR.
    #[allow(clippy::type_complexity)]
    fn phase3_channel(
        &self,
        slot: u64,
        txs: &[TxRecord],
    ) -> Result<(Vec<RxRecord>, Vec<Vec<f64>>), SimError> {
        let n_ues = self.ues.len();
        let budget = &self.scenario.link_budget;
        let road = self.scenario.road.length_m;
        let seed = self.scenario.seed;

        let transmitted: Vec<bool> = {
            let tx_set: BTreeSet<u32> = txs.iter().map(|t| t.ue_id).collect();
            self.scenario
                .ues
                .iter()
                .map(|u| tx_set.contains(&u.ue_id))
                .collect()
        };

        // Received power of every transmission at every UE.
        let mut rx_power_dbm: Vec<Vec<f64>> = Vec::with_capacity(txs.len());
        for tx in txs {
            let tx_idx = self.ue_index_by_id[&tx.ue_id];
            let tx_pos = self.ues[tx_idx].kin.position_m;
            let mut row = Vec::with_capacity(n_ues);
            for (rx_idx, rx) in self.ues.iter().enumerate() {
                if rx_idx == tx_idx {
                    row.push(f64::NEG_INFINITY);
                    continue;
                }
                let distance = wrap_distance(tx_pos, rx.kin.position_m, road).max(1.0);
                let shadow = shadow_sample_db(
                    seed,
                    tx.ue_id,
                    self.scenario.ues[rx_idx].ue_id,
                    slot,
                    budget.shadowing_sigma_db,
                );
                let rsrp = rsrp_at(budget, distance, shadow)
                    .map_err(|source| SimError::Phy { slot, source })?;
                row.push(rsrp);
            }
            rx_power_dbm.push(row);
        }

        let mut rxs = Vec::new();
        let mut energies_mw: Vec<Vec<f64>> = self
            .ues
            .iter()
            .map(|u| vec![0.0; u.pool.num_subchannels as usize])
            .collect();

        for (rx_idx, rx_ue) in self.ues.iter().enumerate() {
            let rx_id = self.scenario.ues[rx_idx].ue_id;
            for (t, tx) in txs.iter().enumerate() {
                if tx.ue_id == rx_id {
                    continue;
                }
                let signal = rx_power_dbm[t][rx_idx];
                let mut interference_mw = 0.0;
                let mut interferer_count = 0usize;
                for (t2, other) in txs.iter().enumerate() {
                    if t2 != t
                        && other.ue_id != rx_id
                        && other.pool_id == tx.pool_id
                        && other.resource.overlaps_freq(&tx.resource)
                    {
                        interference_mw += dbm_to_mw(rx_power_dbm[t2][rx_idx]);
                        interferer_count += 1;
                    }
                }
                let noise =
                    budget.noise_dbm + 10.0 * (tx.resource.subchannel_len as f64).log10();
                let sinr =
                    mw_to_dbm(dbm_to_mw(signal) / (dbm_to_mw(noise) + interference_mw));
                let blocked = transmitted[rx_idx];
                let decoded = decode_outcome(sinr, tx.sci1.mcs, blocked, &self.scenario.mcs_table)
                    .map_err(|source| SimError::Phy { slot, source })?;
                rxs.push(RxRecord {
                    ue_id: rx_id,
                    tx_ue_id: tx.ue_id,
                    tb_id: tx.tb_id,
                    observation: RxObservation {
                        rsrp_dbm: signal,
                        sinr_db: sinr,
                        decoded,
                        sci1: decoded.then_some(tx.sci1),
                        energy_dbm: signal,
                    },
                    co_channel_interferers: interferer_count,
                    half_duplex_blocked: blocked,
                });
                // Energy lands in the receiver's RSSI map when the
                // transmission uses the receiver's own pool.
                if tx.pool_id == rx_ue.pool.pool_id {
                    let mw = dbm_to_mw(signal);
                    let start = tx.resource.subchannel_start as usize;
                    let end = (start + tx.resource.subchannel_len as usize)
                        .min(rx_ue.pool.num_subchannels as usize);
                    for sc in start..end {
                        energies_mw[rx_idx][sc] += mw;
                    }
                }
            }
        }
        Ok((rxs, energies_mw))
    }

    /// Applies phase-3 results: sensing entries, RSSI history, delivery
    /// bookkeeping, and per-receiver feedback generation. Returns the SCIs
    /// each UE decoded this slot (priority + expanded reservation) for the
    /// preemption checks of phase 5.
    #[allow(clippy::type_complexity)]
    fn phase4_record(
        &mut self,
        slot: u64,
        txs: &[TxRecord],
        rxs: &[RxRecord],
        energies_mw: Vec<Vec<f64>>,
    ) -> Vec<Vec<(u8, Vec<Resource>)>> {
        let mut fresh: Vec<Vec<(u8, Vec<Resource>)>> = vec![Vec::new(); self.ues.len()];
        let road = self.scenario.road.length_m;

        for rx in rxs {
            let rx_idx = self.ue_index_by_id[&rx.ue_id];
            let tx_idx = self.ue_index_by_id[&rx.tx_ue_id];
            let tx = txs
                .iter()
                .find(|t| t.ue_id == rx.tx_ue_id)
                .expect("rx references a tx of this slot");

            if rx.observation.decoded {
                // Sensing only covers the receiver's own transmit pool.
                if tx.pool_id == self.ues[rx_idx].pool.pool_id {
                    let pool = self.ues[rx_idx].pool.clone();
                    self.ues[rx_idx].sensing.record_sensing(
                        slot,
                        &rx.observation,
                        &tx.resource,
                        &pool,
                    );
                    if let Some(entry) = self.ues[rx_idx].sensing.newest() {
                        fresh[rx_idx].push((entry.rx_priority, entry.reserved_resources.clone()));
                    }
                }
                // Delivery bookkeeping on the transmitter's active TB.
                if let Some(atb) = self.ues[tx_idx].active.as_mut() {
                    if atb.tb.tb_id == rx.tb_id {
                        atb.decoded_by.insert(rx.ue_id);
                        atb.update_delivery(slot);
                    }
                }
            } else if !rx.half_duplex_blocked && rx.co_channel_interferers > 0 {
                self.metrics.collisions += 1;
            }

            // Feedback from intended receivers.
            let tx_pos = self.ues[tx_idx].kin.position_m;
            let rx_pos = self.ues[rx_idx].kin.position_m;
            if let Some(atb) = self.ues[tx_idx].active.as_mut() {
                if atb.tb.tb_id == rx.tb_id
                    && atb.proc.feedback_mode != FeedbackMode::None
                    && atb.intended.iter().any(|(id, _)| *id == rx.ue_id)
                {
                    let cumulative_success = atb.decoded_by.contains(&rx.ue_id);
                    let distance = wrap_distance(tx_pos, rx_pos, road);
                    let fb = generate_feedback(&atb.proc, cumulative_success, distance);
                    if let Some(pf) = atb.pending_feedback.as_mut() {
                        pf.entries.push((rx.ue_id, fb));
                    }
                }
            }
        }

        for (rx_idx, energies) in energies_mw.into_iter().enumerate() {
            if !self.ues[rx_idx].pool.is_sl_slot(slot) {
                continue;
            }
            let dbm: Vec<f64> = energies
                .into_iter()
                .map(|mw| if mw > 0.0 { mw_to_dbm(mw) } else { f64::NEG_INFINITY })
                .collect();
            self.ues[rx_idx].load.record_rssi(slot, &dbm);
        }
        fresh
    }

    fn phase5_reeval_preempt(
        &mut self,
        slot: u64,
        fresh_scis: &[Vec<(u8, Vec<Resource>)>],
    ) -> Result<(), SimError> {
        for i in 0..self.ues.len() {
            if self.scenario.ues[i].mode != UeMode::Mode2 || self.ues[i].grant.is_none() {
                continue;
            }
            let ue_id = self.scenario.ues[i].ue_id;
            let own_priority = self.ues[i]
                .grant
                .as_ref()
                .map(|g| g.grant.creating_priority)
                .expect("grant present");
            let pool = self.ues[i].pool.clone();

            // Preemption against SCIs decoded this slot.
            let mut released_total = 0usize;
            for (incoming_priority, incoming_resources) in &fresh_scis[i] {
                let check = {
                    let g = match self.ues[i].grant.as_ref() {
                        Some(g) => g,
                        None => break,
                    };
                    preemption_check(
                        &g.grant,
                        *incoming_priority,
                        incoming_resources,
                        &pool,
                        own_priority,
                    )
                };
                match check {
                    PreemptionCheck::Release(slots) => {
                        let released = self.release_slots(i, slot, &slots);
                        if released > 0 {
                            released_total += released;
                            self.metrics.preemption_releases += 1;
                            self.event(
                                slot,
                                "preemption_release",
                                ue_id,
                                format!("slots={slots:?} resources={released}"),
                            );
                        }
                    }
                    PreemptionCheck::RequestPreemption => {
                        self.metrics.preemption_requests += 1;
                        self.event(slot, "preemption_request", ue_id, String::new());
                    }
                    PreemptionCheck::None => {}
                }
            }
            let trigger_replacement = released_total > 0
                && self.ues[i]
                    .grant
                    .as_ref()
                    .map(|g| reselection_trigger(&g.grant, ReselectionEvent::PreemptionRelease))
                    .unwrap_or(false);
            if trigger_replacement {
                self.reselect_replacements(i, slot, released_total)?;
            }

            // Re-evaluation at the configured lead before a granted resource.
            let lead = self.ues[i].selection_cfg.reeval_lead_slots as u64;
            let has_imminent = self.ues[i]
                .grant
                .as_ref()
                .map(|g| g.pending.iter().any(|r| r.slot_index == slot + lead))
                .unwrap_or(false);
            if has_imminent {
                let outcome = {
                    let g = self.ues[i].grant.as_ref().expect("grant present");
                    reevaluate(
                        &g.grant,
                        &self.ues[i].sensing,
                        slot,
                        own_priority,
                        &self.ues[i].selection_cfg,
                        &pool,
                    )
                };
                if let Reevaluation::Reselect(failed) = outcome {
                    let slots: Vec<u64> = failed.iter().map(|r| r.slot_index).collect();
                    let released = self.release_slots(i, slot, &slots);
                    if released > 0 {
                        self.metrics.reevaluation_reselections += 1;
                        self.event(
                            slot,
                            "reevaluation_reselect",
                            ue_id,
                            format!("slots={slots:?}"),
                        );
                        let do_reselect = self.ues[i]
                            .grant
                            .as_ref()
                            .map(|g| {
                                reselection_trigger(&g.grant, ReselectionEvent::ReevaluationFail)
                            })
                            .unwrap_or(false);
                        if do_reselect {
                            self.reselect_replacements(i, slot, released)?;
                        }
                    }
                }
                // SCIs up to this slot have now been judged against the
                // grant; later re-evaluations only need newer ones.
                if let Some(g) = self.ues[i].grant.as_mut() {
                    g.grant.sensing_cutoff_slot = g.grant.sensing_cutoff_slot.max(slot);
                }
            }
        }
        Ok(())
    }

    /// Removes all future grant resources in the given slots; returns how
    /// many were dropped.
    fn release_slots(&mut self, i: usize, now: u64, slots: &[u64]) -> usize {
        let Some(g) = self.ues[i].grant.as_mut() else {
            return 0;
        };
        let victim = |r: &Resource| slots.contains(&r.slot_index) && r.slot_index > now;
        let removed: Vec<Resource> = g.pending.iter().copied().filter(victim).collect();
        g.pending.retain(|r| !victim(r));
        g.grant.resources.retain(|r| !victim(r));
        for r in &removed {
            self.ues[i].load.cancel_reservation(r.slot_index, r.subchannel_len);
        }
        removed.len()
    }

    fn phase6_feedback(&mut self, slot: u64) -> Vec<FeedbackRecord> {
        let mut records = Vec::new();
        for i in 0..self.ues.len() {
            let due = matches!(
                &self.ues[i].active,
                Some(a) if a.pending_feedback.as_ref().map(|p| p.deliver_slot == slot).unwrap_or(false)
            );
            if !due {
                continue;
            }
            let ue_id = self.scenario.ues[i].ue_id;
            let (entries, blind) = {
                let atb = self.ues[i].active.as_mut().expect("checked");
                let pf = atb.pending_feedback.take().expect("checked");
                let blind = atb.proc.feedback_mode == FeedbackMode::None
                    && self.scenario.harq.max_tx > 1;
                (pf.entries, blind)
            };
            // Optionally subject the feedback bit itself to the channel.
            let mut delivered_entries = Vec::new();
            for (rx, fb) in entries {
                if fb == Feedback::Silence {
                    continue;
                }
                if self.scenario.harq.lossy_psfch && !self.psfch_received(slot, rx, ue_id) {
                    continue;
                }
                delivered_entries.push((rx, fb));
            }
            let aggregate = if delivered_entries.iter().any(|(_, f)| *f == Feedback::Nack) {
                Feedback::Nack
            } else if delivered_entries.iter().any(|(_, f)| *f == Feedback::Ack) {
                Feedback::Ack
            } else {
                Feedback::Silence
            };
            for (rx, fb) in &delivered_entries {
                records.push(FeedbackRecord {
                    from_ue: *rx,
                    to_ue: ue_id,
                    tb_id: self.ues[i].active.as_ref().expect("checked").tb.tb_id,
                    feedback: *fb,
                });
            }
            let step = {
                let atb = self.ues[i].active.as_mut().expect("checked");
                on_feedback(&mut atb.proc, aggregate, blind)
            };
            match step {
                HarqStep::Done => self.finalize_active(slot, i, FinalizeCause::HarqDone),
                HarqStep::Failed => self.finalize_active(slot, i, FinalizeCause::HarqFailed),
                HarqStep::Retransmit { .. } => {
                    let atb = self.ues[i].active.as_mut().expect("checked");
                    atb.needs_tx = true;
                }
            }
        }
        records
    }

    /// Ideal-or-lossy PSFCH reception test for one feedback bit.
    fn psfch_received(&self, slot: u64, from_ue: u32, to_ue: u32) -> bool {
        let budget = &self.scenario.link_budget;
        let from_idx = self.ue_index_by_id[&from_ue];
        let to_idx = self.ue_index_by_id[&to_ue];
        let d = wrap_distance(
            self.ues[from_idx].kin.position_m,
            self.ues[to_idx].kin.position_m,
            self.scenario.road.length_m,
        )
        .max(1.0);
        let shadow = shadow_sample_db(self.scenario.seed, from_ue, to_ue, slot, budget.shadowing_sigma_db);
        let Ok(rsrp) = rsrp_at(budget, d, shadow) else {
            return false;
        };
        let snr = sinr_db(rsrp, &[], budget.noise_dbm);
        let threshold = self
            .scenario
            .mcs_table
            .threshold(0)
            .expect("MCS 0 exists in any table");
        snr >= threshold
    }

    fn phase7_congestion(&mut self, slot: u64) {
        let table = self.scenario.congestion.cr_limits.clone();
        for i in 0..self.ues.len() {
            let ue_id = self.scenario.ues[i].ue_id;
            if slot % self.cbr_interval_slots == 0
                && (self.ues[i].grant.is_some() || self.ues[i].active.is_some())
            {
                let priority = self.ues[i]
                    .active
                    .as_ref()
                    .map(|a| a.tb.priority)
                    .unwrap_or(self.scenario.ues[i].template.priority);
                let outcome = self.ues[i].load.enforce_cr_limit(slot, priority, &table);
                match outcome {
                    CrEnforcement::Allow => {}
                    CrEnforcement::Shrink { removed } => {
                        self.apply_cr_removal(i, slot, &removed);
                        self.event(
                            slot,
                            "cr_shrink",
                            ue_id,
                            format!("removed={}", removed.len()),
                        );
                    }
                    CrEnforcement::Drop { removed } => {
                        self.apply_cr_removal(i, slot, &removed);
                        self.event(slot, "cr_drop", ue_id, String::new());
                        let droppable =
                            matches!(&self.ues[i].active, Some(a) if a.needs_tx);
                        if droppable {
                            self.finalize_active(slot, i, FinalizeCause::DroppedCr);
                        } else if let Some(tb) = self.ues[i].queue.pop_front() {
                            self.finalize_tb_record(slot, i, tb, FinalizeCause::DroppedCr, 0, None);
                        }
                    }
                }
            }
            if slot % self.trace_interval_slots == 0 {
                let cbr = self.ues[i].load.measure_cbr(slot).cbr;
                let cr = self.ues[i].load.measure_cr(slot);
                self.metrics.load_samples.push(LoadSample {
                    time_ms: slot as f64 * self.slot_ms(),
                    ue_id,
                    cbr,
                    cr,
                });
            }
            self.ues[i].load.prune(slot);
        }
    }

    /// Mirrors CR-enforcement removals into the grant.
    fn apply_cr_removal(&mut self, i: usize, now: u64, removed: &[(u64, u16)]) {
        let slots: Vec<u64> = removed.iter().map(|&(s, _)| s).collect();
        if let Some(g) = self.ues[i].grant.as_mut() {
            let victim = |r: &Resource| slots.contains(&r.slot_index) && r.slot_index > now;
            g.pending.retain(|r| !victim(r));
            g.grant.resources.retain(|r| !victim(r));
        }
    }

    fn phase8_mobility(&mut self, slot: u64) {
        let dt_s = self.scenario.numerology.slot_duration_us as f64 * 1e-6;
        let road = self.scenario.road.length_m;
        let next_time_ms = (slot + 1) as f64 * self.slot_ms();
        for i in 0..self.ues.len() {
            let ue_id = self.scenario.ues[i].ue_id;
            if let Some(pos) = self
                .scenario
                .mobility_trace
                .as_ref()
                .and_then(|t| t.position_at(ue_id, next_time_ms))
            {
                self.ues[i].kin.position_m = pos;
            } else {
                self.ues[i].kin = advance_mobility(&self.ues[i].kin, dt_s, road);
            }
        }
    }

    fn finalize_active(&mut self, slot: u64, i: usize, cause: FinalizeCause) {
        if let Some(atb) = self.ues[i].active.take() {
            let tx_count = atb.proc.tx_count;
            let delivered_at = atb.delivered_at_slot;
            // Flush PRR pairs.
            for (rx, distance) in &atb.intended {
                self.metrics.pairs.push(PairRecord {
                    distance_m: *distance,
                    decoded: atb.decoded_by.contains(rx),
                });
            }
            self.finalize_tb_record(slot, i, atb.tb, cause, tx_count, delivered_at);
            // A consumed one-shot grant dies with its TB.
            let one_shot_done = matches!(
                &self.ues[i].grant,
                Some(g) if g.period_slots == 0
            );
            if one_shot_done {
                self.release_grant(i);
            }
        }
    }

    fn finalize_tb_record(
        &mut self,
        slot: u64,
        i: usize,
        tb: TransportBlock,
        cause: FinalizeCause,
        tx_count: u32,
        delivered_at: Option<u64>,
    ) {
        let ue_id = self.scenario.ues[i].ue_id;
        let outcome = if delivered_at.is_some() {
            TbOutcome::Delivered
        } else {
            match cause {
                FinalizeCause::HarqDone | FinalizeCause::HarqFailed => TbOutcome::FailedHarq,
                FinalizeCause::Expired => TbOutcome::ExpiredPdb,
                FinalizeCause::DroppedCr => TbOutcome::DroppedCr,
            }
        };
        let latency_ms =
            delivered_at.map(|d| (d - tb.created_at_slot) as f64 * self.slot_ms());
        match outcome {
            TbOutcome::Delivered => {}
            TbOutcome::FailedHarq => {
                self.event(slot, "harq_failed", ue_id, format!("tb={}", tb.tb_id))
            }
            TbOutcome::DroppedCr => {
                self.event(slot, "tb_dropped_cr", ue_id, format!("tb={}", tb.tb_id))
            }
            TbOutcome::ExpiredPdb => {
                self.event(slot, "tb_expired", ue_id, format!("tb={}", tb.tb_id))
            }
        }
        self.metrics.tb_records.push(TbRecord {
            tb_id: tb.tb_id,
            ue_id,
            priority: tb.priority,
            created_slot: tb.created_at_slot,
            outcome,
            latency_ms,
            tx_count,
        });
    }

    /// Finalizes in-flight transport blocks and returns the metrics. TBs
    /// still unfinished at the end of the run count as expired unless their
    /// delivery criterion was already met.
    pub fn finish(mut self) -> Metrics {
        let slot = self.slot;
        for i in 0..self.ues.len() {
            if self.ues[i].active.is_some() {
                self.finalize_active(slot, i, FinalizeCause::Expired);
            }
            while let Some(tb) = self.ues[i].queue.pop_front() {
                self.finalize_tb_record(slot, i, tb, FinalizeCause::Expired, 0, None);
            }
        }
        self.metrics
    }
}

fn mask32(width: u8) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Runs a scenario start to finish. Deterministic for a fixed scenario and
/// seed.
pub fn run(scenario: &Scenario) -> Result<Metrics, SimError> {
    let mut world = World::new(scenario.clone())?;
    let total = scenario.total_slots();
    for _ in 0..total {
        world.advance_slot()?;
    }
    Ok(world.finish())
}
