//! Sidelink HARQ: ACK/NACK and NACK-only feedback generation, PSFCH slot
//! timing, and blind / feedback-based retransmission control.
//!
//! HARQ applies to unicast and groupcast; broadcast carries no feedback.
//! NACK-only feedback is tied to a communication range: only receivers
//! within the range that failed to decode transmit a NACK, everyone else
//! stays silent, and silence counts as success at the transmitter.

use thiserror::Error;

use crate::radio::ResourcePool;
use crate::traffic::CastType;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarqError {
    #[error("broadcast processes cannot use HARQ feedback")]
    BroadcastWithFeedback,
    #[error("NACK-only feedback is only defined for groupcast")]
    NackOnlyNotGroupcast,
    #[error("NACK-only feedback requires a communication range")]
    MissingCommRange,
    #[error("max_tx must be at least 1")]
    ZeroMaxTx,
    #[error("rv_sequence must not be empty")]
    EmptyRvSequence,
}

/// HARQ feedback scheme of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    AckNack,
    NackOnly,
    None,
}

/// What a receiver puts on the PSFCH (one bit) or withholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Ack,
    Nack,
    Silence,
}

/// Next action for the transmitter after a feedback opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarqStep {
    Done,
    Retransmit { rv: u8 },
    Failed,
}

/// Transmitter-side HARQ state for one transport block.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub harq_id: u8,
    pub tb_id: u64,
    pub cast_type: CastType,
    pub feedback_mode: FeedbackMode,
    /// Reception radius for NACK-only groupcast, in meters.
    pub comm_range_m: Option<f64>,
    pub tx_count: u32,
    pub max_tx: u32,
    pub rv_sequence: Vec<u8>,
    pub pending_feedback_slot: Option<u64>,
}

impl HarqProcess {
    pub fn new(
        harq_id: u8,
        tb_id: u64,
        cast_type: CastType,
        feedback_mode: FeedbackMode,
        comm_range_m: Option<f64>,
        max_tx: u32,
        rv_sequence: Vec<u8>,
    ) -> Result<Self, HarqError> {
        if cast_type == CastType::Broadcast && feedback_mode != FeedbackMode::None {
            return Err(HarqError::BroadcastWithFeedback);
        }
        if feedback_mode == FeedbackMode::NackOnly {
            if cast_type != CastType::Groupcast {
                return Err(HarqError::NackOnlyNotGroupcast);
            }
            if comm_range_m.is_none() {
                return Err(HarqError::MissingCommRange);
            }
        }
        if max_tx == 0 {
            return Err(HarqError::ZeroMaxTx);
        }
        if rv_sequence.is_empty() {
            return Err(HarqError::EmptyRvSequence);
        }
        Ok(Self {
            harq_id,
            tb_id,
            cast_type,
            feedback_mode,
            comm_range_m,
            tx_count: 0,
            max_tx,
            rv_sequence,
            pending_feedback_slot: None,
        })
    }

    /// Redundancy version the next transmission will use.
    pub fn next_rv(&self) -> u8 {
        self.rv_sequence[self.tx_count as usize % self.rv_sequence.len()]
    }

    /// Marks one transmission as sent; returns the RV it used.
    pub fn record_tx(&mut self) -> u8 {
        debug_assert!(self.tx_count < self.max_tx);
        let rv = self.next_rv();
        self.tx_count += 1;
        rv
    }
}

/// Default redundancy-version cycle.
pub const DEFAULT_RV_SEQUENCE: [u8; 4] = [0, 2, 3, 1];

/// Feedback a receiver generates for one reception attempt.
///
/// - `AckNack`: ACK on success, NACK on failure.
/// - `NackOnly`: NACK iff the decode failed and the receiver sits within
///   the communication range; silence otherwise (including all successes).
/// - `None`: always silence.
pub fn generate_feedback(
    proc: &HarqProcess,
    decode_success: bool,
    tx_rx_distance_m: f64,
) -> Feedback {
    match proc.feedback_mode {
        FeedbackMode::AckNack => {
            if decode_success {
                Feedback::Ack
            } else {
                Feedback::Nack
            }
        }
        FeedbackMode::NackOnly => {
            let range = proc.comm_range_m.expect("validated at construction");
            if !decode_success && tx_rx_distance_m <= range {
                Feedback::Nack
            } else {
                Feedback::Silence
            }
        }
        FeedbackMode::None => Feedback::Silence,
    }
}

/// The PSFCH slot answering a transmission in `tx_slot`: the first sidelink
/// slot at least `min_gap_slots` after it whose index is a multiple of the
/// pool's PSFCH period. `None` when the pool carries no PSFCH resources.
pub fn psfch_slot_for(tx_slot: u64, pool: &ResourcePool, min_gap_slots: u64) -> Option<u64> {
    let period = pool.psfch_period_slots as u64;
    if period == 0 {
        return None;
    }
    let earliest = tx_slot + min_gap_slots;
    let mut slot = earliest.div_ceil(period) * period;
    // A periodic bitmap either hits a PSFCH occasion within one cycle of
    // period x bitmap length or never will.
    let limit = slot + period * pool.slot_bitmap.len() as u64;
    while slot <= limit {
        if pool.is_sl_slot(slot) {
            return Some(slot);
        }
        slot += period;
    }
    None
}

/// Advances the HARQ state machine on a feedback opportunity.
///
/// Blind mode retransmits unconditionally until `max_tx` and then finishes.
/// Otherwise ACK finishes the process; NACK (and, for ACK/NACK mode, lost
/// feedback) retransmits while budget remains and fails afterwards. In
/// NACK-only mode silence is the implicit ACK.
pub fn on_feedback(proc: &mut HarqProcess, outcome: Feedback, blind_mode: bool) -> HarqStep {
    proc.pending_feedback_slot = None;
    if blind_mode {
        return if proc.tx_count < proc.max_tx {
            HarqStep::Retransmit { rv: proc.next_rv() }
        } else {
            HarqStep::Done
        };
    }
    let nack = match (outcome, proc.feedback_mode) {
        (Feedback::Ack, _) => false,
        (Feedback::Nack, _) => true,
        (Feedback::Silence, FeedbackMode::NackOnly) => false,
        (Feedback::Silence, FeedbackMode::AckNack) => true, // lost feedback
        (Feedback::Silence, FeedbackMode::None) => false,
    };
    if !nack {
        return HarqStep::Done;
    }
    if proc.tx_count < proc.max_tx {
        HarqStep::Retransmit { rv: proc.next_rv() }
    } else {
        HarqStep::Failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{
        build_resource_pool, flat_rsrp_thresholds, Bwp, CyclicPrefix, Numerology, PoolConfig,
        PoolKind, PoolRole,
    };

    fn proc(cast: CastType, mode: FeedbackMode, range: Option<f64>) -> HarqProcess {
        HarqProcess::new(0, 1, cast, mode, range, 3, DEFAULT_RV_SEQUENCE.to_vec()).unwrap()
    }

    #[test]
    fn invariants_enforced() {
        assert_eq!(
            HarqProcess::new(
                0,
                1,
                CastType::Broadcast,
                FeedbackMode::AckNack,
                None,
                3,
                vec![0]
            ),
            Err(HarqError::BroadcastWithFeedback)
        );
        assert_eq!(
            HarqProcess::new(
                0,
                1,
                CastType::Unicast,
                FeedbackMode::NackOnly,
                Some(100.0),
                3,
                vec![0]
            ),
            Err(HarqError::NackOnlyNotGroupcast)
        );
        assert_eq!(
            HarqProcess::new(
                0,
                1,
                CastType::Groupcast,
                FeedbackMode::NackOnly,
                None,
                3,
                vec![0]
            ),
            Err(HarqError::MissingCommRange)
        );
    }

    #[test]
    fn unicast_ack_nack() {
        let p = proc(CastType::Unicast, FeedbackMode::AckNack, None);
        assert_eq!(generate_feedback(&p, true, 50.0), Feedback::Ack);
        assert_eq!(generate_feedback(&p, false, 50.0), Feedback::Nack);
    }

    #[test]
    fn nack_only_range_rule() {
        let p = proc(CastType::Groupcast, FeedbackMode::NackOnly, Some(150.0));
        assert_eq!(generate_feedback(&p, false, 80.0), Feedback::Nack);
        assert_eq!(generate_feedback(&p, false, 200.0), Feedback::Silence);
        assert_eq!(generate_feedback(&p, true, 80.0), Feedback::Silence);
        assert_eq!(generate_feedback(&p, true, 200.0), Feedback::Silence);
    }

    #[test]
    fn no_feedback_mode_is_silent() {
        let p = proc(CastType::Broadcast, FeedbackMode::None, None);
        assert_eq!(generate_feedback(&p, false, 10.0), Feedback::Silence);
        assert_eq!(generate_feedback(&p, true, 10.0), Feedback::Silence);
    }

    fn psfch_pool(period: u8) -> ResourcePool {
        let n = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        let bwp = Bwp::with_prb_count(5900.0, 10, n, 50).unwrap();
        build_resource_pool(
            &bwp,
            &PoolConfig {
                pool_id: 0,
                subchannel_size_prb: 10,
                num_subchannels: Some(5),
                slot_bitmap: vec![true],
                psfch_period_slots: period,
                rsrp_thresholds_dbm: flat_rsrp_thresholds(-90.0),
                cbr_busy_threshold_dbm: -94.0,
                preemption_enabled: false,
                preemption_priority_threshold: 4,
                kind: PoolKind::Normal,
                role: PoolRole::Both,
            },
        )
        .unwrap()
    }

    #[test]
    fn psfch_slot_rules() {
        assert_eq!(psfch_slot_for(5, &psfch_pool(4), 2), Some(8));
        assert_eq!(psfch_slot_for(5, &psfch_pool(0), 2), None);
        assert_eq!(psfch_slot_for(9, &psfch_pool(1), 1), Some(10));
        // Exactly on a boundary: tx 6 + gap 2 = 8 is itself a multiple of 4.
        assert_eq!(psfch_slot_for(6, &psfch_pool(4), 2), Some(8));
    }

    #[test]
    fn ack_completes() {
        let mut p = proc(CastType::Unicast, FeedbackMode::AckNack, None);
        p.record_tx();
        assert_eq!(on_feedback(&mut p, Feedback::Ack, false), HarqStep::Done);
        assert_eq!(p.tx_count, 1);
    }

    #[test]
    fn nack_walks_the_rv_sequence_then_fails() {
        let mut p = proc(CastType::Unicast, FeedbackMode::AckNack, None);
        assert_eq!(p.record_tx(), 0);
        assert_eq!(
            on_feedback(&mut p, Feedback::Nack, false),
            HarqStep::Retransmit { rv: 2 }
        );
        assert_eq!(p.record_tx(), 2);
        assert_eq!(
            on_feedback(&mut p, Feedback::Nack, false),
            HarqStep::Retransmit { rv: 3 }
        );
        assert_eq!(p.record_tx(), 3);
        assert_eq!(on_feedback(&mut p, Feedback::Nack, false), HarqStep::Failed);
        assert_eq!(p.tx_count, 3);
    }

    #[test]
    fn nack_only_silence_is_implicit_ack() {
        let mut p = proc(CastType::Groupcast, FeedbackMode::NackOnly, Some(150.0));
        p.record_tx();
        assert_eq!(on_feedback(&mut p, Feedback::Silence, false), HarqStep::Done);
    }

    #[test]
    fn blind_mode_exhausts_the_budget() {
        let mut p = HarqProcess::new(
            0,
            1,
            CastType::Broadcast,
            FeedbackMode::None,
            None,
            2,
            DEFAULT_RV_SEQUENCE.to_vec(),
        )
        .unwrap();
        p.record_tx();
        assert_eq!(
            on_feedback(&mut p, Feedback::Silence, true),
            HarqStep::Retransmit { rv: 2 }
        );
        p.record_tx();
        assert_eq!(on_feedback(&mut p, Feedback::Silence, true), HarqStep::Done);
    }

    #[test]
    fn tx_count_never_exceeds_max() {
        let mut p = proc(CastType::Unicast, FeedbackMode::AckNack, None);
        for _ in 0..3 {
            p.record_tx();
        }
        assert_eq!(p.tx_count, p.max_tx);
        assert_eq!(on_feedback(&mut p, Feedback::Nack, false), HarqStep::Failed);
    }
}
