//! Congestion control: channel busy ratio (CBR) and channel occupancy
//! ratio (CR) over sliding windows, plus per-priority CR limiting.
//!
//! CBR is the fraction of (slot, subchannel) cells in the last 100 ms whose
//! received energy exceeds the pool's busy threshold. CR is the UE's own
//! past-used plus future-reserved subchannel-slots over a 1000 ms window
//! split around the current slot. Both are maintained incrementally with
//! exact integer cell counts so they match a brute-force recount bit for
//! bit.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::radio::ResourcePool;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CongestionError {
    #[error("CR limit table is not monotone in priority: bucket {bucket}, priority {priority} has limit {limit} above {prev}")]
    MalformedTable {
        bucket: usize,
        priority: usize,
        limit: f64,
        prev: f64,
    },
    #[error("CBR bucket edges must be strictly ascending within (0, 1)")]
    BadBucketEdges,
    #[error("CR limit table needs {expected} rows (bucket edges + 1), got {got}")]
    WrongRowCount { expected: usize, got: usize },
    #[error("CBR interval must be 1 or 2 ms (got {0})")]
    BadCbrInterval(u32),
}

/// Maximum allowed CR per (CBR bucket, priority). Higher-priority traffic
/// (numerically lower value) gets equal or higher limits.
#[derive(Debug, Clone, PartialEq)]
pub struct CrLimitTable {
    /// Ascending CBR thresholds; bucket i covers `cbr < edges[i]`, the last
    /// bucket covers the rest.
    pub cbr_bucket_edges: Vec<f64>,
    /// One row per bucket, indexed by priority 0..=7.
    pub limits: Vec<[f64; 8]>,
}

impl Default for CrLimitTable {
    fn default() -> Self {
        Self {
            cbr_bucket_edges: vec![0.3, 0.65, 0.8],
            limits: vec![
                [0.030, 0.028, 0.026, 0.024, 0.022, 0.020, 0.018, 0.016],
                [0.0150, 0.0140, 0.0130, 0.0120, 0.0110, 0.0100, 0.0090, 0.0080],
                [0.0080, 0.0075, 0.0070, 0.0065, 0.0060, 0.0055, 0.0050, 0.0045],
                [0.0040, 0.00375, 0.0035, 0.00325, 0.0030, 0.00275, 0.0025, 0.00225],
            ],
        }
    }
}

impl CrLimitTable {
    pub fn validate(&self) -> Result<(), CongestionError> {
        let mut prev_edge = 0.0;
        for &e in &self.cbr_bucket_edges {
            if e <= prev_edge || e >= 1.0 {
                return Err(CongestionError::BadBucketEdges);
            }
            prev_edge = e;
        }
        if self.limits.len() != self.cbr_bucket_edges.len() + 1 {
            return Err(CongestionError::WrongRowCount {
                expected: self.cbr_bucket_edges.len() + 1,
                got: self.limits.len(),
            });
        }
        for (bucket, row) in self.limits.iter().enumerate() {
            for priority in 1..8 {
                if row[priority] > row[priority - 1] {
                    return Err(CongestionError::MalformedTable {
                        bucket,
                        priority,
                        limit: row[priority],
                        prev: row[priority - 1],
                    });
                }
            }
        }
        Ok(())
    }

    pub fn limit_for(&self, cbr: f64, priority: u8) -> f64 {
        let bucket = self
            .cbr_bucket_edges
            .iter()
            .position(|&e| cbr < e)
            .unwrap_or(self.cbr_bucket_edges.len());
        self.limits[bucket][priority as usize]
    }
}

/// CBR measurement plus a warm-up marker for the first window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbrMeasurement {
    pub cbr: f64,
    /// True while less than a full window of history exists; the ratio then
    /// covers only the available history.
    pub warm_up: bool,
}

/// Outcome of CR-limit enforcement.
#[derive(Debug, Clone, PartialEq)]
pub enum CrEnforcement {
    Allow,
    /// Future reservations removed (latest first) until CR fits the limit.
    Shrink { removed: Vec<(u64, u16)> },
    /// Even with every future reservation cancelled the CR stays above the
    /// limit; the pending transport block must be dropped.
    Drop { removed: Vec<(u64, u16)> },
}

/// Per-UE channel-load bookkeeping for one pool.
#[derive(Debug, Clone)]
pub struct ChannelLoadState {
    num_subchannels: u16,
    slot_bitmap: Vec<bool>,
    /// bitmap_prefix[k] = set bits among the first k bitmap positions.
    bitmap_prefix: Vec<u64>,
    busy_threshold_dbm: f64,
    cbr_window_slots: u64,
    cr_past_slots: u64,
    cr_future_slots: u64,
    /// Busy flags per recorded sidelink slot, oldest first.
    rssi_busy: VecDeque<(u64, Vec<bool>)>,
    busy_cells: u64,
    first_recorded_slot: Option<u64>,
    last_recorded_slot: Option<u64>,
    /// Own past transmissions: (slot, subchannels used), oldest first.
    own_tx: VecDeque<(u64, u16)>,
    own_tx_cells: u64,
    /// Own future reservations: slot -> subchannels reserved.
    reservations: BTreeMap<u64, u16>,
}

/// CBR window: 100 ms. CR window: 1000 ms, split 500 ms past + current slot
/// + 499 ms future by default.
pub const CBR_WINDOW_MS: u64 = 100;
pub const CR_WINDOW_MS: u64 = 1000;
pub const DEFAULT_CR_PAST_MS: u64 = 500;
pub const DEFAULT_CR_FUTURE_MS: u64 = 499;

impl ChannelLoadState {
    pub fn new(pool: &ResourcePool, cr_past_ms: u64, cr_future_ms: u64) -> Self {
        let spm = pool.numerology.slots_per_ms();
        let mut bitmap_prefix = Vec::with_capacity(pool.slot_bitmap.len() + 1);
        bitmap_prefix.push(0);
        for &bit in &pool.slot_bitmap {
            bitmap_prefix.push(bitmap_prefix.last().unwrap() + bit as u64);
        }
        Self {
            num_subchannels: pool.num_subchannels,
            slot_bitmap: pool.slot_bitmap.clone(),
            bitmap_prefix,
            busy_threshold_dbm: pool.cbr_busy_threshold_dbm,
            cbr_window_slots: CBR_WINDOW_MS * spm,
            cr_past_slots: cr_past_ms * spm,
            cr_future_slots: cr_future_ms * spm,
            rssi_busy: VecDeque::new(),
            busy_cells: 0,
            first_recorded_slot: None,
            last_recorded_slot: None,
            own_tx: VecDeque::new(),
            own_tx_cells: 0,
            reservations: BTreeMap::new(),
        }
    }

    fn is_sl_slot(&self, slot: u64) -> bool {
        self.slot_bitmap[(slot % self.slot_bitmap.len() as u64) as usize]
    }

    /// Sidelink slots in `[0, x)`, in closed form over the periodic bitmap.
    fn sl_slots_below(&self, x: u64) -> u64 {
        let period = self.slot_bitmap.len() as u64;
        let per_period = *self.bitmap_prefix.last().unwrap();
        (x / period) * per_period + self.bitmap_prefix[(x % period) as usize]
    }

    fn sl_slot_count(&self, from: u64, to: u64) -> u64 {
        if from > to {
            return 0;
        }
        self.sl_slots_below(to + 1) - self.sl_slots_below(from)
    }

    /// Records the per-subchannel received energy of one sidelink slot.
    /// Slots must be recorded in ascending order; non-sidelink slots are
    /// ignored.
    pub fn record_rssi(&mut self, slot: u64, energies_dbm: &[f64]) {
        if !self.is_sl_slot(slot) {
            return;
        }
        debug_assert_eq!(energies_dbm.len(), self.num_subchannels as usize);
        debug_assert!(self.last_recorded_slot.map_or(true, |last| slot > last));
        let busy: Vec<bool> = energies_dbm
            .iter()
            .map(|&e| e > self.busy_threshold_dbm)
            .collect();
        self.busy_cells += busy.iter().filter(|&&b| b).count() as u64;
        self.rssi_busy.push_back((slot, busy));
        self.first_recorded_slot.get_or_insert(slot);
        self.last_recorded_slot = Some(slot);
        // Keep exactly the trailing CBR window.
        let min_slot = slot.saturating_sub(self.cbr_window_slots - 1);
        while let Some((s, flags)) = self.rssi_busy.front() {
            if *s >= min_slot {
                break;
            }
            self.busy_cells -= flags.iter().filter(|&&b| b).count() as u64;
            self.rssi_busy.pop_front();
        }
    }

    /// CBR over the window ending at `now_slot` (inclusive).
    pub fn measure_cbr(&self, now_slot: u64) -> CbrMeasurement {
        let window_lo = now_slot.saturating_sub(self.cbr_window_slots - 1);
        let warm_up = match self.first_recorded_slot {
            None => true,
            Some(first) => first > window_lo || now_slot + 1 < self.cbr_window_slots,
        };
        let (busy, cells) = if self.last_recorded_slot == Some(now_slot) {
            // Fast path: the deque holds exactly the trailing window.
            let cells: u64 = self.rssi_busy.len() as u64 * self.num_subchannels as u64;
            (self.busy_cells, cells)
        } else {
            let mut busy = 0u64;
            let mut cells = 0u64;
            for (s, flags) in &self.rssi_busy {
                if *s >= window_lo && *s <= now_slot {
                    busy += flags.iter().filter(|&&b| b).count() as u64;
                    cells += self.num_subchannels as u64;
                }
            }
            (busy, cells)
        };
        let cbr = if cells == 0 {
            0.0
        } else {
            busy as f64 / cells as f64
        };
        CbrMeasurement { cbr, warm_up }
    }

    /// Registers an own transmission of `subchannels` subchannels in `slot`.
    pub fn record_tx(&mut self, slot: u64, subchannels: u16) {
        if let Some(back) = self.own_tx.back_mut() {
            if back.0 == slot {
                back.1 += subchannels;
                self.own_tx_cells += subchannels as u64;
                return;
            }
        }
        self.own_tx.push_back((slot, subchannels));
        self.own_tx_cells += subchannels as u64;
    }

    /// Registers a future reservation.
    pub fn record_reservation(&mut self, slot: u64, subchannels: u16) {
        *self.reservations.entry(slot).or_insert(0) += subchannels;
    }

    /// Removes a previously registered reservation (e.g. after the slot was
    /// used, released, or cancelled).
    pub fn cancel_reservation(&mut self, slot: u64, subchannels: u16) {
        if let Some(v) = self.reservations.get_mut(&slot) {
            *v = v.saturating_sub(subchannels);
            if *v == 0 {
                self.reservations.remove(&slot);
            }
        }
    }

    /// Drops stale state: reservations at or before `now_slot` (they either
    /// became transmissions or lapsed) and transmissions that left the CR
    /// window.
    pub fn prune(&mut self, now_slot: u64) {
        let keep = self.reservations.split_off(&(now_slot + 1));
        self.reservations = keep;
        let min_slot = now_slot.saturating_sub(self.cr_past_slots);
        while let Some(&(s, count)) = self.own_tx.front() {
            if s >= min_slot {
                break;
            }
            self.own_tx_cells -= count as u64;
            self.own_tx.pop_front();
        }
    }

    /// CR over `[now - past, now + future]`: past usage plus future
    /// reservations over the pool's subchannel-slots in the window.
    pub fn measure_cr(&self, now_slot: u64) -> f64 {
        let past_lo = now_slot.saturating_sub(self.cr_past_slots);
        let used: u64 = self
            .own_tx
            .iter()
            .filter(|&&(s, _)| s >= past_lo && s <= now_slot)
            .map(|&(_, c)| c as u64)
            .sum();
        let reserved: u64 = self
            .reservations
            .range(now_slot + 1..=now_slot + self.cr_future_slots)
            .map(|(_, &c)| c as u64)
            .sum();
        let slots = self.sl_slot_count(past_lo, now_slot + self.cr_future_slots);
        let cells = slots * self.num_subchannels as u64;
        if cells == 0 {
            return 0.0;
        }
        (used + reserved) as f64 / cells as f64
    }

    /// Enforces the CR limit for a pending transmission of `priority`.
    ///
    /// Future reservations are cancelled latest-first until the recomputed
    /// CR fits the limit; when the past usage alone exceeds it the pending
    /// transport block has to be dropped.
    pub fn enforce_cr_limit(
        &mut self,
        now_slot: u64,
        priority: u8,
        table: &CrLimitTable,
    ) -> CrEnforcement {
        let cbr = self.measure_cbr(now_slot).cbr;
        let limit = table.limit_for(cbr, priority);
        if self.measure_cr(now_slot) <= limit {
            return CrEnforcement::Allow;
        }
        let mut removed = Vec::new();
        loop {
            let Some((&slot, _)) = self.reservations.iter().next_back() else {
                return CrEnforcement::Drop { removed };
            };
            let count = self.reservations.remove(&slot).unwrap();
            removed.push((slot, count));
            if self.measure_cr(now_slot) <= limit {
                return CrEnforcement::Shrink { removed };
            }
        }
    }

    /// Subchannel count currently reserved at `slot`.
    pub fn reserved_at(&self, slot: u64) -> u16 {
        self.reservations.get(&slot).copied().unwrap_or(0)
    }
}
