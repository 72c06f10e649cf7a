//! Radio grid geometry: numerology, slot format, bandwidth part, and
//! resource pools.
//!
//! Everything in this module maps abstract "resource" indices onto slots,
//! symbols, and PRBs. All types are immutable after construction and can be
//! shared read-only across simulation workers.

use thiserror::Error;

/// Errors raised while building radio-grid objects.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid numerology index {0}: mu must be in 0..=3")]
    InvalidMu(u8),
    #[error("extended cyclic prefix is only defined for mu = 2 (got mu = {0})")]
    ExtendedCpUnsupported(u8),
    #[error("symbol index {index} outside slot of {symbols} symbols")]
    SymbolOutOfRange { index: u8, symbols: u8 },
    #[error("PSCCH symbols are not contiguous")]
    PscchNoncontiguous,
    #[error("PSSCH symbols are not contiguous")]
    PsschNoncontiguous,
    #[error("PSSCH overlaps the PSFCH region")]
    PsschOverlapsPsfch,
    #[error("PSSCH may not use the last symbol of the slot")]
    PsschUsesLastSymbol,
    #[error("guard symbol {0} does not immediately follow a PSSCH or PSFCH region")]
    GuardMisplaced(u8),
    #[error("no PSSCH symbols in the slot layout")]
    PsschEmpty,
    #[error("no default PRB count for {bandwidth_mhz} MHz at {scs_khz} kHz")]
    UnsupportedBandwidth { bandwidth_mhz: u16, scs_khz: u32 },
    #[error("unsupported channel bandwidth {0} MHz: must be 10, 20, 30, or 40")]
    InvalidBandwidth(u16),
    #[error("subchannel size {0} PRB is below the 10 PRB minimum")]
    SubchannelTooSmall(u16),
    #[error("pool needs {needed} PRBs but the BWP provides {available}")]
    PoolExceedsBwp { needed: u32, available: u32 },
    #[error("invalid PSFCH period {0}: must be 0, 1, 2, or 4 slots")]
    InvalidPsfchPeriod(u8),
    #[error("slot bitmap is empty or has no sidelink slot set")]
    EmptySlotBitmap,
}

/// Cyclic prefix kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyclicPrefix {
    Normal,
    Extended,
}

/// OFDM numerology (TS 38.211 style): sub-carrier spacing 15 * 2^mu kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerology {
    pub mu: u8,
    pub scs_khz: u32,
    pub cp: CyclicPrefix,
    pub slot_duration_us: u32,
}

impl Numerology {
    /// Builds a numerology from the index `mu` and a cyclic prefix kind.
    ///
    /// Extended CP exists only at mu = 2 (60 kHz).
    pub fn new(mu: u8, cp: CyclicPrefix) -> Result<Self, GridError> {
        if mu > 3 {
            return Err(GridError::InvalidMu(mu));
        }
        if cp == CyclicPrefix::Extended && mu != 2 {
            return Err(GridError::ExtendedCpUnsupported(mu));
        }
        Ok(Self {
            mu,
            scs_khz: 15 << mu,
            cp,
            slot_duration_us: 1000 >> mu,
        })
    }

    /// Slots per millisecond (2^mu).
    pub fn slots_per_ms(&self) -> u64 {
        1 << self.mu
    }

    /// Converts a duration in milliseconds to slots.
    pub fn ms_to_slots(&self, ms: u64) -> u64 {
        ms * self.slots_per_ms()
    }

    /// Slot start time in milliseconds.
    pub fn slot_to_ms(&self, slot: u64) -> f64 {
        slot as f64 / self.slots_per_ms() as f64
    }

    /// OFDM symbols per slot: 14 with normal CP, 12 with extended CP.
    pub fn symbols_per_slot(&self) -> u8 {
        match self.cp {
            CyclicPrefix::Normal => 14,
            CyclicPrefix::Extended => 12,
        }
    }
}

/// Inclusive range of OFDM symbol indices within a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolRange {
    pub first: u8,
    pub last: u8,
}

impl SymbolRange {
    pub fn contains(&self, symbol: u8) -> bool {
        symbol >= self.first && symbol <= self.last
    }
}

/// Symbol-layout description consumed by [`build_slot_format`].
///
/// Symbols are listed explicitly so that invalid layouts (holes, overlap
/// with PSFCH, use of the trailing guard position) can be expressed and
/// rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotFormatSpec {
    pub symbols_per_slot: u8,
    pub agc_symbol_index: u8,
    pub pscch_symbols: Vec<u8>,
    pub pssch_symbols: Vec<u8>,
    pub psfch_symbols: Vec<u8>,
    pub guard_symbols: Vec<u8>,
}

/// Validated sidelink slot format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotFormat {
    pub symbols_per_slot: u8,
    pub agc_symbol_index: u8,
    pub pscch_symbol_range: SymbolRange,
    pub pssch_symbol_range: SymbolRange,
    /// Empty when the slot carries no feedback region.
    pub psfch_symbol_range: Option<SymbolRange>,
    pub guard_symbol_indices: Vec<u8>,
}

fn contiguous_range(symbols: &[u8]) -> Option<SymbolRange> {
    let mut sorted = symbols.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != symbols.len() {
        return None;
    }
    let (first, last) = (*sorted.first()?, *sorted.last()?);
    if (last - first) as usize + 1 != sorted.len() {
        return None;
    }
    Some(SymbolRange { first, last })
}

/// Validates a symbol layout and returns the slot format.
///
/// Rules enforced:
/// - PSSCH symbols form one contiguous run and exclude the last symbol of
///   the slot (reserved as a guard placeholder).
/// - PSSCH and PSFCH regions are disjoint.
/// - every guard symbol immediately follows a PSSCH or PSFCH region and is
///   not itself part of one.
pub fn build_slot_format(spec: &SlotFormatSpec) -> Result<SlotFormat, GridError> {
    let n = spec.symbols_per_slot;
    let check_index = |index: u8| -> Result<(), GridError> {
        if index >= n {
            Err(GridError::SymbolOutOfRange { index, symbols: n })
        } else {
            Ok(())
        }
    };
    check_index(spec.agc_symbol_index)?;
    for &s in spec
        .pscch_symbols
        .iter()
        .chain(&spec.pssch_symbols)
        .chain(&spec.psfch_symbols)
        .chain(&spec.guard_symbols)
    {
        check_index(s)?;
    }

    if spec.pssch_symbols.is_empty() {
        return Err(GridError::PsschEmpty);
    }
    let pssch = contiguous_range(&spec.pssch_symbols).ok_or(GridError::PsschNoncontiguous)?;
    let pscch = contiguous_range(&spec.pscch_symbols).ok_or(GridError::PscchNoncontiguous)?;

    if pssch.contains(n - 1) {
        return Err(GridError::PsschUsesLastSymbol);
    }

    let psfch = if spec.psfch_symbols.is_empty() {
        None
    } else {
        // A fragmented feedback region would also be a bad layout; reuse the
        // contiguity check.
        let range =
            contiguous_range(&spec.psfch_symbols).ok_or(GridError::PsschNoncontiguous)?;
        if pssch.first <= range.last && range.first <= pssch.last {
            return Err(GridError::PsschOverlapsPsfch);
        }
        Some(range)
    };

    let in_tx_region = |s: u8| -> bool {
        pssch.contains(s) || psfch.map(|r| r.contains(s)).unwrap_or(false)
    };
    for &g in &spec.guard_symbols {
        if g == 0 || in_tx_region(g) || !in_tx_region(g - 1) {
            return Err(GridError::GuardMisplaced(g));
        }
    }

    let mut guards = spec.guard_symbols.clone();
    guards.sort_unstable();
    guards.dedup();

    Ok(SlotFormat {
        symbols_per_slot: n,
        agc_symbol_index: spec.agc_symbol_index,
        pscch_symbol_range: pscch,
        pssch_symbol_range: pssch,
        psfch_symbol_range: psfch,
        guard_symbol_indices: guards,
    })
}

impl SlotFormat {
    /// Standard layout: AGC on symbol 0, PSCCH on symbols 1..=2, PSSCH up to
    /// the feedback region (or up to the trailing guard when the slot has no
    /// PSFCH), guard symbols right after each transmission region.
    pub fn nr_default(numerology: &Numerology, with_psfch: bool) -> Self {
        let n = numerology.symbols_per_slot();
        let spec = if with_psfch {
            SlotFormatSpec {
                symbols_per_slot: n,
                agc_symbol_index: 0,
                pscch_symbols: vec![1, 2],
                pssch_symbols: (1..=n - 5).collect(),
                psfch_symbols: vec![n - 3, n - 2],
                guard_symbols: vec![n - 4, n - 1],
            }
        } else {
            SlotFormatSpec {
                symbols_per_slot: n,
                agc_symbol_index: 0,
                pscch_symbols: vec![1, 2],
                pssch_symbols: (1..=n - 2).collect(),
                psfch_symbols: vec![],
                guard_symbols: vec![n - 1],
            }
        };
        build_slot_format(&spec).expect("default slot layout is valid")
    }
}

/// Default transmission-bandwidth configuration: PRBs per (bandwidth, SCS).
///
/// The 15/30/60 kHz rows follow the FR1 channel-bandwidth tables; the
/// 120 kHz row is an approximation at 90% spectrum utilization since FR1
/// does not define one. Scenario files may override the count.
pub fn default_prb_count(bandwidth_mhz: u16, scs_khz: u32) -> Result<u16, GridError> {
    let row: [u16; 4] = match scs_khz {
        15 => [52, 106, 160, 216],
        30 => [24, 51, 78, 106],
        60 => [11, 24, 38, 51],
        120 => [6, 13, 20, 27],
        _ => {
            return Err(GridError::UnsupportedBandwidth {
                bandwidth_mhz,
                scs_khz,
            })
        }
    };
    let idx = match bandwidth_mhz {
        10 => 0,
        20 => 1,
        30 => 2,
        40 => 3,
        other => return Err(GridError::InvalidBandwidth(other)),
    };
    Ok(row[idx])
}

/// Sidelink bandwidth part. A UE has exactly one active SL BWP; all its
/// transmissions and receptions happen inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bwp {
    pub carrier_freq_mhz: f64,
    pub bandwidth_mhz: u16,
    pub numerology: Numerology,
    pub prb_count: u16,
}

impl Bwp {
    pub fn new(
        carrier_freq_mhz: f64,
        bandwidth_mhz: u16,
        numerology: Numerology,
    ) -> Result<Self, GridError> {
        let prb_count = default_prb_count(bandwidth_mhz, numerology.scs_khz)?;
        Ok(Self {
            carrier_freq_mhz,
            bandwidth_mhz,
            numerology,
            prb_count,
        })
    }

    /// Same as [`Bwp::new`] but with an explicit PRB count.
    pub fn with_prb_count(
        carrier_freq_mhz: f64,
        bandwidth_mhz: u16,
        numerology: Numerology,
        prb_count: u16,
    ) -> Result<Self, GridError> {
        if !matches!(bandwidth_mhz, 10 | 20 | 30 | 40) {
            return Err(GridError::InvalidBandwidth(bandwidth_mhz));
        }
        Ok(Self {
            carrier_freq_mhz,
            bandwidth_mhz,
            numerology,
            prb_count,
        })
    }
}

/// Pool kind: normal traffic pool or the exceptional fallback pool used
/// during RLF/handover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Normal,
    Exceptional,
}

/// Whether a UE transmits on, receives on, or both uses a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolRole {
    Transmit,
    Receive,
    Both,
}

/// Parameters for [`build_resource_pool`].
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub pool_id: u32,
    pub subchannel_size_prb: u16,
    /// When `None` the subchannel count is floor(PRBs / subchannel size).
    pub num_subchannels: Option<u16>,
    /// Periodic bitmap of sidelink slots; slot s is a SL slot when bit
    /// `s % len` is set.
    pub slot_bitmap: Vec<bool>,
    /// 0 disables PSFCH resources entirely.
    pub psfch_period_slots: u8,
    /// RSRP exclusion thresholds in dBm, indexed `[rx SCI priority][own
    /// priority]`.
    pub rsrp_thresholds_dbm: [[f64; 8]; 8],
    pub cbr_busy_threshold_dbm: f64,
    pub preemption_enabled: bool,
    /// Priority level used by the preemption-disabled escalation rule.
    pub preemption_priority_threshold: u8,
    pub kind: PoolKind,
    pub role: PoolRole,
}

/// A time/frequency region in which all sidelink transmissions occur,
/// together with the thresholds and feature flags that govern it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePool {
    pub pool_id: u32,
    pub numerology: Numerology,
    pub bwp_prb_count: u16,
    pub subchannel_size_prb: u16,
    pub num_subchannels: u16,
    pub slot_bitmap: Vec<bool>,
    pub psfch_period_slots: u8,
    pub rsrp_thresholds_dbm: [[f64; 8]; 8],
    pub cbr_busy_threshold_dbm: f64,
    pub preemption_enabled: bool,
    pub preemption_priority_threshold: u8,
    pub kind: PoolKind,
    pub role: PoolRole,
}

/// Builds a resource pool over a BWP. Subchannels are consecutive,
/// non-overlapping runs of `subchannel_size_prb` PRBs; leftover PRBs stay
/// unused.
pub fn build_resource_pool(bwp: &Bwp, config: &PoolConfig) -> Result<ResourcePool, GridError> {
    if config.subchannel_size_prb < 10 {
        return Err(GridError::SubchannelTooSmall(config.subchannel_size_prb));
    }
    if !matches!(config.psfch_period_slots, 0 | 1 | 2 | 4) {
        return Err(GridError::InvalidPsfchPeriod(config.psfch_period_slots));
    }
    if config.slot_bitmap.is_empty() || !config.slot_bitmap.iter().any(|&b| b) {
        return Err(GridError::EmptySlotBitmap);
    }
    let max_fit = bwp.prb_count / config.subchannel_size_prb;
    let num_subchannels = config.num_subchannels.unwrap_or(max_fit);
    let needed = num_subchannels as u32 * config.subchannel_size_prb as u32;
    if num_subchannels == 0 || needed > bwp.prb_count as u32 {
        return Err(GridError::PoolExceedsBwp {
            needed: needed.max(config.subchannel_size_prb as u32),
            available: bwp.prb_count as u32,
        });
    }
    Ok(ResourcePool {
        pool_id: config.pool_id,
        numerology: bwp.numerology,
        bwp_prb_count: bwp.prb_count,
        subchannel_size_prb: config.subchannel_size_prb,
        num_subchannels,
        slot_bitmap: config.slot_bitmap.clone(),
        psfch_period_slots: config.psfch_period_slots,
        rsrp_thresholds_dbm: config.rsrp_thresholds_dbm,
        cbr_busy_threshold_dbm: config.cbr_busy_threshold_dbm,
        preemption_enabled: config.preemption_enabled,
        preemption_priority_threshold: config.preemption_priority_threshold,
        kind: config.kind,
        role: config.role,
    })
}

impl ResourcePool {
    /// True when `slot` is a sidelink slot of this pool.
    pub fn is_sl_slot(&self, slot: u64) -> bool {
        self.slot_bitmap[(slot % self.slot_bitmap.len() as u64) as usize]
    }

    /// Sidelink slots in `[from_slot, to_slot]`, ascending.
    pub fn sl_slots_in(&self, from_slot: u64, to_slot: u64) -> Vec<u64> {
        if from_slot > to_slot {
            return Vec::new();
        }
        (from_slot..=to_slot)
            .filter(|&s| self.is_sl_slot(s))
            .collect()
    }

    /// Number of sidelink slots in `[from_slot, to_slot]`.
    pub fn sl_slot_count(&self, from_slot: u64, to_slot: u64) -> u64 {
        if from_slot > to_slot {
            return 0;
        }
        (from_slot..=to_slot).filter(|&s| self.is_sl_slot(s)).count() as u64
    }

    /// First PRB of a subchannel (relative to the pool start).
    pub fn subchannel_prb_range(&self, subchannel: u16) -> (u16, u16) {
        let start = subchannel * self.subchannel_size_prb;
        (start, start + self.subchannel_size_prb)
    }

    /// Checks that a resource lies inside this pool.
    pub fn contains_resource(&self, r: &Resource) -> bool {
        r.subchannel_len > 0
            && r.subchannel_start as u32 + r.subchannel_len as u32 <= self.num_subchannels as u32
            && self.is_sl_slot(r.slot_index)
    }

    pub fn exclusion_threshold_dbm(&self, rx_priority: u8, own_priority: u8) -> f64 {
        self.rsrp_thresholds_dbm[rx_priority as usize][own_priority as usize]
    }

    /// Smallest entry of the threshold table; used for the relaxation-loop
    /// iteration bound.
    pub fn min_threshold_dbm(&self) -> f64 {
        self.rsrp_thresholds_dbm
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// One sidelink resource: a contiguous run of subchannels in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Resource {
    pub slot_index: u64,
    pub subchannel_start: u16,
    pub subchannel_len: u16,
}

impl Resource {
    pub fn new(slot_index: u64, subchannel_start: u16, subchannel_len: u16) -> Self {
        Self {
            slot_index,
            subchannel_start,
            subchannel_len,
        }
    }

    /// True when the two resources share a slot and at least one subchannel.
    pub fn overlaps(&self, other: &Resource) -> bool {
        self.slot_index == other.slot_index && self.overlaps_freq(other)
    }

    pub fn overlaps_freq(&self, other: &Resource) -> bool {
        (self.subchannel_start as u32) < other.subchannel_start as u32 + other.subchannel_len as u32
            && (other.subchannel_start as u32)
                < self.subchannel_start as u32 + self.subchannel_len as u32
    }
}

/// Flat threshold table: the same dBm value for every (rx, own) priority
/// pair.
pub fn flat_rsrp_thresholds(dbm: f64) -> [[f64; 8]; 8] {
    [[dbm; 8]; 8]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerology_table() {
        let n0 = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        assert_eq!(n0.scs_khz, 15);
        assert_eq!(n0.slot_duration_us, 1000);

        let n2 = Numerology::new(2, CyclicPrefix::Extended).unwrap();
        assert_eq!(n2.scs_khz, 60);
        assert_eq!(n2.slot_duration_us, 250);
        assert_eq!(n2.symbols_per_slot(), 12);

        assert_eq!(
            Numerology::new(1, CyclicPrefix::Extended),
            Err(GridError::ExtendedCpUnsupported(1))
        );
        assert_eq!(Numerology::new(4, CyclicPrefix::Normal), Err(GridError::InvalidMu(4)));
    }

    #[test]
    fn slot_duration_scaling() {
        for mu in 0..=3u8 {
            let n = Numerology::new(mu, CyclicPrefix::Normal).unwrap();
            assert_eq!(n.slot_duration_us as u64 * (1 << mu), 1000);
            assert_eq!(n.scs_khz, 15 * (1 << mu));
        }
    }

    #[test]
    fn slot_format_accepts_standard_layout() {
        let spec = SlotFormatSpec {
            symbols_per_slot: 14,
            agc_symbol_index: 0,
            pscch_symbols: vec![1, 2],
            pssch_symbols: (1..=9).collect(),
            psfch_symbols: vec![11, 12],
            guard_symbols: vec![10, 13],
        };
        let fmt = build_slot_format(&spec).unwrap();
        assert_eq!(fmt.pssch_symbol_range, SymbolRange { first: 1, last: 9 });
        assert_eq!(fmt.psfch_symbol_range, Some(SymbolRange { first: 11, last: 12 }));
        assert_eq!(fmt.guard_symbol_indices, vec![10, 13]);
    }

    #[test]
    fn slot_format_rejects_last_symbol() {
        let spec = SlotFormatSpec {
            symbols_per_slot: 14,
            agc_symbol_index: 0,
            pscch_symbols: vec![1, 2],
            pssch_symbols: (1..=13).collect(),
            psfch_symbols: vec![],
            guard_symbols: vec![],
        };
        assert_eq!(build_slot_format(&spec), Err(GridError::PsschUsesLastSymbol));
    }

    #[test]
    fn slot_format_rejects_noncontiguous_pssch() {
        let spec = SlotFormatSpec {
            symbols_per_slot: 14,
            agc_symbol_index: 0,
            pscch_symbols: vec![1],
            pssch_symbols: vec![1, 2, 4],
            psfch_symbols: vec![],
            guard_symbols: vec![],
        };
        assert_eq!(build_slot_format(&spec), Err(GridError::PsschNoncontiguous));
    }

    #[test]
    fn slot_format_rejects_pssch_in_psfch_region() {
        let spec = SlotFormatSpec {
            symbols_per_slot: 14,
            agc_symbol_index: 0,
            pscch_symbols: vec![1, 2],
            pssch_symbols: (1..=11).collect(),
            psfch_symbols: vec![11, 12],
            guard_symbols: vec![13],
        };
        assert_eq!(build_slot_format(&spec), Err(GridError::PsschOverlapsPsfch));
    }

    #[test]
    fn slot_format_rejects_misplaced_guard() {
        let spec = SlotFormatSpec {
            symbols_per_slot: 14,
            agc_symbol_index: 0,
            pscch_symbols: vec![1, 2],
            pssch_symbols: (1..=9).collect(),
            psfch_symbols: vec![11, 12],
            // Symbol 4 sits inside the PSSCH run, not after it.
            guard_symbols: vec![4],
        };
        assert_eq!(build_slot_format(&spec), Err(GridError::GuardMisplaced(4)));
    }

    #[test]
    fn default_layouts_validate() {
        for mu in 0..=3u8 {
            let n = Numerology::new(mu, CyclicPrefix::Normal).unwrap();
            SlotFormat::nr_default(&n, true);
            SlotFormat::nr_default(&n, false);
        }
        let ext = Numerology::new(2, CyclicPrefix::Extended).unwrap();
        SlotFormat::nr_default(&ext, true);
    }

    fn test_bwp(prb: u16) -> Bwp {
        let n = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        Bwp::with_prb_count(5900.0, 10, n, prb).unwrap()
    }

    fn pool_config(subchannel_size: u16) -> PoolConfig {
        PoolConfig {
            pool_id: 0,
            subchannel_size_prb: subchannel_size,
            num_subchannels: None,
            slot_bitmap: vec![true],
            psfch_period_slots: 0,
            rsrp_thresholds_dbm: flat_rsrp_thresholds(-90.0),
            cbr_busy_threshold_dbm: -94.0,
            preemption_enabled: false,
            preemption_priority_threshold: 4,
            kind: PoolKind::Normal,
            role: PoolRole::Both,
        }
    }

    #[test]
    fn pool_subchannelization() {
        let pool = build_resource_pool(&test_bwp(52), &pool_config(10)).unwrap();
        assert_eq!(pool.num_subchannels, 5);
        // Subchannels tile [0, 50) without overlap; PRBs 50..52 unused.
        let mut covered = vec![false; 52];
        for sc in 0..pool.num_subchannels {
            let (lo, hi) = pool.subchannel_prb_range(sc);
            for prb in lo..hi {
                assert!(!covered[prb as usize]);
                covered[prb as usize] = true;
            }
        }
        assert_eq!(covered.iter().filter(|&&c| c).count(), 50);
    }

    #[test]
    fn pool_rejects_small_subchannel() {
        assert_eq!(
            build_resource_pool(&test_bwp(52), &pool_config(8)),
            Err(GridError::SubchannelTooSmall(8))
        );
    }

    #[test]
    fn pool_rejects_oversized_subchannel() {
        assert!(matches!(
            build_resource_pool(&test_bwp(24), &pool_config(25)),
            Err(GridError::PoolExceedsBwp { .. })
        ));
    }

    #[test]
    fn sl_slot_enumeration() {
        let mut cfg = pool_config(10);
        let pool = build_resource_pool(&test_bwp(52), &cfg).unwrap();
        assert_eq!(pool.sl_slots_in(0, 9).len(), 10);

        cfg.slot_bitmap = vec![true, false, false, false];
        let sparse = build_resource_pool(&test_bwp(52), &cfg).unwrap();
        assert_eq!(sparse.sl_slots_in(0, 7), vec![0, 4]);
        assert_eq!(sparse.sl_slots_in(5, 5), Vec::<u64>::new());
    }

    #[test]
    fn resource_overlap() {
        let a = Resource::new(4, 0, 2);
        let b = Resource::new(4, 1, 1);
        let c = Resource::new(4, 2, 1);
        let d = Resource::new(5, 0, 2);
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!(!a.overlaps(&d));
    }
}
