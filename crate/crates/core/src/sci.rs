//! Bit-level codec for 1st- and 2nd-stage Sidelink Control Information and
//! expansion of an SCI's reservation indication into concrete resources.
//!
//! The SCI is split into two stages: stage 1 rides on PSCCH and announces
//! the resources, priority and reservation period; stage 2 rides on the
//! associated PSSCH and carries HARQ and addressing fields. Field widths are
//! configuration with fixed defaults so that encodings are bit-exact; for a
//! given [`SciFieldWidths`] the encoded length is constant.
//!
//! The time/frequency resource assignment uses an explicit per-resource
//! encoding: up to two additional reservations, each as (slot offset,
//! subchannel start, subchannel length). Offset 0 marks an absent entry.
//! When serialized to traces the bit strings are most-significant-bit-first
//! byte arrays.

use bitvec::field::BitField;
use bitvec::prelude::*;
use thiserror::Error;

use crate::radio::{Resource, ResourcePool};

/// Bit-string type used for encoded SCIs (MSB-first).
pub type SciBits = BitVec<u8, Msb0>;

/// Maximum resources one SCI can reserve, including the one carrying it.
pub const MAX_RESERVED_PER_SCI: usize = 3;

/// Default set of allowed resource-reservation periods in milliseconds.
/// 0 means no periodic reservation.
pub const DEFAULT_ALLOWED_PERIODS_MS: [u16; 13] = [
    0, 20, 50, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SciError {
    #[error("field `{field}` value {value} does not fit in {width} bits")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        width: u8,
    },
    #[error("bit string has {got} bits, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("reservation period {0} ms is not in the allowed set")]
    PeriodNotAllowed(u16),
    #[error("reservation period index {0} is outside the allowed set")]
    PeriodIndexOutOfRange(u64),
    #[error("priority field must be 3 bits wide (got {0})")]
    BadPriorityWidth(u8),
    #[error("field `{0}` must be at least 1 bit wide")]
    ZeroWidth(&'static str),
    #[error("reserved resource (offset {slot_offset}, start {start}, len {len}) lies outside the pool")]
    AssignmentOutOfPool {
        slot_offset: u32,
        start: u16,
        len: u16,
    },
    #[error("{0} additional reservations exceed the 2 signalled by one SCI")]
    TooManyReservations(usize),
}

/// 1st-stage SCI, carried on PSCCH. Every sensing decision consumes one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sci1 {
    /// QoS priority level 0..=7; numerically lower value = higher priority.
    pub priority: u8,
    /// Packed frequency-domain assignment of the additional reservations.
    pub freq_resource_assignment: u64,
    /// Packed time-domain assignment of the additional reservations.
    pub time_resource_assignment: u64,
    /// 0 = no periodic reservation; otherwise a value from the allowed set.
    pub resource_reservation_period_ms: u16,
    pub dmrs_pattern: u8,
    pub sci2_format: u8,
    pub mcs: u8,
    /// Opaque reserved field, carried verbatim.
    pub reserved: u32,
    pub beta_offset: u8,
    pub dmrs_ports: u8,
}

/// 2nd-stage SCI, carried on the associated PSSCH.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sci2 {
    pub harq_process_id: u8,
    pub new_data_indicator: bool,
    pub redundancy_version: u8,
    pub source_id: u32,
    pub destination_id: u32,
    pub csi_request: bool,
}

/// Bit width of every SCI field. Fields are packed in listing order:
/// stage 1 starts with `priority`, stage 2 with `harq_process_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SciFieldWidths {
    pub priority: u8,
    pub freq_resource_assignment: u8,
    pub time_resource_assignment: u8,
    pub reservation_period: u8,
    pub dmrs_pattern: u8,
    pub sci2_format: u8,
    pub mcs: u8,
    pub reserved: u8,
    pub beta_offset: u8,
    pub dmrs_ports: u8,
    pub harq_process_id: u8,
    pub new_data_indicator: u8,
    pub redundancy_version: u8,
    pub source_id: u8,
    pub destination_id: u8,
    pub csi_request: u8,
}

impl Default for SciFieldWidths {
    fn default() -> Self {
        Self {
            priority: 3,
            freq_resource_assignment: 2 * 2 * 3, // 2 entries x (start + len), 3 bits each
            time_resource_assignment: 2 * 8,     // 2 entries x 8-bit slot offset
            reservation_period: 4,
            dmrs_pattern: 2,
            sci2_format: 2,
            mcs: 5,
            reserved: 2,
            beta_offset: 2,
            dmrs_ports: 1,
            harq_process_id: 4,
            new_data_indicator: 1,
            redundancy_version: 2,
            source_id: 8,
            destination_id: 16,
            csi_request: 1,
        }
    }
}

fn bits_for(values: u64) -> u8 {
    debug_assert!(values >= 1);
    let mut bits = 0u8;
    while (1u64 << bits) < values {
        bits += 1;
    }
    bits.max(1)
}

impl SciFieldWidths {
    /// Widths with the time/frequency assignment sized for a pool: the
    /// subchannel fields cover `num_subchannels` and the slot offset covers
    /// `max_time_offset_slots`.
    pub fn for_pool(pool: &ResourcePool, max_time_offset_slots: u64) -> Self {
        let geom = AssignmentGeometry::for_pool(pool, max_time_offset_slots);
        Self {
            freq_resource_assignment: 2 * 2 * geom.subchannel_bits,
            time_resource_assignment: 2 * geom.slot_offset_bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SciError> {
        if self.priority != 3 {
            return Err(SciError::BadPriorityWidth(self.priority));
        }
        let named: [(&'static str, u8); 15] = [
            ("freq_resource_assignment", self.freq_resource_assignment),
            ("time_resource_assignment", self.time_resource_assignment),
            ("reservation_period", self.reservation_period),
            ("dmrs_pattern", self.dmrs_pattern),
            ("sci2_format", self.sci2_format),
            ("mcs", self.mcs),
            ("reserved", self.reserved),
            ("beta_offset", self.beta_offset),
            ("dmrs_ports", self.dmrs_ports),
            ("harq_process_id", self.harq_process_id),
            ("new_data_indicator", self.new_data_indicator),
            ("redundancy_version", self.redundancy_version),
            ("source_id", self.source_id),
            ("destination_id", self.destination_id),
            ("csi_request", self.csi_request),
        ];
        for (name, width) in named {
            if width == 0 {
                return Err(SciError::ZeroWidth(name));
            }
        }
        Ok(())
    }

    pub fn sci1_bits(&self) -> usize {
        [
            self.priority,
            self.freq_resource_assignment,
            self.time_resource_assignment,
            self.reservation_period,
            self.dmrs_pattern,
            self.sci2_format,
            self.mcs,
            self.reserved,
            self.beta_offset,
            self.dmrs_ports,
        ]
        .iter()
        .map(|&w| w as usize)
        .sum()
    }

    pub fn sci2_bits(&self) -> usize {
        [
            self.harq_process_id,
            self.new_data_indicator,
            self.redundancy_version,
            self.source_id,
            self.destination_id,
            self.csi_request,
        ]
        .iter()
        .map(|&w| w as usize)
        .sum()
    }
}

struct BitWriter {
    bits: SciBits,
}

impl BitWriter {
    fn new(total: usize) -> Self {
        Self {
            bits: bitvec![u8, Msb0; 0; total],
        }
    }

    fn write(
        &mut self,
        pos: &mut usize,
        field: &'static str,
        value: u64,
        width: u8,
    ) -> Result<(), SciError> {
        if width < 64 && value >> width != 0 {
            return Err(SciError::FieldOverflow { field, value, width });
        }
        self.bits[*pos..*pos + width as usize].store_be(value);
        *pos += width as usize;
        Ok(())
    }
}

fn read_field(bits: &BitSlice<u8, Msb0>, pos: &mut usize, width: u8) -> u64 {
    let v = bits[*pos..*pos + width as usize].load_be::<u64>();
    *pos += width as usize;
    v
}

/// SCI encoder/decoder: field widths plus the allowed-period table the
/// reservation-period field indexes into.
#[derive(Debug, Clone, PartialEq)]
pub struct SciCodec {
    pub widths: SciFieldWidths,
    pub allowed_periods_ms: Vec<u16>,
}

impl Default for SciCodec {
    fn default() -> Self {
        Self {
            widths: SciFieldWidths::default(),
            allowed_periods_ms: DEFAULT_ALLOWED_PERIODS_MS.to_vec(),
        }
    }
}

impl SciCodec {
    pub fn new(widths: SciFieldWidths, allowed_periods_ms: Vec<u16>) -> Result<Self, SciError> {
        widths.validate()?;
        Ok(Self {
            widths,
            allowed_periods_ms,
        })
    }

    fn period_index(&self, period_ms: u16) -> Result<u64, SciError> {
        self.allowed_periods_ms
            .iter()
            .position(|&p| p == period_ms)
            .map(|i| i as u64)
            .ok_or(SciError::PeriodNotAllowed(period_ms))
    }

    /// Encodes a 1st-stage SCI. Fields are packed MSB-first in listing
    /// order, `priority` first.
    pub fn encode_sci1(&self, sci: &Sci1) -> Result<SciBits, SciError> {
        let w = &self.widths;
        let mut out = BitWriter::new(w.sci1_bits());
        let mut pos = 0;
        out.write(&mut pos, "priority", sci.priority as u64, w.priority)?;
        out.write(
            &mut pos,
            "freq_resource_assignment",
            sci.freq_resource_assignment,
            w.freq_resource_assignment,
        )?;
        out.write(
            &mut pos,
            "time_resource_assignment",
            sci.time_resource_assignment,
            w.time_resource_assignment,
        )?;
        let period_idx = self.period_index(sci.resource_reservation_period_ms)?;
        out.write(&mut pos, "reservation_period", period_idx, w.reservation_period)?;
        out.write(&mut pos, "dmrs_pattern", sci.dmrs_pattern as u64, w.dmrs_pattern)?;
        out.write(&mut pos, "sci2_format", sci.sci2_format as u64, w.sci2_format)?;
        out.write(&mut pos, "mcs", sci.mcs as u64, w.mcs)?;
        out.write(&mut pos, "reserved", sci.reserved as u64, w.reserved)?;
        out.write(&mut pos, "beta_offset", sci.beta_offset as u64, w.beta_offset)?;
        out.write(&mut pos, "dmrs_ports", sci.dmrs_ports as u64, w.dmrs_ports)?;
        debug_assert_eq!(pos, w.sci1_bits());
        Ok(out.bits)
    }

    /// Decodes a 1st-stage SCI; inverse of [`SciCodec::encode_sci1`] on the
    /// valid domain.
    pub fn decode_sci1(&self, bits: &BitSlice<u8, Msb0>) -> Result<Sci1, SciError> {
        let w = &self.widths;
        if bits.len() != w.sci1_bits() {
            return Err(SciError::LengthMismatch {
                got: bits.len(),
                expected: w.sci1_bits(),
            });
        }
        let mut pos = 0;
        let priority = read_field(bits, &mut pos, w.priority) as u8;
        let freq = read_field(bits, &mut pos, w.freq_resource_assignment);
        let time = read_field(bits, &mut pos, w.time_resource_assignment);
        let period_idx = read_field(bits, &mut pos, w.reservation_period);
        let period_ms = *self
            .allowed_periods_ms
            .get(period_idx as usize)
            .ok_or(SciError::PeriodIndexOutOfRange(period_idx))?;
        let dmrs_pattern = read_field(bits, &mut pos, w.dmrs_pattern) as u8;
        let sci2_format = read_field(bits, &mut pos, w.sci2_format) as u8;
        let mcs = read_field(bits, &mut pos, w.mcs) as u8;
        let reserved = read_field(bits, &mut pos, w.reserved) as u32;
        let beta_offset = read_field(bits, &mut pos, w.beta_offset) as u8;
        let dmrs_ports = read_field(bits, &mut pos, w.dmrs_ports) as u8;
        Ok(Sci1 {
            priority,
            freq_resource_assignment: freq,
            time_resource_assignment: time,
            resource_reservation_period_ms: period_ms,
            dmrs_pattern,
            sci2_format,
            mcs,
            reserved,
            beta_offset,
            dmrs_ports,
        })
    }

    /// Encodes a 2nd-stage SCI, `harq_process_id` first.
    pub fn encode_sci2(&self, sci: &Sci2) -> Result<SciBits, SciError> {
        let w = &self.widths;
        let mut out = BitWriter::new(w.sci2_bits());
        let mut pos = 0;
        out.write(&mut pos, "harq_process_id", sci.harq_process_id as u64, w.harq_process_id)?;
        out.write(
            &mut pos,
            "new_data_indicator",
            sci.new_data_indicator as u64,
            w.new_data_indicator,
        )?;
        out.write(
            &mut pos,
            "redundancy_version",
            sci.redundancy_version as u64,
            w.redundancy_version,
        )?;
        out.write(&mut pos, "source_id", sci.source_id as u64, w.source_id)?;
        out.write(&mut pos, "destination_id", sci.destination_id as u64, w.destination_id)?;
        out.write(&mut pos, "csi_request", sci.csi_request as u64, w.csi_request)?;
        debug_assert_eq!(pos, w.sci2_bits());
        Ok(out.bits)
    }

    pub fn decode_sci2(&self, bits: &BitSlice<u8, Msb0>) -> Result<Sci2, SciError> {
        let w = &self.widths;
        if bits.len() != w.sci2_bits() {
            return Err(SciError::LengthMismatch {
                got: bits.len(),
                expected: w.sci2_bits(),
            });
        }
        let mut pos = 0;
        let harq_process_id = read_field(bits, &mut pos, w.harq_process_id) as u8;
        let ndi = read_field(bits, &mut pos, w.new_data_indicator) != 0;
        let rv = read_field(bits, &mut pos, w.redundancy_version) as u8;
        let source_id = read_field(bits, &mut pos, w.source_id) as u32;
        let destination_id = read_field(bits, &mut pos, w.destination_id) as u32;
        let csi_request = read_field(bits, &mut pos, w.csi_request) != 0;
        Ok(Sci2 {
            harq_process_id,
            new_data_indicator: ndi,
            redundancy_version: rv,
            source_id,
            destination_id,
            csi_request,
        })
    }
}

/// One additional reservation signalled by an SCI, relative to the resource
/// carrying it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtraReservation {
    /// Slots after the anchor; always >= 1 for a present entry.
    pub slot_offset: u32,
    pub subchannel_start: u16,
    pub subchannel_len: u16,
}

/// Field geometry for the explicit time/frequency assignment encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentGeometry {
    pub slot_offset_bits: u8,
    pub subchannel_bits: u8,
}

impl AssignmentGeometry {
    pub fn for_pool(pool: &ResourcePool, max_time_offset_slots: u64) -> Self {
        Self {
            slot_offset_bits: bits_for(max_time_offset_slots + 1),
            subchannel_bits: bits_for(pool.num_subchannels as u64),
        }
    }

    /// Geometry implied by a width table (the inverse of
    /// [`SciFieldWidths::for_pool`]).
    pub fn from_widths(widths: &SciFieldWidths) -> Self {
        Self {
            slot_offset_bits: widths.time_resource_assignment / 2,
            subchannel_bits: widths.freq_resource_assignment / 4,
        }
    }
}

/// Packs up to two additional reservations into the (time, freq) assignment
/// fields. A zero slot offset marks an absent entry, so present entries must
/// use offsets >= 1.
pub fn pack_assignments(
    extras: &[ExtraReservation],
    geom: &AssignmentGeometry,
) -> Result<(u64, u64), SciError> {
    if extras.len() > MAX_RESERVED_PER_SCI - 1 {
        return Err(SciError::TooManyReservations(extras.len()));
    }
    let off_bits = geom.slot_offset_bits;
    let sc_bits = geom.subchannel_bits;
    let mut time = 0u64;
    let mut freq = 0u64;
    for (i, extra) in extras.iter().enumerate() {
        if extra.slot_offset == 0 || (off_bits < 64 && (extra.slot_offset as u64) >> off_bits != 0)
        {
            return Err(SciError::FieldOverflow {
                field: "time_resource_assignment",
                value: extra.slot_offset as u64,
                width: off_bits,
            });
        }
        if extra.subchannel_len == 0 {
            return Err(SciError::AssignmentOutOfPool {
                slot_offset: extra.slot_offset,
                start: extra.subchannel_start,
                len: extra.subchannel_len,
            });
        }
        let start = extra.subchannel_start as u64;
        let len_m1 = (extra.subchannel_len - 1) as u64;
        if start >> sc_bits != 0 || len_m1 >> sc_bits != 0 {
            return Err(SciError::FieldOverflow {
                field: "freq_resource_assignment",
                value: start.max(len_m1),
                width: sc_bits,
            });
        }
        // Entry 0 occupies the high bits of each field.
        let shift = ((1 - i) as u32) * off_bits as u32;
        time |= (extra.slot_offset as u64) << shift;
        let fshift = ((1 - i) as u32) * 2 * sc_bits as u32;
        freq |= ((start << sc_bits) | len_m1) << fshift;
    }
    Ok((time, freq))
}

/// Inverse of [`pack_assignments`]; absent entries (offset 0) are skipped.
pub fn unpack_assignments(
    time: u64,
    freq: u64,
    geom: &AssignmentGeometry,
) -> Vec<ExtraReservation> {
    let off_bits = geom.slot_offset_bits as u32;
    let sc_bits = geom.subchannel_bits as u32;
    let off_mask = (1u64 << off_bits) - 1;
    let sc_mask = (1u64 << sc_bits) - 1;
    let mut out = Vec::new();
    for i in 0..2u32 {
        let offset = (time >> ((1 - i) * off_bits)) & off_mask;
        if offset == 0 {
            continue;
        }
        let chunk = (freq >> ((1 - i) * 2 * sc_bits)) & ((1u64 << (2 * sc_bits)) - 1);
        let start = (chunk >> sc_bits) & sc_mask;
        let len = (chunk & sc_mask) + 1;
        out.push(ExtraReservation {
            slot_offset: offset as u32,
            subchannel_start: start as u16,
            subchannel_len: len as u16,
        });
    }
    out
}

impl SciCodec {
    /// Expands an SCI's reservation indication into concrete resources.
    ///
    /// Returns the anchor resource plus the signalled additional resources,
    /// each replicated at multiples of the reservation period for as long as
    /// the replica's slot stays below `anchor.slot_index + horizon_slots`.
    /// Replicas falling on non-sidelink slots of the pool are dropped.
    pub fn reserved_resources(
        &self,
        sci: &Sci1,
        anchor: &Resource,
        pool: &ResourcePool,
        horizon_slots: u64,
    ) -> Result<Vec<Resource>, SciError> {
        let geom = AssignmentGeometry::from_widths(&self.widths);
        let extras = unpack_assignments(
            sci.time_resource_assignment,
            sci.freq_resource_assignment,
            &geom,
        );
        expand_reservation(sci, anchor, &extras, pool, horizon_slots)
    }
}

/// Expansion core shared by [`reserved_resources`] and callers that already
/// unpacked the assignment with an explicit geometry.
pub fn expand_reservation(
    sci: &Sci1,
    anchor: &Resource,
    extras: &[ExtraReservation],
    pool: &ResourcePool,
    horizon_slots: u64,
) -> Result<Vec<Resource>, SciError> {
    let mut bases = Vec::with_capacity(1 + extras.len());
    bases.push(*anchor);
    for extra in extras {
        let r = Resource::new(
            anchor.slot_index + extra.slot_offset as u64,
            extra.subchannel_start,
            extra.subchannel_len,
        );
        if extra.subchannel_start as u32 + extra.subchannel_len as u32
            > pool.num_subchannels as u32
            || extra.subchannel_len == 0
            || !pool.is_sl_slot(r.slot_index)
        {
            return Err(SciError::AssignmentOutOfPool {
                slot_offset: extra.slot_offset,
                start: extra.subchannel_start,
                len: extra.subchannel_len,
            });
        }
        bases.push(r);
    }

    let period_slots = pool
        .numerology
        .ms_to_slots(sci.resource_reservation_period_ms as u64);
    let limit = anchor.slot_index + horizon_slots;
    let mut out = Vec::new();
    for base in &bases {
        if period_slots == 0 {
            if base.slot_index < limit {
                out.push(*base);
            }
            continue;
        }
        let mut slot = base.slot_index;
        while slot < limit {
            if pool.is_sl_slot(slot) {
                out.push(Resource::new(slot, base.subchannel_start, base.subchannel_len));
            }
            slot += period_slots;
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{
        build_resource_pool, flat_rsrp_thresholds, Bwp, CyclicPrefix, Numerology, PoolConfig,
        PoolKind, PoolRole,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codec() -> SciCodec {
        SciCodec::default()
    }

    fn test_pool(num_subchannels: u16) -> ResourcePool {
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
    fn zero_sci1_encodes_to_zero_bits() {
        let c = codec();
        let bits = c.encode_sci1(&Sci1::default()).unwrap();
        assert_eq!(bits.len(), c.widths.sci1_bits());
        assert!(bits.not_any());
    }

    #[test]
    fn priority_leads_the_encoding() {
        let c = codec();
        let sci = Sci1 {
            priority: 7,
            ..Sci1::default()
        };
        let bits = c.encode_sci1(&sci).unwrap();
        assert!(bits[0] && bits[1] && bits[2]);
        assert!(bits[3..].not_any());
    }

    #[test]
    fn mcs_overflow_rejected() {
        let c = codec();
        let sci = Sci1 {
            mcs: 40,
            ..Sci1::default()
        };
        assert_eq!(
            c.encode_sci1(&sci),
            Err(SciError::FieldOverflow {
                field: "mcs",
                value: 40,
                width: 5
            })
        );
    }

    #[test]
    fn rv_overflow_rejected() {
        let c = codec();
        let sci = Sci2 {
            redundancy_version: 4,
            ..Sci2::default()
        };
        assert_eq!(
            c.encode_sci2(&sci),
            Err(SciError::FieldOverflow {
                field: "redundancy_version",
                value: 4,
                width: 2
            })
        );
    }

    #[test]
    fn truncated_bits_rejected() {
        let c = codec();
        let bits = c.encode_sci1(&Sci1::default()).unwrap();
        let truncated = &bits[..bits.len() - 1];
        assert!(matches!(
            c.decode_sci1(truncated),
            Err(SciError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ndi_toggles_exactly_one_bit() {
        let c = codec();
        let a = c.encode_sci2(&Sci2::default()).unwrap();
        let b = c
            .encode_sci2(&Sci2 {
                new_data_indicator: true,
                ..Sci2::default()
            })
            .unwrap();
        let differing = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
        assert_eq!(differing, 1);
    }

    pub(crate) fn random_sci1(rng: &mut impl Rng, c: &SciCodec) -> Sci1 {
        let w = &c.widths;
        let mask = |width: u8| -> u64 { (1u64 << width) - 1 };
        Sci1 {
            priority: (rng.gen::<u64>() & mask(w.priority)) as u8,
            freq_resource_assignment: rng.gen::<u64>() & mask(w.freq_resource_assignment),
            time_resource_assignment: rng.gen::<u64>() & mask(w.time_resource_assignment),
            resource_reservation_period_ms: c.allowed_periods_ms
                [rng.gen_range(0..c.allowed_periods_ms.len())],
            dmrs_pattern: (rng.gen::<u64>() & mask(w.dmrs_pattern)) as u8,
            sci2_format: (rng.gen::<u64>() & mask(w.sci2_format)) as u8,
            mcs: (rng.gen::<u64>() & mask(w.mcs)) as u8,
            reserved: (rng.gen::<u64>() & mask(w.reserved)) as u32,
            beta_offset: (rng.gen::<u64>() & mask(w.beta_offset)) as u8,
            dmrs_ports: (rng.gen::<u64>() & mask(w.dmrs_ports)) as u8,
        }
    }

    pub(crate) fn random_sci2(rng: &mut impl Rng, c: &SciCodec) -> Sci2 {
        let w = &c.widths;
        let mask = |width: u8| -> u64 { (1u64 << width) - 1 };
        Sci2 {
            harq_process_id: (rng.gen::<u64>() & mask(w.harq_process_id)) as u8,
            new_data_indicator: rng.gen(),
            redundancy_version: (rng.gen::<u64>() & mask(w.redundancy_version)) as u8,
            source_id: (rng.gen::<u64>() & mask(w.source_id)) as u32,
            destination_id: (rng.gen::<u64>() & mask(w.destination_id)) as u32,
            csi_request: rng.gen(),
        }
    }

    #[test]
    fn roundtrip_sample() {
        let c = codec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let sci = random_sci1(&mut rng, &c);
            let bits = c.encode_sci1(&sci).unwrap();
            assert_eq!(c.decode_sci1(&bits).unwrap(), sci);
            let sci2 = random_sci2(&mut rng, &c);
            let bits2 = c.encode_sci2(&sci2).unwrap();
            assert_eq!(c.decode_sci2(&bits2).unwrap(), sci2);
        }
    }

    #[test]
    fn assignment_roundtrip() {
        let pool = test_pool(5);
        let geom = AssignmentGeometry::for_pool(&pool, 255);
        let extras = [
            ExtraReservation {
                slot_offset: 4,
                subchannel_start: 1,
                subchannel_len: 2,
            },
            ExtraReservation {
                slot_offset: 9,
                subchannel_start: 0,
                subchannel_len: 1,
            },
        ];
        let (time, freq) = pack_assignments(&extras, &geom).unwrap();
        assert_eq!(unpack_assignments(time, freq, &geom), extras.to_vec());

        let (time1, freq1) = pack_assignments(&extras[..1], &geom).unwrap();
        assert_eq!(unpack_assignments(time1, freq1, &geom), extras[..1].to_vec());

        let (t0, f0) = pack_assignments(&[], &geom).unwrap();
        assert_eq!((t0, f0), (0, 0));
        assert!(unpack_assignments(t0, f0, &geom).is_empty());
    }

    #[test]
    fn reservation_expansion_with_period() {
        let pool = test_pool(5);
        let anchor = Resource::new(10, 0, 1);
        let extras = [ExtraReservation {
            slot_offset: 4,
            subchannel_start: 2,
            subchannel_len: 1,
        }];
        let sci = Sci1 {
            resource_reservation_period_ms: 100,
            ..Sci1::default()
        };
        let out = expand_reservation(&sci, &anchor, &extras, &pool, 300).unwrap();
        let slots: Vec<u64> = out.iter().map(|r| r.slot_index).collect();
        assert_eq!(slots, vec![10, 14, 110, 114, 210, 214]);
    }

    #[test]
    fn no_extra_resources_period_zero() {
        let pool = test_pool(5);
        let anchor = Resource::new(10, 0, 1);
        let sci = Sci1::default();
        let out = expand_reservation(&sci, &anchor, &[], &pool, 300).unwrap();
        assert_eq!(out, vec![anchor]);
    }

    #[test]
    fn out_of_pool_assignment_rejected() {
        let pool = test_pool(5);
        let anchor = Resource::new(10, 0, 1);
        let extras = [ExtraReservation {
            slot_offset: 4,
            subchannel_start: 5,
            subchannel_len: 1,
        }];
        let sci = Sci1::default();
        assert!(matches!(
            expand_reservation(&sci, &anchor, &extras, &pool, 300),
            Err(SciError::AssignmentOutOfPool { .. })
        ));
    }

    #[test]
    fn expansion_respects_size_bound() {
        let pool = test_pool(5);
        let anchor = Resource::new(0, 0, 1);
        let extras = [
            ExtraReservation {
                slot_offset: 3,
                subchannel_start: 1,
                subchannel_len: 1,
            },
            ExtraReservation {
                slot_offset: 7,
                subchannel_start: 2,
                subchannel_len: 1,
            },
        ];
        let sci = Sci1 {
            resource_reservation_period_ms: 20,
            ..Sci1::default()
        };
        let horizon = 200;
        let out = expand_reservation(&sci, &anchor, &extras, &pool, horizon).unwrap();
        let bound = 3 * (1 + (horizon / 20) as usize);
        assert!(out.len() <= bound);
        for r in &out {
            assert!(pool.contains_resource(r));
        }
    }
}
