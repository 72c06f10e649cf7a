//! Transport-block generation (periodic and aperiodic), QoS tagging,
//! highway mobility, and synchronization-source selection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::radio::Numerology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("priority {0} out of range 0..=7")]
    BadPriority(u8),
    #[error("packet delay budget must be positive")]
    ZeroPdb,
    #[error("traffic period must be positive")]
    ZeroPeriod,
    #[error("mean inter-arrival time must be positive")]
    ZeroInterarrival,
    #[error("sync-ref hop count {0} must be 1 or 2")]
    BadHopCount(u8),
    #[error("hop count only applies to sync-ref UE sources")]
    HopsOnNonSyncRef,
}

/// Cast type of a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CastType {
    Unicast,
    Groupcast,
    Broadcast,
}

/// Addressee of a transport block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Ue(u32),
    Group(u32),
    All,
}

/// One MAC transport block waiting for (or in) transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportBlock {
    pub tb_id: u64,
    pub created_at_slot: u64,
    pub size_bytes: u32,
    /// QoS level 0..=7; numerically lower value = higher priority.
    pub priority: u8,
    /// Packet delay budget in ms.
    pub pdb_ms: u32,
    pub cast_type: CastType,
    pub destination: Destination,
    pub comm_range_m: Option<f64>,
}

/// Immutable per-TB template a generator stamps out.
#[derive(Debug, Clone, PartialEq)]
pub struct TbTemplate {
    pub size_bytes: u32,
    pub priority: u8,
    pub pdb_ms: u32,
    pub cast_type: CastType,
    pub destination: Destination,
    pub comm_range_m: Option<f64>,
}

impl TbTemplate {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.priority > 7 {
            return Err(TrafficError::BadPriority(self.priority));
        }
        if self.pdb_ms == 0 {
            return Err(TrafficError::ZeroPdb);
        }
        Ok(())
    }
}

/// Arrival process of one UE.
#[derive(Debug, Clone, PartialEq)]
pub enum TrafficPattern {
    Disabled,
    /// Arrivals at `offset + k * period + U(0, jitter)`.
    Periodic {
        period_ms: f64,
        jitter_ms: f64,
        offset_ms: f64,
    },
    /// Exponential inter-arrival times.
    Aperiodic { mean_interarrival_ms: f64 },
}

impl TrafficPattern {
    pub fn validate(&self) -> Result<(), TrafficError> {
        match self {
            TrafficPattern::Disabled => Ok(()),
            TrafficPattern::Periodic { period_ms, .. } => {
                if *period_ms <= 0.0 {
                    Err(TrafficError::ZeroPeriod)
                } else {
                    Ok(())
                }
            }
            TrafficPattern::Aperiodic {
                mean_interarrival_ms,
            } => {
                if *mean_interarrival_ms <= 0.0 {
                    Err(TrafficError::ZeroInterarrival)
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Period in ms for periodic patterns, else 0 (one-shot grants).
    pub fn period_ms_or_zero(&self) -> u16 {
        match self {
            TrafficPattern::Periodic { period_ms, .. } => period_ms.round() as u16,
            _ => 0,
        }
    }
}

/// Arrival times of an ideal periodic source over `[0, duration_ms]`,
/// inclusive: exactly `floor(duration / period) + 1` arrivals with zero
/// jitter.
pub fn periodic_arrival_times(period_ms: f64, duration_ms: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * period_ms;
        if t > duration_ms {
            return out;
        }
        out.push(t);
        k += 1;
    }
}

/// Deterministic, seeded transport-block source for one UE.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    ue_id: u32,
    pattern: TrafficPattern,
    template: TbTemplate,
    slots_per_ms: u64,
    rng: ChaCha8Rng,
    next_time_ms: f64,
    next_period_index: u64,
    next_seq: u64,
}

impl TrafficGenerator {
    pub fn new(
        ue_id: u32,
        pattern: TrafficPattern,
        template: TbTemplate,
        numerology: &Numerology,
        mut rng: ChaCha8Rng,
    ) -> Result<Self, TrafficError> {
        pattern.validate()?;
        template.validate()?;
        let next_time_ms = match &pattern {
            TrafficPattern::Disabled => f64::INFINITY,
            TrafficPattern::Periodic {
                jitter_ms,
                offset_ms,
                ..
            } => {
                let jitter = if *jitter_ms > 0.0 {
                    rng.gen_range(0.0..=*jitter_ms)
                } else {
                    0.0
                };
                offset_ms + jitter
            }
            TrafficPattern::Aperiodic {
                mean_interarrival_ms,
            } => Exp::new(1.0 / mean_interarrival_ms)
                .expect("validated positive mean")
                .sample(&mut rng),
        };
        Ok(Self {
            ue_id,
            pattern,
            template,
            slots_per_ms: numerology.slots_per_ms(),
            rng,
            next_time_ms,
            next_period_index: 0,
            next_seq: 0,
        })
    }

    fn advance(&mut self) {
        match &self.pattern {
            TrafficPattern::Disabled => self.next_time_ms = f64::INFINITY,
            TrafficPattern::Periodic {
                period_ms,
                jitter_ms,
                offset_ms,
            } => {
                self.next_period_index += 1;
                let jitter = if *jitter_ms > 0.0 {
                    self.rng.gen_range(0.0..=*jitter_ms)
                } else {
                    0.0
                };
                self.next_time_ms = offset_ms + self.next_period_index as f64 * period_ms + jitter;
            }
            TrafficPattern::Aperiodic {
                mean_interarrival_ms,
            } => {
                let exp = Exp::new(1.0 / mean_interarrival_ms).expect("validated positive mean");
                self.next_time_ms += exp.sample(&mut self.rng);
            }
        }
    }

    /// Transport blocks arriving within `slot`'s time span.
    pub fn next_arrivals(&mut self, slot: u64) -> Vec<TransportBlock> {
        let slot_end_ms = (slot + 1) as f64 / self.slots_per_ms as f64;
        let mut out = Vec::new();
        while self.next_time_ms < slot_end_ms {
            let tb_id = ((self.ue_id as u64) << 32) | self.next_seq;
            self.next_seq += 1;
            out.push(TransportBlock {
                tb_id,
                created_at_slot: slot,
                size_bytes: self.template.size_bytes,
                priority: self.template.priority,
                pdb_ms: self.template.pdb_ms,
                cast_type: self.template.cast_type,
                destination: self.template.destination,
                comm_range_m: self.template.comm_range_m,
            });
            self.advance();
        }
        out
    }

    pub fn template(&self) -> &TbTemplate {
        &self.template
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }
}

/// Position and motion of one UE on the highway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeKinematics {
    pub position_m: (f64, f64),
    pub speed_mps: f64,
    pub lane: u8,
    pub heading_rad: f64,
}

/// Constant-speed advance with wrap-around at the road length (x axis).
pub fn advance_mobility(kin: &UeKinematics, dt_s: f64, road_length_m: f64) -> UeKinematics {
    let dx = kin.speed_mps * dt_s * kin.heading_rad.cos();
    let dy = kin.speed_mps * dt_s * kin.heading_rad.sin();
    UeKinematics {
        position_m: (
            (kin.position_m.0 + dx).rem_euclid(road_length_m),
            kin.position_m.1 + dy,
        ),
        ..*kin
    }
}

/// Distance between two positions with wrap-around along the road.
pub fn wrap_distance(a: (f64, f64), b: (f64, f64), road_length_m: f64) -> f64 {
    let dx_direct = (a.0 - b.0).abs();
    let dx = dx_direct.min(road_length_m - dx_direct);
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Synchronization reference kinds, best first: GNSS and gNB (configurable
/// order), then sync-ref UEs by hop count, then the internal clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SyncSourceKind {
    Gnss,
    Gnb,
    SyncRefUe,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SyncSource {
    pub kind: SyncSourceKind,
    /// 0 for direct sources; 1 or 2 for sync-ref chains.
    pub hops: u8,
}

impl SyncSource {
    pub fn new(kind: SyncSourceKind, hops: u8) -> Result<Self, TrafficError> {
        match kind {
            SyncSourceKind::SyncRefUe => {
                if !(1..=2).contains(&hops) {
                    return Err(TrafficError::BadHopCount(hops));
                }
            }
            _ if hops != 0 => return Err(TrafficError::HopsOnNonSyncRef),
            _ => {}
        }
        Ok(Self { kind, hops })
    }

    pub fn gnss() -> Self {
        Self {
            kind: SyncSourceKind::Gnss,
            hops: 0,
        }
    }

    pub fn gnb() -> Self {
        Self {
            kind: SyncSourceKind::Gnb,
            hops: 0,
        }
    }

    pub fn sync_ref(hops: u8) -> Self {
        Self {
            kind: SyncSourceKind::SyncRefUe,
            hops,
        }
    }

    pub fn internal() -> Self {
        Self {
            kind: SyncSourceKind::Internal,
            hops: 0,
        }
    }
}

/// Tiebreak between the two top-quality sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncPreference {
    #[default]
    GnssFirst,
    GnbFirst,
}

fn sync_rank(source: &SyncSource, prefer: SyncPreference) -> u8 {
    match source.kind {
        SyncSourceKind::Gnss => match prefer {
            SyncPreference::GnssFirst => 0,
            SyncPreference::GnbFirst => 1,
        },
        SyncSourceKind::Gnb => match prefer {
            SyncPreference::GnssFirst => 1,
            SyncPreference::GnbFirst => 0,
        },
        SyncSourceKind::SyncRefUe => 1 + source.hops, // hops 1 -> 2, hops 2 -> 3
        SyncSourceKind::Internal => 4,
    }
}

/// Picks the best synchronization source. A pure argmin over the documented
/// ranking, so the result is independent of candidate order; the internal
/// clock is always an acceptable last resort.
pub fn select_sync_source(candidates: &[SyncSource], prefer: SyncPreference) -> SyncSource {
    candidates
        .iter()
        .copied()
        .min_by_key(|s| (sync_rank(s, prefer), *s))
        .unwrap_or_else(SyncSource::internal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::CyclicPrefix;
    use rand::SeedableRng;

    fn template() -> TbTemplate {
        TbTemplate {
            size_bytes: 300,
            priority: 3,
            pdb_ms: 100,
            cast_type: CastType::Broadcast,
            destination: Destination::All,
            comm_range_m: None,
        }
    }

    fn numerology0() -> Numerology {
        Numerology::new(0, CyclicPrefix::Normal).unwrap()
    }

    #[test]
    fn periodic_arrivals_land_on_period_slots() {
        let mut gen = TrafficGenerator::new(
            1,
            TrafficPattern::Periodic {
                period_ms: 100.0,
                jitter_ms: 0.0,
                    offset_ms: 0.0,
            },
            template(),
            &numerology0(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut arrival_slots = Vec::new();
        for slot in 0..1000 {
            for tb in gen.next_arrivals(slot) {
                arrival_slots.push(tb.created_at_slot);
                assert_eq!(tb.priority, 3);
            }
        }
        assert_eq!(arrival_slots, vec![0, 100, 200, 300, 400, 500, 600, 700, 800, 900]);
    }

    #[test]
    fn periodic_count_property() {
        assert_eq!(periodic_arrival_times(100.0, 1000.0).len(), 11);
        assert_eq!(periodic_arrival_times(100.0, 999.0).len(), 10);
        assert_eq!(periodic_arrival_times(20.0, 95.0).len(), 5);
    }

    #[test]
    fn disabled_generator_is_silent() {
        let mut gen = TrafficGenerator::new(
            1,
            TrafficPattern::Disabled,
            template(),
            &numerology0(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for slot in 0..100 {
            assert!(gen.next_arrivals(slot).is_empty());
        }
    }

    #[test]
    fn aperiodic_rate_statistics() {
        // lambda = 10/s over 10 s -> 100 expected arrivals, sigma = 10.
        let mut gen = TrafficGenerator::new(
            1,
            TrafficPattern::Aperiodic {
                mean_interarrival_ms: 100.0,
            },
            template(),
            &numerology0(),
            ChaCha8Rng::seed_from_u64(77),
        )
        .unwrap();
        let mut count = 0;
        for slot in 0..10_000 {
            count += gen.next_arrivals(slot).len();
        }
        assert!((70..=130).contains(&count), "count = {count}");
    }

    #[test]
    fn tb_ids_are_unique_and_ue_scoped() {
        let mut gen = TrafficGenerator::new(
            7,
            TrafficPattern::Periodic {
                period_ms: 10.0,
                jitter_ms: 0.0,
                    offset_ms: 0.0,
            },
            template(),
            &numerology0(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for slot in 0..100 {
            for tb in gen.next_arrivals(slot) {
                assert_eq!(tb.tb_id >> 32, 7);
                assert!(ids.insert(tb.tb_id));
            }
        }
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn mobility_advance_and_wrap() {
        let kin = UeKinematics {
            position_m: (0.0, 3.5),
            speed_mps: 30.0,
            lane: 0,
            heading_rad: 0.0,
        };
        let moved = advance_mobility(&kin, 1.0, 2000.0);
        assert!((moved.position_m.0 - 30.0).abs() < 1e-9);
        assert_eq!(moved.position_m.1, 3.5);

        let near_end = UeKinematics {
            position_m: (1990.0, 0.0),
            ..kin
        };
        let wrapped = advance_mobility(&near_end, 1.0, 2000.0);
        assert!((wrapped.position_m.0 - 20.0).abs() < 1e-9);

        let parked = UeKinematics {
            speed_mps: 0.0,
            ..kin
        };
        assert_eq!(advance_mobility(&parked, 1.0, 2000.0), parked);
    }

    #[test]
    fn wrap_distance_shortcut() {
        let a = (10.0, 0.0);
        let b = (1990.0, 0.0);
        assert!((wrap_distance(a, b, 2000.0) - 20.0).abs() < 1e-9);
        assert!((wrap_distance(a, (100.0, 0.0), 2000.0) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn sync_selection_priority_order() {
        let gnb = SyncSource::gnb();
        let ref1 = SyncSource::sync_ref(1);
        let ref2 = SyncSource::sync_ref(2);
        let internal = SyncSource::internal();

        assert_eq!(
            select_sync_source(&[internal, ref1, gnb], SyncPreference::GnssFirst),
            gnb
        );
        assert_eq!(
            select_sync_source(&[internal, ref2, ref1], SyncPreference::GnssFirst),
            ref1
        );
        assert_eq!(
            select_sync_source(&[internal], SyncPreference::GnssFirst),
            internal
        );
        assert_eq!(
            select_sync_source(
                &[SyncSource::gnss(), gnb],
                SyncPreference::GnbFirst
            ),
            gnb
        );
    }

    #[test]
    fn sync_selection_is_permutation_invariant() {
        let mut candidates = vec![
            SyncSource::internal(),
            SyncSource::sync_ref(2),
            SyncSource::sync_ref(1),
            SyncSource::gnss(),
        ];
        let expected = select_sync_source(&candidates, SyncPreference::GnssFirst);
        for _ in 0..candidates.len() {
            candidates.rotate_left(1);
            assert_eq!(select_sync_source(&candidates, SyncPreference::GnssFirst), expected);
        }
        candidates.reverse();
        assert_eq!(select_sync_source(&candidates, SyncPreference::GnssFirst), expected);
    }

    #[test]
    fn sync_source_validation() {
        assert!(SyncSource::new(SyncSourceKind::SyncRefUe, 1).is_ok());
        assert_eq!(
            SyncSource::new(SyncSourceKind::SyncRefUe, 3),
            Err(TrafficError::BadHopCount(3))
        );
        assert_eq!(
            SyncSource::new(SyncSourceKind::Gnss, 1),
            Err(TrafficError::HopsOnNonSyncRef)
        );
    }
}
