//! Mode-1 (gNB-scheduled) resource allocation: configured grants Type 1 and
//! Type 2, plus random allocation on the exceptional pool.
//!
//! The scheduler is a first-fit periodic packer over its pool; by
//! construction no two configured grants ever overlap in (slot, subchannel),
//! regardless of activation state.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::radio::{PoolKind, Resource, ResourcePool};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Mode1Error {
    #[error("UE {0} is not registered with this scheduler")]
    UnknownUe(u32),
    #[error("grant {0} does not exist")]
    UnknownGrant(u32),
    #[error("grant pattern overlaps grant {0}")]
    OverlappingGrant(u32),
    #[error("grant {0} is not Type 2; DCI signaling only applies to Type 2 grants")]
    NotType2(u32),
    #[error("pattern resource (offset {offset}, start {start}, len {len}) does not fit the pool")]
    PatternOutOfPool { offset: u64, start: u16, len: u16 },
    #[error("grant period must be at least one slot")]
    ZeroPeriod,
    #[error("pool {0} is not an exceptional pool")]
    WrongPoolKind(u32),
    #[error("no sidelink slot in the exceptional allocation window")]
    EmptyExceptionalWindow,
    #[error("no free pattern fits the pool (period {period_slots} slots, {l_subch} subchannels)")]
    PoolFull { period_slots: u64, l_subch: u16 },
}

/// Configured-grant kind: Type 1 is usable immediately after RRC
/// configuration, Type 2 waits for DCI activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantType {
    Type1,
    Type2,
}

/// DCI action for a Type 2 grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DciAction {
    Activate,
    Deactivate,
}

/// A periodic resource pattern: `resources` hold slot offsets within one
/// period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicPattern {
    pub period_slots: u64,
    pub resources: Vec<Resource>,
}

impl PeriodicPattern {
    /// Absolute resources of the occurrence covering `slot`, if any.
    fn occurrences_at(&self, slot: u64) -> impl Iterator<Item = Resource> + '_ {
        let offset = slot % self.period_slots;
        self.resources
            .iter()
            .filter(move |r| r.slot_index == offset)
            .map(move |r| Resource::new(slot, r.subchannel_start, r.subchannel_len))
    }
}

/// A gNB-configured sidelink grant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfiguredGrant {
    pub grant_id: u32,
    pub ue_id: u32,
    pub grant_type: GrantType,
    pub pattern: PeriodicPattern,
    pub period_ms: u16,
    pub active: bool,
    /// Activation takes effect from the first occurrence at or after this
    /// slot.
    pub active_from_slot: u64,
}

impl ConfiguredGrant {
    pub fn transmits_at(&self, slot: u64) -> bool {
        self.active
            && slot >= self.active_from_slot
            && self
                .pattern
                .resources
                .iter()
                .any(|r| r.slot_index == slot % self.pattern.period_slots)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Two periodic slot sequences `offset_a + i*period_a` and
/// `offset_b + j*period_b` share a slot iff their offsets agree modulo
/// gcd(period_a, period_b).
fn periodic_slots_collide(offset_a: u64, period_a: u64, offset_b: u64, period_b: u64) -> bool {
    let g = gcd(period_a, period_b);
    offset_a % g == offset_b % g
}

fn patterns_overlap(a: &PeriodicPattern, b: &PeriodicPattern) -> bool {
    a.resources.iter().any(|ra| {
        b.resources.iter().any(|rb| {
            ra.overlaps_freq(rb)
                && periodic_slots_collide(
                    ra.slot_index,
                    a.period_slots,
                    rb.slot_index,
                    b.period_slots,
                )
        })
    })
}

/// gNB-side allocator owning one mode-1 pool.
#[derive(Debug, Clone)]
pub struct Mode1Scheduler {
    pool: ResourcePool,
    known_ues: BTreeSet<u32>,
    grants: Vec<ConfiguredGrant>,
    next_grant_id: u32,
}

impl Mode1Scheduler {
    pub fn new(pool: ResourcePool, ue_ids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            pool,
            known_ues: ue_ids.into_iter().collect(),
            grants: Vec::new(),
            next_grant_id: 0,
        }
    }

    pub fn pool(&self) -> &ResourcePool {
        &self.pool
    }

    pub fn grants(&self) -> &[ConfiguredGrant] {
        &self.grants
    }

    fn validate_pattern(&self, pattern: &PeriodicPattern) -> Result<(), Mode1Error> {
        if pattern.period_slots == 0 {
            return Err(Mode1Error::ZeroPeriod);
        }
        for r in &pattern.resources {
            if r.slot_index >= pattern.period_slots
                || r.subchannel_len == 0
                || r.subchannel_start as u32 + r.subchannel_len as u32
                    > self.pool.num_subchannels as u32
            {
                return Err(Mode1Error::PatternOutOfPool {
                    offset: r.slot_index,
                    start: r.subchannel_start,
                    len: r.subchannel_len,
                });
            }
        }
        Ok(())
    }

    /// Configures a grant for a UE. Type 1 grants are active immediately;
    /// Type 2 grants stay inactive until a DCI activation. The pattern must
    /// not overlap any configured grant, active or not, so mode-1
    /// transmissions are collision-free by construction.
    pub fn configure_grant(
        &mut self,
        ue_id: u32,
        grant_type: GrantType,
        pattern: PeriodicPattern,
        period_ms: u16,
    ) -> Result<u32, Mode1Error> {
        if !self.known_ues.contains(&ue_id) {
            return Err(Mode1Error::UnknownUe(ue_id));
        }
        self.validate_pattern(&pattern)?;
        for existing in &self.grants {
            if patterns_overlap(&existing.pattern, &pattern) {
                return Err(Mode1Error::OverlappingGrant(existing.grant_id));
            }
        }
        let grant_id = self.next_grant_id;
        self.next_grant_id += 1;
        self.grants.push(ConfiguredGrant {
            grant_id,
            ue_id,
            grant_type,
            pattern,
            period_ms,
            active: grant_type == GrantType::Type1,
            active_from_slot: 0,
        });
        Ok(grant_id)
    }

    /// Applies a DCI activation or deactivation to a Type 2 grant.
    /// Activation takes effect from the next pattern occurrence.
    pub fn handle_dci(
        &mut self,
        grant_id: u32,
        action: DciAction,
        now_slot: u64,
    ) -> Result<&ConfiguredGrant, Mode1Error> {
        let grant = self
            .grants
            .iter_mut()
            .find(|g| g.grant_id == grant_id)
            .ok_or(Mode1Error::UnknownGrant(grant_id))?;
        if grant.grant_type != GrantType::Type2 {
            return Err(Mode1Error::NotType2(grant_id));
        }
        match action {
            DciAction::Activate => {
                grant.active = true;
                grant.active_from_slot = now_slot + 1;
            }
            DciAction::Deactivate => grant.active = false,
        }
        Ok(grant)
    }

    /// All (ue, resource) transmissions scheduled in `slot`. Occurrences on
    /// non-sidelink slots of the pool are skipped.
    pub fn transmissions_at(&self, slot: u64) -> Vec<(u32, Resource)> {
        if !self.pool.is_sl_slot(slot) {
            return Vec::new();
        }
        let mut out = Vec::new();
        for grant in &self.grants {
            if !grant.active || slot < grant.active_from_slot {
                continue;
            }
            for r in grant.pattern.occurrences_at(slot) {
                out.push((grant.ue_id, r));
            }
        }
        out
    }

    /// First-fit search for a free periodic pattern with one resource of
    /// `l_subch` subchannels per period.
    pub fn find_free_pattern(
        &self,
        period_slots: u64,
        l_subch: u16,
    ) -> Result<PeriodicPattern, Mode1Error> {
        if period_slots == 0 {
            return Err(Mode1Error::ZeroPeriod);
        }
        let starts = self
            .pool
            .num_subchannels
            .checked_sub(l_subch)
            .map(|d| d + 1)
            .unwrap_or(0);
        for offset in 0..period_slots {
            for start in 0..starts {
                let candidate = PeriodicPattern {
                    period_slots,
                    resources: vec![Resource::new(offset, start, l_subch)],
                };
                if self
                    .grants
                    .iter()
                    .all(|g| !patterns_overlap(&g.pattern, &candidate))
                {
                    return Ok(candidate);
                }
            }
        }
        Err(Mode1Error::PoolFull {
            period_slots,
            l_subch,
        })
    }

    /// Grant table as CSV: `grant_id,ue_id,type,period_ms,active`.
    pub fn grants_csv(&self) -> String {
        let mut out = String::from("grant_id,ue_id,type,period_ms,active\n");
        for g in &self.grants {
            let ty = match g.grant_type {
                GrantType::Type1 => "type1",
                GrantType::Type2 => "type2",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                g.grant_id, g.ue_id, ty, g.period_ms, g.active
            );
        }
        out
    }
}

/// Uniformly random resource on an exceptional pool: `l_subch` subchannels
/// in one of the next `window_slots` sidelink slots after `now_slot`. No
/// sensing is consulted; the allocation is for temporary use only.
pub fn allocate_exceptional(
    pool: &ResourcePool,
    l_subch: u16,
    now_slot: u64,
    window_slots: u64,
    rng: &mut impl Rng,
) -> Result<Resource, Mode1Error> {
    if pool.kind != PoolKind::Exceptional {
        return Err(Mode1Error::WrongPoolKind(pool.pool_id));
    }
    let slots = pool.sl_slots_in(now_slot + 1, now_slot + window_slots);
    let starts = pool
        .num_subchannels
        .checked_sub(l_subch)
        .map(|d| d + 1)
        .unwrap_or(0);
    if slots.is_empty() || starts == 0 {
        return Err(Mode1Error::EmptyExceptionalWindow);
    }
    let idx = rng.gen_range(0..slots.len() * starts as usize);
    let slot = slots[idx / starts as usize];
    let start = (idx % starts as usize) as u16;
    Ok(Resource::new(slot, start, l_subch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{
        build_resource_pool, flat_rsrp_thresholds, Bwp, CyclicPrefix, Numerology, PoolConfig,
        PoolRole,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(kind: PoolKind) -> ResourcePool {
        let n = Numerology::new(0, CyclicPrefix::Normal).unwrap();
        let bwp = Bwp::with_prb_count(5900.0, 10, n, 50).unwrap();
        build_resource_pool(
            &bwp,
            &PoolConfig {
                pool_id: 1,
                subchannel_size_prb: 10,
                num_subchannels: Some(5),
                slot_bitmap: vec![true],
                psfch_period_slots: 0,
                rsrp_thresholds_dbm: flat_rsrp_thresholds(-90.0),
                cbr_busy_threshold_dbm: -94.0,
                preemption_enabled: false,
                preemption_priority_threshold: 4,
                kind,
                role: PoolRole::Both,
            },
        )
        .unwrap()
    }

    fn pattern(offset: u64, start: u16, period: u64) -> PeriodicPattern {
        PeriodicPattern {
            period_slots: period,
            resources: vec![Resource::new(offset, start, 2)],
        }
    }

    #[test]
    fn type1_active_immediately_type2_waits() {
        let mut sched = Mode1Scheduler::new(pool(PoolKind::Normal), [1, 2]);
        let g1 = sched
            .configure_grant(1, GrantType::Type1, pattern(0, 0, 100), 100)
            .unwrap();
        let g2 = sched
            .configure_grant(2, GrantType::Type2, pattern(0, 2, 100), 100)
            .unwrap();
        assert!(sched.grants()[0].active);
        assert!(!sched.grants()[1].active);
        assert_eq!(
            sched.transmissions_at(100),
            vec![(1, Resource::new(100, 0, 2))]
        );

        sched.handle_dci(g2, DciAction::Activate, 150).unwrap();
        assert_eq!(sched.transmissions_at(200).len(), 2);
        // Activation at slot 150 does not apply retroactively.
        assert!(!sched.grants()[1].transmits_at(100));

        sched.handle_dci(g2, DciAction::Deactivate, 250).unwrap();
        assert_eq!(sched.transmissions_at(300).len(), 1);

        assert_eq!(
            sched.handle_dci(g1, DciAction::Activate, 0),
            Err(Mode1Error::NotType2(g1))
        );
        assert_eq!(
            sched.handle_dci(99, DciAction::Activate, 0),
            Err(Mode1Error::UnknownGrant(99))
        );
    }

    #[test]
    fn overlapping_patterns_rejected() {
        let mut sched = Mode1Scheduler::new(pool(PoolKind::Normal), [1, 2]);
        sched
            .configure_grant(1, GrantType::Type1, pattern(10, 1, 100), 100)
            .unwrap();
        // Same offset and overlapping subchannels.
        assert_eq!(
            sched.configure_grant(2, GrantType::Type1, pattern(10, 2, 100), 100),
            Err(Mode1Error::OverlappingGrant(0))
        );
        // Different period but colliding occurrences (10 + 100k == 10 + 50j).
        assert_eq!(
            sched.configure_grant(2, GrantType::Type1, pattern(10, 0, 50), 50),
            Err(Mode1Error::OverlappingGrant(0))
        );
        // Same slots, disjoint subchannels: fine.
        sched
            .configure_grant(2, GrantType::Type1, pattern(10, 3, 100), 100)
            .unwrap();
    }

    #[test]
    fn unknown_ue_rejected() {
        let mut sched = Mode1Scheduler::new(pool(PoolKind::Normal), [1]);
        assert_eq!(
            sched.configure_grant(7, GrantType::Type1, pattern(0, 0, 100), 100),
            Err(Mode1Error::UnknownUe(7))
        );
    }

    #[test]
    fn first_fit_packs_without_overlap() {
        let mut sched = Mode1Scheduler::new(pool(PoolKind::Normal), 0..10u32);
        for ue in 0..10 {
            let p = sched.find_free_pattern(2, 1).unwrap();
            sched.configure_grant(ue, GrantType::Type1, p, 2).unwrap();
        }
        // 2 slots x 5 subchannels fit exactly 10 single-subchannel grants.
        assert_eq!(
            sched.find_free_pattern(2, 1),
            Err(Mode1Error::PoolFull {
                period_slots: 2,
                l_subch: 1
            })
        );
        for slot in 0..20 {
            let txs = sched.transmissions_at(slot);
            assert_eq!(txs.len(), 5);
            let mut seen = BTreeSet::new();
            for (_, r) in txs {
                for sc in r.subchannel_start..r.subchannel_start + r.subchannel_len {
                    assert!(seen.insert(sc), "subchannel collision at slot {slot}");
                }
            }
        }
    }

    #[test]
    fn exceptional_allocation_is_seeded_and_in_pool() {
        let p = pool(PoolKind::Exceptional);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = allocate_exceptional(&p, 1, 100, 50, &mut rng).unwrap();
        assert!(p.contains_resource(&r));
        assert!(r.slot_index > 100 && r.slot_index <= 150);

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(r, allocate_exceptional(&p, 1, 100, 50, &mut rng2).unwrap());
    }

    #[test]
    fn exceptional_requires_exceptional_pool() {
        let p = pool(PoolKind::Normal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            allocate_exceptional(&p, 1, 100, 50, &mut rng),
            Err(Mode1Error::WrongPoolKind(1))
        );
    }

    #[test]
    fn exceptional_draws_are_uniform() {
        // Chi-square over the 250 (slot, start) cells at 10^4 draws.
        let p = pool(PoolKind::Exceptional);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cells = 50 * 5;
        let draws = 10_000;
        let mut counts = vec![0u32; cells];
        for _ in 0..draws {
            let r = allocate_exceptional(&p, 1, 0, 50, &mut rng).unwrap();
            let idx = (r.slot_index as usize - 1) * 5 + r.subchannel_start as usize;
            counts[idx] += 1;
        }
        let expected = draws as f64 / cells as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 249 degrees of freedom; the 0.999 quantile is ~330.
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }

    #[test]
    fn csv_dump() {
        let mut sched = Mode1Scheduler::new(pool(PoolKind::Normal), [1, 2]);
        sched
            .configure_grant(1, GrantType::Type1, pattern(0, 0, 100), 100)
            .unwrap();
        sched
            .configure_grant(2, GrantType::Type2, pattern(5, 0, 100), 100)
            .unwrap();
        let csv = sched.grants_csv();
        assert!(csv.starts_with("grant_id,ue_id,type,period_ms,active\n"));
        assert!(csv.contains("0,1,type1,100,true"));
        assert!(csv.contains("1,2,type2,100,false"));
    }
}
