//! Abstract physical layer: log-distance pathloss with log-normal
//! shadowing, SINR with interference superposition, threshold-based decode,
//! and the half-duplex constraint.
//!
//! All functions here are pure; randomness (shadowing samples) is owned by
//! the caller so results stay reproducible.

use thiserror::Error;

use crate::sci::Sci1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("distance must be positive (got {0} m)")]
    NonpositiveDistance(f64),
    #[error("unknown MCS index {index}: table has {table_len} entries")]
    UnknownMcs { index: u8, table_len: usize },
    #[error("pathloss exponent must be positive (got {0})")]
    BadExponent(f64),
    #[error("shadowing sigma must be nonnegative (got {0})")]
    BadSigma(f64),
}

/// Link-budget parameters of the abstract channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub pathloss_exponent: f64,
    /// Reference loss at 1 m in dB.
    pub reference_loss_db: f64,
    pub shadowing_sigma_db: f64,
    /// Noise power per subchannel in dBm.
    pub noise_dbm: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            pathloss_exponent: 2.75,
            reference_loss_db: 47.0,
            shadowing_sigma_db: 3.0,
            noise_dbm: -94.0,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.pathloss_exponent <= 0.0 {
            return Err(PhyError::BadExponent(self.pathloss_exponent));
        }
        if self.shadowing_sigma_db < 0.0 {
            return Err(PhyError::BadSigma(self.shadowing_sigma_db));
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Received power in dBm at `distance_m` under log-distance pathloss:
/// `tx - (refloss + 10 * n * log10(d)) - shadow`.
pub fn rsrp_at(
    budget: &LinkBudget,
    distance_m: f64,
    shadow_sample_db: f64,
) -> Result<f64, PhyError> {
    if distance_m <= 0.0 {
        return Err(PhyError::NonpositiveDistance(distance_m));
    }
    let pathloss =
        budget.reference_loss_db + 10.0 * budget.pathloss_exponent * distance_m.log10();
    Ok(budget.tx_power_dbm - pathloss - shadow_sample_db)
}

/// SINR in dB: signal over (noise plus the linear sum of interferers).
/// With no interferers this reduces to SNR.
pub fn sinr_db(signal_dbm: f64, interferer_dbm: &[f64], noise_dbm: f64) -> f64 {
    let denom = dbm_to_mw(noise_dbm)
        + interferer_dbm.iter().map(|&i| dbm_to_mw(i)).sum::<f64>();
    mw_to_dbm(dbm_to_mw(signal_dbm) / denom)
}

/// SINR decode thresholds per MCS index.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    pub thresholds_db: Vec<f64>,
}

impl Default for McsTable {
    /// threshold(mcs) = -2 + mcs dB for MCS 0..=28.
    fn default() -> Self {
        Self {
            thresholds_db: (0..29).map(|m| -2.0 + m as f64).collect(),
        }
    }
}

impl McsTable {
    pub fn threshold(&self, mcs: u8) -> Result<f64, PhyError> {
        self.thresholds_db
            .get(mcs as usize)
            .copied()
            .ok_or(PhyError::UnknownMcs {
                index: mcs,
                table_len: self.thresholds_db.len(),
            })
    }
}

/// Deterministic decode decision. A half-duplex-blocked receiver never
/// decodes; otherwise the transport decodes iff the SINR clears the MCS
/// threshold.
pub fn decode_outcome(
    sinr_db: f64,
    mcs: u8,
    half_duplex_blocked: bool,
    table: &McsTable,
) -> Result<bool, PhyError> {
    let threshold = table.threshold(mcs)?;
    if half_duplex_blocked {
        return Ok(false);
    }
    Ok(sinr_db >= threshold)
}

/// Which reference the sensing RSRP is measured on. Under the abstract
/// channel both carry the same power; the switch is kept so scenarios are
/// explicit about it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RsrpSource {
    #[default]
    Pscch,
    Pssch,
}

/// One reception attempt as seen by a receiver UE.
#[derive(Debug, Clone, PartialEq)]
pub struct RxObservation {
    pub rsrp_dbm: f64,
    pub sinr_db: f64,
    pub decoded: bool,
    /// Present iff `decoded`.
    pub sci1: Option<Sci1>,
    /// Received transmission energy used by the CBR busy test; excludes the
    /// noise floor.
    pub energy_dbm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rsrp_reference_distance() {
        let b = LinkBudget::default();
        let rsrp = rsrp_at(&b, 1.0, 0.0).unwrap();
        assert_relative_eq!(rsrp, -24.0, epsilon = 1e-12);
    }

    #[test]
    fn rsrp_at_100m() {
        let b = LinkBudget::default();
        let rsrp = rsrp_at(&b, 100.0, 0.0).unwrap();
        assert_relative_eq!(rsrp, -79.0, epsilon = 1e-12);
    }

    #[test]
    fn rsrp_rejects_zero_distance() {
        let b = LinkBudget::default();
        assert_eq!(rsrp_at(&b, 0.0, 0.0), Err(PhyError::NonpositiveDistance(0.0)));
    }

    #[test]
    fn rsrp_decreases_with_distance() {
        let b = LinkBudget::default();
        let mut last = f64::INFINITY;
        for d in [1.0, 5.0, 20.0, 100.0, 400.0, 1500.0] {
            let v = rsrp_at(&b, d, 0.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn snr_without_interference() {
        assert_relative_eq!(sinr_db(-79.0, &[], -94.0), 15.0, epsilon = 1e-9);
    }

    #[test]
    fn equal_power_interferer_gives_zero_db() {
        let v = sinr_db(-79.0, &[-79.0], -174.0);
        assert_relative_eq!(v, 0.0, epsilon = 1e-3);
    }

    #[test]
    fn deep_noise_limit() {
        let v = sinr_db(-200.0, &[], -94.0);
        assert_relative_eq!(v, -106.0, epsilon = 1e-9);
    }

    #[test]
    fn sinr_monotone_in_interference() {
        let mut interferers = Vec::new();
        let mut last = sinr_db(-79.0, &interferers, -94.0);
        for i in 0..10 {
            interferers.push(-90.0 + i as f64);
            let v = sinr_db(-79.0, &interferers, -94.0);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn decode_rules() {
        let t = McsTable::default();
        assert_eq!(t.threshold(5).unwrap(), 3.0);
        assert!(decode_outcome(15.0, 5, false, &t).unwrap());
        assert!(!decode_outcome(15.0, 5, true, &t).unwrap());
        assert!(!decode_outcome(2.0, 5, false, &t).unwrap());
        assert!(matches!(
            decode_outcome(15.0, 99, false, &t),
            Err(PhyError::UnknownMcs { .. })
        ));
    }
}
