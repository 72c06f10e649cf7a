//! Aggregated simulation outputs: per-TB outcomes, PRR-vs-distance pairs,
//! channel-load traces, event log, and the CSV writers for all of them.
//!
//! CSV schemas (stable, version 1):
//! - `prr.csv`: `bin_low_m,bin_high_m,expected,decoded,prr`
//! - `latency.csv`: `tb_id,priority,latency_ms,outcome` (latency empty
//!   unless delivered)
//! - `load.csv`: `time_ms,ue_id,cbr,cr`
//! - `events.csv`: `slot,type,ue_id,detail`

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Terminal state of a transport block. Every generated TB ends in exactly
/// one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbOutcome {
    Delivered,
    FailedHarq,
    DroppedCr,
    ExpiredPdb,
}

impl fmt::Display for TbOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TbOutcome::Delivered => "delivered",
            TbOutcome::FailedHarq => "failed_harq",
            TbOutcome::DroppedCr => "dropped_cr",
            TbOutcome::ExpiredPdb => "expired_pdb",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TbRecord {
    pub tb_id: u64,
    pub ue_id: u32,
    pub priority: u8,
    pub created_slot: u64,
    pub outcome: TbOutcome,
    /// Creation-to-delivery time; present only for delivered TBs.
    pub latency_ms: Option<f64>,
    pub tx_count: u32,
}

/// One (transport block, intended receiver) pair for PRR accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub distance_m: f64,
    pub decoded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSample {
    pub time_ms: f64,
    pub ue_id: u32,
    pub cbr: f64,
    pub cr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub slot: u64,
    pub kind: &'static str,
    pub ue_id: u32,
    pub detail: String,
}

/// Everything a run produces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub seed: u64,
    pub duration_ms: u64,
    pub slots_processed: u64,
    pub prr_bin_m: f64,
    pub tb_records: Vec<TbRecord>,
    pub pairs: Vec<PairRecord>,
    pub load_samples: Vec<LoadSample>,
    pub events: Vec<EventRecord>,
    /// Decode failures with at least one co-channel interferer.
    pub collisions: u64,
    pub preemption_releases: u64,
    pub preemption_requests: u64,
    pub reevaluation_reselections: u64,
    pub counter_reselections: u64,
    pub generated_tbs: u64,
}

/// One PRR distance bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrrBin {
    pub bin_low_m: f64,
    pub bin_high_m: f64,
    pub expected: u64,
    pub decoded: u64,
    pub prr: f64,
}

/// Packet reception ratio per distance bin of width `bin_m`. Bins without
/// any expected reception are omitted.
pub fn prr_by_distance(metrics: &Metrics, bin_m: f64) -> Vec<PrrBin> {
    assert!(bin_m > 0.0, "bin width must be positive");
    let mut expected: Vec<u64> = Vec::new();
    let mut decoded: Vec<u64> = Vec::new();
    for pair in &metrics.pairs {
        let idx = (pair.distance_m / bin_m).floor() as usize;
        if idx >= expected.len() {
            expected.resize(idx + 1, 0);
            decoded.resize(idx + 1, 0);
        }
        expected[idx] += 1;
        if pair.decoded {
            decoded[idx] += 1;
        }
    }
    expected
        .iter()
        .zip(&decoded)
        .enumerate()
        .filter(|(_, (&e, _))| e > 0)
        .map(|(i, (&e, &d))| PrrBin {
            bin_low_m: i as f64 * bin_m,
            bin_high_m: (i + 1) as f64 * bin_m,
            expected: e,
            decoded: d,
            prr: d as f64 / e as f64,
        })
        .collect()
}

impl Metrics {
    /// PRR of the bin containing `distance_m`, if any pair fell in it.
    pub fn prr_in_bin(&self, bin_low_m: f64, bin_m: f64) -> Option<f64> {
        prr_by_distance(self, bin_m)
            .into_iter()
            .find(|b| (b.bin_low_m - bin_low_m).abs() < 1e-9)
            .map(|b| b.prr)
    }

    /// Mean CBR over all load samples.
    pub fn mean_cbr(&self) -> f64 {
        if self.load_samples.is_empty() {
            return 0.0;
        }
        self.load_samples.iter().map(|s| s.cbr).sum::<f64>() / self.load_samples.len() as f64
    }

    pub fn outcome_count(&self, outcome: TbOutcome) -> u64 {
        self.tb_records
            .iter()
            .filter(|r| r.outcome == outcome)
            .count() as u64
    }

    /// Writes `prr.csv`, `latency.csv`, `load.csv`, and `events.csv` into
    /// `dir` (created if missing). Output is byte-deterministic for a fixed
    /// metrics value.
    pub fn write_csvs(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        self.write_prr_csv(&dir.join("prr.csv"))?;
        self.write_latency_csv(&dir.join("latency.csv"))?;
        self.write_load_csv(&dir.join("load.csv"))?;
        self.write_events_csv(&dir.join("events.csv"))?;
        Ok(())
    }

    fn write_prr_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "bin_low_m,bin_high_m,expected,decoded,prr")?;
        for bin in prr_by_distance(self, self.prr_bin_m) {
            writeln!(
                w,
                "{:.1},{:.1},{},{},{:.6}",
                bin.bin_low_m, bin.bin_high_m, bin.expected, bin.decoded, bin.prr
            )?;
        }
        w.flush()
    }

    fn write_latency_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "tb_id,priority,latency_ms,outcome")?;
        for tb in &self.tb_records {
            let latency = tb
                .latency_ms
                .map(|l| format!("{l:.3}"))
                .unwrap_or_default();
            writeln!(w, "{},{},{},{}", tb.tb_id, tb.priority, latency, tb.outcome)?;
        }
        w.flush()
    }

    fn write_load_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "time_ms,ue_id,cbr,cr")?;
        for s in &self.load_samples {
            writeln!(w, "{:.3},{},{:.6},{:.6}", s.time_ms, s.ue_id, s.cbr, s.cr)?;
        }
        w.flush()
    }

    fn write_events_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "slot,type,ue_id,detail")?;
        for e in &self.events {
            writeln!(w, "{},{},{},{}", e.slot, e.kind, e.ue_id, e.detail)?;
        }
        w.flush()
    }
}

/// Per-bin aggregate across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryBin {
    pub bin_low_m: f64,
    pub bin_high_m: f64,
    pub replications: usize,
    pub mean_prr: f64,
    /// Half-width of the 95% normal confidence interval.
    pub ci95: f64,
}

/// Mean and 95% CI of PRR per distance bin across replications.
pub fn summarize_prr(replications: &[Metrics], bin_m: f64) -> Vec<SummaryBin> {
    let mut per_bin: Vec<(f64, Vec<f64>)> = Vec::new();
    for rep in replications {
        for bin in prr_by_distance(rep, bin_m) {
            match per_bin
                .iter_mut()
                .find(|(low, _)| (*low - bin.bin_low_m).abs() < 1e-9)
            {
                Some((_, values)) => values.push(bin.prr),
                None => per_bin.push((bin.bin_low_m, vec![bin.prr])),
            }
        }
    }
    per_bin.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    per_bin
        .into_iter()
        .map(|(low, values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            SummaryBin {
                bin_low_m: low,
                bin_high_m: low + bin_m,
                replications: n,
                mean_prr: mean,
                ci95: 1.96 * (var / n as f64).sqrt(),
            }
        })
        .collect()
}

/// Writes the cross-replication summary:
/// `bin_low_m,bin_high_m,replications,mean_prr,ci95`.
pub fn write_summary_csv(replications: &[Metrics], bin_m: f64, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "bin_low_m,bin_high_m,replications,mean_prr,ci95")?;
    for bin in summarize_prr(replications, bin_m) {
        writeln!(
            w,
            "{:.1},{:.1},{},{:.6},{:.6}",
            bin.bin_low_m, bin.bin_high_m, bin.replications, bin.mean_prr, bin.ci95
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(d: f64, ok: bool) -> PairRecord {
        PairRecord {
            distance_m: d,
            decoded: ok,
        }
    }

    #[test]
    fn prr_bins_from_hand_built_trace() {
        // 4 UEs: receiver pairs at 30, 80, 150, 220 m.
        let metrics = Metrics {
            pairs: vec![
                pair(30.0, true),
                pair(80.0, true),
                pair(80.0, false),
                pair(150.0, true),
                pair(220.0, false),
            ],
            ..Metrics::default()
        };
        let bins = prr_by_distance(&metrics, 100.0);
        assert_eq!(bins.len(), 3);
        assert_eq!(bins[0].expected, 3);
        assert_eq!(bins[0].decoded, 2);
        assert!((bins[0].prr - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bins[1].expected, 1);
        assert!((bins[1].prr - 1.0).abs() < 1e-12);
        assert_eq!(bins[2].expected, 1);
        assert_eq!(bins[2].decoded, 0);
    }

    #[test]
    fn all_decoded_gives_unity_everywhere() {
        let metrics = Metrics {
            pairs: (0..50).map(|i| pair(i as f64 * 10.0, true)).collect(),
            ..Metrics::default()
        };
        for bin in prr_by_distance(&metrics, 100.0) {
            assert_eq!(bin.prr, 1.0);
        }
    }

    #[test]
    fn empty_bins_omitted() {
        let metrics = Metrics {
            pairs: vec![pair(30.0, true), pair(450.0, true)],
            ..Metrics::default()
        };
        let bins = prr_by_distance(&metrics, 100.0);
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].bin_low_m, 0.0);
        assert_eq!(bins[1].bin_low_m, 400.0);
    }

    #[test]
    fn summary_mean_and_ci() {
        let a = Metrics {
            pairs: vec![pair(50.0, true), pair(50.0, true)],
            ..Metrics::default()
        };
        let b = Metrics {
            pairs: vec![pair(50.0, true), pair(50.0, false)],
            ..Metrics::default()
        };
        let summary = summarize_prr(&[a, b], 100.0);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].replications, 2);
        assert!((summary[0].mean_prr - 0.75).abs() < 1e-12);
        assert!(summary[0].ci95 > 0.0);
    }

    #[test]
    fn csv_output_is_deterministic() {
        let metrics = Metrics {
            prr_bin_m: 100.0,
            pairs: vec![pair(30.0, true), pair(130.0, false)],
            tb_records: vec![TbRecord {
                tb_id: 42,
                ue_id: 1,
                priority: 3,
                created_slot: 10,
                outcome: TbOutcome::Delivered,
                latency_ms: Some(12.5),
                tx_count: 1,
            }],
            load_samples: vec![LoadSample {
                time_ms: 100.0,
                ue_id: 1,
                cbr: 0.25,
                cr: 0.0125,
            }],
            events: vec![EventRecord {
                slot: 3,
                kind: "selection",
                ue_id: 1,
                detail: "resources=1".into(),
            }],
            ..Metrics::default()
        };
        let dir = tempfile::tempdir().unwrap();
        metrics.write_csvs(dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("prr.csv")).unwrap();
        metrics.write_csvs(dir.path()).unwrap();
        let second = std::fs::read(dir.path().join("prr.csv")).unwrap();
        assert_eq!(first, second);
        let latency = std::fs::read_to_string(dir.path().join("latency.csv")).unwrap();
        assert!(latency.contains("42,3,12.500,delivered"));
    }
}
