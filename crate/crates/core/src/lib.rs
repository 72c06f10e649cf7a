//! Slot-level simulator and protocol library for NR sidelink (PC5) V2X
//! communication.
//!
//! The crate models the Rel-16 sidelink machinery needed for vehicular
//! studies: the radio grid (numerology, slot format, resource pools),
//! two-stage SCI encoding, an abstract channel, mode-2 sensing-based
//! autonomous resource selection, mode-1 configured grants, CBR/CR
//! congestion control, sidelink HARQ, traffic and highway mobility models,
//! and a deterministic slot-driven engine that ties them together and emits
//! PRR / latency / channel-load metrics.

pub mod config;
pub mod congestion;
pub mod engine;
pub mod harq;
pub mod metrics;
pub mod mode1;
pub mod phy;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod sci;
pub mod sensing;
pub mod traffic;
