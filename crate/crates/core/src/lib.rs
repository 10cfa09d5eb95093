//! Simulation and finite-key analysis of passive round-robin differential
//! phase-shift key distribution.
//!
//! Alice sends an `L`-pulse train of weak coherent pulses carrying random
//! `{0, pi}` phases. Bob interferes it with a plain-phase local reference on a
//! balanced beam splitter and keeps blocks with at least two clicks; the
//! relative phase of two clicked slots is the raw key bit. The crate covers
//! the photon-level simulation ([`kernel`]), dead-time post-selection and
//! sifting ([`sifter`]), the security bound ([`security`]), exact
//! small-instance checks of the passive pair-selection claims ([`oracle`]),
//! and block-size scans ([`scanner`]).

pub mod kernel;
pub mod oracle;
pub mod rng;
pub mod scanner;
pub mod security;
pub mod sifter;

pub use kernel::{
    DetectionEvent, Detector, ExperimentConfig, PhaseBits, PulseBlock, ReferenceMode,
};
pub use security::{KeyRateReport, SecurityInput};
pub use sifter::{SiftTally, SiftedBit};
