//! Photon-level simulation of one passive RRDPS block.
//!
//! Alice's phase-encoded train and Bob's plain reference meet on a balanced
//! beam splitter. Each overall phase is redrawn per block, so conditioned on
//! the phase difference every output slot of each detector sees an
//! independent Poisson photon number; threshold detectors turn nonzero
//! counts into clicks. [`photon_number`] offers an equivalent engine built
//! on Fock states that also reports how many photons each party contributed.

pub mod photon_number;
pub mod train;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("negative mean photon number {mean} at slot {slot}")]
    NegativeMean { slot: usize, mean: f64 },
    #[error("signal and reference differ in length ({signal} vs {reference})")]
    LengthMismatch { signal: usize, reference: usize },
    #[error("{0} interfering photons exceed the photon-number engine limit")]
    PhotonNumberTooLarge(u64),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Bob's two detectors, one per beam-splitter output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    C,
    D,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::C => "C",
            Detector::D => "D",
        })
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "C" => Ok(Detector::C),
            "D" => Ok(Detector::D),
            other => Err(format!("unknown detector {other:?}, expected C or D")),
        }
    }
}

/// One click. Ordering is by time, then detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub block_id: u64,
    pub slot: u32,
    pub detector: Detector,
}

impl DetectionEvent {
    pub fn new(block_id: u64, slot: u32, detector: Detector) -> Self {
        DetectionEvent {
            block_id,
            slot,
            detector,
        }
    }

    /// Slot index on the absolute time axis.
    pub fn absolute_slot(&self, block_size: usize) -> u64 {
        self.block_id * block_size as u64 + u64::from(self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReferenceMode {
    /// Fixed mean photon number per reference pulse.
    Fixed(f64),
    /// Reference intensity equal to the received signal.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub block_size: usize,
    /// Mean photons per pulse leaving Alice.
    pub mu_alice: f64,
    pub reference_mode: ReferenceMode,
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    /// Passive loss inside Bob's receiver, common to both inputs.
    pub receiver_loss_db: f64,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    pub slot_period_ns: f64,
    pub visibility: f64,
    pub seed: u64,
    pub blocks: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            block_size: 8192,
            mu_alice: 0.004,
            reference_mode: ReferenceMode::Fixed(0.004),
            distance_km: 0.0,
            loss_db_per_km: 0.2,
            receiver_loss_db: 0.0,
            detector_efficiency: 0.14,
            dark_rate_hz: 500.0,
            dead_time_ns: 80.0,
            slot_period_ns: 2.0,
            visibility: 1.0,
            seed: 0,
            blocks: 10_000,
        }
    }
}

fn nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidConfig(format!(
            "{name} must be finite and >= 0, got {value}"
        )))
    }
}

fn fraction(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(KernelError::InvalidConfig(format!(
            "{name} must lie in [0, 1], got {value}"
        )))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size < 3 {
            return Err(KernelError::InvalidConfig(format!(
                "block_size must be at least 3, got {}",
                self.block_size
            )));
        }
        if u32::try_from(self.block_size).is_err() {
            return Err(KernelError::InvalidConfig(
                "block_size exceeds u32 range".into(),
            ));
        }
        nonnegative("mu_alice", self.mu_alice)?;
        if let ReferenceMode::Fixed(mu) = self.reference_mode {
            nonnegative("mu_bob", mu)?;
        }
        nonnegative("distance_km", self.distance_km)?;
        nonnegative("loss_db_per_km", self.loss_db_per_km)?;
        nonnegative("receiver_loss_db", self.receiver_loss_db)?;
        fraction("detector_efficiency", self.detector_efficiency)?;
        nonnegative("dark_rate_hz", self.dark_rate_hz)?;
        nonnegative("dead_time_ns", self.dead_time_ns)?;
        if !(self.slot_period_ns.is_finite() && self.slot_period_ns > 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "slot_period_ns must be > 0, got {}",
                self.slot_period_ns
            )));
        }
        fraction("visibility", self.visibility)?;
        Ok(())
    }

    /// Channel transmittance `10^(-alpha d / 10)`.
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db_per_km * self.distance_km / 10.0)
    }

    /// Signal photons per pulse arriving at Bob's beam splitter.
    pub fn mu_signal_at_bob(&self) -> f64 {
        self.mu_alice * self.transmittance()
    }

    pub fn mu_reference(&self) -> f64 {
        match self.reference_mode {
            ReferenceMode::Fixed(mu) => mu,
            ReferenceMode::Matched => self.mu_signal_at_bob(),
        }
    }

    /// Detection efficiency including receiver loss.
    pub fn overall_efficiency(&self) -> f64 {
        self.detector_efficiency * 10f64.powf(-self.receiver_loss_db / 10.0)
    }

    pub fn dark_mean_per_slot(&self) -> f64 {
        self.dark_rate_hz * self.slot_period_ns * 1e-9
    }

    /// Dead time in whole slots, rounded up.
    pub fn dead_time_slots(&self) -> u64 {
        (self.dead_time_ns / self.slot_period_ns).ceil() as u64
    }

    /// Probability that a given detector clicks in a given slot, averaged
    /// over the phase pattern and the overall-phase difference.
    pub fn expected_click_probability(&self) -> f64 {
        const NODES: usize = 2048;
        let eta = self.overall_efficiency();
        let (mu_a, mu_b) = (self.mu_signal_at_bob(), self.mu_reference());
        let base = eta * (mu_a + mu_b) / 2.0 + self.dark_mean_per_slot();
        let fringe = eta * self.visibility * (mu_a * mu_b).sqrt();
        // Uniform nodes integrate periodic integrands spectrally.
        let total: f64 = (0..NODES)
            .map(|k| {
                let c = (2.0 * PI * k as f64 / NODES as f64).cos();
                -(-(base + fringe * c)).exp_m1()
            })
            .sum();
        total / NODES as f64
    }
}

/// Phase pattern of one train, one bit per slot (bit set = phase pi).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBits {
    words: Vec<u64>,
    len: usize,
}

impl PhaseBits {
    pub fn zeros(len: usize) -> Self {
        PhaseBits {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.next_u64()).collect();
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        PhaseBits { words, len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = PhaseBits::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                out.words[i / 64] |= 1 << (i % 64);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Slot-wise XOR, the relative phase pattern of two trains.
    pub fn xor(&self, other: &PhaseBits) -> PhaseBits {
        assert_eq!(self.len, other.len);
        PhaseBits {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        }
    }
}

impl fmt::Display for PhaseBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for PhaseBits {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("phase digit {other:?} is not 0 or 1")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(PhaseBits::from_bools(&bits))
    }
}

/// One party's `L`-pulse train as seen at Bob's beam splitter.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseBlock {
    pub phases: PhaseBits,
    /// Square root of the mean photon number per pulse.
    pub amplitude_scale: f64,
    pub overall_phase: f64,
}

impl PulseBlock {
    pub fn mean_photons_per_pulse(&self) -> f64 {
        self.amplitude_scale * self.amplitude_scale
    }
}

/// Alice's attenuated signal and Bob's reference for one block.
pub fn emit_block<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> (PulseBlock, PulseBlock) {
    let phases = PhaseBits::random(cfg.block_size, rng);
    let theta_alice = rng.random::<f64>() * 2.0 * PI;
    let theta_bob = rng.random::<f64>() * 2.0 * PI;
    let signal = PulseBlock {
        phases,
        amplitude_scale: cfg.mu_signal_at_bob().sqrt(),
        overall_phase: theta_alice,
    };
    let reference = PulseBlock {
        phases: PhaseBits::zeros(cfg.block_size),
        amplitude_scale: cfg.mu_reference().sqrt(),
        overall_phase: theta_bob,
    };
    (signal, reference)
}

/// Mean photon numbers `(C, D)` in a slot whose relative phase bit is
/// `relative_phase`, for overall-phase difference `delta_theta`.
pub fn slot_means(
    cfg: &ExperimentConfig,
    mu_signal: f64,
    mu_reference: f64,
    delta_theta: f64,
    relative_phase: bool,
) -> (f64, f64) {
    let eta = cfg.overall_efficiency();
    let base = (mu_signal + mu_reference) / 2.0;
    let sign = if relative_phase { -1.0 } else { 1.0 };
    let fringe = cfg.visibility * (mu_signal * mu_reference).sqrt() * sign * delta_theta.cos();
    (eta * (base + fringe), eta * (base - fringe))
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean)
            .expect("finite positive mean")
            .sample(rng) as u64
    } else {
        0
    }
}

/// Photon arrivals at one detector by Poisson thinning: propose at the
/// larger of the two slot means, accept in proportion to the slot's mean.
fn sample_detector_hits<R: Rng + ?Sized>(
    rng: &mut R,
    relative: &PhaseBits,
    mean_even: f64,
    mean_odd: f64,
    detector: Detector,
    hits: &mut Vec<(u32, Detector)>,
) {
    let len = relative.len();
    let ceiling = mean_even.max(mean_odd);
    let proposals = poisson(rng, ceiling * len as f64);
    for _ in 0..proposals {
        let slot = rng.random_range(0..len);
        let mean = if relative.get(slot) {
            mean_odd
        } else {
            mean_even
        };
        if mean >= ceiling || rng.random::<f64>() * ceiling < mean {
            hits.push((slot as u32, detector));
        }
    }
}

fn add_dark_counts<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ExperimentConfig,
    hits: &mut Vec<(u32, Detector)>,
) -> u64 {
    let mut total = 0;
    for detector in [Detector::C, Detector::D] {
        let n = poisson(rng, cfg.dark_mean_per_slot() * cfg.block_size as f64);
        for _ in 0..n {
            hits.push((rng.random_range(0..cfg.block_size) as u32, detector));
        }
        total += n;
    }
    total
}

fn threshold_events(block_id: u64, mut hits: Vec<(u32, Detector)>) -> Vec<DetectionEvent> {
    hits.sort_unstable();
    hits.dedup();
    hits.into_iter()
        .map(|(slot, detector)| DetectionEvent::new(block_id, slot, detector))
        .collect()
}

/// Interferes the two trains and samples threshold-detector clicks,
/// including dark counts. Events come back sorted by slot then detector.
pub fn interfere_and_detect<R: Rng + ?Sized>(
    signal: &PulseBlock,
    reference: &PulseBlock,
    cfg: &ExperimentConfig,
    block_id: u64,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    if signal.phases.len() != reference.phases.len() {
        return Err(KernelError::LengthMismatch {
            signal: signal.phases.len(),
            reference: reference.phases.len(),
        });
    }
    let relative = signal.phases.xor(&reference.phases);
    let delta = signal.overall_phase - reference.overall_phase;
    let (mu_s, mu_r) = (
        signal.mean_photons_per_pulse(),
        reference.mean_photons_per_pulse(),
    );
    let (c_even, d_even) = slot_means(cfg, mu_s, mu_r, delta, false);
    let (c_odd, d_odd) = slot_means(cfg, mu_s, mu_r, delta, true);
    let scale = cfg.overall_efficiency() * (mu_s + mu_r);
    for (bit, mean) in [
        (false, c_even),
        (false, d_even),
        (true, c_odd),
        (true, d_odd),
    ] {
        if mean < -1e-12 * scale.max(f64::MIN_POSITIVE) || mean.is_nan() {
            let slot = relative.iter().position(|b| b == bit).unwrap_or(0);
            return Err(KernelError::NegativeMean { slot, mean });
        }
    }
    let clip = |m: f64| m.max(0.0);

    let mut hits = Vec::new();
    sample_detector_hits(
        rng,
        &relative,
        clip(c_even),
        clip(c_odd),
        Detector::C,
        &mut hits,
    );
    sample_detector_hits(
        rng,
        &relative,
        clip(d_even),
        clip(d_odd),
        Detector::D,
        &mut hits,
    );
    add_dark_counts(rng, cfg, &mut hits);
    Ok(threshold_events(block_id, hits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBlock {
    pub block_id: u64,
    pub phases: PhaseBits,
    pub events: Vec<DetectionEvent>,
}

/// Simulates block `block_id` from its own random streams.
pub fn simulate_block(cfg: &ExperimentConfig, block_id: u64) -> Result<SimulatedBlock> {
    let mut source = stream_rng(cfg.seed, Stream::Source, block_id);
    let (signal, reference) = emit_block(cfg, &mut source);
    let mut detection = stream_rng(cfg.seed, Stream::Detection, block_id);
    let events = interfere_and_detect(&signal, &reference, cfg, block_id, &mut detection)?;
    Ok(SimulatedBlock {
        block_id,
        phases: signal.phases,
        events,
    })
}

/// Alice's phase pattern for block `block_id`, as drawn by [`simulate_block`].
pub fn alice_phases(cfg: &ExperimentConfig, block_id: u64) -> PhaseBits {
    let mut source = stream_rng(cfg.seed, Stream::Source, block_id);
    PhaseBits::random(cfg.block_size, &mut source)
}

/// A whole run: Alice's phase record and Bob's sorted click stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub block_size: usize,
    pub phases: Vec<PhaseBits>,
    pub events: Vec<DetectionEvent>,
}

impl SimulatedRun {
    pub fn blocks_emitted(&self) -> u64 {
        self.phases.len() as u64
    }
}

/// Simulates blocks `0..cfg.blocks` in parallel; the merge is by block id.
pub fn simulate_run(cfg: &ExperimentConfig) -> Result<SimulatedRun> {
    cfg.validate()?;
    let blocks = (0..cfg.blocks)
        .into_par_iter()
        .map(|id| simulate_block(cfg, id))
        .collect::<Result<Vec<_>>>()?;
    let mut phases = Vec::with_capacity(blocks.len());
    let mut events = Vec::new();
    for block in blocks {
        phases.push(block.phases);
        events.extend(block.events);
    }
    Ok(SimulatedRun {
        block_size: cfg.block_size,
        phases,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless(mu: f64) -> ExperimentConfig {
        ExperimentConfig {
            mu_alice: mu,
            reference_mode: ReferenceMode::Fixed(mu),
            detector_efficiency: 1.0,
            dark_rate_hz: 0.0,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_loss_keeps_intensity() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.mu_signal_at_bob(), 0.004);
        let mut rng = stream_rng(1, Stream::Source, 0);
        let (signal, reference) = emit_block(&cfg, &mut rng);
        assert!((signal.mean_photons_per_pulse() - 0.004).abs() < 1e-18);
        assert_eq!(reference.phases.count_ones(), 0);
        assert!((0.0..2.0 * PI).contains(&signal.overall_phase));
    }

    #[test]
    fn attenuation_at_53_km() {
        let cfg = ExperimentConfig {
            distance_km: 53.0,
            ..ExperimentConfig::default()
        };
        assert!((cfg.transmittance() - 10f64.powf(-1.06)).abs() < 1e-15);
        assert!((cfg.transmittance() - 0.0871).abs() < 1e-4);
    }

    #[test]
    fn phase_bits_are_balanced() {
        let mut rng = stream_rng(5, Stream::Source, 0);
        let bits = PhaseBits::random(1_000_000, &mut rng);
        let frac = bits.count_ones() as f64 / 1e6;
        assert!((frac - 0.5).abs() < 0.002, "{frac}");
    }

    #[test]
    fn phase_bits_text_roundtrip_and_tail_mask() {
        let bits: PhaseBits = "0110100".parse().unwrap();
        assert_eq!(bits.to_string(), "0110100");
        assert_eq!(bits.count_ones(), 3);
        let mut rng = stream_rng(5, Stream::Source, 1);
        assert!(PhaseBits::random(70, &mut rng).count_ones() <= 70);
        assert!("01x".parse::<PhaseBits>().is_err());
    }

    #[test]
    fn vacuum_gives_no_events() {
        let cfg = lossless(0.0);
        for id in 0..200 {
            assert!(simulate_block(&cfg, id).unwrap().events.is_empty());
        }
    }

    #[test]
    fn perfect_interference_means() {
        let cfg = lossless(0.004);
        let (c, d) = slot_means(&cfg, 0.004, 0.004, 0.0, false);
        assert!((c - 0.008).abs() < 1e-18);
        assert!(d.abs() < 1e-18);
        let (c, d) = slot_means(&cfg, 0.004, 0.004, 0.0, true);
        assert!(c.abs() < 1e-18 && (d - 0.008).abs() < 1e-18);
    }

    #[test]
    fn summed_means_do_not_depend_on_phases() {
        let cfg = ExperimentConfig {
            visibility: 0.7,
            ..ExperimentConfig::default()
        };
        let expected = cfg.overall_efficiency() * (0.003 + 0.001);
        for k in 0..16 {
            let delta = k as f64 * 0.41;
            for bit in [false, true] {
                let (c, d) = slot_means(&cfg, 0.003, 0.001, delta, bit);
                assert!((c + d - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_block_reproduces() {
        let cfg = ExperimentConfig {
            block_size: 4096,
            seed: 99,
            ..ExperimentConfig::default()
        };
        for id in [0, 7, 12_345] {
            assert_eq!(
                simulate_block(&cfg, id).unwrap(),
                simulate_block(&cfg, id).unwrap()
            );
        }
        assert_ne!(
            simulate_block(&cfg, 1).unwrap().phases,
            simulate_block(&cfg, 2).unwrap().phases
        );
        assert_eq!(
            alice_phases(&cfg, 7),
            simulate_block(&cfg, 7).unwrap().phases
        );
    }

    #[test]
    fn events_are_sorted_and_in_range() {
        let cfg = ExperimentConfig {
            block_size: 512,
            mu_alice: 0.05,
            reference_mode: ReferenceMode::Fixed(0.05),
            ..ExperimentConfig::default()
        };
        for id in 0..100 {
            let ev = simulate_block(&cfg, id).unwrap().events;
            assert!(ev.windows(2).all(|w| w[0] < w[1]));
            assert!(ev
                .iter()
                .all(|e| (e.slot as usize) < 512 && e.block_id == id));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ExperimentConfig {
            visibility: 1.2,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            slot_period_ns: 0.0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(simulate_run(&ExperimentConfig {
            block_size: 2,
            ..ExperimentConfig::default()
        })
        .is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let cfg = ExperimentConfig::default();
        let a = PulseBlock {
            phases: PhaseBits::zeros(8),
            amplitude_scale: 0.1,
            overall_phase: 0.0,
        };
        let b = PulseBlock {
            phases: PhaseBits::zeros(9),
            ..a.clone()
        };
        let mut rng = stream_rng(0, Stream::Detection, 0);
        assert!(matches!(
            interfere_and_detect(&a, &b, &cfg, 0, &mut rng),
            Err(KernelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dead_time_in_slots() {
        assert_eq!(ExperimentConfig::default().dead_time_slots(), 40);
        assert!((ExperimentConfig::default().dark_mean_per_slot() - 1e-6).abs() < 1e-20);
    }
}
