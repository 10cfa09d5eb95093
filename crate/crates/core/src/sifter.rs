//! Dead-time post-selection, pair announcement and raw-key tallies.

use std::ops::AddAssign;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{DetectionEvent, Detector, PhaseBits};
use crate::rng::{stream_rng, Stream};
use crate::security::{GainConvention, SecurityInput};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SiftError {
    #[error("events out of time order at index {index}")]
    Unsorted { index: usize },
    #[error("event at slot {slot} outside block of {block_size} slots")]
    SlotOutOfRange { slot: u32, block_size: usize },
    #[error("event for block {block_id} but only {emitted} blocks were emitted")]
    BlockOutOfRange { block_id: u64, emitted: u64 },
}

/// Output of [`deadtime_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub kept: Vec<DetectionEvent>,
    pub removed: u64,
}

/// Drops every click, on either detector, that falls within `window` slots
/// after an accepted click. Only accepted clicks open a window, and clicks
/// in the same slot as an accepted click are themselves accepted.
///
/// `events` must be sorted by `(block_id, slot)`; time runs across block
/// boundaries.
pub fn deadtime_filter(
    events: &[DetectionEvent],
    block_size: usize,
    window: u64,
) -> Result<Filtered, SiftError> {
    let mut kept = Vec::with_capacity(events.len());
    let mut removed = 0;
    let mut last_accepted: Option<u64> = None;
    let mut previous: Option<u64> = None;
    for (index, event) in events.iter().enumerate() {
        if event.slot as usize >= block_size {
            return Err(SiftError::SlotOutOfRange {
                slot: event.slot,
                block_size,
            });
        }
        let t = event.absolute_slot(block_size);
        if previous.is_some_and(|p| t < p) {
            return Err(SiftError::Unsorted { index });
        }
        previous = Some(t);
        match last_accepted {
            Some(a) if t > a && t - a <= window => removed += 1,
            _ => {
                last_accepted = Some(t);
                kept.push(*event);
            }
        }
    }
    Ok(Filtered { kept, removed })
}

/// One raw-key bit from an announced slot pair `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedBit {
    pub block_id: u64,
    pub i: u32,
    pub j: u32,
    /// `s_i xor s_j`.
    pub alice_bit: bool,
    /// Set when the two clicks came from different detectors.
    pub bob_bit: bool,
}

impl SiftedBit {
    pub fn is_error(&self) -> bool {
        self.alice_bit != self.bob_bit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    /// Fewer than two clicks survived.
    Insufficient,
    /// The chosen clicks share a slot.
    SameSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiftOutcome {
    Bit(SiftedBit),
    Discard(DiscardReason),
}

/// Chooses two of the block's clicks uniformly at random and reads off the
/// bit: same detector means equal phases (bit 0).
pub fn sift_block<P, R>(events: &[DetectionEvent], phases: &P, rng: &mut R) -> SiftOutcome
where
    P: PhaseRecord + ?Sized,
    R: Rng + ?Sized,
{
    if events.len() < 2 {
        return SiftOutcome::Discard(DiscardReason::Insufficient);
    }
    let a = rng.random_range(0..events.len());
    let mut b = rng.random_range(0..events.len() - 1);
    if b >= a {
        b += 1;
    }
    let (first, second) = if events[a].slot <= events[b].slot {
        (events[a], events[b])
    } else {
        (events[b], events[a])
    };
    if first.slot == second.slot {
        return SiftOutcome::Discard(DiscardReason::SameSlot);
    }
    SiftOutcome::Bit(SiftedBit {
        block_id: first.block_id,
        i: first.slot,
        j: second.slot,
        alice_bit: phases.phase(first.block_id, first.slot)
            ^ phases.phase(second.block_id, second.slot),
        bob_bit: first.detector != second.detector,
    })
}

/// Aggregate counters of a run. Merging is associative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SiftTally {
    pub blocks_emitted: u64,
    pub blocks_sifted: u64,
    pub errors: u64,
    pub counts_c: u64,
    pub counts_d: u64,
    pub total_pulses: u64,
    pub discarded_same_slot: u64,
    pub discarded_insufficient: u64,
    /// Clicks removed by the dead-time filter.
    pub discarded_deadtime: u64,
}

impl SiftTally {
    pub fn empty(blocks_emitted: u64, block_size: usize) -> Self {
        SiftTally {
            blocks_emitted,
            total_pulses: blocks_emitted * block_size as u64,
            ..SiftTally::default()
        }
    }

    pub fn record(&mut self, outcome: &SiftOutcome) {
        match outcome {
            SiftOutcome::Bit(bit) => {
                self.blocks_sifted += 1;
                self.errors += u64::from(bit.is_error());
            }
            SiftOutcome::Discard(DiscardReason::SameSlot) => self.discarded_same_slot += 1,
            SiftOutcome::Discard(DiscardReason::Insufficient) => self.discarded_insufficient += 1,
        }
    }

    pub fn count_event(&mut self, event: &DetectionEvent) {
        match event.detector {
            Detector::C => self.counts_c += 1,
            Detector::D => self.counts_d += 1,
        }
    }

    pub fn bit_error_rate(&self) -> f64 {
        if self.blocks_sifted == 0 {
            0.0
        } else {
            self.errors as f64 / self.blocks_sifted as f64
        }
    }

    /// The single-detector count fed to the collision term: the busier of
    /// the two detectors.
    pub fn single_detector_counts(&self) -> u64 {
        self.counts_c.max(self.counts_d)
    }

    pub fn block_size(&self) -> Option<u64> {
        (self.blocks_emitted > 0).then(|| self.total_pulses / self.blocks_emitted)
    }

    /// Security input at threshold `v_th`; `None` when no block was emitted
    /// or none survived sifting.
    pub fn security_input(&self, params: &AnalysisParams, v_th: u64) -> Option<SecurityInput> {
        let block_size = self.block_size()?;
        if self.blocks_sifted == 0 {
            return None;
        }
        Some(SecurityInput {
            sifted_blocks: self.blocks_sifted,
            bit_error: self.bit_error_rate(),
            block_size,
            photon_threshold: v_th,
            mean_photons_per_pulse: params.mu,
            gain: params
                .gain_convention
                .gain(self.blocks_emitted, self.blocks_sifted),
            single_detector_counts: self.single_detector_counts(),
            total_pulses: self.total_pulses,
            ec_efficiency: params.ec_efficiency,
            security_exponent: params.security_exponent,
        })
    }
}

impl AddAssign for SiftTally {
    fn add_assign(&mut self, rhs: SiftTally) {
        self.blocks_emitted += rhs.blocks_emitted;
        self.blocks_sifted += rhs.blocks_sifted;
        self.errors += rhs.errors;
        self.counts_c += rhs.counts_c;
        self.counts_d += rhs.counts_d;
        self.total_pulses += rhs.total_pulses;
        self.discarded_same_slot += rhs.discarded_same_slot;
        self.discarded_insufficient += rhs.discarded_insufficient;
        self.discarded_deadtime += rhs.discarded_deadtime;
    }
}

/// Analysis settings that do not come from the tally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Source photons per pulse.
    pub mu: f64,
    pub ec_efficiency: f64,
    pub security_exponent: f64,
    pub gain_convention: GainConvention,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            mu: 0.004,
            ec_efficiency: 1.0,
            security_exponent: 100.0,
            gain_convention: GainConvention::default(),
        }
    }
}

/// Counts every post-filter event and folds in per-block outcomes.
pub fn accumulate(
    blocks_emitted: u64,
    block_size: usize,
    outcomes: &[SiftOutcome],
    filtered: &Filtered,
) -> SiftTally {
    let mut tally = SiftTally::empty(blocks_emitted, block_size);
    tally.discarded_deadtime = filtered.removed;
    for e in &filtered.kept {
        tally.count_event(e);
    }
    for o in outcomes {
        tally.record(o);
    }
    tally
}

/// Alice's record of her phases, looked up by `(block, slot)`.
pub trait PhaseRecord: Sync {
    fn phase(&self, block_id: u64, slot: u32) -> bool;
}

/// A single block's pattern answers for whichever block asks.
impl PhaseRecord for PhaseBits {
    fn phase(&self, _block_id: u64, slot: u32) -> bool {
        self.get(slot as usize)
    }
}

impl PhaseRecord for [PhaseBits] {
    fn phase(&self, block_id: u64, slot: u32) -> bool {
        self[block_id as usize].get(slot as usize)
    }
}

impl PhaseRecord for Vec<PhaseBits> {
    fn phase(&self, block_id: u64, slot: u32) -> bool {
        self.as_slice().phase(block_id, slot)
    }
}

/// Everything the sifting stage produces for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftRun {
    pub tally: SiftTally,
    pub bits: Vec<SiftedBit>,
}

/// Dead-time filter, then per-block sifting, then tallies. Pair choices
/// draw from the sift stream of `seed` keyed by block id.
pub fn sift_run<P: PhaseRecord + ?Sized>(
    events: &[DetectionEvent],
    blocks_emitted: u64,
    block_size: usize,
    deadtime_slots: u64,
    phases: &P,
    seed: u64,
) -> Result<SiftRun, SiftError> {
    if let Some(e) = events.iter().find(|e| e.block_id >= blocks_emitted) {
        return Err(SiftError::BlockOutOfRange {
            block_id: e.block_id,
            emitted: blocks_emitted,
        });
    }
    let filtered = deadtime_filter(events, block_size, deadtime_slots)?;
    let outcomes: Vec<SiftOutcome> = filtered
        .kept
        .chunk_by(|a, b| a.block_id == b.block_id)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|block| {
            let id = block[0].block_id;
            let mut rng = stream_rng(seed, Stream::Sift, id);
            sift_block(block, phases, &mut rng)
        })
        .collect();
    let bits = outcomes
        .iter()
        .filter_map(|o| match o {
            SiftOutcome::Bit(b) => Some(*b),
            SiftOutcome::Discard(_) => None,
        })
        .collect();
    let mut tally = accumulate(blocks_emitted, block_size, &outcomes, &filtered);
    // Blocks with no surviving click never reached sift_block.
    let seen = outcomes.len() as u64;
    tally.discarded_insufficient += blocks_emitted - seen;
    Ok(SiftRun { tally, bits })
}
