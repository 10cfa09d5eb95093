//! Continuous pulse trains for post-hoc block-size selection.
//!
//! The train is cut into segments of fixed length, each simulated like a
//! block with its own overall-phase draw; the relative phase therefore
//! drifts from segment to segment but is constant within one. Any block
//! size dividing the segment length sees a single phase per block.

use rayon::prelude::*;

use super::{simulate_block, Detector, ExperimentConfig, PhaseBits, Result};

/// A click on the absolute slot axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimedEvent {
    pub time: u64,
    pub detector: Detector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTrain {
    segment_slots: usize,
    segments: Vec<PhaseBits>,
    pub events: Vec<TimedEvent>,
}

impl ContinuousTrain {
    /// Simulates `segments` consecutive segments of `segment_slots` slots.
    /// `cfg.block_size` and `cfg.blocks` are ignored.
    pub fn generate(cfg: &ExperimentConfig, segment_slots: usize, segments: u64) -> Result<Self> {
        let seg_cfg = ExperimentConfig {
            block_size: segment_slots,
            blocks: segments,
            ..cfg.clone()
        };
        seg_cfg.validate()?;
        let blocks = (0..segments)
            .into_par_iter()
            .map(|k| simulate_block(&seg_cfg, k))
            .collect::<Result<Vec<_>>>()?;
        let mut phases = Vec::with_capacity(blocks.len());
        let mut events = Vec::new();
        for block in blocks {
            let offset = block.block_id * segment_slots as u64;
            events.extend(block.events.iter().map(|e| TimedEvent {
                time: offset + u64::from(e.slot),
                detector: e.detector,
            }));
            phases.push(block.phases);
        }
        Ok(ContinuousTrain {
            segment_slots,
            segments: phases,
            events,
        })
    }

    pub fn segment_slots(&self) -> usize {
        self.segment_slots
    }

    pub fn total_slots(&self) -> u64 {
        self.segments.len() as u64 * self.segment_slots as u64
    }

    /// Alice's phase bit at absolute slot `time`.
    pub fn phase_at(&self, time: u64) -> bool {
        let seg = (time / self.segment_slots as u64) as usize;
        self.segments[seg].get((time % self.segment_slots as u64) as usize)
    }
}
