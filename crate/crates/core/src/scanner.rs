//! Block-size scans over one continuous pulse train per trial.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::train::ContinuousTrain;
use crate::kernel::{DetectionEvent, ExperimentConfig, KernelError};
use crate::rng::{derive_seed, Stream};
use crate::security::{analyze, optimize_v_th, KeyRateReport, SecurityError};
use crate::sifter::{sift_run, AnalysisParams, PhaseRecord, SiftError, SiftTally};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("block size {block_size} exceeds the {total_slots}-slot stream")]
    BlockLargerThanStream { block_size: usize, total_slots: u64 },
    #[error("block size must be at least 3, got {0}")]
    BlockTooSmall(usize),
    #[error("scan grid is empty")]
    EmptyGrid,
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Sift(#[from] SiftError),
}

/// Events of a train regrouped into consecutive blocks of `block_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reblocked {
    pub block_size: usize,
    pub blocks_emitted: u64,
    pub events: Vec<DetectionEvent>,
}

/// Disjoint consecutive blocks; the trailing partial block is dropped.
pub fn reblock(train: &ContinuousTrain, block_size: usize) -> Result<Reblocked, ScanError> {
    if block_size < 3 {
        return Err(ScanError::BlockTooSmall(block_size));
    }
    let total_slots = train.total_slots();
    let len = block_size as u64;
    if len > total_slots {
        return Err(ScanError::BlockLargerThanStream {
            block_size,
            total_slots,
        });
    }
    let blocks_emitted = total_slots / len;
    let events = train
        .events
        .iter()
        .take_while(|e| e.time < blocks_emitted * len)
        .map(|e| DetectionEvent::new(e.time / len, (e.time % len) as u32, e.detector))
        .collect();
    Ok(Reblocked {
        block_size,
        blocks_emitted,
        events,
    })
}

/// Alice's phases as seen through a block size.
struct TrainPhases<'a> {
    train: &'a ContinuousTrain,
    block_size: u64,
}

impl PhaseRecord for TrainPhases<'_> {
    fn phase(&self, block_id: u64, slot: u32) -> bool {
        self.train
            .phase_at(block_id * self.block_size + u64::from(slot))
    }
}

/// Dead-time filter and sifting of a train at one block size.
pub fn sift_train(
    train: &ContinuousTrain,
    block_size: usize,
    deadtime_slots: u64,
    seed: u64,
) -> Result<SiftTally, ScanError> {
    let blocks = reblock(train, block_size)?;
    let phases = TrainPhases {
        train,
        block_size: block_size as u64,
    };
    let run = sift_run(
        &blocks.events,
        blocks.blocks_emitted,
        block_size,
        deadtime_slots,
        &phases,
        seed,
    )?;
    Ok(run.tally)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    #[default]
    Auto,
    Fixed(u64),
}

/// Key-rate report of a tally at a threshold choice.
pub fn evaluate(
    tally: &SiftTally,
    params: &AnalysisParams,
    threshold: Threshold,
) -> Result<KeyRateReport, SecurityError> {
    let input = tally
        .security_input(params, 1)
        .ok_or(SecurityError::NoSiftedBlocks)?;
    match threshold {
        Threshold::Auto => optimize_v_th(&input),
        Threshold::Fixed(v) => analyze(&input.with_threshold(v)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub experiment: ExperimentConfig,
    pub distances_km: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub trials: u32,
    pub segment_slots: usize,
    /// Train length in segments.
    pub segments: u64,
    pub analysis: AnalysisParams,
    pub threshold: Threshold,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            experiment: ExperimentConfig::default(),
            distances_km: vec![10.0],
            block_sizes: (9..=17).map(|k| 1 << k).collect(),
            trials: 10,
            segment_slots: 1 << 17,
            segments: 1 << 11,
            analysis: AnalysisParams::default(),
            threshold: Threshold::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub distance_km: f64,
    pub block_size: usize,
    pub trial: u32,
    pub tally: SiftTally,
    pub report: Option<KeyRateReport>,
    pub failure: Option<String>,
}

impl ScanPoint {
    pub fn v_th(&self) -> Option<u64> {
        self.report.as_ref().map(|r| r.photon_threshold)
    }

    pub fn key_rate(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.key_rate_per_pulse)
    }

    /// Computed and positive.
    pub fn usable(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.positive_key)
    }

    fn ordering(&self, other: &ScanPoint) -> Ordering {
        self.distance_km
            .total_cmp(&other.distance_km)
            .then(self.block_size.cmp(&other.block_size))
            .then(self.trial.cmp(&other.trial))
    }
}

/// Trial statistics at one `(distance, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub distance_km: f64,
    pub block_size: usize,
    /// Trials with a computed report.
    pub trials: usize,
    pub mean_key_rate: f64,
    pub std_key_rate: f64,
    pub stderr_key_rate: f64,
    pub mean_bit_error: f64,
    pub mean_phase_error: f64,
    pub median_v_th: u64,
}

/// Best block size at one distance, with the columns of an optimum table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub distance_km: f64,
    pub mu: f64,
    pub block_size: usize,
    pub v_th: u64,
    pub bit_error: f64,
    pub phase_error: f64,
    pub key_rate_per_pulse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub curve: Vec<CurvePoint>,
    pub optima: Vec<Optimum>,
}

/// Seed of trial `trial`; trains at every distance share it.
pub fn trial_seed(seed: u64, trial: u32) -> u64 {
    derive_seed(seed, Stream::Trial, u64::from(trial))
}

fn check(cfg: &ScanConfig) -> Result<(), ScanError> {
    if cfg.distances_km.is_empty() || cfg.block_sizes.is_empty() {
        return Err(ScanError::EmptyGrid);
    }
    if cfg.trials == 0 {
        return Err(ScanError::NoTrials);
    }
    let total_slots = cfg.segment_slots as u64 * cfg.segments;
    for &l in &cfg.block_sizes {
        if l < 3 {
            return Err(ScanError::BlockTooSmall(l));
        }
        if l as u64 > total_slots {
            return Err(ScanError::BlockLargerThanStream {
                block_size: l,
                total_slots,
            });
        }
    }
    for &d in &cfg.distances_km {
        ExperimentConfig {
            distance_km: d,
            ..cfg.experiment.clone()
        }
        .validate()?;
    }
    Ok(())
}

/// Runs every `(distance, trial)` train and analyzes it at every block
/// size. Point-level analysis failures are kept in the result.
pub fn scan(cfg: &ScanConfig) -> Result<ScanResult, ScanError> {
    check(cfg)?;
    let deadtime = cfg.experiment.dead_time_slots();
    let mut points = Vec::new();
    for &distance_km in &cfg.distances_km {
        for trial in 0..cfg.trials {
            let seed = trial_seed(cfg.experiment.seed, trial);
            let exp = ExperimentConfig {
                distance_km,
                seed,
                ..cfg.experiment.clone()
            };
            let train = ContinuousTrain::generate(&exp, cfg.segment_slots, cfg.segments)?;
            let batch = cfg
                .block_sizes
                .par_iter()
                .map(|&block_size| {
                    let tally = sift_train(&train, block_size, deadtime, seed)?;
                    let (report, failure) = match evaluate(&tally, &cfg.analysis, cfg.threshold) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    Ok(ScanPoint {
                        distance_km,
                        block_size,
                        trial,
                        tally,
                        report,
                        failure,
                    })
                })
                .collect::<Result<Vec<_>, ScanError>>()?;
            points.extend(batch);
        }
    }
    Ok(summarize(points, cfg.analysis.mu))
}

/// Sorts points by `(distance, L, trial)` and derives curve and optima.
pub fn summarize(mut points: Vec<ScanPoint>, mu: f64) -> ScanResult {
    points.sort_by(ScanPoint::ordering);
    let curve: Vec<CurvePoint> = points
        .chunk_by(|a, b| a.distance_km == b.distance_km && a.block_size == b.block_size)
        .map(curve_point)
        .collect();
    let optima = curve
        .chunk_by(|a, b| a.distance_km == b.distance_km)
        .filter_map(|row| {
            row.iter().filter(|c| c.trials > 0).max_by(|a, b| {
                a.mean_key_rate
                    .total_cmp(&b.mean_key_rate)
                    .then(b.block_size.cmp(&a.block_size))
            })
        })
        .map(|best| Optimum {
            distance_km: best.distance_km,
            mu,
            block_size: best.block_size,
            v_th: best.median_v_th,
            bit_error: best.mean_bit_error,
            phase_error: best.mean_phase_error,
            key_rate_per_pulse: best.mean_key_rate,
        })
        .collect();
    ScanResult {
        points,
        curve,
        optima,
    }
}

fn curve_point(group: &[ScanPoint]) -> CurvePoint {
    let reports: Vec<&KeyRateReport> = group.iter().filter_map(|p| p.report.as_ref()).collect();
    let n = reports.len();
    let mean = |f: &dyn Fn(&KeyRateReport) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            reports.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    let mean_rate = mean(&|r| r.key_rate_per_pulse);
    let std = if n > 1 {
        let ss: f64 = reports
            .iter()
            .map(|r| (r.key_rate_per_pulse - mean_rate).powi(2))
            .sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let sifted: Vec<&ScanPoint> = group.iter().filter(|p| p.report.is_some()).collect();
    let mean_bit_error = if n == 0 {
        f64::NAN
    } else {
        sifted.iter().map(|p| p.tally.bit_error_rate()).sum::<f64>() / n as f64
    };
    let mut thresholds: Vec<u64> = reports.iter().map(|r| r.photon_threshold).collect();
    thresholds.sort_unstable();
    CurvePoint {
        distance_km: group[0].distance_km,
        block_size: group[0].block_size,
        trials: n,
        mean_key_rate: mean_rate,
        std_key_rate: std,
        stderr_key_rate: if n > 0 { std / (n as f64).sqrt() } else { 0.0 },
        mean_bit_error,
        mean_phase_error: mean(&|r| r.phase_error),
        median_v_th: thresholds
            .get(n.saturating_sub(1) / 2)
            .copied()
            .unwrap_or(0),
    }
}
