//! Event-stream and tally analysis behind `rrdps analyze`.

use std::collections::BTreeMap;

use rrdps_core::kernel::{alice_phases, ExperimentConfig};
use rrdps_core::scanner::{evaluate, Threshold};
use rrdps_core::security::{GainConvention, SecurityError};
use rrdps_core::sifter::{sift_run, AnalysisParams, PhaseRecord};
use rrdps_core::{DetectionEvent, PhaseBits, SiftTally};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Alice's record regenerated from the run seed.
pub struct SeededPhases(pub ExperimentConfig);

impl PhaseRecord for SeededPhases {
    fn phase(&self, block_id: u64, slot: u32) -> bool {
        alice_phases(&self.0, block_id).get(slot as usize)
    }
}

/// Alice's record read from a file; every queried block must be present.
pub struct FilePhases(pub BTreeMap<u64, PhaseBits>);

impl PhaseRecord for FilePhases {
    fn phase(&self, block_id: u64, slot: u32) -> bool {
        self.0[&block_id].get(slot as usize)
    }
}

pub fn sift_events<P: PhaseRecord>(
    events: &[DetectionEvent],
    cfg: &ExperimentConfig,
    phases: &P,
) -> Result<SiftTally, CliError> {
    let run = sift_run(
        events,
        cfg.blocks,
        cfg.block_size,
        cfg.dead_time_slots(),
        phases,
        cfg.seed,
    )
    .map_err(|e| CliError::Internal(e.into()))?;
    Ok(run.tally)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Key,
    NoKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub mu: f64,
    pub f: f64,
    pub s: f64,
    pub gain_convention: GainConvention,
    pub vth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(rename = "L")]
    pub block_size: Option<u64>,
    #[serde(rename = "N_em")]
    pub blocks_emitted: u64,
    #[serde(rename = "N")]
    pub sifted_blocks: u64,
    pub e_b: Option<f64>,
    pub m: u64,
    #[serde(rename = "M")]
    pub total_pulses: u64,
    #[serde(rename = "Q")]
    pub gain: Option<f64>,
    pub v_th: Option<u64>,
    pub e_src: Option<f64>,
    pub e_p: Option<f64>,
    pub e_p_clamped: Option<bool>,
    #[serde(rename = "H_EC")]
    pub h_ec: Option<f64>,
    #[serde(rename = "H_PA")]
    pub h_pa: Option<f64>,
    #[serde(rename = "K")]
    pub key_length: Option<f64>,
    pub key_rate_per_pulse: Option<f64>,
    pub tally: SiftTally,
    pub settings: Settings,
}

/// Builds the report. `Err` only for inputs the bound rejects outright.
pub fn report(
    tally: &SiftTally,
    params: &AnalysisParams,
    threshold: Threshold,
) -> Result<AnalysisReport, CliError> {
    let settings = Settings {
        mu: params.mu,
        f: params.ec_efficiency,
        s: params.security_exponent,
        gain_convention: params.gain_convention,
        vth: crate::config::Vth(threshold).to_string(),
    };
    let mut out = AnalysisReport {
        status: Status::NoKey,
        reason: None,
        block_size: tally.block_size(),
        blocks_emitted: tally.blocks_emitted,
        sifted_blocks: tally.blocks_sifted,
        e_b: None,
        m: tally.single_detector_counts(),
        total_pulses: tally.total_pulses,
        gain: None,
        v_th: None,
        e_src: None,
        e_p: None,
        e_p_clamped: None,
        h_ec: None,
        h_pa: None,
        key_length: None,
        key_rate_per_pulse: None,
        tally: *tally,
        settings,
    };
    let result = match evaluate(tally, params, threshold) {
        Err(SecurityError::NoSiftedBlocks) => {
            out.reason = Some("no block survived sifting".into());
            return Ok(out);
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
        Ok(r) => r,
    };
    out.e_b = Some(tally.bit_error_rate());
    out.gain = Some(
        params
            .gain_convention
            .gain(tally.blocks_emitted, tally.blocks_sifted),
    );
    out.v_th = Some(result.photon_threshold);
    out.e_src = Some(result.e_src);
    out.e_p = Some(result.phase_error);
    out.e_p_clamped = Some(result.phase_error_clamped);
    out.h_ec = Some(result.h_ec);
    out.h_pa = Some(result.h_pa);
    out.key_length = Some(result.key_length);
    out.key_rate_per_pulse = Some(result.key_rate_per_pulse);
    if result.positive_key {
        out.status = Status::Key;
    } else {
        out.reason =
            Some("privacy amplification and error correction exceed the sifted key".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rrdps_core::Detector;

    fn fixture() -> (Vec<DetectionEvent>, ExperimentConfig, FilePhases) {
        // block 0: one click; block 1: two clicks, equal phases, same
        // detector; block 2: two clicks in one slot.
        let events = vec![
            DetectionEvent::new(0, 2, Detector::C),
            DetectionEvent::new(1, 0, Detector::D),
            DetectionEvent::new(1, 5, Detector::D),
            DetectionEvent::new(2, 4, Detector::C),
            DetectionEvent::new(2, 4, Detector::D),
        ];
        let cfg = ExperimentConfig {
            block_size: 8,
            blocks: 3,
            dead_time_ns: 0.0,
            ..ExperimentConfig::default()
        };
        let phases = (0..3).map(|b| (b, "01000010".parse().unwrap())).collect();
        (events, cfg, FilePhases(phases))
    }

    #[test]
    fn hand_built_fixture() {
        let (events, cfg, phases) = fixture();
        let tally = sift_events(&events, &cfg, &phases).unwrap();
        assert_eq!(
            tally,
            SiftTally {
                blocks_emitted: 3,
                blocks_sifted: 1,
                errors: 0,
                counts_c: 2,
                counts_d: 3,
                total_pulses: 24,
                discarded_same_slot: 1,
                discarded_insufficient: 1,
                discarded_deadtime: 0,
            }
        );
        let params = AnalysisParams::default();
        let r = report(&tally, &params, Threshold::Fixed(1)).unwrap();
        assert_eq!(r.gain, Some(1.0 / 3.0));
        assert_eq!(r.m, 3);
        // a single sifted bit cannot pay for the finite-key term
        let close = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() < 1e-12 * b.abs().max(1.0);
        assert!(close(r.e_src, 5.012072942680928e-4));
        assert!(close(r.e_p, 0.144_253_363_176_889_7));
        assert!(close(r.key_length, -11.381626455424448));
        assert_eq!(r.status, Status::NoKey);
    }

    #[test]
    fn empty_tally_is_no_key() {
        let tally = SiftTally::empty(10, 64);
        let r = report(&tally, &AnalysisParams::default(), Threshold::Auto).unwrap();
        assert_eq!(r.status, Status::NoKey);
        assert_eq!(r.sifted_blocks, 0);
        assert!(r.key_length.is_none());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("N_em").is_some() && json.get("H_PA").is_some());
    }
}
