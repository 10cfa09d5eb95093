//! Flat TOML run configuration. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rrdps_core::kernel::{ExperimentConfig, ReferenceMode};
use rrdps_core::scanner::{ScanConfig, Threshold};
use rrdps_core::security::GainConvention;
use rrdps_core::sifter::AnalysisParams;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Bob's reference has `mu_bob` photons per pulse.
    #[default]
    Fixed,
    /// Bob's reference matches Alice's signal as it arrives.
    Matched,
}

/// `auto` or a fixed photon threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Vth(pub Threshold);

impl FromStr for Vth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Vth(Threshold::Auto)),
            n => n
                .parse()
                .map(|v| Vth(Threshold::Fixed(v)))
                .map_err(|_| format!("expected `auto` or a nonnegative integer, got {n:?}")),
        }
    }
}

impl fmt::Display for Vth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Threshold::Auto => f.write_str("auto"),
            Threshold::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Vth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Fixed(v) => s.serialize_u64(v),
        }
    }
}

impl<'de> Deserialize<'de> for Vth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Vth(Threshold::Fixed(v))),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Every key is optional; omitted keys take the defaults shown by
/// `RunConfig::default()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub block_size: usize,
    pub blocks: u64,
    pub seed: u64,
    pub mu_alice: f64,
    pub reference: Reference,
    pub mu_bob: f64,
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub receiver_loss_db: f64,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    pub slot_period_ns: f64,
    pub visibility: f64,

    pub ec_efficiency: f64,
    pub security_exponent: f64,
    pub photon_threshold: Vth,
    pub gain_convention: GainConvention,

    /// Scan distances; empty means `[distance_km]`.
    pub distances_km: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub trials: u32,
    pub segment_slots: usize,
    pub segments: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        let analysis = AnalysisParams::default();
        let scan = ScanConfig::default();
        RunConfig {
            block_size: exp.block_size,
            blocks: exp.blocks,
            seed: exp.seed,
            mu_alice: exp.mu_alice,
            reference: Reference::Fixed,
            mu_bob: exp.mu_reference(),
            distance_km: exp.distance_km,
            loss_db_per_km: exp.loss_db_per_km,
            receiver_loss_db: exp.receiver_loss_db,
            detector_efficiency: exp.detector_efficiency,
            dark_rate_hz: exp.dark_rate_hz,
            dead_time_ns: exp.dead_time_ns,
            slot_period_ns: exp.slot_period_ns,
            visibility: exp.visibility,
            ec_efficiency: analysis.ec_efficiency,
            security_exponent: analysis.security_exponent,
            photon_threshold: Vth::default(),
            gain_convention: analysis.gain_convention,
            distances_km: Vec::new(),
            block_sizes: scan.block_sizes,
            trials: scan.trials,
            segment_slots: scan.segment_slots,
            segments: scan.segments,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            block_size: self.block_size,
            mu_alice: self.mu_alice,
            reference_mode: match self.reference {
                Reference::Fixed => ReferenceMode::Fixed(self.mu_bob),
                Reference::Matched => ReferenceMode::Matched,
            },
            distance_km: self.distance_km,
            loss_db_per_km: self.loss_db_per_km,
            receiver_loss_db: self.receiver_loss_db,
            detector_efficiency: self.detector_efficiency,
            dark_rate_hz: self.dark_rate_hz,
            dead_time_ns: self.dead_time_ns,
            slot_period_ns: self.slot_period_ns,
            visibility: self.visibility,
            seed: self.seed,
            blocks: self.blocks,
        }
    }

    pub fn analysis(&self) -> AnalysisParams {
        AnalysisParams {
            mu: self.mu_alice,
            ec_efficiency: self.ec_efficiency,
            security_exponent: self.security_exponent,
            gain_convention: self.gain_convention,
        }
    }

    pub fn scan(&self) -> ScanConfig {
        ScanConfig {
            experiment: self.experiment(),
            distances_km: if self.distances_km.is_empty() {
                vec![self.distance_km]
            } else {
                self.distances_km.clone()
            },
            block_sizes: self.block_sizes.clone(),
            trials: self.trials,
            segment_slots: self.segment_slots,
            segments: self.segments,
            analysis: self.analysis(),
            threshold: self.photon_threshold.0,
        }
    }

    /// Checks everything the commands rely on before any output is written.
    pub fn validate(&self) -> Result<(), CliError> {
        self.experiment()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.ec_efficiency.is_finite() && self.ec_efficiency >= 1.0) {
            return Err(CliError::Config(format!(
                "ec_efficiency must be >= 1, got {}",
                self.ec_efficiency
            )));
        }
        if !(self.security_exponent.is_finite() && self.security_exponent > 0.0) {
            return Err(CliError::Config(format!(
                "security_exponent must be > 0, got {}",
                self.security_exponent
            )));
        }
        Ok(())
    }
}
