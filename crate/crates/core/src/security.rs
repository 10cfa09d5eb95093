//! Finite-key security arithmetic.
//!
//! Binary entropy, the Poisson photon-number tail of the source, the
//! three-term phase-error bound and the final key length with its
//! finite-size privacy-amplification penalty. Everything here is a pure
//! function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Finite-size coefficient multiplying `sqrt(s / N)` in the privacy
/// amplification cost.
pub const FINITE_KEY_COEFFICIENT: f64 = 1.98;

/// The phase-error estimate is capped here; beyond it the bound carries no
/// information.
pub const MAX_PHASE_ERROR: f64 = 0.5;

/// `v_th` is scanned up to this many block means. Past `10 * L * mu` the
/// source tail is below 1e-15 while the untagged term keeps growing with
/// `v_th`, so larger thresholds can only lose key.
pub const THRESHOLD_SCAN_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SecurityError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfUnitInterval { name: &'static str, value: f64 },
    #[error("block size {0} is below the minimum of 3")]
    BlockTooSmall(u64),
    #[error("photon-number threshold must be at least 1")]
    ZeroThreshold,
    #[error("single-detector counts {m} must be below the total pulse count {total}")]
    CountsSaturated { m: u64, total: u64 },
    #[error("gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("no sifted blocks, the key length is undefined")]
    NoSiftedBlocks,
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, SecurityError>;

/// `H(e) = -e log2 e - (1-e) log2 (1-e)`, with `0 log 0 = 0`.
pub fn binary_entropy(e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e) {
        return Err(SecurityError::OutOfUnitInterval {
            name: "e",
            value: e,
        });
    }
    if e == 0.0 || e == 1.0 {
        return Ok(0.0);
    }
    // Evaluate on the smaller branch so H(e) and H(1-e) take the same path.
    let p = e.min(1.0 - e);
    let q = 1.0 - p;
    Ok(-(p * p.log2() + q * (-p).ln_1p() / std::f64::consts::LN_2))
}

// Saddle-point evaluation of the Poisson pmf (Loader 2000). Keeps full
// relative precision for large means, where ln(k!) would lose ~9 digits.

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln(n!) - [(n + 1/2) ln n - n + ln(2 pi)/2]`.
fn stirling_error(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        let mut ln_fact = 0.0;
        for i in 2..=n {
            ln_fact += (i as f64).ln();
        }
        let x = n as f64;
        return ln_fact - (x + 0.5) * x.ln() + x - 0.5 * LN_2PI;
    }
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x / m) + m - x`, stable when `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1u32;
        loop {
            ej *= v2;
            let next = s + ej / f64::from(2 * j + 1);
            if next == s {
                return s;
            }
            s = next;
            j += 1;
        }
    }
    x * (x / m).ln() + m - x
}

/// Poisson probability mass `Pr(n = k)` for mean `mean`.
pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return (-mean).exp();
    }
    let x = k as f64;
    (-stirling_error(k) - deviance(x, mean)).exp() / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Neumaier-compensated accumulator.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `Pr(n > threshold)` for `n ~ Poisson(mean)`.
///
/// Sums the upper tail directly when the threshold sits at or above the
/// mean (small tails keep their relative precision), otherwise returns the
/// complement of the lower sum.
pub fn poisson_tail(mean: f64, threshold: u64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut acc = CompensatedSum::default();
    if threshold as f64 >= mean {
        let mut k = threshold + 1;
        loop {
            let term = poisson_pmf(k, mean);
            acc.add(term);
            if term == 0.0 || term < acc.value() * 1e-18 {
                break;
            }
            k += 1;
        }
        acc.value().clamp(0.0, 1.0)
    } else {
        let mut k = threshold;
        loop {
            let term = poisson_pmf(k, mean);
            acc.add(term);
            if k == 0 || term < acc.value() * 1e-18 {
                break;
            }
            k -= 1;
        }
        (1.0 - acc.value()).clamp(0.0, 1.0)
    }
}

/// Probability that an `block_size`-pulse signal of `mu` photons per pulse
/// carries more than `v_th` photons.
pub fn e_src(block_size: u64, mu: f64, v_th: u64) -> f64 {
    poisson_tail(block_size as f64 * mu, v_th)
}

/// How the gain `Q` is formed from the block counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainConvention {
    /// `Q = N / N_em`, the fraction of emitted blocks that are kept.
    #[default]
    SiftedOverEmitted,
    /// `Q = N_em / N`, the literal ratio as printed alongside the bound.
    EmittedOverSifted,
}

impl GainConvention {
    pub fn gain(self, emitted: u64, sifted: u64) -> f64 {
        match self {
            GainConvention::SiftedOverEmitted => sifted as f64 / emitted as f64,
            GainConvention::EmittedOverSifted => emitted as f64 / sifted as f64,
        }
    }
}

/// Everything the phase-error bound and key length consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityInput {
    /// Sifted blocks `N`.
    pub sifted_blocks: u64,
    pub bit_error: f64,
    pub block_size: u64,
    pub photon_threshold: u64,
    /// Source intensity per pulse; the block mean is `block_size * mu`.
    pub mean_photons_per_pulse: f64,
    pub gain: f64,
    /// `m`, counts of a single detector.
    pub single_detector_counts: u64,
    /// `M`, pulses emitted.
    pub total_pulses: u64,
    pub ec_efficiency: f64,
    pub security_exponent: f64,
}

impl SecurityInput {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bit_error) {
            return Err(SecurityError::OutOfUnitInterval {
                name: "bit_error",
                value: self.bit_error,
            });
        }
        if self.block_size < 3 {
            return Err(SecurityError::BlockTooSmall(self.block_size));
        }
        if self.photon_threshold == 0 {
            return Err(SecurityError::ZeroThreshold);
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(SecurityError::InvalidGain(self.gain));
        }
        if self.single_detector_counts >= self.total_pulses {
            return Err(SecurityError::CountsSaturated {
                m: self.single_detector_counts,
                total: self.total_pulses,
            });
        }
        if !(self.mean_photons_per_pulse.is_finite() && self.mean_photons_per_pulse >= 0.0) {
            return Err(SecurityError::InvalidParameter {
                name: "mean_photons_per_pulse",
                value: self.mean_photons_per_pulse,
            });
        }
        if !(self.ec_efficiency.is_finite() && self.ec_efficiency >= 1.0) {
            return Err(SecurityError::InvalidParameter {
                name: "ec_efficiency",
                value: self.ec_efficiency,
            });
        }
        if !(self.security_exponent.is_finite() && self.security_exponent > 0.0) {
            return Err(SecurityError::InvalidParameter {
                name: "security_exponent",
                value: self.security_exponent,
            });
        }
        Ok(())
    }

    pub fn with_threshold(&self, v_th: u64) -> SecurityInput {
        SecurityInput {
            photon_threshold: v_th,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorEstimate {
    pub e_src: f64,
    /// Estimate after capping at [`MAX_PHASE_ERROR`].
    pub value: f64,
    pub unclamped: f64,
    pub clamped: bool,
}

impl PhaseErrorEstimate {
    /// An externally supplied phase error, with no source-tail bookkeeping.
    pub fn given(e_p: f64) -> Self {
        PhaseErrorEstimate {
            e_src: 0.0,
            value: e_p,
            unclamped: e_p,
            clamped: false,
        }
    }
}

/// Untagged contribution `(1 - ((L-3)/(L-1))^v) / 4`.
pub fn untagged_phase_error(block_size: u64, v_th: u64) -> f64 {
    let ratio_ln = (-2.0 / (block_size as f64 - 1.0)).ln_1p();
    -(v_th as f64 * ratio_ln).exp_m1() / 4.0
}

/// Three-term phase-error bound: tagged blocks, untagged blocks, and
/// multi-photon collisions in one detector slot.
pub fn phase_error(input: &SecurityInput, e_src: f64) -> Result<PhaseErrorEstimate> {
    input.validate()?;
    if !(0.0..=1.0).contains(&e_src) {
        return Err(SecurityError::OutOfUnitInterval {
            name: "e_src",
            value: e_src,
        });
    }
    let tagged = e_src / input.gain;
    let untagged = (1.0 - tagged) * untagged_phase_error(input.block_size, input.photon_threshold);
    let rate = input.single_detector_counts as f64 / input.total_pulses as f64;
    let collision = rate / (2.0 * (1.0 - rate));
    let unclamped = tagged + untagged + collision;
    let clamped = !(0.0..=MAX_PHASE_ERROR).contains(&unclamped);
    Ok(PhaseErrorEstimate {
        e_src,
        value: unclamped.clamp(0.0, MAX_PHASE_ERROR),
        unclamped,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub photon_threshold: u64,
    pub e_src: f64,
    pub phase_error: f64,
    pub phase_error_clamped: bool,
    pub h_ec: f64,
    pub h_pa: f64,
    /// `K`, reported raw and possibly negative.
    pub key_length: f64,
    pub key_rate_per_pulse: f64,
    pub positive_key: bool,
}

/// `K = N (1 - H_PA - H_EC)` with `H_EC = f H(e_b)` and
/// `H_PA = H(e_p) (1 + 1.98 sqrt(s / N))`.
pub fn final_key_length(
    input: &SecurityInput,
    phase: &PhaseErrorEstimate,
) -> Result<KeyRateReport> {
    input.validate()?;
    if input.sifted_blocks == 0 {
        return Err(SecurityError::NoSiftedBlocks);
    }
    if !(0.0..=MAX_PHASE_ERROR).contains(&phase.value) {
        return Err(SecurityError::InvalidParameter {
            name: "phase_error",
            value: phase.value,
        });
    }
    let n = input.sifted_blocks as f64;
    let h_ec = input.ec_efficiency * binary_entropy(input.bit_error)?;
    let finite = 1.0 + FINITE_KEY_COEFFICIENT * (input.security_exponent / n).sqrt();
    let h_pa = binary_entropy(phase.value)? * finite;
    let key_length = n * (1.0 - h_pa - h_ec);
    Ok(KeyRateReport {
        photon_threshold: input.photon_threshold,
        e_src: phase.e_src,
        phase_error: phase.value,
        phase_error_clamped: phase.clamped,
        h_ec,
        h_pa,
        key_length,
        key_rate_per_pulse: key_length / input.total_pulses as f64,
        positive_key: key_length > 0.0,
    })
}

/// Full pipeline at the input's own threshold.
pub fn analyze(input: &SecurityInput) -> Result<KeyRateReport> {
    let tail = e_src(
        input.block_size,
        input.mean_photons_per_pulse,
        input.photon_threshold,
    );
    let phase = phase_error(input, tail)?;
    final_key_length(input, &phase)
}

/// Largest threshold considered by [`optimize_v_th`].
pub fn threshold_scan_limit(block_size: u64, mu: f64) -> u64 {
    ((THRESHOLD_SCAN_FACTOR * block_size as f64 * mu).ceil() as u64).max(1)
}

/// Exhaustive search for the `v_th` maximizing `K`; ties go to the smaller
/// threshold. The input's own `photon_threshold` is ignored.
pub fn optimize_v_th(input: &SecurityInput) -> Result<KeyRateReport> {
    let limit = threshold_scan_limit(input.block_size, input.mean_photons_per_pulse);
    let mut best: Option<KeyRateReport> = None;
    for v in 1..=limit {
        let report = analyze(&input.with_threshold(v))?;
        if best
            .as_ref()
            .is_none_or(|b| report.key_length > b.key_length)
        {
            best = Some(report);
        }
    }
    Ok(best.expect("scan range is never empty"))
}
