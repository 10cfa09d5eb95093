//! Exact small-block checks of passive pair selection.
//!
//! For one photon from each party the two-photon amplitudes through the
//! beam splitter are integers over `2L`, so every probability here is an
//! exact rational. The passive announcement distribution is compared with
//! the actively switched model (click at `i`, random shift `r` and sign `b`,
//! `j = i + (-1)^b r`) by total-variation distance.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::PhaseBits;

/// Largest block handled by exact enumeration.
pub const MAX_EXACT_BLOCK: usize = 10;
pub const TV_TOLERANCE: f64 = 1e-9;
pub const SHIFT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("block size {0} outside the exact range 3..={MAX_EXACT_BLOCK}")]
    BlockSize(usize),
    #[error("phase pattern has {got} bits, expected {expected}")]
    PatternLength { got: usize, expected: usize },
    #[error("click marginal has {got} entries, expected {expected}")]
    MarginalLength { got: usize, expected: usize },
    #[error("mean photon number {0} outside (0, 0.05]")]
    Intensity(f64),
}

fn check_block(block_size: usize) -> Result<(), OracleError> {
    if (3..=MAX_EXACT_BLOCK).contains(&block_size) {
        Ok(())
    } else {
        Err(OracleError::BlockSize(block_size))
    }
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Distribution of announced slot pairs, keyed `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    pub block_size: usize,
    pub probs: BTreeMap<(usize, usize), BigRational>,
}

impl PairDistribution {
    fn new(block_size: usize) -> Self {
        PairDistribution {
            block_size,
            probs: BTreeMap::new(),
        }
    }

    fn add(&mut self, i: usize, j: usize, p: BigRational) {
        let key = (i.min(j), i.max(j));
        *self.probs.entry(key).or_insert_with(BigRational::zero) += p;
    }

    fn normalized(mut self) -> Self {
        let total = self.total();
        if !total.is_zero() {
            for p in self.probs.values_mut() {
                *p = &*p / &total;
            }
        }
        self
    }

    pub fn total(&self) -> BigRational {
        self.probs
            .values()
            .fold(BigRational::zero(), |acc, p| acc + p)
    }

    pub fn get(&self, i: usize, j: usize) -> BigRational {
        self.probs
            .get(&(i.min(j), i.max(j)))
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    /// Half the L1 distance.
    pub fn total_variation(&self, other: &PairDistribution) -> BigRational {
        let keys: std::collections::BTreeSet<_> =
            self.probs.keys().chain(other.probs.keys()).collect();
        let sum = keys.into_iter().fold(BigRational::zero(), |acc, &(i, j)| {
            acc + (self.get(i, j) - other.get(i, j)).abs()
        });
        sum / ratio(2, 1)
    }
}

/// Exact single-photon quantities of the passive scheme for one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveAnalysis {
    /// Announcements, conditioned on clicks in two distinct slots.
    pub announcements: PairDistribution,
    pub distinct_slot_probability: BigRational,
    /// Unconditioned total over all two-photon outcomes.
    pub normalization: BigRational,
    /// Alice's photon slot, conditioned on distinct slots.
    pub alice_slot_marginal: Vec<BigRational>,
    /// `max |Pr(bob slot = q | alice slot = p) - 1/(L-1)|`.
    pub shift_uniformity_deviation: BigRational,
    /// Same-detector probability over distinct pairs with equal phases.
    pub same_detector_given_equal: Option<BigRational>,
    pub same_detector_given_opposite: Option<BigRational>,
    /// `max |Pr({i,j}) - Pr(alice i, bob j) - Pr(alice j, bob i)|`.
    pub path_decomposition_deviation: BigRational,
}

/// Output mode index: detector C of slot `k` is `2k`, detector D is `2k + 1`.
fn mode(slot: usize, detector_d: bool) -> usize {
    2 * slot + usize::from(detector_d)
}

pub fn passive_analysis(
    block_size: usize,
    phases: &PhaseBits,
) -> Result<PassiveAnalysis, OracleError> {
    check_block(block_size)?;
    if phases.len() != block_size {
        return Err(OracleError::PatternLength {
            got: phases.len(),
            expected: block_size,
        });
    }
    let l = block_size;
    let modes = 2 * l;
    let sign = |slot: usize| if phases.get(slot) { -1i64 } else { 1 };

    // amp[m1][m2]: amplitude (times 2L) for Alice's photon leaving in m1 and
    // Bob's in m2. a_p -> (c_p + d_p)/sqrt2, b_q -> (c_q - d_q)/sqrt2.
    let mut amp = vec![vec![0i64; modes]; modes];
    // per-path probabilities Pr(alice at p, bob at q), numerators over 4L^2
    let mut path = vec![vec![0i64; l]; l];
    for p in 0..l {
        for q in 0..l {
            for a_det in [false, true] {
                for b_det in [false, true] {
                    let b_sign = if b_det { -1 } else { 1 };
                    let contribution = sign(p) * b_sign;
                    amp[mode(p, a_det)][mode(q, b_det)] += contribution;
                    path[p][q] += contribution * contribution;
                }
            }
        }
    }

    let denom = 4 * (l as i64) * (l as i64);
    let mut normalization = BigRational::zero();
    let mut slot_pair = BTreeMap::<(usize, usize), BigRational>::new();
    let mut same_detector = BTreeMap::<(usize, usize), BigRational>::new();
    for m in 0..modes {
        for n in m..modes {
            let prob = if m == n {
                ratio(2 * amp[m][m] * amp[m][m], denom)
            } else {
                let a = amp[m][n] + amp[n][m];
                ratio(a * a, denom)
            };
            normalization += &prob;
            let (sm, sn) = (m / 2, n / 2);
            if sm != sn {
                let key = (sm.min(sn), sm.max(sn));
                *slot_pair.entry(key).or_insert_with(BigRational::zero) += &prob;
                if m % 2 == n % 2 {
                    *same_detector.entry(key).or_insert_with(BigRational::zero) += &prob;
                }
            }
        }
    }

    let distinct = slot_pair
        .values()
        .fold(BigRational::zero(), |acc, p| acc + p);
    let mut announcements = PairDistribution::new(l);
    for (&(i, j), p) in &slot_pair {
        announcements.add(i, j, p.clone());
    }
    let announcements = announcements.normalized();

    let mut decomposition = BigRational::zero();
    for (&(i, j), p) in &slot_pair {
        let by_path = ratio(path[i][j] + path[j][i], denom);
        decomposition = decomposition.max((p - by_path).abs());
    }

    let mut alice_slot_marginal = Vec::with_capacity(l);
    let mut shift_dev = BigRational::zero();
    let uniform = ratio(1, l as i64 - 1);
    let distinct_paths: i64 = (0..l)
        .flat_map(|p| (0..l).map(move |q| (p, q)))
        .filter(|(p, q)| p != q)
        .map(|(p, q)| path[p][q])
        .sum();
    for p in 0..l {
        let row: i64 = (0..l).filter(|&q| q != p).map(|q| path[p][q]).sum();
        alice_slot_marginal.push(ratio(row, distinct_paths));
        for q in (0..l).filter(|&q| q != p) {
            let conditional = ratio(path[p][q], row);
            shift_dev = shift_dev.max((conditional - &uniform).abs());
        }
    }

    let conditional_same = |equal: bool| {
        let (mut num, mut den) = (BigRational::zero(), BigRational::zero());
        for (&(i, j), p) in &slot_pair {
            if (phases.get(i) == phases.get(j)) == equal {
                num += same_detector
                    .get(&(i, j))
                    .cloned()
                    .unwrap_or_else(BigRational::zero);
                den += p;
            }
        }
        (!den.is_zero()).then(|| num / den)
    };

    Ok(PassiveAnalysis {
        announcements,
        distinct_slot_probability: distinct,
        normalization,
        alice_slot_marginal,
        shift_uniformity_deviation: shift_dev,
        same_detector_given_equal: conditional_same(true),
        same_detector_given_opposite: conditional_same(false),
        path_decomposition_deviation: decomposition,
    })
}

/// Announcement distribution of the passive scheme, conditioned on two
/// clicks in distinct slots.
pub fn passive_pair_distribution(
    block_size: usize,
    phases: &PhaseBits,
) -> Result<PairDistribution, OracleError> {
    Ok(passive_analysis(block_size, phases)?.announcements)
}

/// What the active model does when `j = i + (-1)^b r` leaves the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    /// Indices wrap modulo `L`.
    #[default]
    ModularWrap,
    /// Use the other sign if only one lands inside; discard if neither.
    ResampleSign,
    /// Discard whenever the drawn sign lands outside.
    Discard,
}

impl BoundaryRule {
    pub const ALL: [BoundaryRule; 3] = [
        BoundaryRule::ModularWrap,
        BoundaryRule::ResampleSign,
        BoundaryRule::Discard,
    ];
}

impl fmt::Display for BoundaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryRule::ModularWrap => "modular-wrap",
            BoundaryRule::ResampleSign => "resample-sign",
            BoundaryRule::Discard => "discard",
        })
    }
}

impl FromStr for BoundaryRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modular-wrap" | "wrap" => Ok(BoundaryRule::ModularWrap),
            "resample-sign" | "resample" => Ok(BoundaryRule::ResampleSign),
            "discard" => Ok(BoundaryRule::Discard),
            other => Err(format!(
                "unknown boundary rule {other:?} (modular-wrap, resample-sign, discard)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveDistribution {
    /// Announcements conditioned on not discarding.
    pub announcements: PairDistribution,
    pub discard_probability: BigRational,
}

/// Announcement distribution of the actively switched delay model.
pub fn active_pair_distribution(
    block_size: usize,
    click_marginal: &[BigRational],
    rule: BoundaryRule,
) -> Result<ActiveDistribution, OracleError> {
    check_block(block_size)?;
    if click_marginal.len() != block_size {
        return Err(OracleError::MarginalLength {
            got: click_marginal.len(),
            expected: block_size,
        });
    }
    let l = block_size as i64;
    let mut dist = PairDistribution::new(block_size);
    let mut discard = BigRational::zero();
    let half = ratio(1, 2);
    for (i, w) in click_marginal.iter().enumerate() {
        let i = i as i64;
        let per_shift = w * ratio(1, l - 1);
        for r in 1..l {
            let candidates = [i + r, i - r];
            match rule {
                BoundaryRule::ModularWrap => {
                    for j in candidates {
                        dist.add(i as usize, j.rem_euclid(l) as usize, &per_shift * &half);
                    }
                }
                BoundaryRule::ResampleSign => {
                    let inside: Vec<i64> = candidates
                        .into_iter()
                        .filter(|j| (0..l).contains(j))
                        .collect();
                    match inside.len() {
                        0 => discard += &per_shift,
                        1 => dist.add(i as usize, inside[0] as usize, per_shift.clone()),
                        _ => {
                            for j in inside {
                                dist.add(i as usize, j as usize, &per_shift * &half);
                            }
                        }
                    }
                }
                BoundaryRule::Discard => {
                    for j in candidates {
                        if (0..l).contains(&j) {
                            dist.add(i as usize, j as usize, &per_shift * &half);
                        } else {
                            discard += &per_shift * &half;
                        }
                    }
                }
            }
        }
    }
    Ok(ActiveDistribution {
        announcements: dist.normalized(),
        discard_probability: discard,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub block_size: usize,
    pub phases: String,
    pub tv_distance: f64,
    pub shift_uniformity_deviation: f64,
    pub normalization_error: f64,
    pub same_detector_given_equal: Option<f64>,
    pub same_detector_given_opposite: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub boundary_rule: BoundaryRule,
    pub max_tv_distance: f64,
    pub patterns_above_tolerance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub boundary_rule: BoundaryRule,
    pub max_block_size: usize,
    pub patterns_tested: usize,
    pub tv_tolerance: f64,
    pub shift_tolerance: f64,
    pub max_tv_distance: f64,
    pub max_shift_uniformity_deviation: f64,
    pub all_within_tolerance: bool,
    /// Every rule, the selected one included, so deviations stay visible.
    pub rules: Vec<RuleSummary>,
    pub patterns: Vec<PatternReport>,
}

fn all_patterns(max_block: usize) -> Vec<(usize, PhaseBits)> {
    (3..=max_block)
        .flat_map(|l| {
            (0u32..1 << l).map(move |code| {
                let bits: Vec<bool> = (0..l).map(|k| (code >> k) & 1 == 1).collect();
                (l, PhaseBits::from_bools(&bits))
            })
        })
        .collect()
}

/// Runs every phase pattern of every block size `3..=max_block`.
pub fn equivalence_report(
    max_block: usize,
    rule: BoundaryRule,
) -> Result<EquivalenceReport, OracleError> {
    check_block(max_block)?;
    let patterns = all_patterns(max_block);
    let rows = patterns
        .par_iter()
        .map(|(l, phases)| {
            let passive = passive_analysis(*l, phases)?;
            let tvs = BoundaryRule::ALL
                .iter()
                .map(|&r| {
                    let active = active_pair_distribution(*l, &passive.alice_slot_marginal, r)?;
                    Ok((
                        r,
                        to_f64(&passive.announcements.total_variation(&active.announcements)),
                    ))
                })
                .collect::<Result<Vec<_>, OracleError>>()?;
            Ok((*l, phases.clone(), passive, tvs))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;

    let mut reports = Vec::with_capacity(rows.len());
    let mut rules: Vec<RuleSummary> = BoundaryRule::ALL
        .iter()
        .map(|&r| RuleSummary {
            boundary_rule: r,
            max_tv_distance: 0.0,
            patterns_above_tolerance: 0,
        })
        .collect();
    for (l, phases, passive, tvs) in rows {
        for (summary, (_, tv)) in rules.iter_mut().zip(&tvs) {
            summary.max_tv_distance = summary.max_tv_distance.max(*tv);
            summary.patterns_above_tolerance += usize::from(*tv >= TV_TOLERANCE);
        }
        let tv = tvs
            .iter()
            .find(|(r, _)| *r == rule)
            .map(|t| t.1)
            .unwrap_or(f64::NAN);
        reports.push(PatternReport {
            block_size: l,
            phases: phases.to_string(),
            tv_distance: tv,
            shift_uniformity_deviation: to_f64(&passive.shift_uniformity_deviation),
            normalization_error: to_f64(&(passive.normalization - BigRational::one()).abs()),
            same_detector_given_equal: passive.same_detector_given_equal.as_ref().map(to_f64),
            same_detector_given_opposite: passive.same_detector_given_opposite.as_ref().map(to_f64),
        });
    }
    let max_tv = reports.iter().map(|r| r.tv_distance).fold(0.0, f64::max);
    let max_shift = reports
        .iter()
        .map(|r| r.shift_uniformity_deviation)
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        boundary_rule: rule,
        max_block_size: max_block,
        patterns_tested: reports.len(),
        tv_tolerance: TV_TOLERANCE,
        shift_tolerance: SHIFT_TOLERANCE,
        max_tv_distance: max_tv,
        max_shift_uniformity_deviation: max_shift,
        all_within_tolerance: max_tv < TV_TOLERANCE && max_shift < SHIFT_TOLERANCE,
        rules,
        patterns: reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRelation {
    Equal,
    Opposite,
}

/// Probability that two single-detector clicks in slots with the given
/// relative phase land on the same detector, for coherent inputs with
/// uniformly random overall-phase difference. Intensities are per slot at
/// the detectors.
pub fn coherent_pair_correlation_with(
    mu_signal: f64,
    mu_reference: f64,
    visibility: f64,
    relation: PhaseRelation,
) -> f64 {
    const NODES: usize = 4096;
    let base = (mu_signal + mu_reference) / 2.0;
    let fringe = visibility * (mu_signal * mu_reference).sqrt();
    let (mut same, mut all) = (0.0, 0.0);
    for k in 0..NODES {
        let cos = (2.0 * PI * (k as f64 + 0.5) / NODES as f64).cos();
        let (mc, md) = (base + fringe * cos, base - fringe * cos);
        // exactly one detector fires in a slot
        let c = -(-mc).exp_m1() * (-md).exp();
        let d = -(-md).exp_m1() * (-mc).exp();
        same += match relation {
            PhaseRelation::Equal => c * c + d * d,
            PhaseRelation::Opposite => 2.0 * c * d,
        };
        all += (c + d) * (c + d);
    }
    same / all
}

/// Balanced, unit-visibility case of [`coherent_pair_correlation_with`].
pub fn coherent_pair_correlation(mu: f64, relation: PhaseRelation) -> Result<f64, OracleError> {
    if !(mu > 0.0 && mu <= 0.05) {
        return Err(OracleError::Intensity(mu));
    }
    Ok(coherent_pair_correlation_with(mu, mu, 1.0, relation))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> PhaseBits {
        s.parse().unwrap()
    }

    #[test]
    fn l3_flat_pattern_is_uniform() {
        let d = passive_pair_distribution(3, &bits("000")).unwrap();
        assert_eq!(d.probs.len(), 3);
        for p in d.probs.values() {
            assert_eq!(*p, ratio(1, 3));
        }
    }

    #[test]
    fn passive_exact_invariants() {
        for pattern in ["0101", "0000", "0111", "1001"] {
            let a = passive_analysis(4, &bits(pattern)).unwrap();
            assert_eq!(a.normalization, BigRational::one());
            assert_eq!(a.announcements.total(), BigRational::one());
            assert_eq!(a.distinct_slot_probability, ratio(3, 4));
            assert!(a.shift_uniformity_deviation.is_zero());
            assert!(a.path_decomposition_deviation.is_zero());
            assert_eq!(a.same_detector_given_equal, Some(BigRational::one()));
            if pattern != "0000" {
                assert_eq!(a.same_detector_given_opposite, Some(BigRational::zero()));
            }
        }
    }

    #[test]
    fn active_l3_by_hand() {
        let uniform = vec![ratio(1, 3); 3];
        let wrap = active_pair_distribution(3, &uniform, BoundaryRule::ModularWrap).unwrap();
        for p in wrap.announcements.probs.values() {
            assert_eq!(*p, ratio(1, 3));
        }
        // i = 1 with r = 2 has no admissible sign
        let resample = active_pair_distribution(3, &uniform, BoundaryRule::ResampleSign).unwrap();
        assert_eq!(resample.discard_probability, ratio(1, 6));
        assert_eq!(resample.announcements.get(0, 1), ratio(3, 10));
        assert_eq!(resample.announcements.get(1, 2), ratio(3, 10));
        assert_eq!(resample.announcements.get(0, 2), ratio(2, 5));
    }

    #[test]
    fn active_boundary_at_first_slot() {
        // all clicks at slot 0: only the positive sign survives
        let mut marginal = vec![BigRational::zero(); 4];
        marginal[0] = BigRational::one();
        let d = active_pair_distribution(4, &marginal, BoundaryRule::ResampleSign).unwrap();
        assert!(d.discard_probability.is_zero());
        for j in 1..4 {
            assert_eq!(d.announcements.get(0, j), ratio(1, 3));
        }
        let d = active_pair_distribution(4, &marginal, BoundaryRule::Discard).unwrap();
        assert_eq!(d.discard_probability, ratio(1, 2));
    }

    #[test]
    fn rejects_out_of_range_blocks() {
        assert_eq!(
            passive_pair_distribution(2, &bits("00")),
            Err(OracleError::BlockSize(2))
        );
        assert_eq!(
            passive_pair_distribution(11, &PhaseBits::zeros(11)),
            Err(OracleError::BlockSize(11))
        );
        assert!(passive_pair_distribution(4, &bits("000")).is_err());
        assert!(coherent_pair_correlation(0.0, PhaseRelation::Equal).is_err());
        assert!(coherent_pair_correlation(0.06, PhaseRelation::Equal).is_err());
    }

    #[test]
    fn small_intensity_limit() {
        let c = coherent_pair_correlation(1e-6, PhaseRelation::Equal).unwrap();
        assert!((c - 0.75).abs() < 1e-4, "{c}");
        for mu in [1e-4, 0.004, 0.05] {
            let eq = coherent_pair_correlation(mu, PhaseRelation::Equal).unwrap();
            let op = coherent_pair_correlation(mu, PhaseRelation::Opposite).unwrap();
            assert!((eq + op - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn report_counts_patterns() {
        let r = equivalence_report(3, BoundaryRule::default()).unwrap();
        assert_eq!(r.patterns_tested, 8);
        assert!(r.all_within_tolerance);
        let resample = r
            .rules
            .iter()
            .find(|s| s.boundary_rule == BoundaryRule::ResampleSign)
            .unwrap();
        assert!(resample.max_tv_distance > 0.06);
    }
}
