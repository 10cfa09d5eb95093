//! Photon-number engine.
//!
//! A phase-randomized coherent train is a Poisson mixture of Fock states, so
//! a block can equally be simulated by drawing how many photons Alice and
//! Bob each deliver and propagating those Fock states exactly. Slots with
//! equal relative phase are interchangeable, which collapses the
//! `2L`-mode output onto four collective modes `(C+, C-, D+, D-)`; photons in
//! a collective mode spread multinomially over its slots.
//!
//! Uniform losses commute with the beam splitter, so channel loss and
//! detector efficiency are folded into the input photon numbers. Imperfect
//! visibility is a reference component in an orthogonal mode that does not
//! interfere.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use super::{
    emit_block, threshold_events, DetectionEvent, Detector, ExperimentConfig, KernelError,
    PhaseBits, Result,
};
use crate::rng::{stream_rng, Stream};

/// Interfering photons per block handled exactly.
pub const MAX_INTERFERING_PHOTONS: u64 = 64;

/// Photons each party delivered to the detectors, after all losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub alice_photons: u64,
    pub bob_photons: u64,
    pub dark_counts: u64,
}

impl GroundTruth {
    /// Exactly one photon from each party and no dark count.
    pub fn is_single_photon_pair(&self) -> bool {
        self.alice_photons == 1 && self.bob_photons == 1 && self.dark_counts == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberBlock {
    pub block_id: u64,
    pub phases: PhaseBits,
    pub events: Vec<DetectionEvent>,
    pub truth: GroundTruth,
}

/// Joint photon-number distribution over `(C+, C-, D+, D-)` for Fock
/// inputs of `alice` and `bob` photons, where `even_slots` of the
/// `block_size` slots have equal signal and reference phase.
///
/// Entries are listed in a fixed order; probabilities sum to one.
pub fn collective_mode_distribution(
    alice: u64,
    bob: u64,
    even_slots: usize,
    block_size: usize,
) -> Vec<([u64; 4], f64)> {
    let n = (alice + bob) as usize;
    let p = (even_slots as f64 / (2.0 * block_size as f64)).sqrt();
    let q = ((block_size - even_slots) as f64 / (2.0 * block_size as f64)).sqrt();
    // Creation-operator images in the collective basis.
    let alice_mode = [p, -q, p, -q];
    let bob_mode = [p, q, -p, -q];

    // Coefficients of the degree-d polynomial, indexed by (k0, k1, k2);
    // k3 = d - k0 - k1 - k2.
    let dim = n + 1;
    let idx = |k0: usize, k1: usize, k2: usize| (k0 * dim + k1) * dim + k2;
    let mut coeff = vec![0.0; dim * dim * dim];
    coeff[0] = 1.0;
    let factors = std::iter::repeat_n(alice_mode, alice as usize)
        .chain(std::iter::repeat_n(bob_mode, bob as usize));
    for (degree, w) in factors.enumerate() {
        let mut next = vec![0.0; coeff.len()];
        for k0 in 0..=degree {
            for k1 in 0..=degree - k0 {
                for k2 in 0..=degree - k0 - k1 {
                    let c = coeff[idx(k0, k1, k2)];
                    if c == 0.0 {
                        continue;
                    }
                    next[idx(k0 + 1, k1, k2)] += w[0] * c;
                    next[idx(k0, k1 + 1, k2)] += w[1] * c;
                    next[idx(k0, k1, k2 + 1)] += w[2] * c;
                    next[idx(k0, k1, k2)] += w[3] * c;
                }
            }
        }
        coeff = next;
    }

    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let norm = ln_fact[alice as usize] + ln_fact[bob as usize];
    let mut out = Vec::new();
    for k0 in 0..=n {
        for k1 in 0..=n - k0 {
            for k2 in 0..=n - k0 - k1 {
                let k3 = n - k0 - k1 - k2;
                let c = coeff[idx(k0, k1, k2)];
                if c == 0.0 {
                    continue;
                }
                let weight = (ln_fact[k0] + ln_fact[k1] + ln_fact[k2] + ln_fact[k3] - norm).exp();
                out.push(([k0 as u64, k1 as u64, k2 as u64, k3 as u64], c * c * weight));
            }
        }
    }
    out
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

/// Simulates block `block_id` through Fock states. Alice's phase pattern
/// matches the coherent engine's for the same seed and block.
pub fn simulate_block(cfg: &ExperimentConfig, block_id: u64) -> Result<PhotonNumberBlock> {
    let mut source = stream_rng(cfg.seed, Stream::Source, block_id);
    let (signal, reference) = emit_block(cfg, &mut source);
    let mut rng = stream_rng(cfg.seed, Stream::PhotonNumber, block_id);

    let len = cfg.block_size;
    let eta = cfg.overall_efficiency();
    let alice = poisson(&mut rng, eta * signal.mean_photons_per_pulse() * len as f64);
    let bob = poisson(
        &mut rng,
        eta * reference.mean_photons_per_pulse() * len as f64,
    );
    let overlap = cfg.visibility * cfg.visibility;
    let bob_matched = if bob > 0 && overlap > 0.0 {
        Binomial::new(bob, overlap.min(1.0))
            .expect("valid binomial")
            .sample(&mut rng)
    } else {
        0
    };
    let interfering = alice + bob_matched;
    if interfering > MAX_INTERFERING_PHOTONS {
        return Err(KernelError::PhotonNumberTooLarge(interfering));
    }

    let relative = signal.phases.xor(&reference.phases);
    let (odd, even): (Vec<u32>, Vec<u32>) =
        (0..len as u32).partition(|&i| relative.get(i as usize));
    let mut hits: Vec<(u32, Detector)> = Vec::new();

    if interfering > 0 {
        let dist = collective_mode_distribution(alice, bob_matched, even.len(), len);
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut chosen = dist.last().expect("nonempty distribution").0;
        for (k, prob) in &dist {
            acc += prob;
            if u < acc {
                chosen = *k;
                break;
            }
        }
        let modes = [
            (&even, Detector::C),
            (&odd, Detector::C),
            (&even, Detector::D),
            (&odd, Detector::D),
        ];
        for ((slots, detector), count) in modes.into_iter().zip(chosen) {
            for _ in 0..count {
                hits.push((slots[rng.random_range(0..slots.len())], detector));
            }
        }
    }
    for _ in 0..bob - bob_matched {
        let detector = if rng.random::<bool>() {
            Detector::C
        } else {
            Detector::D
        };
        hits.push((rng.random_range(0..len) as u32, detector));
    }
    let dark_counts = super::add_dark_counts(&mut rng, cfg, &mut hits);

    Ok(PhotonNumberBlock {
        block_id,
        phases: signal.phases,
        events: threshold_events(block_id, hits),
        truth: GroundTruth {
            alice_photons: alice,
            bob_photons: bob,
            dark_counts,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_is_normalized() {
        for (a, b) in [
            (0, 1),
            (1, 0),
            (1, 1),
            (2, 0),
            (3, 2),
            (5, 5),
            (12, 9),
            (30, 30),
        ] {
            for even in [0, 1, 3, 8] {
                let total: f64 = collective_mode_distribution(a, b, even, 8)
                    .iter()
                    .map(|e| e.1)
                    .sum();
                assert!(
                    (total - 1.0).abs() < 1e-10,
                    "({a},{b}) even={even}: {total}"
                );
            }
        }
    }

    #[test]
    fn one_photon_each_never_splits_within_a_phase_class() {
        // equal relative phase -> same detector, opposite -> different
        for even in 0..=6 {
            for (k, prob) in collective_mode_distribution(1, 1, even, 6) {
                let [cp, cm, dp, dm] = k;
                let forbidden = (cp == 1 && dp == 1)
                    || (cm == 1 && dm == 1)
                    || (cp == 1 && cm == 1)
                    || (dp == 1 && dm == 1);
                if forbidden {
                    assert!(prob < 1e-15, "{k:?} {prob}");
                }
            }
        }
    }

    #[test]
    fn lone_party_splits_evenly() {
        // no reference photon: no interference, C and D equally likely
        let dist = collective_mode_distribution(1, 0, 3, 8);
        let c: f64 = dist
            .iter()
            .filter(|(k, _)| k[0] + k[1] == 1)
            .map(|e| e.1)
            .sum();
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_block() {
        let cfg = ExperimentConfig {
            block_size: 256,
            mu_alice: 0.01,
            reference_mode: crate::ReferenceMode::Fixed(0.01),
            detector_efficiency: 1.0,
            ..ExperimentConfig::default()
        };
        for id in 0..50 {
            assert_eq!(
                simulate_block(&cfg, id).unwrap(),
                simulate_block(&cfg, id).unwrap()
            );
            assert_eq!(
                simulate_block(&cfg, id).unwrap().phases,
                super::super::simulate_block(&cfg, id).unwrap().phases
            );
        }
    }
}
