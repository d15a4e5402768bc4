//! Commit/open for masked ballots.
//!
//! A residue is committed bit by bit, `bit_width` independent bit commitments
//! in total. Two backends share this layout:
//!
//! - **Ideal**: each bit commitment is `H(committer, index, bit, nonce)`. The
//!   evidence is a hash of fresh randomness, so it is independent of the
//!   value; opening with a different bit fails the hash check.
//! - **Cheat-sensitive**: the evidence seals only `H(committer, index, nonce)`
//!   and stands in for the committed quantum states. Changing a bit after
//!   the fact, or measuring one before the opening, disturbs the state and
//!   is noticed independently per bit with probability `p_detect`. The
//!   disturbance outcome is carried with the opening as the measurement
//!   record the receiver obtains while checking it.
//!
//! The committed value is also kept in a private, never-serialized field of
//! the in-memory [`Commitment`]. Only the cheat-sensitive peek model reads it
//! (a measurement that succeeds learns the bit).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::Modulus;
use crate::{Digest, Nonce, PartyId};

const IDEAL_DOMAIN: &[u8] = b"qvote/commit/ideal";
const SEALED_DOMAIN: &[u8] = b"qvote/commit/sealed";

#[derive(Debug, Error, PartialEq, Clone)]
pub enum CommitmentError {
    #[error("value {value} outside Z_{bound}")]
    ValueOutOfRange { value: u64, bound: u64 },
    #[error("commitment was already opened")]
    AlreadyOpened,
    #[error("detection probability {0} is not in [0, 1]")]
    InvalidDetectionProbability(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitmentMode {
    Ideal,
    CheatSensitive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommitmentParams {
    mode: CommitmentMode,
    p_detect: f64,
    bit_width: u32,
    bound: u64,
}

impl CommitmentParams {
    pub fn ideal(modulus: Modulus) -> Self {
        CommitmentParams {
            mode: CommitmentMode::Ideal,
            p_detect: 1.0,
            bit_width: bit_width(modulus),
            bound: modulus.value(),
        }
    }

    pub fn cheat_sensitive(modulus: Modulus, p_detect: f64) -> Result<Self, CommitmentError> {
        if !(0.0..=1.0).contains(&p_detect) {
            return Err(CommitmentError::InvalidDetectionProbability(p_detect));
        }
        Ok(CommitmentParams {
            mode: CommitmentMode::CheatSensitive,
            p_detect,
            bit_width: bit_width(modulus),
            bound: modulus.value(),
        })
    }

    pub fn mode(&self) -> CommitmentMode {
        self.mode
    }

    /// Per-bit detection probability; always 1 in ideal mode.
    pub fn p_detect(&self) -> f64 {
        self.p_detect
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    /// Exclusive upper bound on committable values (`n + 1`).
    pub fn bound(&self) -> u64 {
        self.bound
    }

    /// Whether every rebind attempt is certain to be caught.
    pub fn binding_guaranteed(&self) -> bool {
        self.mode == CommitmentMode::Ideal || self.p_detect >= 1.0
    }
}

/// `ceil(log2(n + 1))`: enough bits for every residue in `[0, n]`.
pub fn bit_width(modulus: Modulus) -> u32 {
    u64::BITS - (modulus.value() - 1).leading_zeros()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    Committed,
    Opened,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commitment {
    committer: PartyId,
    scheme: CommitmentMode,
    evidence: Vec<Digest>,
    #[serde(skip)]
    phase: Phase,
    #[serde(skip)]
    sealed_value: Option<u64>,
}

impl PartialEq for Commitment {
    fn eq(&self, other: &Self) -> bool {
        self.committer == other.committer
            && self.scheme == other.scheme
            && self.evidence == other.evidence
    }
}

impl Eq for Commitment {}

impl Commitment {
    pub fn committer(&self) -> PartyId {
        self.committer
    }

    pub fn scheme(&self) -> CommitmentMode {
        self.scheme
    }

    pub fn evidence(&self) -> &[Digest] {
        &self.evidence
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Concatenated evidence, the transcript a receiver sees at commit time.
    pub fn transcript(&self) -> Vec<u8> {
        self.evidence.iter().flat_map(|d| d.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opening {
    value: u64,
    decommit_token: Vec<Nonce>,
    /// Bit positions whose sealed state was found disturbed on receipt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    disturbed: Vec<u32>,
}

impl Opening {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn decommit_token(&self) -> &[Nonce] {
        &self.decommit_token
    }

    pub fn disturbed(&self) -> &[u32] {
        &self.disturbed
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpenResult {
    Opened(u64),
    /// Bit positions that failed the check.
    CheatDetected {
        bits: Vec<u32>,
    },
}

impl OpenResult {
    pub fn is_cheat(&self) -> bool {
        matches!(self, OpenResult::CheatDetected { .. })
    }
}

fn bit_of(value: u64, index: u32) -> u8 {
    ((value >> index) & 1) as u8
}

fn ideal_digest(committer: PartyId, index: u32, bit: u8, nonce: &Nonce) -> Digest {
    Digest::of_parts(&[
        IDEAL_DOMAIN,
        committer.to_string().as_bytes(),
        &index.to_be_bytes(),
        &[bit],
        &nonce.0,
    ])
}

fn sealed_digest(committer: PartyId, index: u32, nonce: &Nonce) -> Digest {
    Digest::of_parts(&[
        SEALED_DOMAIN,
        committer.to_string().as_bytes(),
        &index.to_be_bytes(),
        &nonce.0,
    ])
}

pub fn commit<R: Rng + ?Sized>(
    committer: PartyId,
    value: u64,
    params: &CommitmentParams,
    rng: &mut R,
) -> Result<(Commitment, Opening), CommitmentError> {
    if value >= params.bound {
        return Err(CommitmentError::ValueOutOfRange {
            value,
            bound: params.bound,
        });
    }
    let nonces: Vec<Nonce> = (0..params.bit_width)
        .map(|_| {
            let mut n = [0u8; 32];
            rng.fill(&mut n);
            Nonce(n)
        })
        .collect();
    let evidence = nonces
        .iter()
        .enumerate()
        .map(|(i, nonce)| {
            let i = i as u32;
            match params.mode {
                CommitmentMode::Ideal => ideal_digest(committer, i, bit_of(value, i), nonce),
                CommitmentMode::CheatSensitive => sealed_digest(committer, i, nonce),
            }
        })
        .collect();
    Ok((
        Commitment {
            committer,
            scheme: params.mode,
            evidence,
            phase: Phase::Committed,
            sealed_value: Some(value),
        },
        Opening {
            value,
            decommit_token: nonces,
            disturbed: Vec::new(),
        },
    ))
}

/// Receiver-side check of an opening against a commitment. Does not change
/// the commitment's phase; see [`open`] for the stateful variant.
pub fn verify_opening(commitment: &Commitment, opening: &Opening) -> OpenResult {
    let width = commitment.evidence.len() as u32;
    if opening.decommit_token.len() != commitment.evidence.len() || opening.value >> width != 0 {
        return OpenResult::CheatDetected {
            bits: (0..width).collect(),
        };
    }
    let mut bits: Vec<u32> = commitment
        .evidence
        .iter()
        .zip(&opening.decommit_token)
        .enumerate()
        .filter_map(|(i, (evidence, nonce))| {
            let i = i as u32;
            let expected = match commitment.scheme {
                CommitmentMode::Ideal => {
                    ideal_digest(commitment.committer, i, bit_of(opening.value, i), nonce)
                }
                CommitmentMode::CheatSensitive => sealed_digest(commitment.committer, i, nonce),
            };
            (expected != *evidence).then_some(i)
        })
        .collect();
    if commitment.scheme == CommitmentMode::CheatSensitive {
        bits.extend(opening.disturbed.iter().copied().filter(|b| *b < width));
    }
    bits.sort_unstable();
    bits.dedup();
    if bits.is_empty() {
        OpenResult::Opened(opening.value)
    } else {
        OpenResult::CheatDetected { bits }
    }
}

/// Opening phase: checks the pair and moves the commitment to `Opened`.
pub fn open(commitment: &mut Commitment, opening: &Opening) -> Result<OpenResult, CommitmentError> {
    if commitment.phase == Phase::Opened {
        return Err(CommitmentError::AlreadyOpened);
    }
    commitment.phase = Phase::Opened;
    Ok(verify_opening(commitment, opening))
}

/// What a cheating attempt touched and which of those touches were noticed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DetectionEvents {
    pub touched: Vec<u32>,
    pub detected: Vec<u32>,
}

impl DetectionEvents {
    pub fn any_detected(&self) -> bool {
        !self.detected.is_empty()
    }
}

fn sample_detection<R: Rng + ?Sized>(
    bits: &[u32],
    params: &CommitmentParams,
    rng: &mut R,
) -> Vec<u32> {
    bits.iter()
        .copied()
        .filter(|_| rng.gen_bool(params.p_detect))
        .collect()
}

/// The committer tries to open to `new_value` instead of what it committed.
///
/// In ideal mode the forged opening reuses the original randomness, so every
/// flipped bit fails the hash check. In cheat-sensitive mode each flipped bit
/// is disturbed independently with probability `p_detect`.
pub fn adversarial_rebind<R: Rng + ?Sized>(
    commitment: &Commitment,
    original: &Opening,
    new_value: u64,
    params: &CommitmentParams,
    rng: &mut R,
) -> (Opening, DetectionEvents) {
    let width = commitment.evidence.len() as u32;
    let flipped: Vec<u32> = (0..width)
        .filter(|&i| bit_of(original.value, i) != bit_of(new_value, i))
        .collect();
    let detected = match commitment.scheme {
        CommitmentMode::Ideal => flipped.clone(),
        CommitmentMode::CheatSensitive => sample_detection(&flipped, params, rng),
    };
    let forged = Opening {
        value: new_value,
        decommit_token: original.decommit_token.clone(),
        disturbed: match commitment.scheme {
            CommitmentMode::Ideal => Vec::new(),
            CommitmentMode::CheatSensitive => detected.clone(),
        },
    };
    (
        forged,
        DetectionEvents {
            touched: flipped,
            detected,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeekOutcome {
    pub guess: u64,
    pub events: DetectionEvents,
}

/// The receiver tries to learn the committed value before the opening.
///
/// Ideal evidence carries no information, so the best the receiver can do is
/// a uniform guess. In cheat-sensitive mode every bit is measured and learned,
/// and each measurement is detected with probability `p_detect`.
pub fn adversarial_peek<R: Rng + ?Sized>(
    commitment: &Commitment,
    params: &CommitmentParams,
    rng: &mut R,
) -> PeekOutcome {
    match (commitment.scheme, commitment.sealed_value) {
        (CommitmentMode::CheatSensitive, Some(value)) => {
            let probed: Vec<u32> = (0..commitment.evidence.len() as u32).collect();
            let detected = sample_detection(&probed, params, rng);
            PeekOutcome {
                guess: value,
                events: DetectionEvents {
                    touched: probed,
                    detected,
                },
            }
        }
        _ => PeekOutcome {
            guess: rng.gen_range(0..params.bound),
            events: DetectionEvents::default(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::VoterId;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    const V1: PartyId = PartyId::Voter(VoterId(1));

    fn ideal(n: usize) -> CommitmentParams {
        CommitmentParams::ideal(Modulus::new(n).unwrap())
    }

    fn sensitive(n: usize, p: f64) -> CommitmentParams {
        CommitmentParams::cheat_sensitive(Modulus::new(n).unwrap(), p).unwrap()
    }

    #[test]
    fn bit_widths() {
        let w = |n| bit_width(Modulus::new(n).unwrap());
        assert_eq!(w(1), 1);
        assert_eq!(w(3), 2);
        assert_eq!(w(4), 3);
        assert_eq!(w(7), 3);
        assert_eq!(w(8), 4);
    }

    #[test]
    fn honest_round_trip() {
        let mut rng = derive_rng(1, "c", 0);
        let (mut c, o) = commit(V1, 2, &ideal(3), &mut rng).unwrap();
        assert_eq!(c.phase(), Phase::Committed);
        assert_eq!(open(&mut c, &o).unwrap(), OpenResult::Opened(2));
        assert_eq!(c.phase(), Phase::Opened);
        assert_eq!(
            open(&mut c, &o).unwrap_err(),
            CommitmentError::AlreadyOpened
        );
    }

    #[test]
    fn out_of_range_value() {
        let mut rng = derive_rng(1, "c", 0);
        assert_eq!(
            commit(V1, 5, &ideal(3), &mut rng).unwrap_err(),
            CommitmentError::ValueOutOfRange { value: 5, bound: 4 }
        );
        assert!(commit(V1, 4, &ideal(3), &mut rng).is_err());
    }

    #[test]
    fn invalid_probability_rejected() {
        let m = Modulus::new(3).unwrap();
        assert!(CommitmentParams::cheat_sensitive(m, 1.5).is_err());
        assert!(CommitmentParams::cheat_sensitive(m, -0.1).is_err());
        assert!(CommitmentParams::cheat_sensitive(m, f64::NAN).is_err());
    }

    #[test]
    fn ideal_substitution_always_detected() {
        let params = ideal(3);
        for seed in 0..100 {
            let mut rng = derive_rng(seed, "c", 0);
            let (c, o) = commit(V1, 1, &params, &mut rng).unwrap();
            let (forged, events) = adversarial_rebind(&c, &o, 3, &params, &mut rng);
            assert!(events.any_detected());
            assert!(verify_opening(&c, &forged).is_cheat());
        }
    }

    #[test]
    fn boundary_probabilities() {
        for (p, expect_detect) in [(1.0, true), (0.0, false)] {
            let params = sensitive(3, p);
            for seed in 0..50 {
                let mut rng = derive_rng(seed, "c", 0);
                let (c, o) = commit(V1, 1, &params, &mut rng).unwrap();
                let (forged, events) = adversarial_rebind(&c, &o, 2, &params, &mut rng);
                assert_eq!(events.any_detected(), expect_detect);
                assert_eq!(verify_opening(&c, &forged).is_cheat(), expect_detect);
                if !expect_detect {
                    assert_eq!(verify_opening(&c, &forged), OpenResult::Opened(2));
                }
            }
        }
    }

    #[test]
    fn rebind_detection_matches_closed_form() {
        // 1 = 0b01 -> 2 = 0b10 flips two bits; P(detect) = 1 - 0.75^2.
        let params = sensitive(3, 0.25);
        let trials = 10_000;
        let mut rng = derive_rng(99, "rebind", 0);
        let mut detected = 0;
        for _ in 0..trials {
            let (c, o) = commit(V1, 1, &params, &mut rng).unwrap();
            let (forged, events) = adversarial_rebind(&c, &o, 2, &params, &mut rng);
            assert_eq!(events.touched, vec![0, 1]);
            if verify_opening(&c, &forged).is_cheat() {
                detected += 1;
            }
        }
        let freq = detected as f64 / trials as f64;
        assert!((freq - 0.4375).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn peek_detection_matches_closed_form() {
        // n = 5 commits three bits; P(detect) = 1 - 0.5^3.
        let params = sensitive(5, 0.5);
        assert_eq!(params.bit_width(), 3);
        let trials = 10_000;
        let mut rng = derive_rng(5, "peek", 0);
        let mut detected = 0;
        for _ in 0..trials {
            let (c, _) = commit(V1, 4, &params, &mut rng).unwrap();
            let outcome = adversarial_peek(&c, &params, &mut rng);
            assert_eq!(outcome.guess, 4);
            if outcome.events.any_detected() {
                detected += 1;
            }
        }
        let freq = detected as f64 / trials as f64;
        assert!((freq - 0.875).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn ideal_peek_is_uniform() {
        let params = ideal(3);
        let trials = 10_000;
        let mut rng = derive_rng(3, "peek", 0);
        let mut counts = [0u64; 4];
        for _ in 0..trials {
            let (c, _) = commit(V1, 2, &params, &mut rng).unwrap();
            counts[adversarial_peek(&c, &params, &mut rng).guess as usize] += 1;
        }
        let expected = trials as f64 / 4.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi-square {stat}");
    }

    #[test]
    fn peek_does_not_alter_value() {
        for params in [ideal(3), sensitive(3, 0.5)] {
            let mut rng = derive_rng(8, "peek", 1);
            let (mut c, o) = commit(V1, 3, &params, &mut rng).unwrap();
            adversarial_peek(&c, &params, &mut rng);
            assert_eq!(open(&mut c, &o).unwrap(), OpenResult::Opened(3));
        }
    }

    #[test]
    fn ideal_transcript_independent_of_value() {
        // Total-variation distance between the high-nibble histograms of
        // the first evidence byte for committed values 0 and 3.
        let params = ideal(3);
        let trials = 10_000;
        let histogram = |value: u64, label: &str| {
            let mut h = [0u64; 16];
            let mut rng = derive_rng(17, label, 0);
            for _ in 0..trials {
                let (c, _) = commit(V1, value, &params, &mut rng).unwrap();
                h[(c.evidence()[0].0[0] >> 4) as usize] += 1;
            }
            h
        };
        let a = histogram(0, "zero");
        let b = histogram(3, "three");
        let tvd: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .sum::<f64>()
            / (2.0 * trials as f64);
        assert!(tvd < 0.05, "tvd {tvd}");
    }

    #[test]
    fn serialization_hides_sealed_value() {
        let mut rng = derive_rng(2, "ser", 0);
        let (c, o) = commit(V1, 3, &sensitive(3, 0.5), &mut rng).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(!json.contains("sealed"));
        let back: Commitment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        // A receiver without the sealed state can still check the opening...
        assert_eq!(verify_opening(&back, &o), OpenResult::Opened(3));
        // ...but a peek at it can only guess.
        let params = sensitive(3, 0.5);
        assert!(adversarial_peek(&back, &params, &mut rng)
            .events
            .touched
            .is_empty());
    }

    proptest! {
        #[test]
        fn round_trip_all_residues(n in 1usize..40, seed in any::<u64>(), cs in any::<bool>()) {
            let params = if cs { sensitive(n, 0.3) } else { ideal(n) };
            let mut rng = derive_rng(seed, "prop", 0);
            for v in 0..=n as u64 {
                let (mut c, o) = commit(V1, v, &params, &mut rng).unwrap();
                prop_assert_eq!(open(&mut c, &o).unwrap(), OpenResult::Opened(v));
            }
        }

        #[test]
        fn ideal_forgeries_never_pass(
            seed in any::<u64>(),
            value in 0u64..8,
            forged_value in 0u64..8,
            token in proptest::collection::vec(any::<[u8; 32]>(), 3),
            reuse_nonces in any::<bool>(),
        ) {
            let params = ideal(7);
            let mut rng = derive_rng(seed, "forge", 0);
            let (c, o) = commit(V1, value, &params, &mut rng).unwrap();
            let forged = Opening {
                value: forged_value,
                decommit_token: if reuse_nonces {
                    o.decommit_token.clone()
                } else {
                    token.into_iter().map(Nonce).collect()
                },
                disturbed: Vec::new(),
            };
            let accepted = verify_opening(&c, &forged) == OpenResult::Opened(forged_value);
            if accepted {
                // Only the genuine opening gets through.
                prop_assert_eq!(forged, o);
            }
        }
    }
}
