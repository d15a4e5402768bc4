//! Additive masking over `Z_{n+1}`.
//!
//! Voter `i` draws row `r_{i,1..n}` with zero sum, hands `r_{i,j}` to voter
//! `j`, and publishes `v_i + sum_j r_{j,i}`. Because every row sums to zero,
//! the column sums cancel in aggregate and the published values add up to
//! the plain vote count.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::VoterId;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum MaskingError {
    #[error("voter count must be at least 1")]
    InvalidVoterCount,
    #[error("malformed mask column for {receiver}: {detail}")]
    MalformedColumn { receiver: VoterId, detail: String },
    #[error("malformed mask row for {owner}: {detail}")]
    MalformedRow { owner: VoterId, detail: String },
    #[error("incomplete ballot set: {0}")]
    IncompleteBallotSet(String),
}

/// The residue ring `Z_{n+1}` for an election with `n` voters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modulus {
    voters: usize,
}

impl Modulus {
    pub fn new(voters: usize) -> Result<Self, MaskingError> {
        if voters == 0 {
            return Err(MaskingError::InvalidVoterCount);
        }
        Ok(Modulus { voters })
    }

    pub fn voters(&self) -> usize {
        self.voters
    }

    /// `n + 1`.
    pub fn value(&self) -> u64 {
        self.voters as u64 + 1
    }

    pub fn reduce(&self, x: u64) -> u64 {
        x % self.value()
    }

    pub fn contains(&self, residue: u64) -> bool {
        residue < self.value()
    }

    /// Additive inverse.
    pub fn neg(&self, residue: u64) -> u64 {
        (self.value() - self.reduce(residue)) % self.value()
    }

    /// Sum of residues, reduced.
    pub fn sum<I: IntoIterator<Item = u64>>(&self, residues: I) -> u64 {
        residues
            .into_iter()
            .fold(0, |acc, r| (acc + self.reduce(r)) % self.value())
    }
}

/// A binary vote. Any encoding other than 0/1 is unrepresentable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vote {
    Disagree,
    Agree,
}

impl Vote {
    pub fn value(self) -> u64 {
        match self {
            Vote::Disagree => 0,
            Vote::Agree => 1,
        }
    }

    pub fn from_bit(bit: u64) -> Option<Vote> {
        match bit {
            0 => Some(Vote::Disagree),
            1 => Some(Vote::Agree),
            _ => None,
        }
    }
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Vote {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.value())
    }
}

impl<'de> Deserialize<'de> for Vote {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let bit = u64::deserialize(deserializer)?;
        Vote::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("vote must be 0 or 1, got {bit}")))
    }
}

/// Row `r_{i,1..n}` generated by voter `i`; entry `j - 1` is destined for `V_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRow {
    owner: VoterId,
    entries: Vec<u64>,
}

impl MaskRow {
    /// Builds a row from its first `n - 1` entries; the last entry is the
    /// unique residue that brings the sum to zero.
    pub fn complete(owner: VoterId, modulus: Modulus, free: &[u64]) -> Result<Self, MaskingError> {
        let n = modulus.voters();
        if free.len() + 1 != n {
            return Err(MaskingError::MalformedRow {
                owner,
                detail: format!("expected {} free entries, got {}", n - 1, free.len()),
            });
        }
        if let Some(bad) = free.iter().find(|r| !modulus.contains(**r)) {
            return Err(MaskingError::MalformedRow {
                owner,
                detail: format!("entry {bad} outside Z_{}", modulus.value()),
            });
        }
        let mut entries = free.to_vec();
        entries.push(modulus.neg(modulus.sum(free.iter().copied())));
        Ok(MaskRow { owner, entries })
    }

    pub fn owner(&self) -> VoterId {
        self.owner
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn share_for(&self, receiver: VoterId) -> u64 {
        self.entries[receiver.index()]
    }
}

/// Draws a mask row: `n - 1` independent uniform residues plus the forced last one.
pub fn gen_mask_row<R: Rng + ?Sized>(
    owner: VoterId,
    voters: usize,
    rng: &mut R,
) -> Result<MaskRow, MaskingError> {
    let modulus = Modulus::new(voters)?;
    let free: Vec<u64> = (0..voters - 1)
        .map(|_| rng.gen_range(0..modulus.value()))
        .collect();
    MaskRow::complete(owner, modulus, &free)
}

/// The shares `r_{1,i..n,i}` held by voter `i`, indexed by sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskColumn {
    receiver: VoterId,
    shares: Vec<u64>,
}

impl MaskColumn {
    pub fn new(receiver: VoterId, shares: Vec<u64>) -> Self {
        MaskColumn { receiver, shares }
    }

    pub fn receiver(&self) -> VoterId {
        self.receiver
    }

    pub fn shares(&self) -> &[u64] {
        &self.shares
    }
}

/// Transposes a full set of rows into the per-receiver columns.
pub fn columns(rows: &[MaskRow]) -> Vec<MaskColumn> {
    (0..rows.len())
        .map(|i| {
            let receiver = VoterId::from_index(i);
            MaskColumn::new(
                receiver,
                rows.iter().map(|r| r.share_for(receiver)).collect(),
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedBallot {
    pub voter: VoterId,
    pub value: u64,
}

/// `v_i + sum_j r_{j,i} mod (n+1)`.
pub fn mask_ballot(
    vote: Vote,
    column: &MaskColumn,
    modulus: Modulus,
) -> Result<MaskedBallot, MaskingError> {
    let malformed = |detail: String| MaskingError::MalformedColumn {
        receiver: column.receiver,
        detail,
    };
    if column.shares.len() != modulus.voters() {
        return Err(malformed(format!(
            "expected {} shares, got {}",
            modulus.voters(),
            column.shares.len()
        )));
    }
    if let Some(bad) = column.shares.iter().find(|s| !modulus.contains(**s)) {
        return Err(malformed(format!(
            "share {bad} outside Z_{}",
            modulus.value()
        )));
    }
    let value = modulus.sum(std::iter::once(vote.value()).chain(column.shares.iter().copied()));
    Ok(MaskedBallot {
        voter: column.receiver,
        value,
    })
}

/// Sum of all masked ballots mod `n + 1`, which is the number of agree votes.
pub fn tally(ballots: &[MaskedBallot], modulus: Modulus) -> Result<u64, MaskingError> {
    let n = modulus.voters();
    let mut seen = vec![false; n];
    for b in ballots {
        let idx = b.voter.0 as usize;
        if idx == 0 || idx > n {
            return Err(MaskingError::IncompleteBallotSet(format!(
                "{} is not one of V1..V{n}",
                b.voter
            )));
        }
        if std::mem::replace(&mut seen[idx - 1], true) {
            return Err(MaskingError::IncompleteBallotSet(format!(
                "duplicate ballot for {}",
                b.voter
            )));
        }
        if !modulus.contains(b.value) {
            return Err(MaskingError::IncompleteBallotSet(format!(
                "ballot for {} is outside Z_{}",
                b.voter,
                modulus.value()
            )));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(MaskingError::IncompleteBallotSet(format!(
            "missing ballot for {}",
            VoterId::from_index(missing)
        )));
    }
    Ok(modulus.sum(ballots.iter().map(|b| b.value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn m(n: usize) -> Modulus {
        Modulus::new(n).unwrap()
    }

    fn ballots(values: &[u64]) -> Vec<MaskedBallot> {
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| MaskedBallot {
                voter: VoterId::from_index(i),
                value,
            })
            .collect()
    }

    #[test]
    fn single_voter_row_is_zero() {
        for seed in 0..20 {
            let row = gen_mask_row(VoterId(1), 1, &mut derive_rng(seed, "t", 0)).unwrap();
            assert_eq!(row.entries(), &[0]);
        }
    }

    #[test]
    fn last_entry_is_forced() {
        let row = MaskRow::complete(VoterId(1), m(3), &[1, 2]).unwrap();
        assert_eq!(row.entries(), &[1, 2, 1]);
    }

    #[test]
    fn zero_voters_rejected() {
        assert_eq!(
            gen_mask_row(VoterId(1), 0, &mut derive_rng(0, "t", 0)).unwrap_err(),
            MaskingError::InvalidVoterCount
        );
    }

    #[test]
    fn thousand_rows_resum_to_zero() {
        for seed in 0..1000 {
            let row = gen_mask_row(VoterId(2), 5, &mut derive_rng(seed, "row", 0)).unwrap();
            assert_eq!(row.entries().len(), 5);
            assert!(row.entries().iter().all(|&r| r < 6));
            let total: u64 = row.entries().iter().sum();
            assert_eq!(total % 6, 0);
        }
    }

    #[test]
    fn same_seed_same_row() {
        let a = gen_mask_row(VoterId(1), 9, &mut derive_rng(7, "row", 1)).unwrap();
        let b = gen_mask_row(VoterId(1), 9, &mut derive_rng(7, "row", 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_ballot_examples() {
        let col = |shares: Vec<u64>| MaskColumn::new(VoterId(1), shares);
        assert_eq!(
            mask_ballot(Vote::Disagree, &col(vec![0, 0, 0]), m(3))
                .unwrap()
                .value,
            0
        );
        assert_eq!(
            mask_ballot(Vote::Agree, &col(vec![1, 2, 3]), m(3))
                .unwrap()
                .value,
            3
        );
        assert_eq!(
            mask_ballot(Vote::Agree, &col(vec![3, 3, 3]), m(3))
                .unwrap()
                .value,
            2
        );
    }

    #[test]
    fn malformed_columns_rejected() {
        let short = MaskColumn::new(VoterId(1), vec![0, 0]);
        assert!(matches!(
            mask_ballot(Vote::Agree, &short, m(3)),
            Err(MaskingError::MalformedColumn { .. })
        ));
        let out_of_range = MaskColumn::new(VoterId(1), vec![0, 4, 0]);
        assert!(matches!(
            mask_ballot(Vote::Agree, &out_of_range, m(3)),
            Err(MaskingError::MalformedColumn { .. })
        ));
    }

    #[test]
    fn tally_examples() {
        assert_eq!(tally(&ballots(&[0, 0, 0]), m(3)).unwrap(), 0);
        assert_eq!(tally(&ballots(&[3, 2, 1, 0]), m(4)).unwrap(), 1);
    }

    #[test]
    fn tally_rejects_missing_and_duplicate() {
        let mut set = ballots(&[1, 2, 3]);
        set.pop();
        assert!(matches!(
            tally(&set, m(3)),
            Err(MaskingError::IncompleteBallotSet(_))
        ));
        let mut dup = ballots(&[1, 2, 3]);
        dup[2].voter = VoterId(1);
        assert!(matches!(
            tally(&dup, m(3)),
            Err(MaskingError::IncompleteBallotSet(_))
        ));
    }

    #[test]
    fn end_to_end_matches_plaintext_sum() {
        let votes = [Vote::Agree, Vote::Disagree, Vote::Agree];
        for seed in 0..50 {
            let rows: Vec<_> = (0..3)
                .map(|i| {
                    gen_mask_row(
                        VoterId::from_index(i),
                        3,
                        &mut derive_rng(seed, "e2e", i as u64),
                    )
                    .unwrap()
                })
                .collect();
            let masked: Vec<_> = columns(&rows)
                .iter()
                .zip(votes)
                .map(|(c, v)| mask_ballot(v, c, m(3)).unwrap())
                .collect();
            let plaintext: u64 = votes.iter().map(|v| v.value()).sum();
            assert_eq!(tally(&masked, m(3)).unwrap(), plaintext);
        }
    }

    #[test]
    fn free_entries_are_uniform() {
        // Pearson chi-square on each free coordinate, 10^4 rows, alpha = 0.01.
        let n = 4usize;
        let samples = 10_000;
        let modulus = n as u64 + 1;
        let mut counts = vec![vec![0u64; modulus as usize]; n - 1];
        for seed in 0..samples {
            let row = gen_mask_row(VoterId(1), n, &mut derive_rng(seed, "uniform", 0)).unwrap();
            for (k, &r) in row.entries()[..n - 1].iter().enumerate() {
                counts[k][r as usize] += 1;
            }
        }
        let expected = samples as f64 / modulus as f64;
        let critical = ChiSquared::new((modulus - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        for coordinate in counts {
            let stat: f64 = coordinate
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            assert!(stat < critical, "chi-square {stat} >= {critical}");
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_zero(n in 1usize..60, seed in any::<u64>()) {
            let row = gen_mask_row(VoterId(1), n, &mut derive_rng(seed, "p", 0)).unwrap();
            prop_assert_eq!(row.entries().len(), n);
            prop_assert_eq!(row.entries().iter().sum::<u64>() % (n as u64 + 1), 0);
        }

        #[test]
        fn congruence_chain_holds(
            n in 1usize..=50,
            seed in any::<u64>(),
            vote_bits in proptest::collection::vec(any::<bool>(), 50),
        ) {
            let modulus = m(n);
            let votes: Vec<Vote> = vote_bits[..n]
                .iter()
                .map(|&b| if b { Vote::Agree } else { Vote::Disagree })
                .collect();
            let rows: Vec<_> = (0..n)
                .map(|i| gen_mask_row(VoterId::from_index(i), n, &mut derive_rng(seed, "p", i as u64)).unwrap())
                .collect();
            let masked: Vec<_> = columns(&rows)
                .iter()
                .zip(&votes)
                .map(|(c, &v)| mask_ballot(v, c, modulus).unwrap())
                .collect();
            let plaintext: u64 = votes.iter().map(|v| v.value()).sum();
            prop_assert_eq!(tally(&masked, modulus).unwrap(), plaintext);
        }
    }
}
