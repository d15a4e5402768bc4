//! Exact ballot-privacy audit for small elections.
//!
//! A coalition of voters sees its own mask rows, every share sent to its
//! members, and every masked ballot on the chain. Anonymity holds when the
//! distribution of that view depends on the honest votes only through their
//! sum. For three or fewer voters every mask matrix is enumerated; for four
//! the honest rows are folded one at a time into a joint distribution of the
//! shares the coalition receives and the honest column sums.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::VoterId;

/// Largest voter count [`anonymity_audit`] handles.
pub const MAX_EXHAUSTIVE_VOTERS: usize = 4;
const MAX_FULL_ENUMERATION: usize = 3;

/// Occurrence count of each distinct view.
pub type ViewCounts = BTreeMap<Vec<u64>, u64>;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum AuditError {
    #[error("{n} voters is too many for an exhaustive audit (at most {MAX_EXHAUSTIVE_VOTERS})")]
    RefuseExhaustiveAudit { n: usize },
    #[error("colluder {0} is not one of the voters")]
    UnknownColluder(VoterId),
    #[error("an audit needs at least one voter")]
    InvalidVoterCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMethod {
    FullEnumeration,
    Factorized,
    /// Nothing to enumerate: the coalition can subtract its way to every vote.
    None,
}

/// Two honest vote vectors with the same sum whose views differ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub votes_a: Vec<u64>,
    pub votes_b: Vec<u64>,
    pub view: Vec<u64>,
    pub count_a: u64,
    pub count_b: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum AuditVerdict {
    Pass,
    /// At most one honest voter: the tally alone reveals the honest votes.
    TallyDetermined,
    Fail(Counterexample),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub colluders: Vec<VoterId>,
    pub method: AuditMethod,
    pub verdict: AuditVerdict,
    /// Mask matrices covered, `(n+1)^(n(n-1))`.
    pub mask_matrices: u64,
    pub vote_vectors: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdict == AuditVerdict::Pass
    }
}

/// Every length-`n` vector over Z_{n+1} summing to zero, in lexicographic
/// order.
pub fn zero_sum_rows(n: usize) -> Vec<Vec<u64>> {
    let q = n as u64 + 1;
    let mut rows = Vec::new();
    let mut row = vec![0u64; n];
    loop {
        if row.iter().sum::<u64>() % q == 0 {
            rows.push(row.clone());
        }
        let Some(pos) = row.iter().rposition(|&x| x + 1 < q) else {
            return rows;
        };
        row[pos] += 1;
        row[pos + 1..].iter_mut().for_each(|x| *x = 0);
    }
}

fn bit_vectors(len: usize) -> Vec<Vec<u64>> {
    (0..1u64 << len)
        .map(|bits| (0..len).map(|i| (bits >> i) & 1).collect())
        .collect()
}

fn validate(n: usize, colluders: &BTreeSet<VoterId>) -> Result<(), AuditError> {
    if n == 0 {
        return Err(AuditError::InvalidVoterCount);
    }
    match colluders.iter().find(|v| v.0 == 0 || v.0 as usize > n) {
        Some(&bad) => Err(AuditError::UnknownColluder(bad)),
        None => Ok(()),
    }
}

fn matrix_count(n: usize) -> u64 {
    (n as u64 + 1).pow((n * (n - 1)) as u32)
}

/// Exact distribution of the coalition's view for fixed votes, as counts over
/// all mask matrices.
///
/// The view lists each colluder's row, then each colluder's received column,
/// then all masked ballots.
pub fn view_distribution(
    n: usize,
    colluders: &BTreeSet<VoterId>,
    votes: &[u64],
) -> Result<ViewCounts, AuditError> {
    validate(n, colluders)?;
    if n > MAX_FULL_ENUMERATION {
        return Err(AuditError::RefuseExhaustiveAudit { n });
    }
    assert_eq!(votes.len(), n, "one vote per voter");
    let q = n as u64 + 1;
    let rows = zero_sum_rows(n);
    let members: Vec<usize> = colluders.iter().map(|v| v.index()).collect();
    let mut dist = BTreeMap::new();
    let mut choice = vec![0usize; n];
    loop {
        let matrix: Vec<&Vec<u64>> = choice.iter().map(|&k| &rows[k]).collect();
        let mut view = Vec::with_capacity(2 * members.len() * n + n);
        for &c in &members {
            view.extend_from_slice(matrix[c]);
        }
        for &c in &members {
            view.extend(matrix.iter().map(|row| row[c]));
        }
        view.extend((0..n).map(|i| (votes[i] + matrix.iter().map(|row| row[i]).sum::<u64>()) % q));
        *dist.entry(view).or_insert(0u64) += 1;

        let Some(pos) = choice.iter().rposition(|&k| k + 1 < rows.len()) else {
            return Ok(dist);
        };
        choice[pos] += 1;
        choice[pos + 1..].iter_mut().for_each(|k| *k = 0);
    }
}

fn first_difference(a: &ViewCounts, b: &ViewCounts) -> Option<(Vec<u64>, u64, u64)> {
    a.keys()
        .chain(b.keys())
        .find(|k| a.get(*k) != b.get(*k))
        .map(|k| {
            (
                k.clone(),
                a.get(k).copied().unwrap_or(0),
                b.get(k).copied().unwrap_or(0),
            )
        })
}

fn tally_determined(n: usize, colluders: &BTreeSet<VoterId>) -> Option<AuditReport> {
    (colluders.len() + 1 >= n).then(|| AuditReport {
        n,
        colluders: colluders.iter().copied().collect(),
        method: AuditMethod::None,
        verdict: AuditVerdict::TallyDetermined,
        mask_matrices: 0,
        vote_vectors: 0,
    })
}

/// Audit by enumerating every mask matrix and every vote vector.
pub fn audit_full(n: usize, colluders: &BTreeSet<VoterId>) -> Result<AuditReport, AuditError> {
    validate(n, colluders)?;
    if n > MAX_FULL_ENUMERATION {
        return Err(AuditError::RefuseExhaustiveAudit { n });
    }
    if let Some(report) = tally_determined(n, colluders) {
        return Ok(report);
    }
    let members: Vec<usize> = colluders.iter().map(|v| v.index()).collect();
    // Views are compared among vote vectors that agree on the colluders'
    // votes and on the honest sum.
    let mut reference: BTreeMap<(Vec<u64>, u64), (Vec<u64>, ViewCounts)> = BTreeMap::new();
    let all = bit_vectors(n);
    for votes in &all {
        let own: Vec<u64> = members.iter().map(|&c| votes[c]).collect();
        let honest_sum = (0..n)
            .filter(|i| !members.contains(i))
            .map(|i| votes[i])
            .sum();
        let dist = view_distribution(n, colluders, votes)?;
        match reference.get(&(own.clone(), honest_sum)) {
            None => {
                reference.insert((own, honest_sum), (votes.clone(), dist));
            }
            Some((first, expected)) => {
                if let Some((view, count_a, count_b)) = first_difference(expected, &dist) {
                    return Ok(AuditReport {
                        n,
                        colluders: colluders.iter().copied().collect(),
                        method: AuditMethod::FullEnumeration,
                        verdict: AuditVerdict::Fail(Counterexample {
                            votes_a: first.clone(),
                            votes_b: votes.clone(),
                            view,
                            count_a,
                            count_b,
                        }),
                        mask_matrices: matrix_count(n),
                        vote_vectors: all.len(),
                    });
                }
            }
        }
    }
    Ok(AuditReport {
        n,
        colluders: colluders.iter().copied().collect(),
        method: AuditMethod::FullEnumeration,
        verdict: AuditVerdict::Pass,
        mask_matrices: matrix_count(n),
        vote_vectors: all.len(),
    })
}

/// Audit by folding honest rows into the joint distribution of
/// (shares to colluders, honest column sums).
///
/// Colluder rows are independent of everything else, and given them each
/// colluder's masked ballot is fixed by the shares it received, so the view is
/// a bijective image of (colluder rows, shares received, `v_h + t_h`) where
/// `t_h` is the sum of honest shares to honest voter `h`.
pub fn audit_factorized(
    n: usize,
    colluders: &BTreeSet<VoterId>,
) -> Result<AuditReport, AuditError> {
    validate(n, colluders)?;
    if n > MAX_EXHAUSTIVE_VOTERS {
        return Err(AuditError::RefuseExhaustiveAudit { n });
    }
    if let Some(report) = tally_determined(n, colluders) {
        return Ok(report);
    }
    let q = n as u64 + 1;
    let members: Vec<usize> = colluders.iter().map(|v| v.index()).collect();
    let honest: Vec<usize> = (0..n).filter(|i| !members.contains(i)).collect();
    let rows = zero_sum_rows(n);

    // Key: shares to colluders (row by row), followed by the honest column sums.
    let mut joint: BTreeMap<(Vec<u64>, Vec<u64>), u64> = BTreeMap::new();
    joint.insert((Vec::new(), vec![0; honest.len()]), 1);
    for _ in &honest {
        let mut next = BTreeMap::new();
        for ((shares, sums), count) in &joint {
            for row in &rows {
                let mut shares = shares.clone();
                shares.extend(members.iter().map(|&c| row[c]));
                let sums: Vec<u64> = sums
                    .iter()
                    .zip(&honest)
                    .map(|(s, &h)| (s + row[h]) % q)
                    .collect();
                *next.entry((shares, sums)).or_insert(0u64) += count;
            }
        }
        joint = next;
    }

    let shifted = |votes: &[u64]| -> ViewCounts {
        joint
            .iter()
            .map(|((shares, sums), &count)| {
                let mut view = shares.clone();
                view.extend(sums.iter().zip(votes).map(|(t, v)| (t + v) % q));
                (view, count)
            })
            .collect()
    };

    let vectors = bit_vectors(honest.len());
    let mut reference: BTreeMap<u64, (Vec<u64>, ViewCounts)> = BTreeMap::new();
    for votes in &vectors {
        let dist = shifted(votes);
        let sum = votes.iter().sum();
        match reference.get(&sum) {
            None => {
                reference.insert(sum, (votes.clone(), dist));
            }
            Some((first, expected)) => {
                if let Some((view, count_a, count_b)) = first_difference(expected, &dist) {
                    let expand = |hv: &[u64]| {
                        let mut full = vec![0; n];
                        honest.iter().zip(hv).for_each(|(&h, &v)| full[h] = v);
                        full
                    };
                    return Ok(AuditReport {
                        n,
                        colluders: colluders.iter().copied().collect(),
                        method: AuditMethod::Factorized,
                        verdict: AuditVerdict::Fail(Counterexample {
                            votes_a: expand(first),
                            votes_b: expand(votes),
                            view,
                            count_a,
                            count_b,
                        }),
                        mask_matrices: matrix_count(n),
                        vote_vectors: vectors.len(),
                    });
                }
            }
        }
    }
    Ok(AuditReport {
        n,
        colluders: colluders.iter().copied().collect(),
        method: AuditMethod::Factorized,
        verdict: AuditVerdict::Pass,
        mask_matrices: matrix_count(n),
        vote_vectors: vectors.len(),
    })
}

/// Exhaustive anonymity audit: full enumeration up to three voters, the
/// factorized form for four, refusal beyond.
pub fn anonymity_audit(n: usize, colluders: &BTreeSet<VoterId>) -> Result<AuditReport, AuditError> {
    if n <= MAX_FULL_ENUMERATION {
        audit_full(n, colluders)
    } else {
        audit_factorized(n, colluders)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u32]) -> BTreeSet<VoterId> {
        ids.iter().map(|&i| VoterId(i)).collect()
    }

    #[test]
    fn zero_sum_row_counts() {
        for n in 1..=5 {
            let rows = zero_sum_rows(n);
            assert_eq!(rows.len() as u64, (n as u64 + 1).pow(n as u32 - 1));
            assert!(rows
                .iter()
                .all(|r| r.iter().sum::<u64>() % (n as u64 + 1) == 0));
        }
    }

    #[test]
    fn three_voters_one_colluder() {
        let colluders = set(&[3]);
        let a = view_distribution(3, &colluders, &[1, 0, 1]).unwrap();
        let b = view_distribution(3, &colluders, &[0, 1, 1]).unwrap();
        assert_eq!(a.values().sum::<u64>(), 4096);
        assert_eq!(a, b);
        let c = view_distribution(3, &colluders, &[1, 1, 1]).unwrap();
        assert_ne!(a, c);
        assert!(audit_full(3, &colluders).unwrap().passed());
    }

    #[test]
    fn two_voters_outside_observer() {
        let report = audit_full(2, &set(&[])).unwrap();
        assert!(report.passed());
        assert_eq!(report.mask_matrices, 9);
        let dist = view_distribution(2, &set(&[]), &[1, 0]).unwrap();
        // Three equally likely masked pairs summing to 1.
        assert_eq!(dist.len(), 3);
        assert!(dist.values().all(|&c| c == 3));
    }

    #[test]
    fn n_minus_one_colluders_is_tally_determined() {
        let report = anonymity_audit(3, &set(&[2, 3])).unwrap();
        assert_eq!(report.verdict, AuditVerdict::TallyDetermined);
        assert_eq!(
            anonymity_audit(1, &set(&[])).unwrap().verdict,
            AuditVerdict::TallyDetermined
        );
    }

    #[test]
    fn factorized_agrees_with_full_enumeration() {
        for n in 2..=3 {
            for bits in 0..1u32 << n {
                let colluders: BTreeSet<VoterId> = (0..n)
                    .filter(|i| bits >> i & 1 == 1)
                    .map(VoterId::from_index)
                    .collect();
                let full = audit_full(n, &colluders).unwrap();
                let fact = audit_factorized(n, &colluders).unwrap();
                assert_eq!(full.verdict, fact.verdict, "n={n} colluders={colluders:?}");
            }
        }
    }

    #[test]
    fn four_voters_pass_up_to_two_colluders() {
        for colluders in [set(&[]), set(&[1]), set(&[4]), set(&[1, 2]), set(&[2, 4])] {
            let report = anonymity_audit(4, &colluders).unwrap();
            assert_eq!(report.method, AuditMethod::Factorized);
            assert!(report.passed(), "{colluders:?}");
        }
    }

    #[test]
    fn refuses_large_or_bad_inputs() {
        assert_eq!(
            anonymity_audit(5, &set(&[])).unwrap_err(),
            AuditError::RefuseExhaustiveAudit { n: 5 }
        );
        assert_eq!(
            anonymity_audit(3, &set(&[4])).unwrap_err(),
            AuditError::UnknownColluder(VoterId(4))
        );
        assert_eq!(
            anonymity_audit(0, &set(&[])).unwrap_err(),
            AuditError::InvalidVoterCount
        );
    }

    #[test]
    fn detects_a_leaky_view() {
        // A view that includes the raw votes must fail the shift comparison.
        let colluders = set(&[]);
        let a = view_distribution(2, &colluders, &[1, 0]).unwrap();
        let b = view_distribution(2, &colluders, &[0, 1]).unwrap();
        let leak = |d: &ViewCounts, votes: [u64; 2]| -> ViewCounts {
            d.iter()
                .map(|(k, &c)| {
                    let mut k = k.clone();
                    k.extend(votes);
                    (k, c)
                })
                .collect()
        };
        assert!(first_difference(&leak(&a, [1, 0]), &leak(&b, [0, 1])).is_some());
    }
}
