//! The two-phase election: masked-ballot commitment, then tally by opening.
//!
//! [`run_election`] drives voter and miner state machines over the network
//! simulator and returns an [`ElectionReport`] plus the trace. [`run_attack`]
//! runs the same election with one adversary role and judges the outcome;
//! [`anonymity_audit`] computes exact colluder-view distributions.

mod anonymity;
mod attack;
mod election;
mod report;

use std::collections::BTreeMap;

use thiserror::Error;

pub use anonymity::{
    anonymity_audit, audit_factorized, audit_full, view_distribution, zero_sum_rows, AuditError,
    AuditMethod, AuditReport, AuditVerdict, Counterexample, ViewCounts, MAX_EXHAUSTIVE_VOTERS,
};
pub use attack::{
    attack_suite, early_open_battery, run_attack, AttackOutcome, AttackType, FairnessStats,
    FAIRNESS_TOLERANCE, FAIRNESS_TRIALS,
};
pub use election::{run_election, ElectionOutcome, VoterPhase, VoterState};
pub use report::{
    AbortInfo, AbortReason, CheatEvent, CheatKind, DeliveryFailureRecord, EarlyOpenRecord,
    ElectionReport, Property, RoundSummary, SecurityVerdict, VerdictStatus,
};

use crate::commitment::{verify_opening, OpenResult};
use crate::ledger::{verify_blocks, LedgerBlock, UpdatePayload};
use crate::masking::{tally, MaskedBallot, Modulus};
use crate::VoterId;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum TallyError {
    #[error("chain does not verify: {0}")]
    BrokenChain(String),
    #[error("chain holds no ballots")]
    NoBallots,
    #[error("incomplete chain: no opening for {}", .missing.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    IncompleteChain { missing: Vec<VoterId> },
    #[error("opening for {0} does not match its commitment")]
    InvalidOpening(VoterId),
    #[error("{0}")]
    Masking(String),
}

/// Recomputes the result from public chain data alone: every committed voter
/// must have an opening that checks out against its commitment, and the sum
/// of opened masked ballots mod `n + 1` is the agree count.
pub fn self_tally(blocks: &[LedgerBlock]) -> Result<u64, TallyError> {
    verify_blocks(blocks).map_err(|e| TallyError::BrokenChain(e.to_string()))?;
    let mut commitments = BTreeMap::new();
    let mut openings = BTreeMap::new();
    for record in blocks.iter().flat_map(|b| b.records()) {
        match &record.payload {
            UpdatePayload::BallotCommitment(c) => {
                commitments.entry(record.voter).or_insert(c);
            }
            UpdatePayload::BallotOpening(o) => {
                openings.entry(record.voter).or_insert(o);
            }
        }
    }
    if commitments.is_empty() {
        return Err(TallyError::NoBallots);
    }
    let missing: Vec<VoterId> = commitments
        .keys()
        .filter(|v| !openings.contains_key(*v))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(TallyError::IncompleteChain { missing });
    }
    let modulus =
        Modulus::new(commitments.len()).map_err(|e| TallyError::Masking(e.to_string()))?;
    let ballots = commitments
        .iter()
        .map(
            |(&voter, commitment)| match verify_opening(commitment, openings[&voter]) {
                OpenResult::Opened(value) => Ok(MaskedBallot { voter, value }),
                OpenResult::CheatDetected { .. } => Err(TallyError::InvalidOpening(voter)),
            },
        )
        .collect::<Result<Vec<_>, _>>()?;
    tally(&ballots, modulus).map_err(|e| TallyError::Masking(e.to_string()))
}
