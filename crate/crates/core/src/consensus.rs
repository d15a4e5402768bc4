//! Per-update agreement among miners.
//!
//! The agreement protocol itself is modeled as one synchronous echo round:
//! every miner reports the digest of the version it received and its local
//! admissibility verdict. Honest miners settle on the most common version
//! they hold, and the update is admitted when at least half of *all* miners
//! vote to admit that version.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{verify_opening, CommitmentParams, OpenResult};
use crate::ledger::{
    AuthKeyTable, AuthenticatedUpdate, LedgerView, RejectReason, Roster, UpdatePayload,
};
use crate::{Digest, MinerId, PartyId};

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ConsensusError {
    #[error("consensus needs at least one miner")]
    NoMiners,
    #[error("consensus needs at least one honest miner")]
    NoHonestMiners,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerOpinion {
    pub miner: MinerId,
    pub update_digest: Digest,
    pub admissible: bool,
    /// Why the update was found inadmissible, when it was.
    pub reason: Option<RejectReason>,
}

impl MinerOpinion {
    /// The opposite verdict, as cast by a miner that lies about its check.
    pub fn inverted(self) -> Self {
        MinerOpinion {
            admissible: !self.admissible,
            ..self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusDecision {
    pub agreed_update: Option<Digest>,
    pub admitted: bool,
    pub votes_for: usize,
    pub votes_total: usize,
}

/// Smallest vote count that is at least half of `miners`.
pub fn admission_threshold(miners: usize) -> usize {
    miners.div_ceil(2)
}

/// One agreement round.
///
/// `versions` lists every miner, with the digest of the version it received
/// (`None` if nothing arrived). Opinions from miners outside `versions` and
/// repeated opinions from the same miner are ignored.
pub fn hsba_round(
    versions: &BTreeMap<MinerId, Option<Digest>>,
    opinions: &[MinerOpinion],
    honest: &BTreeSet<MinerId>,
) -> Result<ConsensusDecision, ConsensusError> {
    if versions.is_empty() {
        return Err(ConsensusError::NoMiners);
    }
    if !honest.iter().any(|m| versions.contains_key(m)) {
        return Err(ConsensusError::NoHonestMiners);
    }
    let votes_total = versions.len();

    let mut tally: BTreeMap<Digest, usize> = BTreeMap::new();
    for (miner, version) in versions {
        if let (true, Some(digest)) = (honest.contains(miner), version) {
            *tally.entry(*digest).or_default() += 1;
        }
    }
    let best = tally.values().copied().max().unwrap_or(0);
    let mut leaders = tally.iter().filter(|(_, &c)| c == best).map(|(d, _)| *d);
    let agreed_update = match (leaders.next(), leaders.next()) {
        (Some(d), None) => Some(d),
        _ => None,
    };

    let votes_for = agreed_update.map_or(0, |agreed| {
        let mut voted = BTreeSet::new();
        opinions
            .iter()
            .filter(|o| versions.contains_key(&o.miner) && voted.insert(o.miner))
            .filter(|o| o.admissible && o.update_digest == agreed)
            .count()
    });
    let admitted = agreed_update.is_some() && votes_for >= admission_threshold(votes_total);
    Ok(ConsensusDecision {
        agreed_update,
        admitted,
        votes_for,
        votes_total,
    })
}

/// What a miner needs besides its chain copy to judge an update.
#[derive(Clone, Copy)]
pub struct MinerContext<'a> {
    pub miner: MinerId,
    pub roster: &'a Roster,
    pub keys: &'a AuthKeyTable,
    pub params: &'a CommitmentParams,
}

/// A miner's verdict on one update, a pure function of its ledger view and
/// the update.
///
/// Admissible iff the sender is on the roster, the tag verifies, the record
/// is well formed and speaks for its sender, the voter has no earlier record
/// of the same kind, and the phase rule holds: commitments until every
/// rostered voter has committed, openings afterwards, each opening passing
/// the check against the on-chain commitment.
pub fn local_consistency_check(
    ctx: &MinerContext<'_>,
    view: LedgerView<'_>,
    update: &AuthenticatedUpdate,
) -> MinerOpinion {
    let verdict = check(ctx, view, update);
    MinerOpinion {
        miner: ctx.miner,
        update_digest: update.digest(),
        admissible: verdict.is_ok(),
        reason: verdict.err(),
    }
}

fn check(
    ctx: &MinerContext<'_>,
    view: LedgerView<'_>,
    update: &AuthenticatedUpdate,
) -> Result<(), RejectReason> {
    if !ctx.roster.contains(update.sender) {
        return Err(RejectReason::NotEligible);
    }
    if update.receiver != ctx.miner
        || !ctx.keys.verify(
            update.sender,
            ctx.miner.into(),
            &update.payload,
            &update.tag,
        )
    {
        return Err(RejectReason::AuthFailure);
    }
    let submission = update.decode().ok_or(RejectReason::Malformed)?;
    let record = submission.record;
    if PartyId::Voter(record.voter) != update.sender {
        return Err(RejectReason::AuthFailure);
    }
    let commit_phase = view.committed_voters().len() < ctx.roster.len();

    match &record.payload {
        UpdatePayload::BallotCommitment(commitment) => {
            if view.commitment_of(record.voter).is_some() {
                return Err(RejectReason::DuplicateBallot);
            }
            if !commit_phase {
                return Err(RejectReason::WrongPhase);
            }
            if commitment.committer() != update.sender
                || commitment.scheme() != ctx.params.mode()
                || commitment.evidence().len() != ctx.params.bit_width() as usize
            {
                return Err(RejectReason::Malformed);
            }
            Ok(())
        }
        UpdatePayload::BallotOpening(opening) => {
            if commit_phase {
                return Err(RejectReason::WrongPhase);
            }
            if view.has_opening(record.voter) {
                return Err(RejectReason::DuplicateBallot);
            }
            let commitment = view
                .commitment_of(record.voter)
                .ok_or(RejectReason::MissingCommitment)?;
            if opening.value() >= ctx.params.bound() {
                return Err(RejectReason::Malformed);
            }
            match verify_opening(commitment, opening) {
                OpenResult::Opened(_) => Ok(()),
                OpenResult::CheatDetected { .. } => Err(RejectReason::CheatDetected),
            }
        }
    }
}
