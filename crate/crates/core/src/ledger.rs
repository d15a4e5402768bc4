//! Replicated append-only ledger.
//!
//! Every miner keeps its own [`Chain`] of hash-linked [`LedgerBlock`]s. An
//! update reaches the miners as an [`AuthenticatedUpdate`] tagged under the
//! sender/miner pairwise key, every miner checks it against its copy, and the
//! consensus round decides whether it is appended everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::commitment::{Commitment, CommitmentParams, Opening};
use crate::consensus::{
    hsba_round, local_consistency_check, ConsensusDecision, ConsensusError, MinerContext,
    MinerOpinion,
};
use crate::{AuthTag, Digest, MinerId, PartyId, VoterId};

/// Pairwise symmetric keys, one per unordered pair of nodes. Stands in for
/// keys obtained by key distribution between every two nodes.
#[derive(Clone, Debug)]
pub struct AuthKeyTable {
    keys: BTreeMap<(PartyId, PartyId), [u8; 32]>,
}

fn ordered(a: PartyId, b: PartyId) -> (PartyId, PartyId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl AuthKeyTable {
    pub fn generate(seed: u64, parties: &[PartyId]) -> Self {
        let mut keys = BTreeMap::new();
        for (i, &a) in parties.iter().enumerate() {
            for &b in &parties[i + 1..] {
                let pair = ordered(a, b);
                let key = Digest::of_parts(&[
                    b"qvote/pair-key",
                    &seed.to_be_bytes(),
                    pair.0.to_string().as_bytes(),
                    pair.1.to_string().as_bytes(),
                ]);
                keys.insert(pair, key.0);
            }
        }
        AuthKeyTable { keys }
    }

    pub fn has_channel(&self, a: PartyId, b: PartyId) -> bool {
        self.keys.contains_key(&ordered(a, b))
    }

    fn mac(&self, from: PartyId, to: PartyId) -> Option<Hmac<Sha256>> {
        let key = self.keys.get(&ordered(from, to))?;
        let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(from.to_string().as_bytes());
        mac.update(b"->");
        mac.update(to.to_string().as_bytes());
        mac.update(b"\n");
        Some(mac)
    }

    /// Tag over `(from, to, payload)`; `None` when the pair shares no key.
    pub fn tag(&self, from: PartyId, to: PartyId, payload: &[u8]) -> Option<AuthTag> {
        let mut mac = self.mac(from, to)?;
        mac.update(payload);
        Some(AuthTag(mac.finalize().into_bytes().into()))
    }

    pub fn verify(&self, from: PartyId, to: PartyId, payload: &[u8], tag: &AuthTag) -> bool {
        match self.mac(from, to) {
            Some(mut mac) => {
                mac.update(payload);
                mac.verify_slice(&tag.0).is_ok()
            }
            None => false,
        }
    }
}

/// The fixed set of parties allowed to cast ballots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Roster {
    voters: BTreeSet<VoterId>,
}

impl Roster {
    pub fn new<I: IntoIterator<Item = VoterId>>(voters: I) -> Self {
        Roster {
            voters: voters.into_iter().collect(),
        }
    }

    /// `V1..Vn`.
    pub fn first(n: usize) -> Self {
        Roster::new((0..n).map(VoterId::from_index))
    }

    pub fn contains(&self, party: PartyId) -> bool {
        matches!(party, PartyId::Voter(v) if self.voters.contains(&v))
    }

    pub fn len(&self) -> usize {
        self.voters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voters.is_empty()
    }

    pub fn voters(&self) -> impl Iterator<Item = VoterId> + '_ {
        self.voters.iter().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    BallotCommitment,
    BallotOpening,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum UpdatePayload {
    BallotCommitment(Commitment),
    BallotOpening(Opening),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub voter: VoterId,
    #[serde(flatten)]
    pub payload: UpdatePayload,
}

impl UpdateRecord {
    pub fn commitment(voter: VoterId, commitment: Commitment) -> Self {
        UpdateRecord {
            voter,
            payload: UpdatePayload::BallotCommitment(commitment),
        }
    }

    pub fn opening(voter: VoterId, opening: Opening) -> Self {
        UpdateRecord {
            voter,
            payload: UpdatePayload::BallotOpening(opening),
        }
    }

    pub fn kind(&self) -> UpdateKind {
        match self.payload {
            UpdatePayload::BallotCommitment(_) => UpdateKind::BallotCommitment,
            UpdatePayload::BallotOpening(_) => UpdateKind::BallotOpening,
        }
    }
}

/// Wire form of an update. `slot` numbers a sender's submissions, so two
/// miners holding different bytes for the same slot reveal an equivocating
/// sender.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub slot: u32,
    pub record: UpdateRecord,
}

impl Submission {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("submission serializes")
    }
}

/// An update as received by one miner, together with the channel tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthenticatedUpdate {
    pub sender: PartyId,
    pub receiver: MinerId,
    pub payload: Vec<u8>,
    pub tag: AuthTag,
}

impl AuthenticatedUpdate {
    pub fn digest(&self) -> Digest {
        Digest::of(&self.payload)
    }

    pub fn decode(&self) -> Option<Submission> {
        serde_json::from_slice(&self.payload).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotEligible,
    AuthFailure,
    Malformed,
    WrongPhase,
    DuplicateBallot,
    MissingCommitment,
    CheatDetected,
    /// Honest miners received conflicting versions with no majority.
    NoAgreement,
    /// Fewer than half of all miners voted to admit.
    InsufficientVotes,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("reason serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubmitOutcome {
    /// `height` is `None` while the record waits in a batch.
    Accepted {
        height: Option<u64>,
    },
    Rejected {
        reason: RejectReason,
    },
}

impl SubmitOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, SubmitOutcome::Accepted { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    height: u64,
    prev_digest: Digest,
    records: Vec<UpdateRecord>,
    decision: Vec<ConsensusDecision>,
}

impl LedgerBlock {
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn prev_digest(&self) -> Digest {
        self.prev_digest
    }

    pub fn records(&self) -> &[UpdateRecord] {
        &self.records
    }

    /// One decision per admitted record (several when blocks are batched).
    pub fn decision(&self) -> &[ConsensusDecision] {
        &self.decision
    }

    /// Canonical single-line JSON, fields in declaration order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("block serializes")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(self.to_json_line().as_bytes())
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ChainError {
    #[error("chain is empty")]
    Empty,
    #[error("block {index} has height {found}")]
    BadHeight { index: usize, found: u64 },
    #[error("block {height} does not link to its predecessor")]
    BrokenLink { height: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    blocks: Vec<LedgerBlock>,
}

impl Default for Chain {
    fn default() -> Self {
        Chain::new()
    }
}

impl Chain {
    /// A chain holding only the genesis block.
    pub fn new() -> Self {
        Chain {
            blocks: vec![LedgerBlock {
                height: 0,
                prev_digest: Digest::ZERO,
                records: Vec::new(),
                decision: Vec::new(),
            }],
        }
    }

    pub fn from_blocks(blocks: Vec<LedgerBlock>) -> Result<Self, ChainError> {
        verify_blocks(&blocks)?;
        Ok(Chain { blocks })
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &LedgerBlock {
        self.blocks.last().expect("chain always has genesis")
    }

    pub fn append(
        &mut self,
        records: Vec<UpdateRecord>,
        decision: Vec<ConsensusDecision>,
    ) -> &LedgerBlock {
        let block = LedgerBlock {
            height: self.head().height + 1,
            prev_digest: self.head().digest(),
            records,
            decision,
        };
        self.blocks.push(block);
        self.head()
    }

    pub fn to_jsonl(&self) -> String {
        blocks_to_jsonl(&self.blocks)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ChainError> {
        let blocks = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| ChainError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<LedgerBlock>, _>>()?;
        Chain::from_blocks(blocks)
    }
}

pub fn blocks_to_jsonl(blocks: &[LedgerBlock]) -> String {
    blocks.iter().map(|b| b.to_json_line() + "\n").collect()
}

/// Full pass over a block list: consecutive heights from 0 and every
/// `prev_digest` equal to the digest of the block before it.
pub fn verify_blocks(blocks: &[LedgerBlock]) -> Result<(), ChainError> {
    if blocks.is_empty() {
        return Err(ChainError::Empty);
    }
    let mut prev = Digest::ZERO;
    for (index, block) in blocks.iter().enumerate() {
        if block.height != index as u64 {
            return Err(ChainError::BadHeight {
                index,
                found: block.height,
            });
        }
        if block.prev_digest != prev {
            return Err(ChainError::BrokenLink {
                height: block.height,
            });
        }
        prev = block.digest();
    }
    Ok(())
}

/// A chain plus records admitted but not yet sealed into a block.
#[derive(Clone, Copy)]
pub struct LedgerView<'a> {
    pub chain: &'a Chain,
    pub pending: &'a [UpdateRecord],
}

impl<'a> LedgerView<'a> {
    pub fn records(&self) -> impl Iterator<Item = &'a UpdateRecord> + 'a {
        let chain: &'a Chain = self.chain;
        let pending: &'a [UpdateRecord] = self.pending;
        chain
            .blocks
            .iter()
            .flat_map(|b| b.records.iter())
            .chain(pending.iter())
    }

    pub fn commitment_of(&self, voter: VoterId) -> Option<&'a Commitment> {
        self.records().find_map(|r| match &r.payload {
            UpdatePayload::BallotCommitment(c) if r.voter == voter => Some(c),
            _ => None,
        })
    }

    pub fn has_opening(&self, voter: VoterId) -> bool {
        self.records()
            .any(|r| r.voter == voter && r.kind() == UpdateKind::BallotOpening)
    }

    pub fn committed_voters(&self) -> BTreeSet<VoterId> {
        self.records()
            .filter(|r| r.kind() == UpdateKind::BallotCommitment)
            .map(|r| r.voter)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionStatus {
    pub voter: VoterId,
    pub committed: bool,
    pub opened: bool,
    pub commitment_height: Option<u64>,
    pub opening_height: Option<u64>,
}

/// Where, if anywhere, a voter's commitment and opening sit on the chain.
pub fn verify_inclusion(voter: VoterId, blocks: &[LedgerBlock]) -> InclusionStatus {
    let height_of = |kind: UpdateKind| {
        blocks.iter().find_map(|b| {
            b.records
                .iter()
                .any(|r| r.voter == voter && r.kind() == kind)
                .then_some(b.height)
        })
    };
    let commitment_height = height_of(UpdateKind::BallotCommitment);
    let opening_height = height_of(UpdateKind::BallotOpening);
    InclusionStatus {
        voter,
        committed: commitment_height.is_some(),
        opened: opening_height.is_some(),
        commitment_height,
        opening_height,
    }
}

/// Result of one consensus round over one submission slot.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub round: u64,
    pub sender: PartyId,
    pub record: Option<UpdateRecord>,
    pub decision: ConsensusDecision,
    pub opinions: Vec<MinerOpinion>,
    pub outcome: SubmitOutcome,
    /// Block appended by this round, when blocks are not batched.
    pub block: Option<LedgerBlock>,
}

/// All miners' chain copies plus the shared context they judge updates in.
#[derive(Clone, Debug)]
pub struct Blockchain {
    roster: Roster,
    keys: AuthKeyTable,
    params: CommitmentParams,
    miners: Vec<MinerId>,
    honest: BTreeSet<MinerId>,
    copies: BTreeMap<MinerId, Chain>,
    batch: bool,
    staged: Vec<UpdateRecord>,
    staged_decisions: Vec<ConsensusDecision>,
    rounds: u64,
}

impl Blockchain {
    pub fn new(
        roster: Roster,
        keys: AuthKeyTable,
        params: CommitmentParams,
        miner_count: usize,
        dishonest: &BTreeSet<MinerId>,
        batch: bool,
    ) -> Result<Self, ConsensusError> {
        if miner_count == 0 {
            return Err(ConsensusError::NoMiners);
        }
        let miners: Vec<MinerId> = (0..miner_count).map(MinerId::from_index).collect();
        let honest: BTreeSet<MinerId> = miners
            .iter()
            .copied()
            .filter(|m| !dishonest.contains(m))
            .collect();
        if honest.is_empty() {
            return Err(ConsensusError::NoHonestMiners);
        }
        let copies = miners.iter().map(|&m| (m, Chain::new())).collect();
        Ok(Blockchain {
            roster,
            keys,
            params,
            miners,
            honest,
            copies,
            batch,
            staged: Vec::new(),
            staged_decisions: Vec::new(),
            rounds: 0,
        })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn keys(&self) -> &AuthKeyTable {
        &self.keys
    }

    pub fn params(&self) -> &CommitmentParams {
        &self.params
    }

    pub fn miners(&self) -> &[MinerId] {
        &self.miners
    }

    pub fn honest(&self) -> &BTreeSet<MinerId> {
        &self.honest
    }

    pub fn replica(&self, miner: MinerId) -> Option<&Chain> {
        self.copies.get(&miner)
    }

    fn reference_miner(&self) -> MinerId {
        *self
            .honest
            .iter()
            .next()
            .expect("at least one honest miner")
    }

    pub fn view(&self, miner: MinerId) -> LedgerView<'_> {
        LedgerView {
            chain: &self.copies[&miner],
            pending: &self.staged,
        }
    }

    /// Any party may read the chain; every copy is identical, so an honest
    /// miner's copy is handed out.
    pub fn read_chain(&self, observer: PartyId) -> Vec<LedgerBlock> {
        log::trace!("{observer} reads the chain");
        self.copies[&self.reference_miner()].blocks.clone()
    }

    /// Whether all honest copies are byte-identical.
    pub fn replicas_agree(&self) -> bool {
        let reference = self.copies[&self.reference_miner()].to_jsonl();
        self.honest
            .iter()
            .all(|m| self.copies[m].to_jsonl() == reference)
    }

    pub fn has_staged(&self) -> bool {
        !self.staged.is_empty()
    }

    fn append_everywhere(
        &mut self,
        records: Vec<UpdateRecord>,
        decision: Vec<ConsensusDecision>,
    ) -> LedgerBlock {
        let mut appended = None;
        for chain in self.copies.values_mut() {
            appended = Some(chain.append(records.clone(), decision.clone()).clone());
        }
        appended.expect("at least one miner")
    }

    /// Seals batched records into one block.
    pub fn seal_staged(&mut self) -> Option<LedgerBlock> {
        if self.staged.is_empty() {
            return None;
        }
        let records = std::mem::take(&mut self.staged);
        let decisions = std::mem::take(&mut self.staged_decisions);
        Some(self.append_everywhere(records, decisions))
    }

    /// One agreement round over the versions of a single submission slot
    /// that reached the miners.
    pub fn run_round(
        &mut self,
        sender: PartyId,
        deliveries: &BTreeMap<MinerId, AuthenticatedUpdate>,
    ) -> Result<RoundOutcome, ConsensusError> {
        let round = self.rounds;
        self.rounds += 1;
        let versions: BTreeMap<MinerId, Option<Digest>> = self
            .miners
            .iter()
            .map(|m| (*m, deliveries.get(m).map(AuthenticatedUpdate::digest)))
            .collect();
        let opinions: Vec<MinerOpinion> = deliveries
            .iter()
            .filter(|(m, _)| versions.contains_key(m))
            .map(|(&miner, update)| {
                let ctx = MinerContext {
                    miner,
                    roster: &self.roster,
                    keys: &self.keys,
                    params: &self.params,
                };
                let opinion = local_consistency_check(&ctx, self.view(miner), update);
                if self.honest.contains(&miner) {
                    opinion
                } else {
                    opinion.inverted()
                }
            })
            .collect();
        let decision = hsba_round(&versions, &opinions, &self.honest)?;

        let agreed = decision.agreed_update.and_then(|digest| {
            deliveries
                .values()
                .find(|u| u.digest() == digest)
                .and_then(AuthenticatedUpdate::decode)
                .map(|s| s.record)
        });

        let (outcome, block) = match (&agreed, decision.admitted) {
            (Some(record), true) => {
                if self.batch {
                    self.staged.push(record.clone());
                    self.staged_decisions.push(decision.clone());
                    (SubmitOutcome::Accepted { height: None }, None)
                } else {
                    let block =
                        self.append_everywhere(vec![record.clone()], vec![decision.clone()]);
                    (
                        SubmitOutcome::Accepted {
                            height: Some(block.height),
                        },
                        Some(block),
                    )
                }
            }
            _ => (
                SubmitOutcome::Rejected {
                    reason: self.rejection_reason(&decision, &opinions),
                },
                None,
            ),
        };
        Ok(RoundOutcome {
            round,
            sender,
            record: agreed,
            decision,
            opinions,
            outcome,
            block,
        })
    }

    fn rejection_reason(
        &self,
        decision: &ConsensusDecision,
        opinions: &[MinerOpinion],
    ) -> RejectReason {
        let Some(agreed) = decision.agreed_update else {
            return RejectReason::NoAgreement;
        };
        let mut counts: BTreeMap<RejectReason, usize> = BTreeMap::new();
        for o in opinions {
            if self.honest.contains(&o.miner) && o.update_digest == agreed {
                if let Some(reason) = o.reason {
                    *counts.entry(reason).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .max_by_key(|&(reason, count)| (count, std::cmp::Reverse(reason)))
            .map(|(reason, _)| reason)
            .unwrap_or(RejectReason::InsufficientVotes)
    }

    /// Submits an update the way an honest sender would: the same bytes to
    /// every miner, each copy tagged with the sender/miner key. A sender
    /// without keys produces an all-zero tag.
    pub fn submit_update(
        &mut self,
        sender: PartyId,
        slot: u32,
        record: UpdateRecord,
    ) -> Result<RoundOutcome, ConsensusError> {
        let payload = Submission { slot, record }.encode();
        let deliveries = self
            .miners
            .iter()
            .map(|&m| {
                let tag = self
                    .keys
                    .tag(sender, m.into(), &payload)
                    .unwrap_or_default();
                (
                    m,
                    AuthenticatedUpdate {
                        sender,
                        receiver: m,
                        payload: payload.clone(),
                        tag,
                    },
                )
            })
            .collect();
        self.run_round(sender, &deliveries)
    }
}
