use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::{
    AbortInfo, AbortReason, CheatEvent, CheatKind, DeliveryFailureRecord, EarlyOpenRecord,
    ElectionReport, RoundSummary,
};
use super::self_tally;
use crate::commitment::{
    adversarial_peek, adversarial_rebind, commit, verify_opening, Commitment, CommitmentParams,
    OpenResult, Opening,
};
use crate::config::{AdversarySpec, ConfigError, ScenarioConfig};
use crate::consensus::admission_threshold;
use crate::ledger::{
    verify_inclusion, AuthKeyTable, AuthenticatedUpdate, Blockchain, LedgerBlock, RejectReason,
    Roster, Submission, UpdatePayload, UpdateRecord,
};
use crate::masking::{gen_mask_row, mask_ballot, MaskColumn, MaskRow, MaskedBallot, Modulus, Vote};
use crate::netsim::{
    run_until_quiescent, ChannelKind, Inbound, Network, Observation, SimError, TamperRule, World,
};
use crate::rng::{derive_rng, SimRng};
use crate::trace::TraceLog;
use crate::{MinerId, PartyId, VoterId};

const OPEN_TIMER: &str = "open";
const AWAIT_COMMITMENTS: &str = "await_commitments";
const AWAIT_OPENINGS: &str = "await_openings";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoterPhase {
    Init,
    SharesSent,
    ColumnComplete,
    Committed,
    Opened,
    Done,
}

#[derive(Clone, Debug)]
pub struct VoterState {
    pub id: VoterId,
    pub vote: Vote,
    pub my_row: Option<MaskRow>,
    shares: Vec<Option<u64>>,
    pub masked: Option<MaskedBallot>,
    pub commitment: Option<Commitment>,
    pub opening: Option<Opening>,
    pub phase: VoterPhase,
}

impl VoterState {
    fn new(id: VoterId, vote: Vote, n: usize) -> Self {
        VoterState {
            id,
            vote,
            my_row: None,
            shares: vec![None; n],
            masked: None,
            commitment: None,
            opening: None,
            phase: VoterPhase::Init,
        }
    }

    fn advance(&mut self, next: VoterPhase) {
        debug_assert!(next >= self.phase, "{} moved back to {next:?}", self.id);
        self.phase = next;
    }

    /// The column once every share has arrived.
    pub fn received_column(&self) -> Option<MaskColumn> {
        let shares = self.shares.iter().copied().collect::<Option<Vec<u64>>>()?;
        Some(MaskColumn::new(self.id, shares))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShareMessage {
    share: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Commit,
    Open,
    Done,
    Aborted,
}

struct PendingSlot {
    first_seen: u64,
    deliveries: BTreeMap<MinerId, AuthenticatedUpdate>,
}

struct VoterNode {
    state: VoterState,
    rng: SimRng,
    next_slot: u32,
}

struct Election {
    config: ScenarioConfig,
    modulus: Modulus,
    params: CommitmentParams,
    voters: Vec<VoterNode>,
    chain: Blockchain,
    pending: BTreeMap<(PartyId, u32), PendingSlot>,
    arrivals: u64,
    stage: Stage,
    rounds: Vec<RoundSummary>,
    cheat_events: Vec<CheatEvent>,
    cheaters: BTreeSet<VoterId>,
    early_open: Option<EarlyOpenRecord>,
    tally: Option<u64>,
    abort: Option<AbortInfo>,
    adversary_rng: SimRng,
}

/// Everything a run produces.
pub struct ElectionOutcome {
    pub report: ElectionReport,
    pub trace: TraceLog,
    pub blockchain: Blockchain,
    /// What a global eavesdropper saw.
    pub observations: Vec<Observation>,
    pub votes: Vec<Vote>,
    pub voters: Vec<VoterState>,
}

impl ElectionOutcome {
    pub fn plaintext_tally(&self) -> u64 {
        self.votes.iter().map(|v| v.value()).sum()
    }
}

const OUTSIDER: PartyId = PartyId::Outsider(1);

impl Election {
    fn n(&self) -> usize {
        self.modulus.voters()
    }

    fn targets(&self, voter: VoterId, role: fn(&AdversarySpec) -> Option<VoterId>) -> bool {
        self.config.adversary.as_ref().and_then(role) == Some(voter)
    }

    fn record_block(&self, net: &mut Network, block: &LedgerBlock) -> usize {
        net.record(
            "block",
            None,
            None,
            json!({ "block": block, "block_digest": block.digest() }),
        )
    }

    fn broadcast(&self, net: &mut Network, sender: PartyId, payload: &[u8]) {
        for &miner in self.chain.miners() {
            net.send(
                sender,
                miner.into(),
                ChannelKind::ClassicalAuth,
                payload.to_vec(),
            )
            .expect("every node shares a key with every miner");
        }
    }

    fn submit(&mut self, net: &mut Network, idx: usize, record: UpdateRecord) {
        let node = &mut self.voters[idx];
        let slot = node.next_slot;
        node.next_slot += 1;
        let sender = node.state.id.into();
        let payload = Submission { slot, record }.encode();
        self.broadcast(net, sender, &payload);
    }

    fn start(&mut self, net: &mut Network) {
        net.record(
            "start",
            None,
            None,
            json!({
                "n_voters": self.n(),
                "m_miners": self.config.m_miners,
                "seed": self.config.seed,
                "commitment": self.config.commitment,
                "batch_blocks": self.config.batch_blocks,
            }),
        );
        let genesis = self.chain.read_chain(OUTSIDER)[0].clone();
        self.record_block(net, &genesis);

        if let Some(AdversarySpec::Outsider { attempts }) = self.config.adversary {
            let claimed = VoterId::from_index(self.n());
            for slot in 0..attempts {
                let value = rand::Rng::gen_range(&mut self.adversary_rng, 0..self.params.bound());
                let (c, _) = commit(OUTSIDER, value, &self.params, &mut self.adversary_rng)
                    .expect("value drawn in range");
                let payload = Submission {
                    slot,
                    record: UpdateRecord::commitment(claimed, c),
                }
                .encode();
                self.broadcast(net, OUTSIDER, &payload);
            }
        }

        let n = self.n();
        for idx in 0..n {
            let node = &mut self.voters[idx];
            let row = gen_mask_row(node.state.id, n, &mut node.rng).expect("n >= 1");
            let me = node.state.id;
            node.state.shares[idx] = Some(row.share_for(me));
            for j in (0..n).filter(|&j| j != idx) {
                let payload = serde_json::to_vec(&ShareMessage {
                    share: row.share_for(VoterId::from_index(j)),
                })
                .expect("share serializes");
                net.send(
                    me.into(),
                    VoterId::from_index(j).into(),
                    ChannelKind::QuantumSecure,
                    payload,
                )
                .expect("voters share keys pairwise");
            }
            node.state.my_row = Some(row);
            node.state.advance(VoterPhase::SharesSent);
        }
        for idx in 0..n {
            self.maybe_commit(net, idx);
        }
    }

    fn maybe_commit(&mut self, net: &mut Network, idx: usize) {
        let node = &mut self.voters[idx];
        if node.state.phase != VoterPhase::SharesSent {
            return;
        }
        let Some(column) = node.state.received_column() else {
            return;
        };
        let masked = mask_ballot(node.state.vote, &column, self.modulus)
            .expect("shares arrive reduced and complete");
        node.state.masked = Some(masked);
        node.state.advance(VoterPhase::ColumnComplete);
        let (commitment, opening) = commit(
            node.state.id.into(),
            masked.value,
            &self.params,
            &mut node.rng,
        )
        .expect("masked ballot is a residue");
        node.state.commitment = Some(commitment.clone());
        node.state.opening = Some(opening);
        let id = node.state.id;
        self.submit(net, idx, UpdateRecord::commitment(id, commitment));
        self.voters[idx].state.advance(VoterPhase::Committed);

        if self.targets(id, |a| match a {
            AdversarySpec::DuplicateVoter { voter } => Some(*voter),
            _ => None,
        }) {
            let other = self.modulus.reduce(masked.value + 1);
            let node = &mut self.voters[idx];
            let (second, _) = commit(id.into(), other, &self.params, &mut node.rng)
                .expect("reduced value is a residue");
            self.submit(net, idx, UpdateRecord::commitment(id, second));
        }
    }

    fn open_ballot(&mut self, net: &mut Network, idx: usize) {
        let id = self.voters[idx].state.id;
        if self.voters[idx].state.phase != VoterPhase::Committed {
            return;
        }
        if self.targets(id, |a| match a {
            AdversarySpec::WithholdOpening { voter } => Some(*voter),
            _ => None,
        }) {
            return;
        }
        let node = &mut self.voters[idx];
        let commitment = node.state.commitment.clone().expect("committed voter");
        let honest = node.state.opening.clone().expect("committed voter");
        let rebinds = self
            .config
            .adversary
            .as_ref()
            .is_some_and(|a| matches!(a, AdversarySpec::Rebinder { voter } if *voter == id));
        let opening = if rebinds {
            let new_value = self.modulus.reduce(honest.value() + 1);
            let (forged, events) =
                adversarial_rebind(&commitment, &honest, new_value, &self.params, &mut node.rng);
            net.record(
                "rebind",
                Some(id.into()),
                None,
                json!({
                    "new_value": new_value,
                    "flipped_bits": events.touched,
                    "disturbed_bits": events.detected,
                }),
            );
            forged
        } else {
            honest
        };
        self.submit(net, idx, UpdateRecord::opening(id, opening));
        self.voters[idx].state.advance(VoterPhase::Opened);
    }

    fn sweep(&mut self, net: &mut Network) {
        if self.pending.is_empty() {
            return;
        }
        let mut slots: Vec<((PartyId, u32), PendingSlot)> =
            std::mem::take(&mut self.pending).into_iter().collect();
        slots.sort_by_key(|(_, p)| p.first_seen);

        for ((sender, slot), pending) in slots {
            let outcome = self
                .chain
                .run_round(sender, &pending.deliveries)
                .expect("miner set validated at setup");
            let described = outcome.record.clone().or_else(|| {
                pending
                    .deliveries
                    .values()
                    .find_map(AuthenticatedUpdate::decode)
                    .map(|s| s.record)
            });
            let reason = match outcome.outcome {
                crate::ledger::SubmitOutcome::Rejected { reason } => Some(reason),
                crate::ledger::SubmitOutcome::Accepted { .. } => None,
            };
            let opinions: Vec<_> = outcome
                .opinions
                .iter()
                .map(
                    |o| json!({ "miner": o.miner, "admissible": o.admissible, "reason": o.reason }),
                )
                .collect();
            let line = net.record(
                "consensus",
                Some(sender),
                None,
                json!({
                    "round": outcome.round,
                    "slot": slot,
                    "voter": described.as_ref().map(|r| r.voter),
                    "kind": described.as_ref().map(|r| r.kind()),
                    "agreed_update": outcome.decision.agreed_update,
                    "votes_for": outcome.decision.votes_for,
                    "votes_total": outcome.decision.votes_total,
                    "admitted": outcome.decision.admitted,
                    "reason": reason,
                    "opinions": opinions,
                }),
            );
            self.rounds.push(RoundSummary {
                round: outcome.round,
                sender,
                slot: Some(slot),
                voter: described.as_ref().map(|r| r.voter),
                kind: described.as_ref().map(|r| r.kind()),
                agreed_update: outcome.decision.agreed_update,
                votes_for: outcome.decision.votes_for,
                votes_total: outcome.decision.votes_total,
                admitted: outcome.decision.admitted,
                reason,
                trace_line: line,
            });
            if let Some(block) = &outcome.block {
                self.record_block(net, block);
            }
            if let (Some(RejectReason::CheatDetected), Some(record)) = (reason, &described) {
                self.flag_rebind(sender, record, line);
            }
        }
        if let Some(block) = self.chain.seal_staged() {
            self.record_block(net, &block);
        }
    }

    fn flag_rebind(&mut self, sender: PartyId, record: &UpdateRecord, line: usize) {
        let UpdatePayload::BallotOpening(opening) = &record.payload else {
            return;
        };
        let reference = *self.chain.honest().iter().next().expect("honest miner");
        let bits = match self
            .chain
            .view(reference)
            .commitment_of(record.voter)
            .map(|c| verify_opening(c, opening))
        {
            Some(OpenResult::CheatDetected { bits }) => bits,
            _ => Vec::new(),
        };
        self.cheaters.insert(record.voter);
        self.cheat_events.push(CheatEvent {
            party: sender,
            kind: CheatKind::Rebind,
            detected_bits: bits,
            trace_line: line,
        });
    }

    fn peek_before_opening(&mut self, net: &mut Network) {
        let Some(AdversarySpec::EarlyOpener { miner }) = self.config.adversary else {
            return;
        };
        let mut guess = 0;
        let mut detected_total = 0;
        let mut detections = Vec::new();
        // The miner probes the sealed states it holds for every voter.
        for node in &self.voters {
            let Some(commitment) = &node.state.commitment else {
                continue;
            };
            let outcome = adversarial_peek(commitment, &self.params, &mut self.adversary_rng);
            guess = self.modulus.reduce(guess + outcome.guess);
            detected_total += outcome.events.detected.len();
            if outcome.events.any_detected() {
                detections.push(outcome.events.detected);
            }
        }
        let line = net.record(
            "peek",
            Some(miner.into()),
            None,
            json!({ "guess": guess, "detected_bits": detected_total }),
        );
        for bits in detections {
            self.cheat_events.push(CheatEvent {
                party: miner.into(),
                kind: CheatKind::Peek,
                detected_bits: bits,
                trace_line: line,
            });
        }
        self.early_open = Some(EarlyOpenRecord {
            miner,
            guess,
            detected_bits: detected_total,
            trace_line: line,
        });
    }

    fn missing(&self, opened: bool) -> Vec<VoterId> {
        let view = self
            .chain
            .view(*self.chain.honest().iter().next().expect("honest miner"));
        self.chain
            .roster()
            .voters()
            .filter(|&v| {
                if opened {
                    !view.has_opening(v)
                } else {
                    view.commitment_of(v).is_none()
                }
            })
            .collect()
    }

    fn abort(
        &mut self,
        net: &mut Network,
        reason: AbortReason,
        culprits: Vec<PartyId>,
        detail: String,
    ) {
        let line = net.record(
            "abort",
            None,
            None,
            json!({ "reason": reason, "culprits": culprits, "detail": detail }),
        );
        self.stage = Stage::Aborted;
        self.abort = Some(AbortInfo {
            reason,
            culprits,
            detail,
            trace_line: line,
        });
    }

    fn on_timeout(&mut self, net: &mut Network, diagnostic: String) {
        match self.stage {
            Stage::Commit => {
                let culprits = self.missing(false).into_iter().map(PartyId::from).collect();
                self.abort(net, AbortReason::Stalled, culprits, diagnostic);
            }
            Stage::Open => {
                let culprits = self.missing(true).into_iter().map(PartyId::from).collect();
                self.abort(net, AbortReason::WithheldOpening, culprits, diagnostic);
            }
            Stage::Done | Stage::Aborted => {}
        }
    }
}

fn list(voters: &[VoterId]) -> String {
    voters
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl World for Election {
    fn deliver(&mut self, net: &mut Network, to: PartyId, inbound: Inbound) {
        match (to, inbound) {
            (
                PartyId::Voter(v),
                Inbound::Message {
                    sender: PartyId::Voter(from),
                    channel: ChannelKind::QuantumSecure,
                    payload,
                    ..
                },
            ) => {
                let Ok(message) = serde_json::from_slice::<ShareMessage>(&payload) else {
                    log::debug!("{v} dropped an unreadable share from {from}");
                    return;
                };
                let (idx, from_idx) = (v.index(), from.index());
                if idx >= self.voters.len() || from_idx >= self.voters.len() {
                    return;
                }
                let slot = &mut self.voters[idx].state.shares[from_idx];
                if slot.is_none() && self.modulus.contains(message.share) {
                    *slot = Some(message.share);
                }
                self.maybe_commit(net, idx);
            }
            (PartyId::Voter(v), Inbound::Timer { label }) if label == OPEN_TIMER => {
                if v.index() < self.voters.len() {
                    self.open_ballot(net, v.index());
                }
            }
            (
                PartyId::Miner(m),
                Inbound::Message {
                    sender,
                    payload,
                    tag,
                    ..
                },
            ) => {
                let slot = serde_json::from_slice::<Submission>(&payload)
                    .map(|s| s.slot)
                    .unwrap_or(u32::MAX);
                let update = AuthenticatedUpdate {
                    sender,
                    receiver: m,
                    payload,
                    tag: tag.unwrap_or_default(),
                };
                let arrival = self.arrivals;
                self.arrivals += 1;
                self.pending
                    .entry((sender, slot))
                    .or_insert_with(|| PendingSlot {
                        first_seen: arrival,
                        deliveries: BTreeMap::new(),
                    })
                    .deliveries
                    .entry(m)
                    .or_insert(update);
            }
            (to, inbound) => log::trace!("{to} ignores {inbound:?}"),
        }
    }

    fn on_quiescent(&mut self, net: &mut Network) {
        self.sweep(net);
        let waiter: PartyId = self.chain.miners()[0].into();
        match self.stage {
            Stage::Commit => {
                if self.missing(false).is_empty() {
                    self.peek_before_opening(net);
                    self.stage = Stage::Open;
                    for node in &self.voters {
                        net.schedule_timer(node.state.id.into(), 1, OPEN_TIMER);
                    }
                } else {
                    net.schedule_timer(waiter, 1, AWAIT_COMMITMENTS);
                }
            }
            Stage::Open => {
                if !self.cheaters.is_empty() {
                    let culprits: Vec<VoterId> = self.cheaters.iter().copied().collect();
                    let detail = format!(
                        "opening from {} failed its commitment check",
                        list(&culprits)
                    );
                    self.abort(
                        net,
                        AbortReason::CheatDetected,
                        culprits.into_iter().map(PartyId::from).collect(),
                        detail,
                    );
                } else if self.missing(true).is_empty() {
                    let chain = self.chain.read_chain(OUTSIDER);
                    match self_tally(&chain) {
                        Ok(tally) => {
                            net.record("tally", None, None, json!({ "tally": tally }));
                            self.tally = Some(tally);
                            self.stage = Stage::Done;
                            for node in &mut self.voters {
                                if node.state.phase == VoterPhase::Opened {
                                    node.state.advance(VoterPhase::Done);
                                }
                            }
                        }
                        Err(e) => self.abort(net, AbortReason::Stalled, Vec::new(), e.to_string()),
                    }
                } else {
                    net.schedule_timer(waiter, 1, AWAIT_OPENINGS);
                }
            }
            Stage::Done | Stage::Aborted => {}
        }
    }

    fn stall_diagnostic(&self) -> String {
        match self.stage {
            Stage::Commit => format!(
                "waiting for commitments from {}",
                list(&self.missing(false))
            ),
            Stage::Open => format!("waiting for openings from {}", list(&self.missing(true))),
            Stage::Done | Stage::Aborted => "election finished".to_owned(),
        }
    }
}

/// Runs one election end to end.
///
/// Only configuration problems are errors; aborted elections come back as a
/// report with `aborted` set.
pub fn run_election(config: &ScenarioConfig) -> Result<ElectionOutcome, ConfigError> {
    config.validate()?;
    let modulus = config.modulus()?;
    let params = config.params()?;
    let n = config.n_voters;
    let votes = config.votes();

    let mut parties: Vec<PartyId> = (0..n).map(|i| VoterId::from_index(i).into()).collect();
    parties.extend((0..config.m_miners).map(|i| PartyId::from(MinerId::from_index(i))));
    if matches!(config.adversary, Some(AdversarySpec::Outsider { .. })) {
        parties.push(OUTSIDER);
    }
    let keys = AuthKeyTable::generate(config.seed, &parties);
    let dishonest: BTreeSet<MinerId> = config.dishonest_miners.iter().copied().collect();
    let chain = Blockchain::new(
        Roster::first(n),
        keys.clone(),
        params,
        config.m_miners,
        &dishonest,
        config.batch_blocks,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let mut net = Network::new(keys, config.tick_limit);
    if let Some(AdversarySpec::Tamperer { voter }) = config.adversary {
        net.add_tamper(TamperRule {
            sender: voter.into(),
            channel: ChannelKind::ClassicalAuth,
            remaining: 1,
        });
    }

    let mut world = Election {
        config: config.clone(),
        modulus,
        params,
        voters: votes
            .iter()
            .enumerate()
            .map(|(i, &vote)| VoterNode {
                state: VoterState::new(VoterId::from_index(i), vote, n),
                rng: derive_rng(config.seed, "voter", i as u64),
                next_slot: 0,
            })
            .collect(),
        chain,
        pending: BTreeMap::new(),
        arrivals: 0,
        stage: Stage::Commit,
        rounds: Vec::new(),
        cheat_events: Vec::new(),
        cheaters: BTreeSet::new(),
        early_open: None,
        tally: None,
        abort: None,
        adversary_rng: derive_rng(config.seed, "adversary", 0),
    };

    world.start(&mut net);
    if let Err(SimError::SimulationTimeout { diagnostic, .. }) =
        run_until_quiescent(&mut world, &mut net)
    {
        log::info!("election timed out: {diagnostic}");
        world.on_timeout(&mut net, diagnostic);
    }

    let chain = world.chain.read_chain(OUTSIDER);
    let inclusion = (0..n)
        .map(|i| verify_inclusion(VoterId::from_index(i), &chain))
        .collect();
    let delivery_failures = net
        .trace()
        .events()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == "delivery_failure")
        .filter_map(|(i, e)| {
            Some(DeliveryFailureRecord {
                sender: e.sender?,
                receiver: e.receiver?,
                trace_line: i + 1,
            })
        })
        .collect();
    let mut warnings = Vec::new();
    if !params.binding_guaranteed() {
        warnings.push(format!(
            "binding not guaranteed: cheat-sensitive commitments with p_detect = {}",
            params.p_detect()
        ));
    }
    let honest = world.chain.honest().len();
    if honest < admission_threshold(config.m_miners) {
        warnings.push(format!(
            "only {honest} of {} miners are honest, fewer than the {} needed to admit an update",
            config.m_miners,
            admission_threshold(config.m_miners)
        ));
    }

    let report = ElectionReport {
        seed: config.seed,
        n_voters: n,
        m_miners: config.m_miners,
        commitment: config.commitment,
        tally: if world.abort.is_some() {
            None
        } else {
            world.tally
        },
        aborted: world.abort.clone(),
        inclusion,
        cheat_events: world.cheat_events.clone(),
        rounds: world.rounds.clone(),
        delivery_failures,
        early_open: world.early_open.clone(),
        warnings,
        verdicts: Vec::new(),
    };
    let (trace, observations) = net.into_parts();
    Ok(ElectionOutcome {
        report,
        trace,
        blockchain: world.chain,
        observations,
        votes,
        voters: world.voters.into_iter().map(|n| n.state).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CommitmentConfig;
    use crate::ledger::UpdateKind;
    use crate::trace::verify_trace;

    fn votes(bits: &[u64]) -> Vec<Vote> {
        bits.iter().map(|&b| Vote::from_bit(b).unwrap()).collect()
    }

    #[test]
    fn three_voter_honest_run() {
        let out = run_election(&ScenarioConfig::honest(votes(&[1, 0, 1]), 42)).unwrap();
        assert_eq!(out.report.tally, Some(2));
        assert!(out.report.aborted.is_none());
        assert!(out.report.inclusion.iter().all(|s| s.committed && s.opened));
        assert!(out.voters.iter().all(|v| v.phase == VoterPhase::Done));
        assert!(out.blockchain.replicas_agree());
        verify_trace(out.trace.to_jsonl().as_bytes()).unwrap();

        // Three commitments then three openings, one block each.
        let chain = out.blockchain.read_chain(PartyId::Outsider(7));
        let kinds: Vec<UpdateKind> = chain
            .iter()
            .flat_map(|b| b.records().iter().map(|r| r.kind()))
            .collect();
        assert_eq!(kinds.len(), 6);
        assert!(kinds[..3]
            .iter()
            .all(|k| *k == UpdateKind::BallotCommitment));
        assert!(kinds[3..].iter().all(|k| *k == UpdateKind::BallotOpening));
        assert_eq!(chain.len(), 7);
    }

    #[test]
    fn single_voter_and_all_agree() {
        let out = run_election(&ScenarioConfig::honest(votes(&[1]), 1)).unwrap();
        assert_eq!(out.report.tally, Some(1));
        let out = run_election(&ScenarioConfig::honest(votes(&[1, 1, 1, 1]), 1)).unwrap();
        assert_eq!(out.report.tally, Some(4));
    }

    #[test]
    fn masked_ballots_are_what_is_opened() {
        let out = run_election(&ScenarioConfig::honest(votes(&[0, 1, 1, 0, 1]), 3)).unwrap();
        let chain = out.blockchain.read_chain(PartyId::Outsider(1));
        for state in &out.voters {
            let opened = chain
                .iter()
                .flat_map(|b| b.records())
                .find_map(|r| match &r.payload {
                    UpdatePayload::BallotOpening(o) if r.voter == state.id => Some(o.value()),
                    _ => None,
                })
                .unwrap();
            assert_eq!(Some(opened), state.masked.map(|m| m.value));
            let row = state.my_row.as_ref().unwrap();
            assert_eq!(row.entries().iter().sum::<u64>() % 6, 0);
        }
    }

    #[test]
    fn batched_blocks_hold_several_records() {
        let mut cfg = ScenarioConfig::honest(votes(&[1, 0, 1, 1]), 9);
        cfg.batch_blocks = true;
        let out = run_election(&cfg).unwrap();
        assert_eq!(out.report.tally, Some(3));
        let chain = out.blockchain.read_chain(PartyId::Outsider(1));
        assert_eq!(chain.len(), 3);
        verify_trace(out.trace.to_jsonl().as_bytes()).unwrap();
    }

    #[test]
    fn withheld_opening_times_out_and_names_culprit() {
        let cfg = ScenarioConfig::honest(votes(&[1, 0, 1]), 4)
            .with_adversary(Some(AdversarySpec::WithholdOpening { voter: VoterId(2) }));
        let out = run_election(&cfg).unwrap();
        let abort = out.report.aborted.as_ref().unwrap();
        assert_eq!(abort.reason, AbortReason::WithheldOpening);
        assert_eq!(abort.culprits, vec![PartyId::Voter(VoterId(2))]);
        assert!(abort.detail.contains("V2"), "{}", abort.detail);
        assert_eq!(out.report.tally, None);
        verify_trace(out.trace.to_jsonl().as_bytes()).unwrap();
    }

    #[test]
    fn dishonest_majority_stalls_commitment_phase() {
        let mut cfg = ScenarioConfig::honest(votes(&[1, 0]), 4);
        cfg.m_miners = 3;
        cfg.dishonest_miners = vec![MinerId(2), MinerId(3)];
        cfg.tick_limit = 40;
        let out = run_election(&cfg).unwrap();
        assert_eq!(
            out.report.aborted.as_ref().unwrap().reason,
            AbortReason::Stalled
        );
        assert!(!out.report.warnings.is_empty());
    }

    #[test]
    fn one_liar_among_three_is_harmless() {
        let mut cfg = ScenarioConfig::honest(votes(&[1, 0, 1]), 4);
        cfg.dishonest_miners = vec![MinerId(3)];
        let out = run_election(&cfg).unwrap();
        assert_eq!(out.report.tally, Some(2));
    }

    #[test]
    fn cheat_sensitive_honest_run() {
        let mut cfg = ScenarioConfig::honest(votes(&[1, 1, 0]), 5);
        cfg.commitment = CommitmentConfig::CheatSensitive { p_detect: 0.3 };
        let out = run_election(&cfg).unwrap();
        assert_eq!(out.report.tally, Some(2));
        assert!(out.report.warnings[0].contains("binding not guaranteed"));
    }
}
