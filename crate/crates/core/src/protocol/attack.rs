use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::anonymity::{anonymity_audit, AuditError, AuditVerdict};
use super::election::{run_election, ElectionOutcome};
use super::report::{AbortReason, ElectionReport, Property, SecurityVerdict, VerdictStatus};
use super::self_tally;
use crate::commitment::CommitmentMode;
use crate::config::{AdversarySpec, ConfigError, ScenarioConfig};
use crate::ledger::{RejectReason, UpdateKind};
use crate::trace::verify_trace;
use crate::{MinerId, PartyId, VoterId};

/// Elections per fairness battery.
pub const FAIRNESS_TRIALS: usize = 10_000;
/// Allowed gap between the early opener's hit rate and blind guessing.
pub const FAIRNESS_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackType {
    All,
    DoubleVote,
    Rebind,
    EarlyOpen,
    Tamper,
    Collude,
    Withhold,
}

impl AttackType {
    pub const NAMES: [&'static str; 7] = [
        "all",
        "double-vote",
        "rebind",
        "early-open",
        "tamper",
        "collude",
        "withhold",
    ];
}

impl FromStr for AttackType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "all" => AttackType::All,
            "double-vote" => AttackType::DoubleVote,
            "rebind" => AttackType::Rebind,
            "early-open" => AttackType::EarlyOpen,
            "tamper" => AttackType::Tamper,
            "collude" => AttackType::Collude,
            "withhold" => AttackType::Withhold,
            other => {
                return Err(format!(
                    "unknown attack type {other:?}; expected one of {}",
                    AttackType::NAMES.join(", ")
                ))
            }
        })
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            AttackType::All => 0,
            AttackType::DoubleVote => 1,
            AttackType::Rebind => 2,
            AttackType::EarlyOpen => 3,
            AttackType::Tamper => 4,
            AttackType::Collude => 5,
            AttackType::Withhold => 6,
        };
        f.write_str(AttackType::NAMES[i])
    }
}

pub struct AttackOutcome {
    /// Report of the adversarial run, with `verdicts` filled in.
    pub report: ElectionReport,
    pub verdicts: Vec<SecurityVerdict>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessStats {
    pub trials: usize,
    pub correct: usize,
    /// Runs in which at least one probe was noticed.
    pub detected_runs: usize,
    pub accuracy: f64,
    /// Hit rate of a blind guess, `1 / (n + 1)`.
    pub baseline: f64,
}

impl FairnessStats {
    pub fn advantage(&self) -> f64 {
        self.accuracy - self.baseline
    }

    pub fn within_tolerance(&self) -> bool {
        self.advantage().abs() <= FAIRNESS_TOLERANCE
    }
}

fn verdict(
    property: Property,
    status: VerdictStatus,
    evidence: impl Into<String>,
) -> SecurityVerdict {
    SecurityVerdict {
        property,
        status,
        evidence: evidence.into(),
    }
}

fn trace_ref(line: usize) -> String {
    format!("trace:{line}")
}

fn plaintext(outcome: &ElectionOutcome) -> u64 {
    outcome.plaintext_tally()
}

fn judge_duplicate(outcome: &ElectionOutcome, voter: VoterId) -> SecurityVerdict {
    let rounds: Vec<_> = outcome
        .report
        .rounds
        .iter()
        .filter(|r| r.voter == Some(voter) && r.kind == Some(UpdateKind::BallotCommitment))
        .collect();
    let admitted = rounds.iter().filter(|r| r.admitted).count();
    let rejected = rounds
        .iter()
        .find(|r| r.reason == Some(RejectReason::DuplicateBallot));
    let tally_ok = outcome.report.tally == Some(plaintext(outcome));
    match rejected {
        Some(r) if admitted == 1 && tally_ok => verdict(
            Property::NonReusability,
            VerdictStatus::Pass,
            format!(
                "second ballot from {voter} rejected as duplicate_ballot at {}; one ballot admitted; tally correct",
                trace_ref(r.trace_line)
            ),
        ),
        _ => verdict(
            Property::NonReusability,
            VerdictStatus::Fail,
            format!(
                "{admitted} ballots admitted for {voter}; tally {:?} vs plaintext {}",
                outcome.report.tally,
                plaintext(outcome)
            ),
        ),
    }
}

fn judge_rebind(outcome: &ElectionOutcome, voter: VoterId, guaranteed: bool) -> SecurityVerdict {
    let report = &outcome.report;
    let flagged = report
        .cheat_events
        .iter()
        .find(|e| e.party == PartyId::Voter(voter));
    let forged_admitted = report.inclusion_of(voter).is_some_and(|s| s.opened);
    let evidence = match flagged {
        Some(e) => format!(
            "forged opening from {voter} flagged at {}, bits {:?} disturbed; election aborted",
            trace_ref(e.trace_line),
            e.detected_bits
        ),
        None => format!(
            "forged opening from {voter} went undetected; tally {:?} vs plaintext {}",
            report.tally,
            plaintext(outcome)
        ),
    };
    let caught = flagged.is_some()
        && !forged_admitted
        && report.tally.is_none()
        && report
            .aborted
            .as_ref()
            .is_some_and(|a| a.reason == AbortReason::CheatDetected);
    let status = if !guaranteed {
        VerdictStatus::NotGuaranteed
    } else if caught {
        VerdictStatus::Pass
    } else {
        VerdictStatus::Fail
    };
    verdict(Property::Binding, status, evidence)
}

fn judge_tamper(outcome: &ElectionOutcome, voter: VoterId) -> SecurityVerdict {
    let report = &outcome.report;
    let failure = report
        .delivery_failures
        .iter()
        .find(|f| f.sender == PartyId::Voter(voter));
    let committed = report.inclusion_of(voter).is_some_and(|s| s.committed);
    let tally_ok = report.tally == Some(plaintext(outcome));
    match failure {
        Some(f) if committed && tally_ok => verdict(
            Property::Binding,
            VerdictStatus::Pass,
            format!(
                "altered message from {voter} to {} failed authentication at {}; original ballot admitted; tally correct",
                f.receiver,
                trace_ref(f.trace_line)
            ),
        ),
        _ => verdict(
            Property::Binding,
            VerdictStatus::Fail,
            format!(
                "tampering with {voter}: delivery failure recorded {}, ballot admitted {committed}, tally {:?} vs plaintext {}",
                failure.is_some(),
                report.tally,
                plaintext(outcome)
            ),
        ),
    }
}

fn judge_withhold(outcome: &ElectionOutcome, voter: VoterId) -> SecurityVerdict {
    let report = &outcome.report;
    match &report.aborted {
        Some(a)
            if a.reason == AbortReason::WithheldOpening
                && a.culprits == [PartyId::Voter(voter)]
                && report.tally.is_none() =>
        {
            verdict(
                Property::WithholdAbort,
                VerdictStatus::Pass,
                format!(
                    "election aborted at {} naming {voter}",
                    trace_ref(a.trace_line)
                ),
            )
        }
        other => verdict(
            Property::WithholdAbort,
            VerdictStatus::Fail,
            format!("expected an abort naming {voter}, got {other:?}"),
        ),
    }
}

fn judge_outsider(outcome: &ElectionOutcome) -> SecurityVerdict {
    let report = &outcome.report;
    let outsider: Vec<_> = report
        .rounds
        .iter()
        .filter(|r| matches!(r.sender, PartyId::Outsider(_)))
        .collect();
    let all_rejected = !outsider.is_empty()
        && outsider
            .iter()
            .all(|r| !r.admitted && r.reason == Some(RejectReason::NotEligible));
    let tally_ok = report.tally == Some(plaintext(outcome));
    let lines: Vec<String> = outsider.iter().map(|r| trace_ref(r.trace_line)).collect();
    if all_rejected && tally_ok {
        verdict(
            Property::Eligibility,
            VerdictStatus::Pass,
            format!(
                "{} off-roster submissions rejected as not_eligible at {}; tally correct",
                outsider.len(),
                lines.join(", ")
            ),
        )
    } else {
        verdict(
            Property::Eligibility,
            VerdictStatus::Fail,
            format!(
                "off-roster submissions: {} seen, all rejected {all_rejected}; tally {:?} vs plaintext {}",
                outsider.len(),
                report.tally,
                plaintext(outcome)
            ),
        )
    }
}

fn judge_anonymity(n: usize, colluder_sets: &[BTreeSet<VoterId>]) -> SecurityVerdict {
    let mut passed = 0;
    let mut determined = 0;
    for colluders in colluder_sets {
        match anonymity_audit(n, colluders) {
            Ok(report) => match report.verdict {
                AuditVerdict::Pass => passed += 1,
                AuditVerdict::TallyDetermined => determined += 1,
                AuditVerdict::Fail(c) => {
                    return verdict(
                        Property::Anonymity,
                        VerdictStatus::Fail,
                        format!(
                            "colluders {colluders:?}: views differ for votes {:?} and {:?} at view {:?} ({} vs {} matrices)",
                            c.votes_a, c.votes_b, c.view, c.count_a, c.count_b
                        ),
                    )
                }
            },
            Err(AuditError::RefuseExhaustiveAudit { n }) => {
                return verdict(
                    Property::Anonymity,
                    VerdictStatus::Inconclusive,
                    format!("exhaustive audit refused for {n} voters"),
                )
            }
            Err(e) => return verdict(Property::Anonymity, VerdictStatus::Fail, e.to_string()),
        }
    }
    if passed == 0 && determined > 0 {
        return verdict(
            Property::Anonymity,
            VerdictStatus::TallyDetermined,
            "tally-determined: last vote inferable from sum",
        );
    }
    verdict(
        Property::Anonymity,
        VerdictStatus::Pass,
        format!(
            "exact colluder-view distributions depend on honest votes only through their sum for {passed} coalition(s) of {n} voters"
        ),
    )
}

/// Every coalition that leaves at least two honest voters.
fn audited_coalitions(n: usize) -> Vec<BTreeSet<VoterId>> {
    let sets: Vec<BTreeSet<VoterId>> = (0..1u32 << n.min(31))
        .map(|bits| {
            (0..n)
                .filter(|&i| bits >> i & 1 == 1)
                .map(VoterId::from_index)
                .collect::<BTreeSet<_>>()
        })
        .filter(|s| s.len() + 2 <= n)
        .collect();
    if sets.is_empty() {
        // One voter: nothing is hidden beyond the tally.
        vec![BTreeSet::new()]
    } else {
        sets
    }
}

fn judge_fairness(stats: &FairnessStats, ideal: bool) -> SecurityVerdict {
    let evidence = format!(
        "early opener guessed the tally in {} of {} runs (accuracy {:.4}, blind guess {:.4}, tolerance {FAIRNESS_TOLERANCE}); probes noticed in {} runs",
        stats.correct, stats.trials, stats.accuracy, stats.baseline, stats.detected_runs
    );
    let status = if !ideal {
        VerdictStatus::NotGuaranteed
    } else if stats.within_tolerance() {
        VerdictStatus::Pass
    } else {
        VerdictStatus::Fail
    };
    verdict(Property::Fairness, status, evidence)
}

fn judge_honest(outcome: &ElectionOutcome) -> (SecurityVerdict, SecurityVerdict) {
    let report = &outcome.report;
    let expected = plaintext(outcome);
    let trace_check = verify_trace(outcome.trace.to_jsonl().as_bytes());
    let all_included = report.inclusion.iter().all(|s| s.committed && s.opened);
    let verifiability = match &trace_check {
        Ok(summary) if all_included && outcome.blockchain.replicas_agree() => verdict(
            Property::Verifiability,
            VerdictStatus::Pass,
            format!(
                "all {} ballots found on chain; {} trace lines and {} blocks replay cleanly",
                report.inclusion.len(),
                summary.events,
                summary.blocks.len()
            ),
        ),
        Ok(_) => verdict(
            Property::Verifiability,
            VerdictStatus::Fail,
            format!("inclusion: {:?}", report.inclusion),
        ),
        Err(e) => verdict(Property::Verifiability, VerdictStatus::Fail, e.to_string()),
    };
    let recomputed = self_tally(&outcome.blockchain.read_chain(PartyId::Outsider(1)));
    let tally_line = outcome
        .trace
        .events()
        .iter()
        .position(|e| e.kind == "tally")
        .map(|i| i + 1);
    let self_tallying = match (recomputed, report.tally) {
        (Ok(t), Some(r)) if t == r && t == expected => verdict(
            Property::SelfTallying,
            VerdictStatus::Pass,
            format!(
                "tally {t} recomputed from public chain data matches the report at {} and the plaintext sum",
                tally_line.map_or("no tally line".into(), trace_ref)
            ),
        ),
        (recomputed, reported) => verdict(
            Property::SelfTallying,
            VerdictStatus::Fail,
            format!("chain tally {recomputed:?}, reported {reported:?}, plaintext {expected}"),
        ),
    };
    (verifiability, self_tallying)
}

/// Hit rate of an early-opening miner over `trials` elections with seeds
/// `seed, seed + 1, ...`.
pub fn early_open_battery(
    config: &ScenarioConfig,
    trials: usize,
) -> Result<FairnessStats, ConfigError> {
    let miner = match config.adversary {
        Some(AdversarySpec::EarlyOpener { miner }) => miner,
        _ => MinerId(1),
    };
    let mut correct = 0;
    let mut detected_runs = 0;
    for t in 0..trials {
        let trial = ScenarioConfig {
            seed: config.seed.wrapping_add(t as u64),
            adversary: Some(AdversarySpec::EarlyOpener { miner }),
            ..config.clone()
        };
        let outcome = run_election(&trial)?;
        let peek = outcome
            .report
            .early_open
            .as_ref()
            .expect("early opener peeks once every commitment is on chain");
        if peek.guess == outcome.plaintext_tally() {
            correct += 1;
        }
        if peek.detected_bits > 0 {
            detected_runs += 1;
        }
    }
    Ok(FairnessStats {
        trials,
        correct,
        detected_runs,
        accuracy: correct as f64 / trials.max(1) as f64,
        baseline: 1.0 / (config.n_voters as f64 + 1.0),
    })
}

/// Runs the election against one adversary and judges the property it
/// targets.
pub fn run_attack(
    config: &ScenarioConfig,
    adversary: &AdversarySpec,
) -> Result<AttackOutcome, ConfigError> {
    let attacked = config.with_adversary(Some(adversary.clone()));
    let outcome = run_election(&attacked)?;
    let params = attacked.params()?;
    let verdicts = match adversary {
        AdversarySpec::DuplicateVoter { voter } => vec![judge_duplicate(&outcome, *voter)],
        AdversarySpec::Rebinder { voter } => {
            vec![judge_rebind(&outcome, *voter, params.binding_guaranteed())]
        }
        AdversarySpec::Tamperer { voter } => vec![judge_tamper(&outcome, *voter)],
        AdversarySpec::WithholdOpening { voter } => vec![judge_withhold(&outcome, *voter)],
        AdversarySpec::Outsider { .. } => vec![judge_outsider(&outcome)],
        AdversarySpec::EarlyOpener { .. } => {
            let stats = early_open_battery(&attacked, FAIRNESS_TRIALS)?;
            vec![judge_fairness(
                &stats,
                params.mode() == CommitmentMode::Ideal,
            )]
        }
        AdversarySpec::ColluderSet { voters } => {
            let colluders: BTreeSet<VoterId> = voters.iter().copied().collect();
            vec![judge_anonymity(attacked.n_voters, &[colluders])]
        }
    };
    let mut report = outcome.report;
    report.verdicts = verdicts.clone();
    Ok(AttackOutcome { report, verdicts })
}

fn worst(a: SecurityVerdict, b: SecurityVerdict) -> SecurityVerdict {
    let rank = |s: VerdictStatus| match s {
        VerdictStatus::Pass => 0,
        VerdictStatus::TallyDetermined => 1,
        VerdictStatus::Inconclusive => 2,
        VerdictStatus::NotGuaranteed => 3,
        VerdictStatus::Fail => 4,
    };
    let status = if rank(a.status) >= rank(b.status) {
        a.status
    } else {
        b.status
    };
    SecurityVerdict {
        property: a.property,
        status,
        evidence: format!("{}; {}", a.evidence, b.evidence),
    }
}

/// Verdict rows for one attack type. `All` yields the seven core properties.
///
/// Adversary roles target voter V1 and miner M1 unless the config names a
/// target for that role.
pub fn attack_suite(
    config: &ScenarioConfig,
    attack: AttackType,
) -> Result<Vec<SecurityVerdict>, ConfigError> {
    config.validate()?;
    let base = config.with_adversary(None);
    let target_voter = match &config.adversary {
        Some(
            AdversarySpec::DuplicateVoter { voter }
            | AdversarySpec::Rebinder { voter }
            | AdversarySpec::Tamperer { voter }
            | AdversarySpec::WithholdOpening { voter },
        ) => *voter,
        _ => VoterId(1),
    };
    let target_miner = match &config.adversary {
        Some(AdversarySpec::EarlyOpener { miner }) => *miner,
        _ => MinerId(1),
    };
    let coalitions = match &config.adversary {
        Some(AdversarySpec::ColluderSet { voters }) => vec![voters.iter().copied().collect()],
        _ => audited_coalitions(
            config
                .n_voters
                .min(super::anonymity::MAX_EXHAUSTIVE_VOTERS + 1),
        ),
    };
    let one = |adversary: AdversarySpec| -> Result<SecurityVerdict, ConfigError> {
        Ok(run_attack(&base, &adversary)?.verdicts.remove(0))
    };
    let binding = || -> Result<SecurityVerdict, ConfigError> {
        Ok(worst(
            one(AdversarySpec::Rebinder {
                voter: target_voter,
            })?,
            one(AdversarySpec::Tamperer {
                voter: target_voter,
            })?,
        ))
    };
    let anonymity = || judge_anonymity(config.n_voters, &coalitions);

    Ok(match attack {
        AttackType::DoubleVote => vec![one(AdversarySpec::DuplicateVoter {
            voter: target_voter,
        })?],
        AttackType::Rebind => vec![one(AdversarySpec::Rebinder {
            voter: target_voter,
        })?],
        AttackType::Tamper => vec![one(AdversarySpec::Tamperer {
            voter: target_voter,
        })?],
        AttackType::EarlyOpen => vec![one(AdversarySpec::EarlyOpener {
            miner: target_miner,
        })?],
        AttackType::Withhold => vec![one(AdversarySpec::WithholdOpening {
            voter: target_voter,
        })?],
        AttackType::Collude => vec![anonymity()],
        AttackType::All => {
            let honest = run_election(&base)?;
            let (verifiability, self_tallying) = judge_honest(&honest);
            vec![
                anonymity(),
                binding()?,
                one(AdversarySpec::DuplicateVoter {
                    voter: target_voter,
                })?,
                verifiability,
                one(AdversarySpec::Outsider { attempts: 1 })?,
                one(AdversarySpec::EarlyOpener {
                    miner: target_miner,
                })?,
                self_tallying,
            ]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CommitmentConfig;
    use crate::masking::Vote;

    fn base() -> ScenarioConfig {
        ScenarioConfig::honest(
            [1, 0, 1]
                .iter()
                .map(|&b| Vote::from_bit(b).unwrap())
                .collect(),
            42,
        )
    }

    #[test]
    fn attack_names_round_trip() {
        for name in AttackType::NAMES {
            assert_eq!(name.parse::<AttackType>().unwrap().to_string(), name);
        }
        assert!("gremlin".parse::<AttackType>().is_err());
    }

    #[test]
    fn duplicate_voter_rejected() {
        let out = run_attack(
            &base(),
            &AdversarySpec::DuplicateVoter { voter: VoterId(2) },
        )
        .unwrap();
        assert_eq!(
            out.verdicts[0].status,
            VerdictStatus::Pass,
            "{}",
            out.verdicts[0].evidence
        );
        assert!(out.verdicts[0].evidence.contains("trace:"));
    }

    #[test]
    fn ideal_rebind_is_caught() {
        let out = run_attack(&base(), &AdversarySpec::Rebinder { voter: VoterId(1) }).unwrap();
        assert_eq!(
            out.verdicts[0].status,
            VerdictStatus::Pass,
            "{}",
            out.verdicts[0].evidence
        );
        assert_eq!(
            out.report.aborted.as_ref().unwrap().reason,
            AbortReason::CheatDetected
        );
    }

    #[test]
    fn blind_cheat_sensitive_rebind_is_not_guaranteed() {
        let mut cfg = base();
        cfg.commitment = CommitmentConfig::CheatSensitive { p_detect: 0.0 };
        let out = run_attack(&cfg, &AdversarySpec::Rebinder { voter: VoterId(1) }).unwrap();
        assert_eq!(out.verdicts[0].status, VerdictStatus::NotGuaranteed);
        // Undetected forgery shifts the tally by one.
        assert_eq!(out.report.tally, Some(3));
    }

    #[test]
    fn tamper_and_withhold_and_outsider() {
        for adversary in [
            AdversarySpec::Tamperer { voter: VoterId(3) },
            AdversarySpec::WithholdOpening { voter: VoterId(1) },
            AdversarySpec::Outsider { attempts: 2 },
        ] {
            let out = run_attack(&base(), &adversary).unwrap();
            assert_eq!(
                out.verdicts[0].status,
                VerdictStatus::Pass,
                "{adversary:?}: {}",
                out.verdicts[0].evidence
            );
        }
    }

    #[test]
    fn collusion_verdicts() {
        let out = run_attack(
            &base(),
            &AdversarySpec::ColluderSet {
                voters: vec![VoterId(3)],
            },
        )
        .unwrap();
        assert_eq!(out.verdicts[0].status, VerdictStatus::Pass);
        let out = run_attack(
            &base(),
            &AdversarySpec::ColluderSet {
                voters: vec![VoterId(2), VoterId(3)],
            },
        )
        .unwrap();
        assert_eq!(out.verdicts[0].status, VerdictStatus::TallyDetermined);
    }

    #[test]
    fn small_fairness_battery_is_near_chance() {
        let stats = early_open_battery(&base(), 2_000).unwrap();
        assert_eq!(stats.baseline, 0.25);
        assert!(stats.advantage().abs() < 0.05, "{stats:?}");
        assert_eq!(stats.detected_runs, 0);
    }

    #[test]
    fn cheat_sensitive_peek_learns_the_tally() {
        let mut cfg = base();
        cfg.commitment = CommitmentConfig::CheatSensitive { p_detect: 0.5 };
        let stats = early_open_battery(&cfg, 200).unwrap();
        assert_eq!(stats.correct, 200);
        assert!(stats.detected_runs > 150);
    }
}
