use std::collections::BTreeSet;

use proptest::prelude::*;

use qvote::config::{AdversarySpec, CommitmentConfig, ScenarioConfig};
use qvote::ledger::{LedgerBlock, UpdatePayload};
use qvote::masking::Vote;
use qvote::netsim::Observation;
use qvote::protocol::{anonymity_audit, run_election, self_tally, AuditVerdict, TallyError};
use qvote::{MinerId, PartyId, VoterId};

fn votes(bits: &[u64]) -> Vec<Vote> {
    bits.iter().map(|&b| Vote::from_bit(b).unwrap()).collect()
}

fn chain_of(cfg: &ScenarioConfig) -> Vec<LedgerBlock> {
    run_election(cfg)
        .unwrap()
        .blockchain
        .read_chain(PartyId::Outsider(5))
}

#[test]
fn worked_examples() {
    for (bits, tally) in [(vec![1, 0, 1], 2), (vec![1], 1), (vec![1, 1, 1, 1], 4)] {
        let out = run_election(&ScenarioConfig::honest(votes(&bits), 42)).unwrap();
        assert_eq!(out.report.tally, Some(tally));
        assert_eq!(
            self_tally(&out.blockchain.read_chain(PartyId::Outsider(1))),
            Ok(tally)
        );
    }
}

#[test]
fn tally_does_not_depend_on_masks() {
    let a = chain_of(&ScenarioConfig::honest(votes(&[1, 0, 1, 1]), 42));
    let b = chain_of(&ScenarioConfig::honest(votes(&[1, 0, 1, 1]), 43));
    assert_ne!(a, b);
    assert_eq!(self_tally(&a), Ok(3));
    assert_eq!(self_tally(&b), Ok(3));
}

#[test]
fn chain_missing_an_opening_is_incomplete() {
    let chain = chain_of(&ScenarioConfig::honest(votes(&[1, 0, 1]), 42));
    let truncated = &chain[..chain.len() - 1];
    assert!(matches!(
        self_tally(truncated),
        Err(TallyError::IncompleteChain { missing }) if missing.len() == 1
    ));
}

#[test]
fn quantum_shares_are_never_seen_in_plaintext() {
    let out = run_election(&ScenarioConfig::honest(votes(&[1, 0, 1, 0, 1]), 8)).unwrap();
    let mut share_messages = 0;
    for obs in &out.observations {
        match obs {
            Observation::LengthOnly {
                sender, receiver, ..
            } => {
                assert!(matches!(
                    (sender, receiver),
                    (PartyId::Voter(_), PartyId::Voter(_))
                ));
                share_messages += 1;
            }
            Observation::Plaintext {
                receiver, payload, ..
            } => {
                assert!(matches!(receiver, PartyId::Miner(_)));
                assert!(!String::from_utf8_lossy(payload).contains("share"));
            }
        }
    }
    assert_eq!(share_messages, 5 * 4);
}

#[test]
fn replicas_agree_after_every_kind_of_run() {
    let base = ScenarioConfig::honest(votes(&[1, 0, 1, 1]), 21);
    for adversary in [
        None,
        Some(AdversarySpec::DuplicateVoter { voter: VoterId(2) }),
        Some(AdversarySpec::Rebinder { voter: VoterId(4) }),
        Some(AdversarySpec::Tamperer { voter: VoterId(1) }),
        Some(AdversarySpec::Outsider { attempts: 3 }),
        Some(AdversarySpec::EarlyOpener { miner: MinerId(2) }),
    ] {
        let out = run_election(&base.with_adversary(adversary.clone())).unwrap();
        assert!(out.blockchain.replicas_agree(), "{adversary:?}");
    }
}

#[test]
fn collusion_run_completes_and_audit_passes() {
    let cfg = ScenarioConfig::honest(votes(&[0, 1, 1, 0]), 2).with_adversary(Some(
        AdversarySpec::ColluderSet {
            voters: vec![VoterId(1), VoterId(2)],
        },
    ));
    assert_eq!(run_election(&cfg).unwrap().report.tally, Some(2));
    let colluders: BTreeSet<VoterId> = [VoterId(1), VoterId(2)].into_iter().collect();
    assert_eq!(
        anonymity_audit(4, &colluders).unwrap().verdict,
        AuditVerdict::Pass
    );
}

#[test]
fn fully_sensitive_commitments_still_bind() {
    let mut cfg = ScenarioConfig::honest(votes(&[1, 1, 0]), 3)
        .with_adversary(Some(AdversarySpec::Rebinder { voter: VoterId(3) }));
    cfg.commitment = CommitmentConfig::CheatSensitive { p_detect: 1.0 };
    let out = run_election(&cfg).unwrap();
    assert_eq!(out.report.tally, None);
    assert!(!out.report.cheat_events.is_empty());
    assert!(out.report.warnings.is_empty());
}

#[test]
fn pre_opening_ledger_traffic_has_the_same_shape_for_any_votes() {
    // What an early observer of the ledger sees before openings: which
    // voters committed and how big each commitment is.
    let shape = |bits: &[u64]| {
        let out = run_election(&ScenarioConfig::honest(votes(bits), 77)).unwrap();
        let chain = out.blockchain.read_chain(PartyId::Outsider(1));
        chain
            .iter()
            .flat_map(|b| b.records())
            .filter_map(|r| match &r.payload {
                UpdatePayload::BallotCommitment(c) => Some((r.voter, c.evidence().len())),
                UpdatePayload::BallotOpening(_) => None,
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(shape(&[0, 0, 0]), shape(&[1, 1, 1]));
    assert_eq!(shape(&[1, 0, 0]), shape(&[0, 0, 1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn honest_miner_majority_always_finishes(
        bits in prop::collection::vec(0u64..2, 1..8),
        m in 1usize..7,
        liars in prop::collection::btree_set(1u32..7, 0..4),
        seed in any::<u64>(),
    ) {
        let dishonest: Vec<MinerId> = liars.into_iter().filter(|&i| i as usize <= m).map(MinerId).collect();
        prop_assume!(2 * dishonest.len() < m);
        let mut cfg = ScenarioConfig::honest(votes(&bits), seed);
        cfg.m_miners = m;
        cfg.dishonest_miners = dishonest;
        let out = run_election(&cfg).unwrap();
        prop_assert_eq!(out.report.tally, Some(bits.iter().sum::<u64>()));
        prop_assert!(out.report.inclusion.iter().all(|s| s.committed && s.opened));
    }

    #[test]
    fn ideal_rebinder_never_skews_a_tally(
        bits in prop::collection::vec(0u64..2, 1..8),
        who in 0usize..8,
        seed in any::<u64>(),
    ) {
        let voter = VoterId::from_index(who % bits.len());
        let cfg = ScenarioConfig::honest(votes(&bits), seed)
            .with_adversary(Some(AdversarySpec::Rebinder { voter }));
        let out = run_election(&cfg).unwrap();
        prop_assert!(out.report.tally.is_none() || out.report.tally == Some(bits.iter().sum::<u64>()));
    }
}
