//! Scenario files: everything needed to reproduce one election run.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{CommitmentError, CommitmentParams};
use crate::masking::{Modulus, Vote};
use crate::rng::derive_rng;
use crate::{MinerId, VoterId};

pub const DEFAULT_TICK_LIMIT: u64 = 1_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomVotes {
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VoteSpec {
    Explicit(Vec<Vote>),
    /// One fair coin per voter, drawn from the scenario seed.
    Random(RandomVotes),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommitmentConfig {
    #[default]
    Ideal,
    CheatSensitive {
        p_detect: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Submits a second, different ballot commitment.
    DuplicateVoter { voter: VoterId },
    /// Opens its commitment to a different masked ballot.
    Rebinder { voter: VoterId },
    /// A miner that tries to learn the tally before the opening phase.
    EarlyOpener { miner: MinerId },
    /// Alters the voter's first ledger message in flight.
    Tamperer { voter: VoterId },
    /// Voters pooling everything they see. They follow the protocol.
    ColluderSet { voters: Vec<VoterId> },
    /// Never opens its commitment.
    WithholdOpening { voter: VoterId },
    /// A keyed node outside the roster that submits ballots.
    Outsider {
        #[serde(default = "one")]
        attempts: u32,
    },
}

fn one() -> u32 {
    1
}

fn default_tick_limit() -> u64 {
    DEFAULT_TICK_LIMIT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_voters: usize,
    pub votes: VoteSpec,
    pub m_miners: usize,
    #[serde(default)]
    pub commitment: CommitmentConfig,
    #[serde(default)]
    pub adversary: Option<AdversarySpec>,
    pub seed: u64,
    #[serde(default = "default_tick_limit")]
    pub tick_limit: u64,
    /// Seal all updates admitted in one consensus sweep into a single block.
    #[serde(default)]
    pub batch_blocks: bool,
    /// Miners that invert their admissibility verdict.
    #[serde(default)]
    pub dishonest_miners: Vec<MinerId>,
}

impl ScenarioConfig {
    /// Honest election with explicit votes, three miners and ideal commitments.
    pub fn honest(votes: Vec<Vote>, seed: u64) -> Self {
        ScenarioConfig {
            n_voters: votes.len(),
            votes: VoteSpec::Explicit(votes),
            m_miners: 3,
            commitment: CommitmentConfig::Ideal,
            adversary: None,
            seed,
            tick_limit: DEFAULT_TICK_LIMIT,
            batch_blocks: false,
            dishonest_miners: Vec::new(),
        }
    }

    pub fn with_adversary(&self, adversary: Option<AdversarySpec>) -> Self {
        ScenarioConfig {
            adversary,
            ..self.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ScenarioConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn modulus(&self) -> Result<Modulus, ConfigError> {
        Modulus::new(self.n_voters).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn params(&self) -> Result<CommitmentParams, ConfigError> {
        let modulus = self.modulus()?;
        match self.commitment {
            CommitmentConfig::Ideal => Ok(CommitmentParams::ideal(modulus)),
            CommitmentConfig::CheatSensitive { p_detect } => {
                CommitmentParams::cheat_sensitive(modulus, p_detect)
                    .map_err(|e: CommitmentError| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    pub fn votes(&self) -> Vec<Vote> {
        match &self.votes {
            VoteSpec::Explicit(votes) => votes.clone(),
            VoteSpec::Random(_) => {
                let mut rng = derive_rng(self.seed, "votes", 0);
                (0..self.n_voters)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            Vote::Agree
                        } else {
                            Vote::Disagree
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_voters == 0 {
            return invalid("n_voters must be at least 1".into());
        }
        if self.m_miners == 0 {
            return invalid("m_miners must be at least 1".into());
        }
        if let VoteSpec::Explicit(votes) = &self.votes {
            if votes.len() != self.n_voters {
                return invalid(format!(
                    "{} votes listed for {} voters",
                    votes.len(),
                    self.n_voters
                ));
            }
        }
        self.params()?;
        let voter_ok = |v: &VoterId| v.0 >= 1 && v.0 as usize <= self.n_voters;
        let miner_ok = |m: &MinerId| m.0 >= 1 && m.0 as usize <= self.m_miners;
        let dishonest: BTreeSet<_> = self.dishonest_miners.iter().collect();
        if let Some(bad) = self.dishonest_miners.iter().find(|m| !miner_ok(m)) {
            return invalid(format!("dishonest miner {bad} does not exist"));
        }
        if dishonest.len() == self.m_miners {
            return invalid("at least one miner must be honest".into());
        }
        match &self.adversary {
            Some(AdversarySpec::DuplicateVoter { voter })
            | Some(AdversarySpec::Rebinder { voter })
            | Some(AdversarySpec::Tamperer { voter })
            | Some(AdversarySpec::WithholdOpening { voter })
                if !voter_ok(voter) =>
            {
                invalid(format!("adversary voter {voter} is not on the roster"))
            }
            Some(AdversarySpec::EarlyOpener { miner }) if !miner_ok(miner) => {
                invalid(format!("adversary miner {miner} does not exist"))
            }
            Some(AdversarySpec::ColluderSet { voters }) => {
                if let Some(bad) = voters.iter().find(|v| !voter_ok(v)) {
                    return invalid(format!("colluder {bad} is not on the roster"));
                }
                if voters.iter().collect::<BTreeSet<_>>().len() != voters.len() {
                    return invalid("colluder set lists a voter twice".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
