use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::CommitmentConfig;
use crate::ledger::{InclusionStatus, RejectReason, UpdateKind};
use crate::{Digest, MinerId, PartyId, VoterId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    WithheldOpening,
    CheatDetected,
    /// Phase one never completed.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub reason: AbortReason,
    pub culprits: Vec<PartyId>,
    pub detail: String,
    pub trace_line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheatKind {
    Rebind,
    Peek,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheatEvent {
    pub party: PartyId,
    pub kind: CheatKind,
    pub detected_bits: Vec<u32>,
    pub trace_line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    pub sender: PartyId,
    pub slot: Option<u32>,
    pub voter: Option<VoterId>,
    pub kind: Option<UpdateKind>,
    pub agreed_update: Option<Digest>,
    pub votes_for: usize,
    pub votes_total: usize,
    pub admitted: bool,
    pub reason: Option<RejectReason>,
    pub trace_line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryFailureRecord {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub trace_line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyOpenRecord {
    pub miner: MinerId,
    /// The miner's guess of the agree count before any opening.
    pub guess: u64,
    pub detected_bits: usize,
    pub trace_line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Anonymity,
    Binding,
    NonReusability,
    Verifiability,
    Eligibility,
    Fairness,
    SelfTallying,
    WithholdAbort,
}

impl Property {
    pub const SEVEN: [Property; 7] = [
        Property::Anonymity,
        Property::Binding,
        Property::NonReusability,
        Property::Verifiability,
        Property::Eligibility,
        Property::Fairness,
        Property::SelfTallying,
    ];
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("property serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// The configured commitment backend does not promise this property.
    NotGuaranteed,
    /// Colluders learn the remaining vote from the published tally itself.
    TallyDetermined,
    /// Could not be decided at this scale.
    Inconclusive,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "FAIL",
            VerdictStatus::NotGuaranteed => "not guaranteed",
            VerdictStatus::TallyDetermined => "tally-determined",
            VerdictStatus::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityVerdict {
    pub property: Property,
    pub status: VerdictStatus,
    /// Free text, with `trace:N` pointers into the run's trace.
    pub evidence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectionReport {
    pub seed: u64,
    pub n_voters: usize,
    pub m_miners: usize,
    pub commitment: CommitmentConfig,
    /// Present iff the election was not aborted.
    pub tally: Option<u64>,
    pub aborted: Option<AbortInfo>,
    pub inclusion: Vec<InclusionStatus>,
    pub cheat_events: Vec<CheatEvent>,
    pub rounds: Vec<RoundSummary>,
    pub delivery_failures: Vec<DeliveryFailureRecord>,
    pub early_open: Option<EarlyOpenRecord>,
    pub warnings: Vec<String>,
    pub verdicts: Vec<SecurityVerdict>,
}

impl ElectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    pub fn inclusion_of(&self, voter: VoterId) -> Option<&InclusionStatus> {
        self.inclusion.iter().find(|s| s.voter == voter)
    }
}
