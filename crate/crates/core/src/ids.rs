//! Party identifiers. Rendered as `V3`, `M1`, `X2` (outsider) in every
//! serialized artifact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// 1-based voter index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoterId(pub u32);

/// 1-based miner index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MinerId(pub u32);

impl VoterId {
    /// Zero-based position in row/column vectors.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        VoterId(index as u32 + 1)
    }
}

impl MinerId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        MinerId(index as u32 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartyId {
    Voter(VoterId),
    Miner(MinerId),
    /// A node that holds channel keys but is not on the eligibility roster.
    Outsider(u32),
}

impl From<VoterId> for PartyId {
    fn from(v: VoterId) -> Self {
        PartyId::Voter(v)
    }
}

impl From<MinerId> for PartyId {
    fn from(m: MinerId) -> Self {
        PartyId::Miner(m)
    }
}

impl fmt::Display for VoterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

impl fmt::Display for MinerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Voter(v) => v.fmt(f),
            PartyId::Miner(m) => m.fmt(f),
            PartyId::Outsider(x) => write!(f, "X{x}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid party id {0:?}")]
pub struct ParsePartyError(String);

fn split_id(s: &str) -> Result<(char, u32), ParsePartyError> {
    let err = || ParsePartyError(s.to_owned());
    let mut chars = s.chars();
    let prefix = chars.next().ok_or_else(err)?;
    let digits = chars.as_str();
    // Canonical decimal only, so every id has exactly one spelling.
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let number = digits.parse().map_err(|_| err())?;
    Ok((prefix, number))
}

impl FromStr for PartyId {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match split_id(s)? {
            ('V', n) => Ok(PartyId::Voter(VoterId(n))),
            ('M', n) => Ok(PartyId::Miner(MinerId(n))),
            ('X', n) => Ok(PartyId::Outsider(n)),
            _ => Err(ParsePartyError(s.to_owned())),
        }
    }
}

impl FromStr for VoterId {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse()? {
            PartyId::Voter(v) => Ok(v),
            _ => Err(ParsePartyError(s.to_owned())),
        }
    }
}

impl FromStr for MinerId {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse()? {
            PartyId::Miner(m) => Ok(m),
            _ => Err(ParsePartyError(s.to_owned())),
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(PartyId);
string_serde!(VoterId);
string_serde!(MinerId);
