//! Deterministic simulator for a self-tallying voting protocol run over a
//! replicated, authenticated ledger.
//!
//! Each of `n` voters hides a binary vote behind additive masks over
//! `Z_{n+1}`, commits to the masked ballot, and later opens the commitment.
//! Miners agree on every update with a majority admissibility rule, and the
//! tally is recomputed by anyone from the public chain.
//!
//! The crate is organized bottom-up:
//!
//! - [`masking`]: mask rows, masked ballots and the modular tally.
//! - [`commitment`]: ideal and cheat-sensitive commit/open backends.
//! - [`consensus`]: per-update agreement and local admissibility checks.
//! - [`ledger`]: pairwise key table, hash-chained blocks, replicated chain.
//! - [`netsim`]: discrete-event scheduler with confidential and observable channels.
//! - [`trace`]: hash-chained JSON-lines event trace and its verifier.
//! - [`protocol`]: voter/miner state machines, adversaries and audits.
//! - [`config`] and [`cli`]: scenario files and the command-line front end.

pub mod cli;
pub mod commitment;
pub mod config;
pub mod consensus;
pub mod digest;
pub mod ids;
pub mod ledger;
pub mod masking;
pub mod netsim;
pub mod protocol;
pub mod rng;
pub mod trace;

pub use digest::{AuthTag, Digest, Nonce};
pub use ids::{MinerId, PartyId, VoterId};
