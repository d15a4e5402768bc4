//! Discrete-event message scheduler.
//!
//! Every pair of nodes is joined by two channels: a confidential one (shares
//! travel here) and an observable one (ledger traffic). Both carry a tag
//! under the pair key, so a payload altered in flight fails verification at
//! the receiver; the failure is logged and the sender's retained copy is
//! retransmitted. Delivery takes one tick; events run in `(tick, sequence)`
//! order, so a run is a pure function of its inputs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ledger::AuthKeyTable;
use crate::trace::TraceLog;
use crate::{AuthTag, Digest, PartyId};

pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Confidential and authenticated; an observer learns only that a
    /// message of some length passed.
    #[serde(rename = "quantum")]
    QuantumSecure,
    /// Authenticated; contents visible to a global observer.
    #[serde(rename = "classical")]
    ClassicalAuth,
}

impl ChannelKind {
    pub fn observable_by_adversary(self) -> bool {
        self == ChannelKind::ClassicalAuth
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum NetError {
    #[error("no channel between {0} and {1}")]
    NoChannel(PartyId, PartyId),
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum SimError {
    #[error("simulation exceeded tick limit at tick {tick}: {diagnostic}")]
    SimulationTimeout { tick: Tick, diagnostic: String },
}

/// What the global observer learns about one transmission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observation {
    Plaintext {
        tick: Tick,
        sender: PartyId,
        receiver: PartyId,
        payload: Vec<u8>,
    },
    LengthOnly {
        tick: Tick,
        sender: PartyId,
        receiver: PartyId,
        len: usize,
    },
}

/// Corrupts the next `remaining` messages `sender` puts on `channel`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TamperRule {
    pub sender: PartyId,
    pub channel: ChannelKind,
    pub remaining: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Inbound {
    Message {
        sender: PartyId,
        channel: ChannelKind,
        payload: Vec<u8>,
        tag: Option<AuthTag>,
    },
    Timer {
        label: String,
    },
}

#[derive(Clone, Debug)]
struct Envelope {
    sender: PartyId,
    channel: ChannelKind,
    payload: Vec<u8>,
    tag: Option<AuthTag>,
    /// Untouched bytes kept by the sender when the copy in flight was altered.
    retained: Option<Vec<u8>>,
}

#[derive(Clone, Debug)]
enum Item {
    Message(Envelope),
    Timer(String),
}

#[derive(Clone, Debug)]
struct Scheduled {
    time: Tick,
    seq: u64,
    receiver: PartyId,
    item: Item,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Node logic driven by the scheduler.
pub trait World {
    fn deliver(&mut self, net: &mut Network, to: PartyId, inbound: Inbound);

    /// Called whenever the queue drains; may schedule more work.
    fn on_quiescent(&mut self, _net: &mut Network) {}

    /// Names what the world is still waiting for, for timeout reports.
    fn stall_diagnostic(&self) -> String {
        "no progress".to_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SendReceipt {
    pub deliver_at: Tick,
    pub payload_digest: Digest,
    pub trace_line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub events: u64,
    pub final_tick: Tick,
}

pub struct Network {
    now: Tick,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    keys: AuthKeyTable,
    trace: TraceLog,
    observations: Vec<Observation>,
    tamper: Vec<TamperRule>,
    tick_limit: Tick,
}

fn corrupt(payload: &[u8]) -> Vec<u8> {
    let mut out = payload.to_vec();
    if out.is_empty() {
        out.push(0);
    } else {
        let mid = out.len() / 2;
        out[mid] ^= 0x01;
    }
    out
}

impl Network {
    pub fn new(keys: AuthKeyTable, tick_limit: Tick) -> Self {
        Network {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            keys,
            trace: TraceLog::new(),
            observations: Vec::new(),
            tamper: Vec::new(),
            tick_limit,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn keys(&self) -> &AuthKeyTable {
        &self.keys
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn into_parts(self) -> (TraceLog, Vec<Observation>) {
        (self.trace, self.observations)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn add_tamper(&mut self, rule: TamperRule) {
        self.tamper.push(rule);
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Appends a world-level event to the trace at the current tick.
    pub fn record(
        &mut self,
        kind: &str,
        sender: Option<PartyId>,
        receiver: Option<PartyId>,
        detail: Value,
    ) -> usize {
        self.trace
            .push(self.now, kind, sender, receiver, None, detail)
    }

    fn schedule(&mut self, time: Tick, receiver: PartyId, item: Item) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            seq,
            receiver,
            item,
        });
    }

    pub fn schedule_timer(&mut self, party: PartyId, delay: Tick, label: &str) {
        self.schedule(self.now + delay, party, Item::Timer(label.to_owned()));
    }

    fn take_tamper(&mut self, sender: PartyId, channel: ChannelKind) -> bool {
        match self
            .tamper
            .iter_mut()
            .find(|r| r.sender == sender && r.channel == channel && r.remaining > 0)
        {
            Some(rule) => {
                rule.remaining -= 1;
                true
            }
            None => false,
        }
    }

    pub fn send(
        &mut self,
        sender: PartyId,
        receiver: PartyId,
        channel: ChannelKind,
        payload: Vec<u8>,
    ) -> Result<SendReceipt, NetError> {
        let payload_digest = Digest::of(&payload);
        let detail = json!({
            "payload": hex::encode(&payload),
            "payload_digest": payload_digest,
            "len": payload.len(),
        });
        let trace_line = self.trace.push(
            self.now,
            "send",
            Some(sender),
            Some(receiver),
            Some(channel),
            detail,
        );

        if sender == receiver {
            let envelope = Envelope {
                sender,
                channel,
                payload,
                tag: None,
                retained: None,
            };
            self.schedule(self.now, receiver, Item::Message(envelope));
            return Ok(SendReceipt {
                deliver_at: self.now,
                payload_digest,
                trace_line,
            });
        }

        let tag = self
            .keys
            .tag(sender, receiver, &payload)
            .ok_or(NetError::NoChannel(sender, receiver))?;
        self.observations
            .push(if channel.observable_by_adversary() {
                Observation::Plaintext {
                    tick: self.now,
                    sender,
                    receiver,
                    payload: payload.clone(),
                }
            } else {
                Observation::LengthOnly {
                    tick: self.now,
                    sender,
                    receiver,
                    len: payload.len(),
                }
            });
        let envelope = if self.take_tamper(sender, channel) {
            Envelope {
                sender,
                channel,
                payload: corrupt(&payload),
                tag: Some(tag),
                retained: Some(payload),
            }
        } else {
            Envelope {
                sender,
                channel,
                payload,
                tag: Some(tag),
                retained: None,
            }
        };
        let deliver_at = self.now + 1;
        self.schedule(deliver_at, receiver, Item::Message(envelope));
        Ok(SendReceipt {
            deliver_at,
            payload_digest,
            trace_line,
        })
    }

    fn intact(&self, receiver: PartyId, envelope: &Envelope) -> bool {
        if envelope.sender == receiver {
            return true;
        }
        envelope.tag.as_ref().is_some_and(|tag| {
            self.keys
                .verify(envelope.sender, receiver, &envelope.payload, tag)
        })
    }
}

/// Runs events until none remain and the world schedules nothing further.
pub fn run_until_quiescent<W: World>(
    world: &mut W,
    net: &mut Network,
) -> Result<RunStats, SimError> {
    let mut events = 0;
    loop {
        let Some(next) = net.queue.pop() else {
            world.on_quiescent(net);
            if net.queue.is_empty() {
                return Ok(RunStats {
                    events,
                    final_tick: net.now,
                });
            }
            continue;
        };
        if next.time > net.tick_limit {
            let diagnostic = world.stall_diagnostic();
            net.queue.push(next);
            return Err(SimError::SimulationTimeout {
                tick: net.tick_limit,
                diagnostic,
            });
        }
        net.now = next.time;
        events += 1;
        match next.item {
            Item::Timer(label) => {
                net.trace.push(
                    net.now,
                    "timer",
                    None,
                    Some(next.receiver),
                    None,
                    json!({ "label": label }),
                );
                world.deliver(net, next.receiver, Inbound::Timer { label });
            }
            Item::Message(envelope) => {
                let payload_digest = Digest::of(&envelope.payload);
                if !net.intact(next.receiver, &envelope) {
                    let mut detail = json!({ "payload_digest": payload_digest });
                    if let Some(original) = envelope.retained {
                        let tag = net.keys.tag(envelope.sender, next.receiver, &original);
                        detail["retransmit_at"] = json!(net.now + 1);
                        net.schedule(
                            net.now + 1,
                            next.receiver,
                            Item::Message(Envelope {
                                sender: envelope.sender,
                                channel: envelope.channel,
                                payload: original,
                                tag,
                                retained: None,
                            }),
                        );
                    }
                    net.trace.push(
                        net.now,
                        "delivery_failure",
                        Some(envelope.sender),
                        Some(next.receiver),
                        Some(envelope.channel),
                        detail,
                    );
                    continue;
                }
                net.trace.push(
                    net.now,
                    "deliver",
                    Some(envelope.sender),
                    Some(next.receiver),
                    Some(envelope.channel),
                    json!({ "payload_digest": payload_digest }),
                );
                world.deliver(
                    net,
                    next.receiver,
                    Inbound::Message {
                        sender: envelope.sender,
                        channel: envelope.channel,
                        payload: envelope.payload,
                        tag: envelope.tag,
                    },
                );
            }
        }
    }
}
