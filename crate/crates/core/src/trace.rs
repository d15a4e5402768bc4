//! Hash-chained event trace, one JSON object per line.
//!
//! Each line's `digest` is `H(previous digest, line serialized with a zero
//! digest)`, so editing, dropping or reordering any line changes every digest
//! after it. [`verify_trace`] replays a trace file byte for byte: it re-derives
//! every digest, checks payload digests of sends, rebuilds the chain from
//! block events and recomputes the tally.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ledger::{verify_blocks, LedgerBlock};
use crate::netsim::ChannelKind;
use crate::protocol::self_tally;
use crate::{Digest, PartyId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub tick: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub sender: Option<PartyId>,
    pub receiver: Option<PartyId>,
    pub channel: Option<ChannelKind>,
    pub digest: Digest,
    pub detail: Value,
}

impl TraceEvent {
    fn chained_digest(&self, prev: Digest) -> Digest {
        let unsealed = TraceEvent {
            digest: Digest::ZERO,
            ..self.clone()
        };
        let body = serde_json::to_vec(&unsealed).expect("trace event serializes");
        Digest::of_parts(&[b"qvote/trace", &prev.0, &body])
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}

#[derive(Clone, Debug, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
    head: Digest,
}

impl TraceLog {
    pub fn new() -> Self {
        TraceLog::default()
    }

    /// Appends an event and returns its 1-based line number.
    pub fn push(
        &mut self,
        tick: u64,
        kind: &str,
        sender: Option<PartyId>,
        receiver: Option<PartyId>,
        channel: Option<ChannelKind>,
        detail: Value,
    ) -> usize {
        let mut event = TraceEvent {
            tick,
            kind: kind.to_owned(),
            sender,
            receiver,
            channel,
            digest: Digest::ZERO,
            detail,
        };
        event.digest = event.chained_digest(self.head);
        self.head = event.digest;
        self.events.push(event);
        self.events.len()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| e.to_line() + "\n").collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
#[error("line {line}: {reason}")]
pub struct TraceError {
    /// 1-based line of the first inconsistency.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSummary {
    pub events: usize,
    pub blocks: Vec<LedgerBlock>,
    pub tally: Option<u64>,
}

fn field<'a>(detail: &'a Value, name: &str) -> Result<&'a Value, String> {
    detail
        .get(name)
        .ok_or_else(|| format!("detail is missing {name:?}"))
}

fn digest_field(detail: &Value, name: &str) -> Result<Digest, String> {
    field(detail, name)?
        .as_str()
        .ok_or_else(|| format!("{name} is not a string"))?
        .parse()
        .map_err(|e| format!("{name}: {e}"))
}

pub fn verify_trace(bytes: &[u8]) -> Result<TraceSummary, TraceError> {
    let fail = |line: usize, reason: String| TraceError { line, reason };
    if bytes.is_empty() {
        return Err(fail(1, "empty trace".into()));
    }
    let body = match bytes.strip_suffix(b"\n") {
        Some(body) => body,
        None => {
            let lines = bytes.split(|b| *b == b'\n').count();
            return Err(fail(lines, "missing final newline".into()));
        }
    };

    let mut prev = Digest::ZERO;
    let mut last_tick = 0;
    let mut blocks: Vec<LedgerBlock> = Vec::new();
    let mut tally = None;

    for (i, raw) in body.split(|b| *b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw).map_err(|_| fail(line, "not UTF-8".into()))?;
        let event: TraceEvent =
            serde_json::from_str(text).map_err(|e| fail(line, format!("unparseable: {e}")))?;
        if event.to_line() != text {
            return Err(fail(line, "not in canonical form".into()));
        }
        if event.chained_digest(prev) != event.digest {
            return Err(fail(line, "digest chain broken".into()));
        }
        prev = event.digest;
        if line == 1 && event.kind != "start" {
            return Err(fail(line, "trace must begin with a start event".into()));
        }
        if event.tick < last_tick {
            return Err(fail(line, "tick went backwards".into()));
        }
        last_tick = event.tick;

        let detail = &event.detail;
        match event.kind.as_str() {
            "send" => {
                let payload = field(detail, "payload")
                    .map_err(|r| fail(line, r))?
                    .as_str()
                    .and_then(|h| hex::decode(h).ok())
                    .ok_or_else(|| "payload is not hex".to_string())
                    .map_err(|r| fail(line, r))?;
                let expected = digest_field(detail, "payload_digest").map_err(|r| fail(line, r))?;
                if Digest::of(&payload) != expected {
                    return Err(fail(line, "payload digest mismatch".into()));
                }
            }
            "block" => {
                let block: LedgerBlock = serde_json::from_value(
                    field(detail, "block").map_err(|r| fail(line, r))?.clone(),
                )
                .map_err(|e| fail(line, format!("bad block: {e}")))?;
                let claimed = digest_field(detail, "block_digest").map_err(|r| fail(line, r))?;
                if block.digest() != claimed {
                    return Err(fail(line, "block digest mismatch".into()));
                }
                blocks.push(block);
                verify_blocks(&blocks).map_err(|e| fail(line, e.to_string()))?;
            }
            "tally" => {
                let stated = field(detail, "tally")
                    .map_err(|r| fail(line, r))?
                    .as_u64()
                    .ok_or_else(|| fail(line, "tally is not an integer".into()))?;
                let recomputed = self_tally(&blocks).map_err(|e| fail(line, e.to_string()))?;
                if recomputed != stated {
                    return Err(fail(
                        line,
                        format!("tally {stated} disagrees with chain tally {recomputed}"),
                    ));
                }
                tally = Some(stated);
            }
            _ => {}
        }
    }

    Ok(TraceSummary {
        events: body.split(|b| *b == b'\n').count(),
        blocks,
        tally,
    })
}
