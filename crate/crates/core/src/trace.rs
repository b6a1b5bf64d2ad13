//! Line-oriented trace format.
//!
//! ```text
//! # cbcast-trace v1 scenario=<sha256 hex> seed=<u64> prng=ChaCha8Rng
//! <seq> <tick> <actor> <kind> <json body>
//! ...
//! # end status=<quiescent|timeout|aborted> ticks=<u64>
//! ```
//!
//! `actor` is a process id or `gms`. Sequence numbers strictly increase.
//! The body is the JSON encoding of the event fields, with keys in a fixed
//! order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gms::ViewRecord;
use crate::protocol::SubTxKind;
use crate::types::{MessageId, Notification, Packet, Payload, PendingChange, ProcessId, ViewId};

pub const TRACE_MAGIC: &str = "cbcast-trace v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

/// Who performed an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Gms,
    Process(ProcessId),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Gms => f.write_str("gms"),
            Actor::Process(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for Actor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gms" {
            return Ok(Actor::Gms);
        }
        s.parse().map(Actor::Process).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HaltReason {
    /// Crash from the fault plan.
    Crash,
    /// The process dequeued its own removal.
    Dead,
}

/// Event payloads. The serde tag doubles as the `kind` column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "kebab-case")]
pub enum EventKind {
    /// A view decided by the membership service.
    View(ViewRecord),
    /// A notification dequeued by a process.
    Notify {
        view: ViewId,
        note: Notification,
    },
    /// A packet dequeued and handed to the protocol.
    PacketIn {
        from: ProcessId,
        ord: u64,
        packet: Packet,
    },
    /// A packet dequeued and dropped because its sender was removed.
    Discard {
        from: ProcessId,
        ord: u64,
        packet: Packet,
    },
    /// A broadcast request dequeued from the application.
    RequestIn {
        payload: Payload,
    },
    /// A message was stamped and broadcast.
    Broadcast {
        id: MessageId,
    },
    /// One queuing event; `to` maps each target to the channel ordinal.
    Queue {
        packet: Packet,
        to: BTreeMap<ProcessId, u64>,
    },
    TakeUp {
        id: MessageId,
        from: ProcessId,
    },
    Deliver {
        id: MessageId,
        payload: Payload,
    },
    Install {
        view: ViewId,
        gap: u64,
        change: PendingChange,
    },
    Launch {},
    Subtx {
        sub: SubTxKind,
        id: MessageId,
        from: ProcessId,
    },
    StaleAck {
        id: MessageId,
        from: ProcessId,
    },
    UntTie {
        a: MessageId,
        b: MessageId,
    },
    Halt {
        reason: HaltReason,
    },
}

impl EventKind {
    pub fn name(&self) -> String {
        let v = serde_json::to_value(self).expect("event kinds always encode");
        v["kind"].as_str().expect("tag is a string").to_string()
    }

    /// True for events that start a transaction.
    pub fn is_trigger(&self) -> bool {
        matches!(
            self,
            EventKind::Notify { .. } | EventKind::PacketIn { .. } | EventKind::RequestIn { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub tick: u64,
    pub actor: Actor,
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn process(&self) -> Option<ProcessId> {
        match self.actor {
            Actor::Process(p) => Some(p),
            Actor::Gms => None,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(&self.kind).map_err(|_| fmt::Error)?;
        let body = serde_json::to_string(&v["body"]).map_err(|_| fmt::Error)?;
        write!(
            f,
            "{} {} {} {} {}",
            self.seq,
            self.tick,
            self.actor,
            v["kind"].as_str().unwrap_or("?"),
            body
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub scenario_hash: String,
    pub seed: u64,
    pub prng: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Quiescent,
    Timeout,
    /// Stopped on a protocol contract violation.
    Aborted,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Quiescent => "quiescent",
            RunStatus::Timeout => "timeout",
            RunStatus::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEnd {
    pub status: RunStatus,
    pub ticks: u64,
}

/// A parsed or recorded trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub end: Option<TraceEnd>,
}

impl Trace {
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError {
            line: 1,
            msg: "empty trace".into(),
        })?;
        let header = parse_header(first).map_err(|msg| TraceError { line: 1, msg })?;
        let mut events: Vec<TraceEvent> = Vec::new();
        let mut end = None;
        for (i, line) in lines {
            let lineno = i + 1;
            let err = |msg: String| TraceError { line: lineno, msg };
            if end.is_some() {
                return Err(err("content after end marker".into()));
            }
            if let Some(rest) = line.strip_prefix("# end ") {
                end = Some(parse_end(rest).map_err(err)?);
                continue;
            }
            let ev = parse_event(line).map_err(err)?;
            if let Some(prev) = events.last() {
                if ev.seq <= prev.seq {
                    return Err(err(format!("sequence number {} does not increase", ev.seq)));
                }
                if ev.tick < prev.tick {
                    return Err(err(format!("tick {} goes backwards", ev.tick)));
                }
            }
            events.push(ev);
        }
        Ok(Trace {
            header,
            events,
            end,
        })
    }

    /// True when the run ended without enabled triggers.
    pub fn is_quiescent(&self) -> bool {
        matches!(
            self.end,
            Some(TraceEnd {
                status: RunStatus::Quiescent,
                ..
            })
        )
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# {TRACE_MAGIC} scenario={} seed={} prng={}",
            self.header.scenario_hash, self.header.seed, self.header.prng
        )?;
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        if let Some(end) = &self.end {
            writeln!(f, "# end status={} ticks={}", end.status, end.ticks)?;
        }
        Ok(())
    }
}

fn fields(s: &str) -> BTreeMap<&str, &str> {
    s.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect()
}

fn parse_header(line: &str) -> Result<TraceHeader, String> {
    let rest = line
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(TRACE_MAGIC))
        .ok_or_else(|| format!("missing `# {TRACE_MAGIC}` header"))?;
    let f = fields(rest);
    let get = |k: &str| {
        f.get(k)
            .copied()
            .ok_or_else(|| format!("header lacks `{k}`"))
    };
    Ok(TraceHeader {
        scenario_hash: get("scenario")?.to_string(),
        seed: get("seed")?.parse().map_err(|e| format!("bad seed: {e}"))?,
        prng: get("prng")?.to_string(),
    })
}

fn parse_end(rest: &str) -> Result<TraceEnd, String> {
    let f = fields(rest);
    let status = match f.get("status") {
        Some(&"quiescent") => RunStatus::Quiescent,
        Some(&"timeout") => RunStatus::Timeout,
        Some(&"aborted") => RunStatus::Aborted,
        other => return Err(format!("bad end status {other:?}")),
    };
    let ticks = f
        .get("ticks")
        .ok_or("end marker lacks `ticks`")?
        .parse()
        .map_err(|e| format!("bad ticks: {e}"))?;
    Ok(TraceEnd { status, ticks })
}

fn parse_event(line: &str) -> Result<TraceEvent, String> {
    let mut parts = line.splitn(5, ' ');
    let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
    let seq = next("seq")?.parse().map_err(|e| format!("bad seq: {e}"))?;
    let tick = next("tick")?
        .parse()
        .map_err(|e| format!("bad tick: {e}"))?;
    let actor: Actor = next("actor")?.parse()?;
    let kind = next("kind")?;
    let body: serde_json::Value =
        serde_json::from_str(next("body")?).map_err(|e| format!("bad body: {e}"))?;
    let kind: EventKind = serde_json::from_value(serde_json::json!({ "kind": kind, "body": body }))
        .map_err(|e| format!("bad `{kind}` event: {e}"))?;
    let gms_only = matches!(kind, EventKind::View(_));
    if gms_only != (actor == Actor::Gms) {
        return Err(format!("`{}` event has actor {actor}", kind.name()));
    }
    Ok(TraceEvent {
        seq,
        tick,
        actor,
        kind,
    })
}
