//! Value types shared by the protocol, the simulator and the checkers.
//!
//! Everything here is plain data with a canonical JSON encoding. Maps are
//! `BTreeMap`s so that encodings and iteration orders are deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Errors raised while building or parsing core values.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    #[error("invalid process id `{0}` (expected p<number>)")]
    BadProcessId(String),
    #[error("message from {orig} is unstamped: its own vector entry is zero")]
    Unstamped { orig: ProcessId },
    #[error("counter overflow")]
    Overflow,
}

/// A process identifier. Identifiers are never reused, so a process that
/// leaves and "rejoins" gets a fresh id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('p')
            .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|rest| rest.parse().ok())
            .map(ProcessId)
            .ok_or_else(|| CoreError::BadProcessId(s.to_string()))
    }
}

impl Serialize for ProcessId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// A view number. View 0 is the initial roster.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ViewId(pub u64);

impl ViewId {
    pub fn next(self) -> ViewId {
        self + 1
    }
}

impl Add<u64> for ViewId {
    type Output = ViewId;

    fn add(self, rhs: u64) -> ViewId {
        ViewId(self.0.checked_add(rhs).expect("view number overflow"))
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A pair of packet counters: `b` counts broadcast message packets and `f`
/// counts forwarded ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterPair {
    pub b: u64,
    pub f: u64,
}

impl CounterPair {
    pub fn new(b: u64, f: u64) -> Self {
        CounterPair { b, f }
    }

    /// `b + f`, the norm used when ordering untimely records.
    pub fn total(&self) -> u64 {
        self.b.checked_add(self.f).expect("counter overflow")
    }

    pub fn incr_b(&mut self) {
        self.b = self.b.checked_add(1).expect("counter overflow");
    }

    pub fn incr_f(&mut self) {
        self.f = self.f.checked_add(1).expect("counter overflow");
    }
}

/// Free-function form of [`CounterPair::total`].
pub fn counter_total(c: &CounterPair) -> u64 {
    c.total()
}

/// A vector timestamp indexed by process id.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorTime(pub BTreeMap<ProcessId, u64>);

impl VectorTime {
    pub fn new() -> Self {
        VectorTime(BTreeMap::new())
    }

    /// All-zero vector over the given keys.
    pub fn zeros<'a>(keys: impl IntoIterator<Item = &'a ProcessId>) -> Self {
        VectorTime(keys.into_iter().map(|k| (*k, 0)).collect())
    }

    /// Entry for `p`; missing entries read as zero.
    pub fn get(&self, p: ProcessId) -> u64 {
        self.0.get(&p).copied().unwrap_or(0)
    }

    pub fn set(&mut self, p: ProcessId, v: u64) {
        self.0.insert(p, v);
    }

    pub fn keys(&self) -> impl Iterator<Item = &ProcessId> {
        self.0.keys()
    }

    /// Pointwise comparison over the keys both vectors share.
    ///
    /// Returns `None` when the vectors are concurrent on the shared keys.
    pub fn causal_cmp(&self, other: &VectorTime) -> Option<Ordering> {
        let mut le = true;
        let mut ge = true;
        for (k, a) in &self.0 {
            if let Some(b) = other.0.get(k) {
                le &= a <= b;
                ge &= a >= b;
            }
        }
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }

    /// `self <= other` pointwise over shared keys.
    pub fn le(&self, other: &VectorTime) -> bool {
        matches!(
            self.causal_cmp(other),
            Some(Ordering::Less | Ordering::Equal)
        )
    }
}

/// Opaque application payload.
///
/// Encoded as a JSON string when it is valid UTF-8 and as an array of bytes
/// otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Payload(pub Vec<u8>);

impl Payload {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl From<&str> for Payload {
    fn from(s: &str) -> Self {
        Payload(s.as_bytes().to_vec())
    }
}

impl From<String> for Payload {
    fn from(s: String) -> Self {
        Payload(s.into_bytes())
    }
}

impl From<Vec<u8>> for Payload {
    fn from(b: Vec<u8>) -> Self {
        Payload(b)
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "{s:?}"),
            Err(_) => write!(f, "{:?}", self.0),
        }
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(text) => s.serialize_str(text),
            Err(_) => self.0.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PayloadVisitor;

        impl<'de> Visitor<'de> for PayloadVisitor {
            type Value = Payload;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a string or an array of bytes")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Payload, E> {
                Ok(Payload(v.as_bytes().to_vec()))
            }

            fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> Result<Payload, A::Error> {
                let mut out = Vec::new();
                while let Some(b) = seq.next_element::<u8>()? {
                    out.push(b);
                }
                Ok(Payload(out))
            }
        }

        d.deserialize_any(PayloadVisitor)
    }
}

/// Identity of a stamped message: its view, its vector time and its
/// originator. Two packets carry the same message iff their ids are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub mview: ViewId,
    pub mvt: VectorTime,
    pub orig: ProcessId,
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@v{}#{}",
            self.orig,
            self.mview,
            self.mvt.get(self.orig)
        )
    }
}

/// A broadcast message after stamping.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StampedMessage {
    pub payload: Payload,
    pub orig: ProcessId,
    pub mview: ViewId,
    pub mvt: VectorTime,
}

impl StampedMessage {
    /// Builds a stamped message, rejecting vectors whose own entry is zero.
    pub fn new(
        payload: Payload,
        orig: ProcessId,
        mview: ViewId,
        mvt: VectorTime,
    ) -> Result<Self, CoreError> {
        if mvt.get(orig) == 0 {
            return Err(CoreError::Unstamped { orig });
        }
        Ok(StampedMessage {
            payload,
            orig,
            mview,
            mvt,
        })
    }

    pub fn id(&self) -> MessageId {
        MessageId {
            mview: self.mview,
            mvt: self.mvt.clone(),
            orig: self.orig,
        }
    }
}

/// Free-function form of [`StampedMessage::id`].
pub fn message_id(msg: &StampedMessage) -> MessageId {
    msg.id()
}

/// Which wait set a record lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaitKind {
    Bcast,
    Fwd,
}

/// A message waiting for acknowledgements.
///
/// `index` is the sender's outgoing counter when the packet was queued and
/// `iset` maps every process still owing an ack to the incoming counter for
/// that process at queuing time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaitRecord {
    pub msg: StampedMessage,
    pub index: CounterPair,
    pub iset: BTreeMap<ProcessId, CounterPair>,
    pub kind: WaitKind,
}

/// State shipped in donation and co-donation packets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DonationBody {
    /// Broadcast records first, then forward records, each in set order.
    pub wait_set: Vec<WaitRecord>,
    pub mpkt_in: BTreeMap<ProcessId, CounterPair>,
    pub ghost_height: ViewId,
    pub flush_height: ViewId,
}

/// Packet contents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PacketKind {
    Msg { msg: StampedMessage },
    Ack { id: MessageId },
    Ghost { view: ViewId },
    Flush { view: ViewId },
    Donation { body: DonationBody },
    Codonation { body: DonationBody },
}

impl PacketKind {
    pub fn label(&self) -> &'static str {
        match self {
            PacketKind::Msg { .. } => "msg",
            PacketKind::Ack { .. } => "ack",
            PacketKind::Ghost { .. } => "ghost",
            PacketKind::Flush { .. } => "flush",
            PacketKind::Donation { .. } => "donation",
            PacketKind::Codonation { .. } => "codonation",
        }
    }
}

/// A packet on the wire: contents plus the sender's notified height when it
/// was queued.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub kind: PacketKind,
    pub height: ViewId,
}

/// A membership change as decided by the membership service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ViewChange {
    Join { pid: ProcessId, parent: ProcessId },
    Remove { pid: ProcessId },
}

impl ViewChange {
    pub fn pid(&self) -> ProcessId {
        match *self {
            ViewChange::Join { pid, .. } | ViewChange::Remove { pid } => pid,
        }
    }
}

/// A notification delivered by the membership service to one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "lowercase")]
pub enum Notification {
    /// Some other member is removed.
    Remove { pid: ProcessId },
    /// A new process joins, forked from `parent`.
    Join { pid: ProcessId, parent: ProcessId },
    /// The recipient itself is created. `parent` is absent for roster members.
    New {
        pid: ProcessId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<ProcessId>,
    },
    /// The recipient is removed and must halt.
    Dead,
}

/// A view change as queued inside a process, waiting for installation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "pid", rename_all = "lowercase")]
pub enum PendingChange {
    Join(ProcessId),
    Remove(ProcessId),
}
