//! The application-facing side: replicated data driven by up-calls.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{Payload, ProcessId};

/// Replicated state updated by the protocol's up-calls.
///
/// Implementations must be deterministic: equal call sequences give equal
/// states. The protocol never calls these re-entrantly.
pub trait ReplicatedData: Clone {
    fn ground_state() -> Self;
    fn apply_message(&mut self, payload: &Payload, orig: ProcessId);
    fn apply_join(&mut self, pid: ProcessId);
    fn apply_removal(&mut self, pid: ProcessId);
}

/// One entry of a [`DeliveryLog`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEntry {
    Message { orig: ProcessId, payload: Payload },
    Join { pid: ProcessId },
    Removal { pid: ProcessId },
}

/// Reference replicated data: an append-only log of every up-call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryLog {
    pub entries: Vec<LogEntry>,
}

impl DeliveryLog {
    /// Number of delivered messages (joins and removals excluded).
    pub fn message_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, LogEntry::Message { .. }))
            .count()
    }

    /// Canonical rendering, one line per entry.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DeliveryLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            match e {
                LogEntry::Message { orig, payload } => writeln!(f, "msg {orig} {payload}")?,
                LogEntry::Join { pid } => writeln!(f, "join {pid}")?,
                LogEntry::Removal { pid } => writeln!(f, "remove {pid}")?,
            }
        }
        Ok(())
    }
}

impl ReplicatedData for DeliveryLog {
    fn ground_state() -> Self {
        DeliveryLog::default()
    }

    fn apply_message(&mut self, payload: &Payload, orig: ProcessId) {
        self.entries.push(LogEntry::Message {
            orig,
            payload: payload.clone(),
        });
    }

    fn apply_join(&mut self, pid: ProcessId) {
        self.entries.push(LogEntry::Join { pid });
    }

    fn apply_removal(&mut self, pid: ProcessId) {
        self.entries.push(LogEntry::Removal { pid });
    }
}
