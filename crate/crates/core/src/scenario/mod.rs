//! Scenario files, fault plans and random scenario generation.
//!
//! Scenarios are TOML documents. See `docs/scenario.md` for the grammar.

mod generate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gms::{Gms, GmsError};
use crate::types::{Payload, ProcessId, ViewChange, ViewId};

pub use generate::{generate_scenarios, GenerateLimits};

pub const DEFAULT_MAX_TICKS: u64 = 50_000;
pub const DEFAULT_DETECT_DELAY: u64 = 20;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("illegal membership change at tick {tick}: {source}")]
    Membership {
        tick: u64,
        #[source]
        source: GmsError,
    },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// A timed directive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub tick: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    /// The application at `pid` asks to broadcast `payload`, no earlier than
    /// the tick and, if given, once it has delivered `after_deliveries`
    /// messages.
    Broadcast {
        pid: ProcessId,
        payload: Payload,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        after_deliveries: Option<usize>,
    },
    /// Unbounded stream of broadcasts, one every `period` ticks.
    BroadcastEvery {
        pid: ProcessId,
        period: u64,
    },
    ProposeJoin {
        pid: ProcessId,
        parent: ProcessId,
    },
    ProposeRemove {
        pid: ProcessId,
    },
    Halt {
        pid: ProcessId,
    },
    /// Drops every packet on `src -> dst` with ordinal `from_ordinal` or
    /// later.
    DropPackets {
        src: ProcessId,
        dst: ProcessId,
        from_ordinal: u64,
    },
    /// The notification for `view` never reaches `pid`.
    DropNotification {
        pid: ProcessId,
        view: ViewId,
    },
}

fn default_max_ticks() -> u64 {
    DEFAULT_MAX_TICKS
}

fn default_detect_delay() -> u64 {
    DEFAULT_DETECT_DELAY
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    /// Ticks between start and the launch of Main at roster members.
    #[serde(default)]
    pub main_delay: u64,
    /// Ticks after which a halted member with no scheduled removal is
    /// removed by the membership service.
    #[serde(default = "default_detect_delay")]
    pub detect_delay: u64,
    pub roster: Vec<ProcessId>,
    #[serde(default, rename = "event")]
    pub events: Vec<Directive>,
}

/// Conformance-relevant faults extracted from a scenario.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub halts: BTreeMap<ProcessId, u64>,
    /// `(src, dst) -> (activation tick, first dropped ordinal)`.
    pub packet_drops: BTreeMap<(ProcessId, ProcessId), (u64, u64)>,
    pub notification_drops: BTreeSet<(ProcessId, ViewId)>,
}

/// One step of an application's Main script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainStep {
    pub at_tick: u64,
    pub after_deliveries: Option<usize>,
    pub payload: Payload,
}

/// Deterministic stand-in for an application's Main thread.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MainScript {
    pub steps: Vec<MainStep>,
    /// `(first tick, period)` of an unbounded stream.
    pub stream: Option<(u64, u64)>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always encode")
    }

    /// SHA-256 of the canonical encoding, in hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directives in application order: by tick, then file order.
    pub fn timeline(&self) -> Vec<&Directive> {
        let mut v: Vec<&Directive> = self.events.iter().collect();
        v.sort_by_key(|d| d.tick);
        v
    }

    /// Replays the membership changes through a fresh oracle.
    pub fn membership(&self) -> Result<Gms, ScenarioError> {
        let roster: BTreeSet<ProcessId> = self.roster.iter().copied().collect();
        let mut gms = Gms::new(&roster).map_err(|e| invalid(e.to_string()))?;
        for d in self.timeline() {
            let change = match d.action {
                Action::ProposeJoin { pid, parent } => ViewChange::Join { pid, parent },
                Action::ProposeRemove { pid } => ViewChange::Remove { pid },
                _ => continue,
            };
            gms.propose_change(change)
                .map_err(|source| ScenarioError::Membership {
                    tick: d.tick,
                    source,
                })?;
        }
        Ok(gms)
    }

    pub fn fault_plan(&self) -> FaultPlan {
        let mut plan = FaultPlan::default();
        for d in self.timeline() {
            match d.action {
                Action::Halt { pid } => {
                    plan.halts.entry(pid).or_insert(d.tick);
                }
                Action::DropPackets {
                    src,
                    dst,
                    from_ordinal,
                } => {
                    plan.packet_drops
                        .entry((src, dst))
                        .or_insert((d.tick, from_ordinal));
                }
                Action::DropNotification { pid, view } => {
                    plan.notification_drops.insert((pid, view));
                }
                _ => {}
            }
        }
        plan
    }

    pub fn main_scripts(&self) -> BTreeMap<ProcessId, MainScript> {
        let mut out: BTreeMap<ProcessId, MainScript> = BTreeMap::new();
        for d in self.timeline() {
            match &d.action {
                Action::Broadcast {
                    pid,
                    payload,
                    after_deliveries,
                } => out.entry(*pid).or_default().steps.push(MainStep {
                    at_tick: d.tick,
                    after_deliveries: *after_deliveries,
                    payload: payload.clone(),
                }),
                Action::BroadcastEvery { pid, period } => {
                    out.entry(*pid).or_default().stream = Some((d.tick, *period));
                }
                _ => {}
            }
        }
        out
    }

    /// Checks well-formedness and the conforming constraints on faults.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let roster: BTreeSet<ProcessId> = self.roster.iter().copied().collect();
        if roster.len() != self.roster.len() {
            return Err(invalid("duplicate process in roster"));
        }
        let gms = self.membership()?;
        let known: BTreeSet<ProcessId> = gms.processes().collect();
        let removed = |p: ProcessId| gms.removal_view(p).is_some();
        let plan = self.fault_plan();
        for d in &self.events {
            let pids: Vec<ProcessId> = match &d.action {
                Action::Broadcast { pid, .. }
                | Action::Halt { pid }
                | Action::ProposeRemove { pid }
                | Action::DropNotification { pid, .. } => vec![*pid],
                Action::BroadcastEvery { pid, period } => {
                    if *period == 0 {
                        return Err(invalid("broadcast_every needs a positive period"));
                    }
                    vec![*pid]
                }
                Action::ProposeJoin { pid, parent } => vec![*pid, *parent],
                Action::DropPackets { src, dst, .. } => vec![*src, *dst],
            };
            if let Some(p) = pids.iter().find(|p| !known.contains(p)) {
                return Err(invalid(format!(
                    "directive at tick {} names unknown process {p}",
                    d.tick
                )));
            }
        }
        for &(pid, view) in &plan.notification_drops {
            if !plan.halts.contains_key(&pid) {
                return Err(invalid(format!(
                    "notification for view {view} dropped at {pid}, which never halts"
                )));
            }
        }
        for (&(src, dst), &(_, from)) in &plan.packet_drops {
            if from == 0 {
                return Err(invalid("packet ordinals start at 1"));
            }
            let target_halts = plan.halts.contains_key(&dst) || removed(dst);
            if !removed(src) && !target_halts {
                return Err(invalid(format!(
                    "packets dropped on {src}->{dst}, but {src} is never removed and {dst} never halts"
                )));
            }
        }
        Ok(())
    }
}
