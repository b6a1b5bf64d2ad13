//! Offline checks over recorded traces.
//!
//! Every check is a pure function of a [`Trace`] and returns one
//! [`Verdict`]. A failing verdict names the events (by sequence number) that
//! witness the failure.

mod axioms;
mod causal;
mod donation;
mod install;
mod routes;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gms::ViewRecord;
use crate::trace::{EventKind, Trace, TraceEvent};
use crate::types::{Notification, ProcessId, ViewChange, ViewId};

pub use axioms::check_history_axioms;
pub use causal::{check_causal_order, check_progress};
pub use donation::{check_donation, donation_oracle, DonationCase, DonationSide};
pub use install::{check_central_lemma, check_install_flush, check_view_agreement};
pub use routes::check_unique_takeup;

pub const CAUSAL_ORDER: &str = "causal-order";
pub const PROGRESS: &str = "progress";
pub const CENTRAL_LEMMA: &str = "central-lemma";
pub const INSTALL_FLUSH: &str = "install-flush";
pub const UNIQUE_TAKEUP: &str = "unique-take-up";
pub const DONATION: &str = "donation-correspondence";
pub const HISTORY_AXIOMS: &str = "history-axioms";
pub const VIEW_AGREEMENT: &str = "view-agreement";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Result of one check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub result: Outcome,
    /// Report-only checks never affect the exit status.
    #[serde(default)]
    pub soft: bool,
    /// Sequence numbers of the witnessing events.
    pub counterexample: Vec<u64>,
    pub note: String,
}

impl Verdict {
    pub fn pass(property: &str) -> Self {
        Verdict {
            property: property.into(),
            result: Outcome::Pass,
            soft: false,
            counterexample: Vec::new(),
            note: String::new(),
        }
    }

    pub fn fail(property: &str, counterexample: Vec<u64>, note: impl Into<String>) -> Self {
        Verdict {
            property: property.into(),
            result: Outcome::Fail,
            soft: false,
            counterexample,
            note: note.into(),
        }
    }

    pub fn inconclusive(property: &str, note: impl Into<String>) -> Self {
        Verdict {
            property: property.into(),
            result: Outcome::Inconclusive,
            soft: false,
            counterexample: Vec::new(),
            note: note.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.result == Outcome::Pass
    }

    /// True when this verdict should fail a run.
    pub fn is_hard_failure(&self) -> bool {
        self.result == Outcome::Fail && !self.soft
    }

    /// One JSON object per line, fields in declaration order.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("verdicts always encode")
    }
}

/// Collects failures and turns them into a verdict that reports the first
/// one and counts the rest.
pub(crate) struct Failures {
    property: &'static str,
    first: Option<(Vec<u64>, String)>,
    count: usize,
}

impl Failures {
    pub fn new(property: &'static str) -> Self {
        Failures {
            property,
            first: None,
            count: 0,
        }
    }

    pub fn push(&mut self, seqs: Vec<u64>, note: impl Into<String>) {
        self.count += 1;
        if self.first.is_none() {
            let mut seqs = seqs;
            seqs.sort_unstable();
            seqs.dedup();
            self.first = Some((seqs, note.into()));
        }
    }

    pub fn verdict(self) -> Verdict {
        match self.first {
            None => Verdict::pass(self.property),
            Some((seqs, note)) => {
                let note = if self.count > 1 {
                    format!("{note} (and {} more)", self.count - 1)
                } else {
                    note
                };
                Verdict::fail(self.property, seqs, note)
            }
        }
    }
}

/// Runs every check. The last verdict is the report-only agreement check.
pub fn run_all(trace: &Trace) -> Vec<Verdict> {
    let h = History::new(trace);
    vec![
        check_history_axioms(&h),
        check_causal_order(&h),
        check_progress(&h),
        check_central_lemma(&h),
        check_install_flush(&h),
        check_unique_takeup(&h),
        check_donation(&h),
        check_view_agreement(&h),
    ]
}

/// Index over a trace shared by the checks.
pub struct History<'a> {
    pub trace: &'a Trace,
    /// View records in the order the membership service decided them.
    pub views: Vec<(u64, ViewRecord)>,
    /// Per-process event positions, in trace order.
    pub by_process: BTreeMap<ProcessId, Vec<usize>>,
    /// Child -> (parent, position of the parent's join notification).
    pub forks: BTreeMap<ProcessId, (ProcessId, usize)>,
}

impl<'a> History<'a> {
    pub fn new(trace: &'a Trace) -> Self {
        let mut views = Vec::new();
        let mut by_process: BTreeMap<ProcessId, Vec<usize>> = BTreeMap::new();
        let mut join_notes: BTreeMap<(ProcessId, ProcessId), usize> = BTreeMap::new();
        let mut forks = BTreeMap::new();
        for (i, ev) in trace.events.iter().enumerate() {
            let Some(p) = ev.process() else {
                if let EventKind::View(rec) = &ev.kind {
                    views.push((ev.seq, rec.clone()));
                }
                continue;
            };
            by_process.entry(p).or_default().push(i);
            if let EventKind::Notify { note, .. } = &ev.kind {
                match *note {
                    Notification::Join { pid, parent } if parent == p => {
                        join_notes.insert((parent, pid), i);
                    }
                    Notification::New {
                        pid,
                        parent: Some(parent),
                    } if pid == p => {
                        if let Some(&at) = join_notes.get(&(parent, pid)) {
                            forks.insert(pid, (parent, at));
                        }
                    }
                    _ => {}
                }
            }
        }
        History {
            trace,
            views,
            by_process,
            forks,
        }
    }

    pub fn events(&self) -> &'a [TraceEvent] {
        &self.trace.events
    }

    pub fn event(&self, i: usize) -> &'a TraceEvent {
        &self.trace.events[i]
    }

    pub fn seq(&self, i: usize) -> u64 {
        self.trace.events[i].seq
    }

    pub fn members(&self, v: ViewId) -> Option<&BTreeSet<ProcessId>> {
        self.views
            .iter()
            .find(|(_, r)| r.view == v)
            .map(|(_, r)| &r.members)
    }

    pub fn last_view(&self) -> Option<ViewId> {
        self.views.last().map(|(_, r)| r.view)
    }

    /// Every process named by the membership service.
    pub fn processes(&self) -> BTreeSet<ProcessId> {
        self.views
            .iter()
            .flat_map(|(_, r)| r.members.iter().copied())
            .chain(self.by_process.keys().copied())
            .collect()
    }

    pub fn join_view(&self, p: ProcessId) -> Option<ViewId> {
        self.views
            .iter()
            .find(|(_, r)| r.members.contains(&p))
            .map(|(_, r)| r.view)
    }

    pub fn removal_view(&self, p: ProcessId) -> Option<ViewId> {
        self.views.iter().find_map(|(_, r)| match r.change {
            Some(ViewChange::Remove { pid }) if pid == p => Some(r.view),
            _ => None,
        })
    }

    /// Processes with a halt event.
    pub fn halted(&self) -> BTreeSet<ProcessId> {
        self.events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Halt { .. }))
            .filter_map(TraceEvent::process)
            .collect()
    }

    /// Processes that started and never halted.
    pub fn non_halting(&self) -> BTreeSet<ProcessId> {
        let halted = self.halted();
        self.by_process
            .keys()
            .copied()
            .filter(|p| !halted.contains(p))
            .collect()
    }

    /// Maps each dequeue-relevant channel slot `(src, dst, ord)` to the
    /// position of its queuing event.
    pub fn queue_positions(&self) -> BTreeMap<(ProcessId, ProcessId, u64), usize> {
        let mut out = BTreeMap::new();
        for (i, ev) in self.events().iter().enumerate() {
            if let (Some(src), EventKind::Queue { to, .. }) = (ev.process(), &ev.kind) {
                for (&dst, &ord) in to {
                    out.insert((src, dst, ord), i);
                }
            }
        }
        out
    }

    /// Position of the trigger that opened the transaction containing
    /// position `i`, if any.
    pub fn trigger_of(&self, i: usize) -> Option<usize> {
        let p = self.event(i).process()?;
        let list = &self.by_process[&p];
        let at = list.partition_point(|&j| j <= i);
        list[..at]
            .iter()
            .rev()
            .copied()
            .find(|&j| self.event(j).kind.is_trigger())
    }

    /// Positions of the events in the transaction opened by trigger `t`.
    pub fn transaction(&self, t: usize) -> Vec<usize> {
        let Some(p) = self.event(t).process() else {
            return Vec::new();
        };
        let list = &self.by_process[&p];
        let start = list.partition_point(|&j| j < t);
        let mut out = vec![t];
        for &j in &list[start + 1..] {
            let kind = &self.event(j).kind;
            if kind.is_trigger()
                || matches!(kind, EventKind::Discard { .. } | EventKind::Halt { .. })
            {
                break;
            }
            out.push(j);
        }
        out
    }

    /// Position of `p`'s notification for `view`.
    pub fn notify_position(&self, p: ProcessId, view: ViewId) -> Option<usize> {
        self.by_process
            .get(&p)?
            .iter()
            .copied()
            .find(|&i| matches!(self.event(i).kind, EventKind::Notify { view: v, .. } if v == view))
    }
}
