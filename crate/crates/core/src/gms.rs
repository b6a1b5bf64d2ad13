//! Oracle group membership service.
//!
//! Keeps the linear sequence of views and, for every process, the queue of
//! notifications it is entitled to. It is an omniscient oracle inside the
//! simulator rather than a replicated service.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Notification, ProcessId, ViewChange, ViewId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GmsError {
    #[error("empty roster")]
    EmptyRoster,
    #[error("{0} is not a member of the current view")]
    NotMember(ProcessId),
    #[error("parent {parent} of {pid} is not a member of the current view")]
    ParentNotMember { pid: ProcessId, parent: ProcessId },
    #[error("process id {0} was already used")]
    Reused(ProcessId),
    #[error("removing {0} would leave the group empty")]
    LastMember(ProcessId),
}

/// One view of the sequence. `change` is absent for view 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view: ViewId,
    pub members: BTreeSet<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<ViewChange>,
}

#[derive(Debug, Clone)]
pub struct Gms {
    views: Vec<ViewRecord>,
    queues: BTreeMap<ProcessId, Vec<(ViewId, Notification)>>,
    joined: BTreeMap<ProcessId, ViewId>,
    removed: BTreeMap<ProcessId, ViewId>,
    parents: BTreeMap<ProcessId, ProcessId>,
}

impl Gms {
    pub fn new(roster: &BTreeSet<ProcessId>) -> Result<Self, GmsError> {
        if roster.is_empty() {
            return Err(GmsError::EmptyRoster);
        }
        Ok(Gms {
            views: vec![ViewRecord {
                view: ViewId(0),
                members: roster.clone(),
                change: None,
            }],
            queues: roster.iter().map(|&p| (p, Vec::new())).collect(),
            joined: roster.iter().map(|&p| (p, ViewId(0))).collect(),
            removed: BTreeMap::new(),
            parents: BTreeMap::new(),
        })
    }

    pub fn last_view(&self) -> ViewId {
        self.views.last().expect("view 0 always exists").view
    }

    pub fn views(&self) -> &[ViewRecord] {
        &self.views
    }

    pub fn members(&self, v: ViewId) -> Option<&BTreeSet<ProcessId>> {
        self.views.get(v.0 as usize).map(|r| &r.members)
    }

    pub fn current_members(&self) -> &BTreeSet<ProcessId> {
        &self.views.last().expect("view 0 always exists").members
    }

    /// Every process that was ever a member, in id order.
    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.joined.keys().copied()
    }

    pub fn join_view(&self, p: ProcessId) -> Option<ViewId> {
        self.joined.get(&p).copied()
    }

    pub fn removal_view(&self, p: ProcessId) -> Option<ViewId> {
        self.removed.get(&p).copied()
    }

    pub fn parent(&self, p: ProcessId) -> Option<ProcessId> {
        self.parents.get(&p).copied()
    }

    /// Notifications for `p` in view order. A joiner's queue starts with
    /// its own `New` notification.
    pub fn notifications(&self, p: ProcessId) -> &[(ViewId, Notification)] {
        self.queues.get(&p).map_or(&[], Vec::as_slice)
    }

    /// Appends a view and enqueues the matching notifications.
    pub fn propose_change(&mut self, change: ViewChange) -> Result<ViewId, GmsError> {
        let prev = self.current_members().clone();
        let view = self.last_view().next();
        let mut members = prev.clone();
        match change {
            ViewChange::Remove { pid } => {
                if !prev.contains(&pid) {
                    return Err(GmsError::NotMember(pid));
                }
                if prev.len() == 1 {
                    return Err(GmsError::LastMember(pid));
                }
                members.remove(&pid);
                for &m in &members {
                    self.push(m, view, Notification::Remove { pid });
                }
                self.push(pid, view, Notification::Dead);
                self.removed.insert(pid, view);
            }
            ViewChange::Join { pid, parent } => {
                if self.joined.contains_key(&pid) {
                    return Err(GmsError::Reused(pid));
                }
                if !prev.contains(&parent) {
                    return Err(GmsError::ParentNotMember { pid, parent });
                }
                for &m in &prev {
                    self.push(m, view, Notification::Join { pid, parent });
                }
                self.push(
                    pid,
                    view,
                    Notification::New {
                        pid,
                        parent: Some(parent),
                    },
                );
                members.insert(pid);
                self.joined.insert(pid, view);
                self.parents.insert(pid, parent);
            }
        }
        self.views.push(ViewRecord {
            view,
            members,
            change: Some(change),
        });
        Ok(view)
    }

    fn push(&mut self, p: ProcessId, v: ViewId, n: Notification) {
        self.queues.entry(p).or_default().push((v, n));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pids(ns: &[u32]) -> BTreeSet<ProcessId> {
        ns.iter().map(|&n| ProcessId(n)).collect()
    }

    #[test]
    fn removal_notifies_survivors_and_kills_target() {
        let mut g = Gms::new(&pids(&[0, 1, 2])).unwrap();
        let v = g
            .propose_change(ViewChange::Remove { pid: ProcessId(2) })
            .unwrap();
        assert_eq!(v, ViewId(1));
        for p in [0, 1] {
            assert_eq!(
                g.notifications(ProcessId(p)),
                &[(ViewId(1), Notification::Remove { pid: ProcessId(2) })]
            );
        }
        assert_eq!(
            g.notifications(ProcessId(2)),
            &[(ViewId(1), Notification::Dead)]
        );
        assert_eq!(g.members(ViewId(1)), Some(&pids(&[0, 1])));
    }

    #[test]
    fn join_notifies_members_and_creates_child() {
        let mut g = Gms::new(&pids(&[0, 1])).unwrap();
        let change = ViewChange::Join {
            pid: ProcessId(9),
            parent: ProcessId(0),
        };
        g.propose_change(change).unwrap();
        let join = Notification::Join {
            pid: ProcessId(9),
            parent: ProcessId(0),
        };
        assert_eq!(g.notifications(ProcessId(0)), &[(ViewId(1), join)]);
        assert_eq!(g.notifications(ProcessId(1)), &[(ViewId(1), join)]);
        assert_eq!(
            g.notifications(ProcessId(9)),
            &[(
                ViewId(1),
                Notification::New {
                    pid: ProcessId(9),
                    parent: Some(ProcessId(0))
                }
            )]
        );
        assert_eq!(g.join_view(ProcessId(9)), Some(ViewId(1)));
        assert_eq!(g.parent(ProcessId(9)), Some(ProcessId(0)));
    }

    #[test]
    fn illegal_changes_are_rejected() {
        let mut g = Gms::new(&pids(&[0, 1])).unwrap();
        assert_eq!(
            g.propose_change(ViewChange::Remove { pid: ProcessId(5) }),
            Err(GmsError::NotMember(ProcessId(5)))
        );
        g.propose_change(ViewChange::Remove { pid: ProcessId(1) })
            .unwrap();
        assert_eq!(
            g.propose_change(ViewChange::Join {
                pid: ProcessId(1),
                parent: ProcessId(0)
            }),
            Err(GmsError::Reused(ProcessId(1)))
        );
        assert_eq!(
            g.propose_change(ViewChange::Remove { pid: ProcessId(0) }),
            Err(GmsError::LastMember(ProcessId(0)))
        );
        assert_eq!(g.last_view(), ViewId(1));
    }

    #[test]
    fn view_intervals_are_contiguous() {
        let mut g = Gms::new(&pids(&[0, 1])).unwrap();
        g.propose_change(ViewChange::Join {
            pid: ProcessId(2),
            parent: ProcessId(1),
        })
        .unwrap();
        g.propose_change(ViewChange::Remove { pid: ProcessId(0) })
            .unwrap();
        g.propose_change(ViewChange::Join {
            pid: ProcessId(3),
            parent: ProcessId(2),
        })
        .unwrap();
        for p in g.processes().collect::<Vec<_>>() {
            let views: Vec<u64> = g.notifications(p).iter().map(|(v, _)| v.0).collect();
            let start = g.join_view(p).unwrap().0;
            let first = if start == 0 { 1 } else { start };
            let expect: Vec<u64> = (first..first + views.len() as u64).collect();
            assert_eq!(views, expect, "{p}");
        }
    }
}
