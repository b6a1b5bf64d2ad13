//! Invariant checks run after every transaction.
//!
//! Local claims come from the protocol module. The claims checked here need
//! the membership oracle or the state of other processes.

use std::collections::{BTreeMap, BTreeSet};

use super::{Sim, Violation};
use crate::app::DeliveryLog;
use crate::protocol::{check_local_invariants, InvariantViolation, ProcessState};
use crate::types::{ProcessId, ViewId};

type Heights = BTreeMap<ProcessId, ViewId>;

/// Heights recorded around notification dequeues.
#[derive(Debug, Default)]
pub(super) struct HeightLedger {
    /// `(X, i) -> (ghost_height, flush_height)` at X just before notify i.
    pre: BTreeMap<(ProcessId, ViewId), (ViewId, ViewId)>,
    /// `(P, i) -> (ghost[], flush[])` at P just after notify i.
    post: BTreeMap<(ProcessId, ViewId), (Heights, Heights)>,
}

impl HeightLedger {
    pub fn record_pre(&mut self, p: ProcessId, view: ViewId, st: &ProcessState<DeliveryLog>) {
        self.pre
            .insert((p, view), (st.ghost_height, st.flush_height));
    }

    pub fn record_post(&mut self, p: ProcessId, view: ViewId, st: &ProcessState<DeliveryLog>) {
        self.post
            .insert((p, view), (st.ghost.clone(), st.flush.clone()));
    }

    /// Compares P's post maps for view i with X's pre heights for view i,
    /// for every pair involving `p`.
    fn violations_at(&self, p: ProcessId, view: ViewId) -> Vec<InvariantViolation> {
        let mut out = Vec::new();
        let mut compare = |at: ProcessId, x: ProcessId| {
            let (Some((ghosts, flushes)), Some(&(gh, fh))) =
                (self.post.get(&(at, view)), self.pre.get(&(x, view)))
            else {
                return;
            };
            let (Some(&g), Some(&f)) = (ghosts.get(&x), flushes.get(&x)) else {
                return;
            };
            if g > gh || f > fh {
                out.push(InvariantViolation {
                    claim: 7,
                    process: at,
                    detail: format!(
                        "after notify {view}: ghost[{x}]={g} flush[{x}]={f}, but {x} had ghost_height={gh} flush_height={fh} before its notify"
                    ),
                });
            }
        };
        let others: BTreeSet<ProcessId> = self
            .post
            .keys()
            .chain(self.pre.keys())
            .filter(|(q, v)| *v == view && *q != p)
            .map(|(q, _)| *q)
            .collect();
        for q in others {
            compare(p, q);
            compare(q, p);
        }
        out
    }
}

impl Sim<'_> {
    pub(super) fn check_heights(&mut self, p: ProcessId, view: ViewId) {
        let found = self.heights.violations_at(p, view);
        self.violations
            .extend(found.into_iter().map(Violation::Invariant));
    }

    /// Runs every per-transaction claim at `p`. `pre` holds the live set and
    /// the received heights before the transaction, when there was one.
    pub(super) fn post_checks(
        &mut self,
        p: ProcessId,
        pre: Option<(BTreeSet<ProcessId>, Heights, Heights)>,
    ) {
        let pr = &self.procs[&p];
        let Some(st) = pr.state.as_ref() else { return };
        let mut found = check_local_invariants(st, pr.notified);
        let mut fail = |claim: u8, detail: String| {
            found.push(InvariantViolation {
                claim,
                process: p,
                detail,
            })
        };

        let h = pr.notified;
        let my_join = self.gms.join_view(p).unwrap_or_default();
        let live: BTreeSet<ProcessId> = self
            .gms
            .processes()
            .filter(|&q| {
                self.gms.join_view(q).is_some_and(|j| j <= h)
                    && self.gms.removal_view(q).is_none_or(|r| r > h)
            })
            .collect();
        if st.live_set != live {
            fail(2, format!("live set {:?}, expected {live:?}", st.live_set));
        }
        let contact: BTreeSet<ProcessId> = live
            .iter()
            .copied()
            .filter(|&q| {
                self.gms.join_view(q).is_some_and(|j| j >= my_join) || pr.donors.contains(&q)
            })
            .collect();
        if st.contact_set != contact {
            fail(
                2,
                format!("contact set {:?}, expected {contact:?}", st.contact_set),
            );
        }

        if let Some((pre_live, pre_ghost, pre_flush)) = pre {
            for x in pre_live.intersection(&st.live_set) {
                let before = (pre_ghost.get(x), pre_flush.get(x));
                let after = (st.ghost.get(x), st.flush.get(x));
                if let ((Some(g0), Some(f0)), (Some(g1), Some(f1))) = (before, after) {
                    if g1 < g0 || f1 < f0 {
                        fail(
                            6,
                            format!("heights of {x} fell from ({g0},{f0}) to ({g1},{f1})"),
                        );
                    }
                }
            }
        }
        self.violations
            .extend(found.into_iter().map(Violation::Invariant));
    }
}
