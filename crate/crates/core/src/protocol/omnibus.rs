//! Local state invariants that must hold at the end of every transaction.
//!
//! Claims that need knowledge outside one process (the live-set shape and
//! cross-process height bounds) are checked by the simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::ProcessState;
use crate::types::{ProcessId, ViewId};

/// A failed invariant, with the claim number it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation {
    pub claim: u8,
    pub process: ProcessId,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "claim {} at {}: {}",
            self.claim, self.process, self.detail
        )
    }
}

/// Checks the local claims. `notified` is the view of the last notification
/// the process dequeued.
pub fn check_local_invariants<D>(
    st: &ProcessState<D>,
    notified: ViewId,
) -> Vec<InvariantViolation> {
    let mut v = Vec::new();
    let mut fail = |claim: u8, detail: String| {
        v.push(InvariantViolation {
            claim,
            process: st.self_id,
            detail,
        })
    };
    let h = st.cur_view + st.v_gap;

    if h != notified {
        fail(
            1,
            format!("height {h} but last notification was for view {notified}"),
        );
    }
    if st.pend_view_queue.len() as u64 != st.v_gap {
        fail(
            1,
            format!(
                "{} pending changes for gap {}",
                st.pend_view_queue.len(),
                st.v_gap
            ),
        );
    }

    let checks = [
        ("fwd_queue", key_set(&st.fwd_queue)),
        ("mpkt_in", key_set(&st.mpkt_in)),
        ("ghost", key_set(&st.ghost)),
        ("flush", key_set(&st.flush)),
    ];
    for (name, ks) in checks {
        if ks != st.live_set {
            fail(
                3,
                format!("{name} keys {ks:?} differ from live set {:?}", st.live_set),
            );
        }
    }
    if !st.contact_set.is_subset(&st.live_set) {
        fail(2, "contact set is not a subset of the live set".into());
    }

    let vt_keys: BTreeSet<ProcessId> = st.vt.keys().copied().collect();
    if vt_keys != st.mset {
        fail(
            4,
            format!("vt keys {vt_keys:?} differ from mset {:?}", st.mset),
        );
    }

    for x in &st.live_set {
        let (Some(&g), Some(&f)) = (st.ghost.get(x), st.flush.get(x)) else {
            continue;
        };
        if !(f <= g && g <= h) {
            fail(5, format!("flush[{x}]={f} ghost[{x}]={g} height={h}"));
        }
        if !st.contact_set.contains(x) && g >= h {
            fail(5, format!("uncontacted {x} has ghost {g} at height {h}"));
        }
        if st.v_gap == 0 && (f != h || g != h) {
            fail(
                5,
                format!("no gap but flush[{x}]={f} ghost[{x}]={g} height={h}"),
            );
        }
    }

    let own_flush = st.flush.get(&st.self_id).copied().unwrap_or_default();
    if !(own_flush <= st.flush_height && st.flush_height <= st.ghost_height && st.ghost_height <= h)
    {
        fail(
            8,
            format!(
                "flush[self]={own_flush} flush_height={} ghost_height={} height={h}",
                st.flush_height, st.ghost_height
            ),
        );
    }

    if st.v_gap > 0 {
        if (st.ghost_height == h) != st.fwd_wait_set.is_empty() {
            fail(
                9,
                format!(
                    "ghost_height={} height={h} with {} forward records",
                    st.ghost_height,
                    st.fwd_wait_set.len()
                ),
            );
        }
        let waiting = st.bcast_wait_set.len() + st.fwd_wait_set.len();
        if (st.flush_height == h) != (waiting == 0) {
            fail(
                9,
                format!(
                    "flush_height={} height={h} with {waiting} wait records",
                    st.flush_height
                ),
            );
        }
    } else if !st.launch_queue.is_empty() {
        fail(
            10,
            format!("{} launches parked with no gap", st.launch_queue.len()),
        );
    }
    v
}

fn key_set<V>(m: &BTreeMap<ProcessId, V>) -> BTreeSet<ProcessId> {
    m.keys().copied().collect()
}
