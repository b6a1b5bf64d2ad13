//! Causal order and progress, both phrased in terms of familiar messages.
//!
//! A message is familiar to X at an event if X delivered it earlier, or if
//! X's parent delivered it before forking X.

use std::collections::BTreeMap;

use super::{Failures, History, Verdict, CAUSAL_ORDER, PROGRESS};
use crate::trace::EventKind;
use crate::types::{MessageId, Notification, ProcessId, ViewId};

/// Message -> sequence number of the event that made it familiar.
type Familiar = BTreeMap<MessageId, u64>;

#[derive(Default, Clone)]
struct Local {
    familiar: Familiar,
    /// Highest delivered `mvt[orig]` per `(view, orig)`.
    delivered_upto: BTreeMap<(ViewId, ProcessId), u64>,
}

struct Sent {
    seq: u64,
    /// Earlier broadcasts by the same process.
    earlier: Vec<(MessageId, u64)>,
    familiar: Familiar,
}

/// Walks the trace keeping familiar sets, and hands each delivery to
/// `on_deliver`. Returns the final familiar sets and broadcasts.
fn walk(
    h: &History,
    mut on_deliver: impl FnMut(ProcessId, u64, &MessageId, &Local, Option<&Sent>),
) -> (
    BTreeMap<ProcessId, Local>,
    BTreeMap<MessageId, (ProcessId, u64)>,
) {
    let mut local: BTreeMap<ProcessId, Local> = BTreeMap::new();
    let mut at_fork: BTreeMap<ProcessId, Local> = BTreeMap::new();
    let mut own: BTreeMap<ProcessId, Vec<(MessageId, u64)>> = BTreeMap::new();
    let mut sent: BTreeMap<MessageId, Sent> = BTreeMap::new();
    for ev in h.events() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Notify { note, .. } => match *note {
                Notification::Join { pid, parent } if parent == p => {
                    let snap = local.get(&p).cloned().unwrap_or_default();
                    at_fork.insert(pid, snap);
                }
                Notification::New { pid, .. } if pid == p => {
                    let start = at_fork.remove(&p).unwrap_or_default();
                    local.insert(p, start);
                }
                _ => {}
            },
            EventKind::Broadcast { id } => {
                let earlier = own.get(&p).cloned().unwrap_or_default();
                let familiar = local
                    .get(&p)
                    .map(|l| l.familiar.clone())
                    .unwrap_or_default();
                sent.insert(
                    id.clone(),
                    Sent {
                        seq: ev.seq,
                        earlier,
                        familiar,
                    },
                );
                own.entry(p).or_default().push((id.clone(), ev.seq));
            }
            EventKind::Deliver { id, .. } => {
                let l = local.entry(p).or_default();
                on_deliver(p, ev.seq, id, l, sent.get(id));
                l.familiar.entry(id.clone()).or_insert(ev.seq);
                let k = (id.mview, id.orig);
                let n = id.mvt.get(id.orig);
                let e = l.delivered_upto.entry(k).or_default();
                *e = (*e).max(n);
            }
            _ => {}
        }
    }
    let origins = sent
        .iter()
        .map(|(id, s)| (id.clone(), (id.orig, s.seq)))
        .collect();
    (local, origins)
}

/// Checks that every delivery respects the causal past of the message.
pub fn check_causal_order(h: &History) -> Verdict {
    let mut f = Failures::new(CAUSAL_ORDER);
    walk(h, |q, seq, id, l, sent| {
        let Some(s) = sent else {
            f.push(
                vec![seq],
                format!("{q} delivered {id}, which was never broadcast"),
            );
            return;
        };
        if let Some(&prev) = l.familiar.get(id) {
            f.push(vec![prev, seq], format!("{q} delivered {id} twice"));
            return;
        }
        let n = id.mvt.get(id.orig);
        let upto = l
            .delivered_upto
            .get(&(id.mview, id.orig))
            .copied()
            .unwrap_or(0);
        if n != upto + 1 {
            f.push(
                vec![s.seq, seq],
                format!(
                    "{q} delivered {id} after only {upto} messages of {} in view {}",
                    id.orig, id.mview
                ),
            );
        }
        for (m, mseq) in &s.earlier {
            if !l.familiar.contains_key(m) {
                f.push(
                    vec![*mseq, s.seq, seq],
                    format!(
                        "{q} delivered {id} before {m}, which {} broadcast earlier",
                        id.orig
                    ),
                );
            }
        }
        for (m, mseq) in &s.familiar {
            if !l.familiar.contains_key(m) {
                f.push(
                    vec![*mseq, s.seq, seq],
                    format!(
                        "{q} delivered {id} before {m}, which was familiar to {} when it broadcast",
                        id.orig
                    ),
                );
            }
        }
    });
    f.verdict()
}

/// Checks that every message from a non-halting process ended up familiar
/// to every non-halting process. Needs a quiescent trace.
pub fn check_progress(h: &History) -> Verdict {
    if !h.trace.is_quiescent() {
        return Verdict::inconclusive(PROGRESS, "the run did not reach quiescence");
    }
    let mut f = Failures::new(PROGRESS);
    let (local, origins) = walk(h, |_, _, _, _, _| {});
    let alive = h.non_halting();
    for (id, &(orig, seq)) in &origins {
        if !alive.contains(&orig) {
            continue;
        }
        for q in &alive {
            let known = local.get(q).is_some_and(|l| l.familiar.contains_key(id));
            if !known {
                f.push(
                    vec![seq],
                    format!("{id} from {orig} never became familiar to {q}"),
                );
            }
        }
    }
    // Every broadcast request at a non-halting process must be stamped.
    for &p in &alive {
        let mut requests = Vec::new();
        let mut stamped = 0usize;
        for &i in &h.by_process[&p] {
            match h.event(i).kind {
                EventKind::RequestIn { .. } => requests.push(h.seq(i)),
                EventKind::Broadcast { .. } => stamped += 1,
                _ => {}
            }
        }
        if requests.len() > stamped {
            f.push(
                requests[stamped..].to_vec(),
                format!(
                    "{p} took {} broadcast requests but stamped only {stamped}",
                    requests.len()
                ),
            );
        }
    }
    f.verdict()
}
