//! Unique take-up and effective routes.
//!
//! The route of a take-up lists the originator followed by every process
//! that relayed the message, ending with the sender of the packet that was
//! taken up. Each relay forwards only after the previous hop is removed, so
//! removal views must strictly increase along the route.

use std::collections::BTreeMap;

use super::{Failures, History, Verdict, UNIQUE_TAKEUP};
use crate::protocol::SubTxKind;
use crate::trace::EventKind;
use crate::types::{MessageId, Notification, PacketKind, ProcessId};

#[derive(Clone)]
struct Held {
    seq: u64,
    route: Vec<ProcessId>,
}

pub fn check_unique_takeup(h: &History) -> Verdict {
    let mut f = Failures::new(UNIQUE_TAKEUP);
    let queued = h.queue_positions();
    let mut held: BTreeMap<ProcessId, BTreeMap<MessageId, Held>> = BTreeMap::new();
    let mut at_fork: BTreeMap<ProcessId, BTreeMap<MessageId, Held>> = BTreeMap::new();
    let mut origin: BTreeMap<MessageId, u64> = BTreeMap::new();
    // Removal views; never-removed processes sort last.
    let death = |p: ProcessId| h.removal_view(p).map_or(u64::MAX, |v| v.0);

    for (i, ev) in h.events().iter().enumerate() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Notify { note, .. } => match *note {
                Notification::Join { pid, parent } if parent == p => {
                    at_fork.insert(pid, held.get(&p).cloned().unwrap_or_default());
                }
                Notification::New { pid, .. } if pid == p => {
                    held.insert(p, at_fork.remove(&p).unwrap_or_default());
                }
                _ => {}
            },
            EventKind::Broadcast { id } => {
                origin.entry(id.clone()).or_insert(ev.seq);
            }
            EventKind::TakeUp { id, from } => {
                if let Some(prev) = held.get(&p).and_then(|m| m.get(id)) {
                    f.push(vec![prev.seq, ev.seq], format!("{p} took up {id} twice"));
                    continue;
                }
                let Some(carrier) = carrier(h, i, id, *from) else {
                    f.push(
                        vec![ev.seq],
                        format!("{p} took up {id} from {from} without a packet carrying it"),
                    );
                    continue;
                };
                let Some(&q) = queued.get(&carrier) else {
                    f.push(
                        vec![ev.seq],
                        format!("{p} took up {id} from a packet never queued"),
                    );
                    continue;
                };
                let qseq = h.seq(q);
                let route = if *from == id.orig {
                    match origin.get(id) {
                        Some(&b) if b < qseq => vec![*from],
                        _ => {
                            f.push(
                                vec![qseq, ev.seq],
                                format!("{from} sent {id} to {p} before broadcasting it"),
                            );
                            continue;
                        }
                    }
                } else {
                    match held.get(from).and_then(|m| m.get(id)) {
                        Some(hd) if hd.seq < qseq => {
                            let mut r = hd.route.clone();
                            r.push(*from);
                            r
                        }
                        _ => {
                            f.push(
                                vec![qseq, ev.seq],
                                format!("{from} relayed {id} to {p} without having taken it up"),
                            );
                            continue;
                        }
                    }
                };
                if let Some(w) = route.windows(2).find(|w| death(w[0]) >= death(w[1])) {
                    f.push(
                        vec![qseq, ev.seq],
                        format!(
                            "route of {id} to {p} relays through {} after {} without a later removal",
                            w[1], w[0]
                        ),
                    );
                }
                held.entry(p)
                    .or_default()
                    .insert(id.clone(), Held { seq: ev.seq, route });
            }
            _ => {}
        }
    }
    f.verdict()
}

/// Channel slot of the packet that carried the message taken up at
/// position `i`: the message packet that triggered the transaction, or a
/// donation whose replay re-enacted its receipt.
fn carrier(
    h: &History,
    i: usize,
    id: &MessageId,
    from: ProcessId,
) -> Option<(ProcessId, ProcessId, u64)> {
    let t = h.trigger_of(i)?;
    let to = h.event(t).process()?;
    let EventKind::PacketIn {
        from: src,
        ord,
        packet,
    } = &h.event(t).kind
    else {
        return None;
    };
    if *src != from {
        return None;
    }
    let ok = match &packet.kind {
        PacketKind::Msg { msg } => msg.id() == *id,
        PacketKind::Donation { .. } | PacketKind::Codonation { .. } => h
            .transaction(t)
            .into_iter()
            .take_while(|&j| j < i)
            .any(|j| {
                matches!(&h.event(j).kind, EventKind::Subtx { sub: SubTxKind::Msg, id: s, from: f }
                    if s == id && *f == from)
            }),
        _ => false,
    };
    ok.then_some((from, to, *ord))
}
