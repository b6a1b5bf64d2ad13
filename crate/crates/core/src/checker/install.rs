//! Checks tied to view installation: receipt agreement at gap-0 installs,
//! the flush obligation before an install, and the report-only agreement
//! check.

use std::collections::{BTreeMap, BTreeSet};

use super::{Failures, History, Verdict, CENTRAL_LEMMA, INSTALL_FLUSH, VIEW_AGREEMENT};
use crate::trace::EventKind;
use crate::types::{MessageId, Notification, PacketKind, ProcessId, ViewId};

type Seen = BTreeMap<MessageId, u64>;

struct Install {
    seq: u64,
    gap: u64,
    taken: Seen,
    delivered: Seen,
}

/// Take-up and delivery sets at each install, inherited across forks.
fn installs(h: &History) -> BTreeMap<ViewId, BTreeMap<ProcessId, Install>> {
    let mut taken: BTreeMap<ProcessId, (Seen, Seen)> = BTreeMap::new();
    let mut at_fork: BTreeMap<ProcessId, (Seen, Seen)> = BTreeMap::new();
    let mut out: BTreeMap<ViewId, BTreeMap<ProcessId, Install>> = BTreeMap::new();
    for ev in h.events() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Notify { note, .. } => match *note {
                Notification::Join { pid, parent } if parent == p => {
                    at_fork.insert(pid, taken.get(&p).cloned().unwrap_or_default());
                }
                Notification::New { pid, .. } if pid == p => {
                    taken.insert(p, at_fork.remove(&p).unwrap_or_default());
                }
                _ => {}
            },
            EventKind::TakeUp { id, .. } => {
                let t = taken.entry(p).or_default();
                t.0.entry(id.clone()).or_insert(ev.seq);
            }
            EventKind::Deliver { id, .. } => {
                let t = taken.entry(p).or_default();
                t.1.entry(id.clone()).or_insert(ev.seq);
            }
            EventKind::Install { view, gap, .. } => {
                let (tk, dl) = taken.get(&p).cloned().unwrap_or_default();
                out.entry(*view).or_default().insert(
                    p,
                    Install {
                        seq: ev.seq,
                        gap: *gap,
                        taken: tk,
                        delivered: dl,
                    },
                );
            }
            _ => {}
        }
    }
    out
}

/// If P installs v with gap 0 having received n from an earlier view, every
/// other installer of v received n before installing v.
pub fn check_central_lemma(h: &History) -> Verdict {
    let mut f = Failures::new(CENTRAL_LEMMA);
    for (v, at) in installs(h) {
        for (p, ip) in at.iter().filter(|(_, i)| i.gap == 0) {
            for (n, &nseq) in ip.taken.iter().filter(|(n, _)| n.mview < v) {
                for (q, iq) in at.iter().filter(|(q, _)| *q != p) {
                    if !iq.taken.contains_key(n) {
                        f.push(
                            vec![nseq, ip.seq, iq.seq],
                            format!("{p} installed view {v} with gap 0 after receiving {n}, but {q} installed it without receiving {n}"),
                        );
                    }
                }
            }
        }
    }
    f.verdict()
}

/// Installers of v+1 delivered the same view-v messages. Report-only.
pub fn check_view_agreement(h: &History) -> Verdict {
    let mut f = Failures::new(VIEW_AGREEMENT);
    for (v, at) in installs(h) {
        if v.0 == 0 {
            continue;
        }
        let prev = ViewId(v.0 - 1);
        let sets: Vec<(ProcessId, u64, BTreeSet<&MessageId>)> = at
            .iter()
            .map(|(p, i)| {
                let s = i.delivered.keys().filter(|n| n.mview == prev).collect();
                (*p, i.seq, s)
            })
            .collect();
        for pair in sets.windows(2) {
            let ((p, ps, a), (q, qs, b)) = (&pair[0], &pair[1]);
            if a != b {
                f.push(
                    vec![*ps, *qs],
                    format!("{p} and {q} installed view {v} after delivering different view-{prev} messages"),
                );
            }
        }
    }
    let mut v = f.verdict();
    v.soft = true;
    v
}

/// Before installing v with gap g, P heard a flush at height v+g from every
/// member of view v+g, either as a flush packet or in a donation body.
pub fn check_install_flush(h: &History) -> Verdict {
    let mut f = Failures::new(INSTALL_FLUSH);
    for (&p, list) in &h.by_process {
        // Sender -> heights flushed so far, with the event that showed it.
        let mut flushed: BTreeMap<ProcessId, BTreeMap<ViewId, u64>> = BTreeMap::new();
        for &i in list {
            let ev = h.event(i);
            match &ev.kind {
                EventKind::PacketIn { from, packet, .. } => {
                    let height = match &packet.kind {
                        PacketKind::Flush { view } => Some(*view),
                        PacketKind::Donation { body } | PacketKind::Codonation { body } => {
                            Some(body.flush_height)
                        }
                        _ => None,
                    };
                    if let Some(x) = height {
                        flushed.entry(*from).or_default().entry(x).or_insert(ev.seq);
                    }
                }
                EventKind::Install { view, gap, .. } => {
                    let top = *view + *gap;
                    let Some(members) = h.members(top) else {
                        f.push(
                            vec![ev.seq],
                            format!("{p} installed {view} below unknown view {top}"),
                        );
                        continue;
                    };
                    for x in members {
                        if !flushed.get(x).is_some_and(|m| m.contains_key(&top)) {
                            f.push(
                                vec![ev.seq],
                                format!("{p} installed view {view} (gap {gap}) without a flush at {top} from {x}"),
                            );
                        }
                    }
                }
                _ => {}
            }
        }
    }
    f.verdict()
}
