//! Model and conforming axioms that can be read off a linear trace.
//!
//! The checks that speak about what eventually happens (all notifications
//! dequeued, all packets between survivors delivered, removed processes
//! halted) only apply to quiescent traces.

use std::collections::{BTreeMap, BTreeSet};

use super::{Failures, History, Verdict, HISTORY_AXIOMS};
use crate::trace::EventKind;
use crate::types::{Notification, Packet, ProcessId, ViewChange, ViewId};

pub fn check_history_axioms(h: &History) -> Verdict {
    let mut f = Failures::new(HISTORY_AXIOMS);
    views(h, &mut f);
    notifications(h, &mut f);
    packets(h, &mut f);
    if h.trace.is_quiescent() {
        eventual(h, &mut f);
    }
    f.verdict()
}

/// View change: consecutive views, one join or removal each, no reuse.
fn views(h: &History, f: &mut Failures) {
    let mut seen: BTreeSet<ProcessId> = BTreeSet::new();
    let mut prev: Option<&BTreeSet<ProcessId>> = None;
    for (i, (seq, rec)) in h.views.iter().enumerate() {
        if rec.view != ViewId(i as u64) {
            f.push(
                vec![*seq],
                format!("view {} decided out of order", rec.view),
            );
            return;
        }
        let Some(before) = prev else {
            if rec.members.is_empty() || rec.change.is_some() {
                f.push(
                    vec![*seq],
                    "view 0 must be a non-empty roster with no change",
                );
            }
            seen.extend(rec.members.iter().copied());
            prev = Some(&rec.members);
            continue;
        };
        let mut expect = before.clone();
        match rec.change {
            Some(ViewChange::Join { pid, parent }) => {
                if seen.contains(&pid) || !before.contains(&parent) {
                    f.push(
                        vec![*seq],
                        format!("illegal join of {pid} with parent {parent}"),
                    );
                }
                expect.insert(pid);
                seen.insert(pid);
            }
            Some(ViewChange::Remove { pid }) => {
                if !before.contains(&pid) {
                    f.push(vec![*seq], format!("removal of non-member {pid}"));
                }
                expect.remove(&pid);
            }
            None => f.push(vec![*seq], format!("view {} has no change", rec.view)),
        }
        if expect != rec.members {
            f.push(
                vec![*seq],
                format!("view {} members do not follow from its change", rec.view),
            );
        }
        prev = Some(&rec.members);
    }
}

/// The notification the membership service owes `p` for view `i`.
fn owed(h: &History, p: ProcessId, i: ViewId) -> Option<Notification> {
    let (_, rec) = h.views.get(i.0 as usize)?;
    if h.join_view(p) == Some(i) {
        return Some(Notification::New {
            pid: p,
            parent: match rec.change {
                Some(ViewChange::Join { parent, .. }) => Some(parent),
                _ => None,
            },
        });
    }
    match rec.change? {
        ViewChange::Join { pid, parent } => Some(Notification::Join { pid, parent }),
        ViewChange::Remove { pid } if pid == p => Some(Notification::Dead),
        ViewChange::Remove { pid } => Some(Notification::Remove { pid }),
    }
}

/// Notification order and content, the parent axiom, and halting.
fn notifications(h: &History, f: &mut Failures) {
    let view_seq: BTreeMap<ViewId, u64> = h.views.iter().map(|(s, r)| (r.view, *s)).collect();
    for (&p, list) in &h.by_process {
        let first = h.event(list[0]);
        if !matches!(first.kind, EventKind::Notify { note: Notification::New { pid, .. }, .. } if pid == p)
        {
            f.push(
                vec![first.seq],
                format!("first event of {p} is not its creation"),
            );
        }
        let mut next = h.join_view(p);
        let mut halted_at: Option<u64> = None;
        for &i in list {
            let ev = h.event(i);
            if let Some(hs) = halted_at {
                f.push(vec![hs, ev.seq], format!("{p} acted after halting"));
                break;
            }
            match &ev.kind {
                EventKind::Halt { .. } => halted_at = Some(ev.seq),
                EventKind::Notify { view, note } => {
                    if Some(*view) != next {
                        f.push(
                            vec![ev.seq],
                            format!("{p} dequeued notification {view} out of order"),
                        );
                    } else if owed(h, p, *view) != Some(*note) {
                        f.push(
                            vec![ev.seq],
                            format!("{p} got the wrong notification for view {view}"),
                        );
                    }
                    match view_seq.get(view) {
                        Some(&vs) if vs < ev.seq => {}
                        _ => f.push(
                            vec![ev.seq],
                            format!("{p} notified of undecided view {view}"),
                        ),
                    }
                    next = Some(*view + 1);
                }
                _ => {}
            }
        }
        // A child is created in the same step as its parent's join handling.
        if h.join_view(p).is_some_and(|v| v.0 > 0) {
            match h.forks.get(&p) {
                None => f.push(
                    vec![first.seq],
                    format!("{p} started without its parent forking it"),
                ),
                Some(&(parent, at)) => {
                    let later_trigger = h.by_process[&parent]
                        .iter()
                        .copied()
                        .find(|&k| k > at && h.event(k).kind.is_trigger());
                    if later_trigger.is_some_and(|k| k < list[0]) {
                        f.push(
                            vec![h.seq(at), first.seq],
                            format!("{p} was not created together with {parent}'s join handling"),
                        );
                    }
                }
            }
        }
    }
}

/// Packet event, FIFO, liveness, piggyback, self channel and conforming
/// packet axioms.
fn packets(h: &History, f: &mut Failures) {
    // Channel -> ordinal -> (queue seq, packet).
    let mut queued: BTreeMap<(ProcessId, ProcessId), BTreeMap<u64, (u64, Packet)>> =
        BTreeMap::new();
    let mut dequeued: BTreeMap<(ProcessId, ProcessId), u64> = BTreeMap::new();
    let mut height: BTreeMap<ProcessId, ViewId> = BTreeMap::new();
    let mut removed_seen: BTreeMap<ProcessId, BTreeMap<ProcessId, u64>> = BTreeMap::new();
    for ev in h.events() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Notify { view, note } => {
                let own = queued.get(&(p, p)).map_or(0, |c| c.len() as u64);
                let done = dequeued.get(&(p, p)).copied().unwrap_or(0);
                if own > done {
                    f.push(
                        vec![ev.seq],
                        format!("{p} dequeued notification {view} with its self channel non-empty"),
                    );
                }
                height.insert(p, *view);
                if let Notification::Remove { pid } = note {
                    removed_seen.entry(p).or_default().insert(*pid, ev.seq);
                }
            }
            EventKind::Queue { packet, to } => {
                let hp = height.get(&p).copied().unwrap_or_default();
                if packet.height != hp {
                    f.push(
                        vec![ev.seq],
                        format!(
                            "{p} queued a packet at height {} while at {hp}",
                            packet.height
                        ),
                    );
                }
                let live = h.members(hp);
                for (&q, &ord) in to {
                    if !live.is_some_and(|m| m.contains(&q)) {
                        f.push(
                            vec![ev.seq],
                            format!("{p} queued a packet to {q}, which is not live at view {hp}"),
                        );
                    }
                    let ch = queued.entry((p, q)).or_default();
                    let want = ch.len() as u64 + 1;
                    if ord != want {
                        f.push(
                            vec![ev.seq],
                            format!("packet on {p}->{q} got ordinal {ord}, expected {want}"),
                        );
                    }
                    ch.insert(ord, (ev.seq, packet.clone()));
                }
            }
            EventKind::PacketIn { from, ord, packet }
            | EventKind::Discard { from, ord, packet } => {
                let key = (*from, p);
                let want = dequeued.get(&key).copied().unwrap_or(0) + 1;
                if *ord != want {
                    f.push(
                        vec![ev.seq],
                        format!("{p} dequeued {from}->{p} #{ord}, expected #{want}"),
                    );
                }
                dequeued.insert(key, *ord);
                match queued.get(&key).and_then(|c| c.get(ord)) {
                    None => f.push(
                        vec![ev.seq],
                        format!("{p} dequeued {from}->{p} #{ord}, which was never queued"),
                    ),
                    Some((qs, k)) if k != packet => f.push(
                        vec![*qs, ev.seq],
                        format!("{from}->{p} #{ord} changed in transit"),
                    ),
                    _ => {}
                }
                if matches!(ev.kind, EventKind::PacketIn { .. }) {
                    let hp = height.get(&p).copied().unwrap_or_default();
                    if packet.height > hp {
                        f.push(
                            vec![ev.seq],
                            format!(
                                "{p} processed a packet from height {} at {hp}",
                                packet.height
                            ),
                        );
                    }
                    if let Some(&rs) = removed_seen.get(&p).and_then(|m| m.get(from)) {
                        f.push(
                            vec![rs, ev.seq],
                            format!("{p} processed a packet from {from} after its removal"),
                        );
                    }
                }
            }
            _ => {}
        }
    }
}

/// Liveness-flavoured axioms, valid once nothing more can happen.
fn eventual(h: &History, f: &mut Failures) {
    let alive = h.non_halting();
    let last = h.last_view().unwrap_or_default();
    for &p in &alive {
        let at = h.by_process[&p]
            .iter()
            .rev()
            .find_map(|&i| match h.event(i).kind {
                EventKind::Notify { view, .. } => Some(view),
                _ => None,
            });
        if at != Some(last) {
            let seq = h.seq(*h.by_process[&p].last().expect("non-empty"));
            f.push(
                vec![seq],
                format!("{p} never halted but stopped dequeuing notifications before view {last}"),
            );
        }
    }
    let mut pending: BTreeMap<(ProcessId, ProcessId), BTreeSet<u64>> = BTreeMap::new();
    let mut first_seq: BTreeMap<(ProcessId, ProcessId, u64), u64> = BTreeMap::new();
    for ev in h.events() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Queue { to, .. } => {
                for (&q, &ord) in to {
                    pending.entry((p, q)).or_default().insert(ord);
                    first_seq.insert((p, q, ord), ev.seq);
                }
            }
            EventKind::PacketIn { from, ord, .. } | EventKind::Discard { from, ord, .. } => {
                if let Some(s) = pending.get_mut(&(*from, p)) {
                    s.remove(ord);
                }
            }
            _ => {}
        }
    }
    for ((src, dst), ords) in &pending {
        if alive.contains(src) && alive.contains(dst) {
            if let Some(&ord) = ords.iter().next() {
                f.push(
                    vec![first_seq[&(*src, *dst, ord)]],
                    format!("{src}->{dst} #{ord} between non-halting processes was never dequeued"),
                );
            }
        }
    }
    let processes = h.processes();
    for &p in &processes {
        let started = h.by_process.contains_key(&p);
        let halts = !alive.contains(&p);
        let removed = h.removal_view(p).is_some();
        if removed && !halts {
            let at = h
                .views
                .iter()
                .find(|(_, r)| matches!(r.change, Some(ViewChange::Remove { pid }) if pid == p));
            f.push(
                at.map(|(s, _)| vec![*s]).unwrap_or_default(),
                format!("{p} was removed but never halted"),
            );
        }
        if halts && !removed && !alive.is_empty() {
            let at = h
                .by_process
                .get(&p)
                .and_then(|l| l.last())
                .map(|&i| h.seq(i));
            f.push(
                at.into_iter().collect(),
                format!("{p} halted but was never removed"),
            );
        }
        if !started {
            let child = h.views.iter().find(
                |(_, r)| matches!(r.change, Some(ViewChange::Join { parent, .. }) if parent == p),
            );
            if let Some((seq, _)) = child {
                f.push(vec![*seq], format!("{p} never started but has a child"));
            }
        }
    }
}
