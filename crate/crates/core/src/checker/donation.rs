//! Donation correspondence for the first join.
//!
//! Let G join at view v with parent D, and let P be any other member of
//! view v - 1. A packet on a channel is untimely when its source queued it
//! before processing the notification for v and its target had not
//! dequeued it before processing the same notification.
//!
//! * When G handles P's donation it must re-enact, in channel order, every
//!   untimely message packet on P -> D and every untimely ack on P -> D for
//!   a message D did not originate.
//! * When P handles G's co-donation it must re-enact every untimely
//!   forwarded message and every untimely ack on D -> P, followed by the
//!   message packets G queued to itself between its birth and its handling
//!   of P's donation.
//!
//! The expected lists come from the recorded channels alone; the actual
//! lists are the `subtx` events of the donation transactions.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Failures, History, Verdict, DONATION};
use crate::protocol::SubTxKind;
use crate::trace::EventKind;
use crate::types::{MessageId, PacketKind, ProcessId, ViewChange, ViewId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DonationSide {
    Donation,
    Codonation,
}

/// One donation or co-donation transaction with the sub-transactions the
/// channel record predicts and those that were recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DonationCase {
    pub side: DonationSide,
    pub joiner: ProcessId,
    pub parent: ProcessId,
    /// The member whose channels are examined.
    pub member: ProcessId,
    pub view: ViewId,
    /// Sequence number of the packet-in event of the (co-)donation.
    pub seq: u64,
    pub expected: Vec<(SubTxKind, MessageId)>,
    pub actual: Vec<(SubTxKind, MessageId)>,
}

struct Slot {
    queued: usize,
    dequeued: Option<usize>,
    packet: PacketKind,
}

/// Every queued packet per channel, in ordinal order.
fn channels(h: &History) -> BTreeMap<(ProcessId, ProcessId), BTreeMap<u64, Slot>> {
    let mut out: BTreeMap<(ProcessId, ProcessId), BTreeMap<u64, Slot>> = BTreeMap::new();
    for (i, ev) in h.events().iter().enumerate() {
        let Some(p) = ev.process() else { continue };
        match &ev.kind {
            EventKind::Queue { packet, to } => {
                for (&dst, &ord) in to {
                    out.entry((p, dst)).or_default().insert(
                        ord,
                        Slot {
                            queued: i,
                            dequeued: None,
                            packet: packet.kind.clone(),
                        },
                    );
                }
            }
            EventKind::PacketIn { from, ord, .. } | EventKind::Discard { from, ord, .. } => {
                if let Some(s) = out.get_mut(&(*from, p)).and_then(|c| c.get_mut(ord)) {
                    s.dequeued.get_or_insert(i);
                }
            }
            _ => {}
        }
    }
    out
}

fn sub_of(packet: &PacketKind) -> Option<(SubTxKind, MessageId)> {
    match packet {
        PacketKind::Msg { msg } => Some((SubTxKind::Msg, msg.id())),
        PacketKind::Ack { id } => Some((SubTxKind::Ack, id.clone())),
        _ => None,
    }
}

/// Untimely packets on `src -> dst` for view notification positions
/// `src_note` and `dst_note`, in channel order.
fn untimely(
    chans: &BTreeMap<(ProcessId, ProcessId), BTreeMap<u64, Slot>>,
    src: ProcessId,
    dst: ProcessId,
    src_note: usize,
    dst_note: usize,
) -> impl Iterator<Item = &PacketKind> {
    chans
        .get(&(src, dst))
        .into_iter()
        .flat_map(|c| c.values())
        .filter(move |s| s.queued < src_note && s.dequeued.is_none_or(|d| d > dst_note))
        .map(|s| &s.packet)
}

/// The recorded sub-transactions of the transaction opened at `t`.
fn recorded(h: &History, t: usize) -> Vec<(SubTxKind, MessageId)> {
    h.transaction(t)
        .into_iter()
        .filter_map(|j| match &h.event(j).kind {
            EventKind::Subtx { sub, id, .. } => Some((*sub, id.clone())),
            _ => None,
        })
        .collect()
}

/// First packet-in at `at` from `from` matching `pred`.
fn packet_in(
    h: &History,
    at: ProcessId,
    from: ProcessId,
    pred: impl Fn(&PacketKind) -> bool,
) -> Option<usize> {
    h.by_process.get(&at)?.iter().copied().find(|&i| {
        matches!(&h.event(i).kind, EventKind::PacketIn { from: f, packet, .. } if *f == from && pred(&packet.kind))
    })
}

/// Expected and recorded sub-transactions for every (co-)donation of the
/// first join in the trace.
pub fn donation_oracle(h: &History) -> Vec<DonationCase> {
    let Some((view, g, d)) = h.views.iter().find_map(|(_, r)| match r.change {
        Some(ViewChange::Join { pid, parent }) => Some((r.view, pid, parent)),
        _ => None,
    }) else {
        return Vec::new();
    };
    let (Some(birth), Some(d_note)) = (h.notify_position(g, view), h.notify_position(d, view))
    else {
        return Vec::new();
    };
    let Some(before) = h.members(ViewId(view.0 - 1)) else {
        return Vec::new();
    };
    let chans = channels(h);
    let mut out = Vec::new();
    for &p in before {
        let Some(p_note) = h.notify_position(p, view) else {
            continue;
        };
        let donation = packet_in(h, g, p, |k| matches!(k, PacketKind::Donation { .. }));
        if let Some(t) = donation {
            let expected = untimely(&chans, p, d, p_note, d_note)
                .filter(|k| match k {
                    PacketKind::Msg { .. } => true,
                    PacketKind::Ack { id } => id.orig != d,
                    _ => false,
                })
                .filter_map(sub_of)
                .collect();
            out.push(DonationCase {
                side: DonationSide::Donation,
                joiner: g,
                parent: d,
                member: p,
                view,
                seq: h.seq(t),
                expected,
                actual: recorded(h, t),
            });
        }
        let codonation = packet_in(h, p, g, |k| matches!(k, PacketKind::Codonation { .. }));
        if let (Some(t), Some(g_done)) = (codonation, donation) {
            let mut expected: Vec<(SubTxKind, MessageId)> = untimely(&chans, d, p, d_note, p_note)
                .filter(|k| match k {
                    PacketKind::Msg { msg } => msg.orig != d,
                    PacketKind::Ack { .. } => true,
                    _ => false,
                })
                .filter_map(sub_of)
                .collect();
            let own = chans
                .get(&(g, g))
                .into_iter()
                .flat_map(|c| c.values())
                .filter(|s| s.queued > birth && s.queued < g_done)
                .filter(|s| matches!(s.packet, PacketKind::Msg { .. }))
                .filter_map(|s| sub_of(&s.packet));
            expected.extend(own);
            out.push(DonationCase {
                side: DonationSide::Codonation,
                joiner: g,
                parent: d,
                member: p,
                view,
                seq: h.seq(t),
                expected,
                actual: recorded(h, t),
            });
        }
    }
    out
}

pub fn check_donation(h: &History) -> Verdict {
    let mut f = Failures::new(DONATION);
    for c in donation_oracle(h) {
        if c.expected != c.actual {
            let show = |v: &[(SubTxKind, MessageId)]| {
                v.iter()
                    .map(|(k, id)| format!("{k:?} {id}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            f.push(
                vec![c.seq],
                format!(
                    "{:?} between {} and {}: expected [{}], recorded [{}]",
                    c.side,
                    c.member,
                    c.joiner,
                    show(&c.expected),
                    show(&c.actual)
                ),
            );
        }
    }
    f.verdict()
}
