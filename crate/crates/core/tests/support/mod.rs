//! Shared fixtures for the integration tests.
//!
//! `branch_cases` is the side-effect table: one case per branch of the
//! per-trigger side-effect rules. Each case drives real states through the
//! public interface and returns the rendered effects of the transaction
//! under test together with the exact expected sequence.

#![allow(dead_code)]

use cbcast::protocol::SubTxKind;
use cbcast::{
    Cast, DeliveryLog, Effect, PacketKind, ProcessId, ProcessState, StampedMessage, TxLog,
};

pub type St = ProcessState<DeliveryLog>;

pub fn p(n: u32) -> ProcessId {
    ProcessId(n)
}

pub fn start(roster: &[u32], me: u32) -> St {
    let roster: Vec<ProcessId> = roster.iter().map(|&n| p(n)).collect();
    St::prot_start(&roster, p(me)).unwrap().0
}

fn targets(c: &Cast) -> String {
    c.targets()
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Packets, sub-transactions and installs of a transaction, in order.
pub fn render(log: &TxLog) -> Vec<String> {
    log.iter()
        .filter_map(|e| match e {
            Effect::Queue { packet, to } => Some(match packet {
                PacketKind::Ghost { view } | PacketKind::Flush { view } => {
                    format!("{} {view}>{}", packet.label(), targets(to))
                }
                _ => format!("{}>{}", packet.label(), targets(to)),
            }),
            Effect::SubTx { kind, sender, .. } => Some(match kind {
                SubTxKind::Msg => format!("sub msg<{sender}"),
                SubTxKind::Ack => format!("sub ack<{sender}"),
            }),
            Effect::Install { view, gap, .. } => Some(format!("install {view} gap {gap}")),
            _ => None,
        })
        .collect()
}

/// The single message packet queued by `log`.
pub fn sent_msg(log: &TxLog) -> StampedMessage {
    let mut it = log.iter().filter_map(|e| match e {
        Effect::Queue {
            packet: PacketKind::Msg { msg },
            ..
        } => Some(msg.clone()),
        _ => None,
    });
    let m = it.next().expect("a message packet");
    assert!(it.next().is_none(), "more than one message packet");
    m
}

/// The first packet of kind `label` queued by `log`.
pub fn sent(log: &TxLog, label: &str) -> PacketKind {
    log.iter()
        .find_map(|e| match e {
            Effect::Queue { packet, .. } if packet.label() == label => Some(packet.clone()),
            _ => None,
        })
        .unwrap_or_else(|| panic!("no {label} packet in {log:?}"))
}

/// A message broadcast by a fresh `orig` in `roster`.
pub fn broadcast_by(roster: &[u32], orig: u32, payload: &str) -> StampedMessage {
    let mut st = start(roster, orig);
    sent_msg(&st.prot_broadcast(payload.into()).unwrap())
}

fn ack(st: &mut St, m: &StampedMessage, from: u32) -> TxLog {
    st.prot_packet(PacketKind::Ack { id: m.id() }, p(from))
        .unwrap()
}

fn deliver(st: &mut St, m: &StampedMessage, from: u32) -> TxLog {
    st.prot_packet(PacketKind::Msg { msg: m.clone() }, p(from))
        .unwrap()
}

pub struct BranchCase {
    pub trigger: &'static str,
    pub branch: &'static str,
    pub run: fn() -> (Vec<String>, Vec<&'static str>),
}

const ROSTER: [u32; 3] = [0, 1, 2];

/// p0 holds a message from p2 in its forward queue.
fn holding_from_p2() -> (St, StampedMessage) {
    let mut st = start(&ROSTER, 0);
    let m = broadcast_by(&ROSTER, 2, "from p2");
    deliver(&mut st, &m, 2);
    (st, m)
}

/// p0 after p2's removal forced it to forward `m`.
fn forwarding() -> (St, StampedMessage) {
    let (mut st, m) = holding_from_p2();
    st.prot_remove(p(2)).unwrap();
    (st, m)
}

/// p0 with an unstable broadcast `b` and an unstable forward `f` after p2's
/// removal.
fn both_waiting() -> (St, StampedMessage, StampedMessage) {
    let (mut st, f) = holding_from_p2();
    let b = sent_msg(&st.prot_broadcast("own".into()).unwrap());
    st.prot_remove(p(2)).unwrap();
    (st, b, f)
}

/// p0 after p2's removal, having sent its ghost and flush.
fn removed_p2() -> St {
    let mut st = start(&ROSTER, 0);
    st.prot_remove(p(2)).unwrap();
    st
}

pub fn branch_cases() -> Vec<BranchCase> {
    vec![
        BranchCase {
            trigger: "app-event",
            branch: "broadcast during a view change is parked",
            run: || {
                let mut st = removed_p2();
                let log = st.prot_broadcast("x".into()).unwrap();
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "app-event",
            branch: "broadcast in an installed view multicasts one message",
            run: || {
                let mut st = start(&ROSTER, 0);
                let log = st.prot_broadcast("x".into()).unwrap();
                (render(&log), vec!["msg>p0,p1,p2"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "join with unstable forwards queues only the donation",
            run: || {
                let (mut st, _) = forwarding();
                let log = st.prot_join(p(3), p(1)).unwrap();
                (render(&log), vec!["donation>p3"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "join with unstable broadcasts adds a ghost",
            run: || {
                let mut st = start(&ROSTER, 0);
                st.prot_broadcast("x".into()).unwrap();
                let log = st.prot_join(p(3), p(1)).unwrap();
                (render(&log), vec!["donation>p3", "ghost 1>p0,p1,p2,p3"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "join with empty wait sets adds a ghost and a flush",
            run: || {
                let mut st = start(&ROSTER, 0);
                let log = st.prot_join(p(3), p(1)).unwrap();
                (
                    render(&log),
                    vec!["donation>p3", "ghost 1>p0,p1,p2,p3", "flush 1>p0,p1,p2,p3"],
                )
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "removal re-multicasts the removed sender's messages",
            run: || {
                let (mut st, _) = holding_from_p2();
                let m2 = {
                    let mut src = start(&ROSTER, 2);
                    src.prot_broadcast("from p2".into()).unwrap();
                    sent_msg(&src.prot_broadcast("again".into()).unwrap())
                };
                deliver(&mut st, &m2, 2);
                let log = st.prot_remove(p(2)).unwrap();
                (render(&log), vec!["msg>p0,p1", "msg>p0,p1"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "removal with nothing to forward but unstable forwards is silent",
            run: || {
                let (mut st, _) = forwarding();
                let log = st.prot_remove(p(1)).unwrap();
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "removal with only unstable broadcasts sends a ghost",
            run: || {
                let mut st = start(&ROSTER, 0);
                st.prot_broadcast("x".into()).unwrap();
                let log = st.prot_remove(p(2)).unwrap();
                (render(&log), vec!["ghost 1>p0,p1"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "removal with empty wait sets sends a ghost and a flush",
            run: || {
                let mut st = start(&ROSTER, 0);
                let log = st.prot_remove(p(2)).unwrap();
                (render(&log), vec!["ghost 1>p0,p1", "flush 1>p0,p1"])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "child of a parent with unstable forwards starts silently",
            run: || {
                let (parent, _) = forwarding();
                let mut child = parent.clone();
                let log = child.prot_run(p(3)).unwrap();
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "view-change",
            branch: "child without forwards sends a ghost and a flush to itself",
            run: || {
                let parent = start(&ROSTER, 0);
                let mut child = parent.clone();
                let log = child.prot_run(p(3)).unwrap();
                (render(&log), vec!["ghost 1>p3", "flush 1>p3"])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "message receipt acks the sender",
            run: || {
                let mut st = start(&ROSTER, 0);
                let m = broadcast_by(&ROSTER, 1, "x");
                let log = deliver(&mut st, &m, 1);
                (render(&log), vec!["ack>p1"])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "stabilising ack outside a view change is silent",
            run: || {
                let mut st = start(&ROSTER, 0);
                let m = sent_msg(&st.prot_broadcast("x".into()).unwrap());
                ack(&mut st, &m, 1);
                ack(&mut st, &m, 2);
                let log = ack(&mut st, &m, 0);
                assert!(st.bcast_wait_set.is_empty());
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "ack that stabilises nothing is silent",
            run: || {
                let mut st = start(&ROSTER, 0);
                let m = sent_msg(&st.prot_broadcast("x".into()).unwrap());
                st.prot_remove(p(2)).unwrap();
                let log = ack(&mut st, &m, 0);
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "last broadcast stabilises while forwards wait: silent",
            run: || {
                let (mut st, b, _) = both_waiting();
                ack(&mut st, &b, 0);
                let log = ack(&mut st, &b, 1);
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "last forward stabilises while broadcasts wait: ghost",
            run: || {
                let (mut st, _, f) = both_waiting();
                ack(&mut st, &f, 0);
                let log = ack(&mut st, &f, 1);
                (render(&log), vec!["ghost 1>p0,p1"])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "last broadcast stabilises after the ghost: flush",
            run: || {
                let mut st = start(&ROSTER, 0);
                let m = sent_msg(&st.prot_broadcast("x".into()).unwrap());
                st.prot_remove(p(2)).unwrap();
                ack(&mut st, &m, 0);
                let log = ack(&mut st, &m, 1);
                (render(&log), vec!["flush 1>p0,p1"])
            },
        },
        BranchCase {
            trigger: "message-ack",
            branch: "last forward stabilises with no broadcasts: ghost and flush",
            run: || {
                let (mut st, f) = forwarding();
                ack(&mut st, &f, 0);
                let log = ack(&mut st, &f, 1);
                (render(&log), vec!["ghost 1>p0,p1", "flush 1>p0,p1"])
            },
        },
        BranchCase {
            trigger: "ghost-flush",
            branch: "ghost receipt queues nothing",
            run: || {
                let mut st = removed_p2();
                let log = st
                    .prot_packet(
                        PacketKind::Ghost {
                            view: cbcast::ViewId(1),
                        },
                        p(1),
                    )
                    .unwrap();
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "ghost-flush",
            branch: "flush that does not complete the install queues nothing",
            run: || {
                let mut st = removed_p2();
                let log = st
                    .prot_packet(
                        PacketKind::Flush {
                            view: cbcast::ViewId(1),
                        },
                        p(1),
                    )
                    .unwrap();
                (render(&log), vec![])
            },
        },
        BranchCase {
            trigger: "ghost-flush",
            branch: "flush that installs with nothing parked queues nothing",
            run: || {
                let mut st = removed_p2();
                st.prot_packet(
                    PacketKind::Flush {
                        view: cbcast::ViewId(1),
                    },
                    p(1),
                )
                .unwrap();
                let log = st
                    .prot_packet(
                        PacketKind::Flush {
                            view: cbcast::ViewId(1),
                        },
                        p(0),
                    )
                    .unwrap();
                (render(&log), vec!["install 1 gap 0"])
            },
        },
        BranchCase {
            trigger: "ghost-flush",
            branch: "flush that installs launches parked broadcasts",
            run: || {
                let mut st = removed_p2();
                st.prot_broadcast("a".into()).unwrap();
                st.prot_broadcast("b".into()).unwrap();
                st.prot_packet(
                    PacketKind::Flush {
                        view: cbcast::ViewId(1),
                    },
                    p(1),
                )
                .unwrap();
                let log = st
                    .prot_packet(
                        PacketKind::Flush {
                            view: cbcast::ViewId(1),
                        },
                        p(0),
                    )
                    .unwrap();
                (
                    render(&log),
                    vec!["install 1 gap 0", "msg>p0,p1", "msg>p0,p1"],
                )
            },
        },
        BranchCase {
            trigger: "donation",
            branch: "donation answers with a co-donation, then replays",
            run: || {
                // p1 broadcast m before learning of the join; the parent p0
                // never saw it, so the joiner replays it from p1's donation.
                let parent = start(&ROSTER, 0);
                let mut member = start(&ROSTER, 1);
                member.prot_broadcast("m".into()).unwrap();
                let donation = sent(&member.prot_join(p(3), p(0)).unwrap(), "donation");
                let mut child = parent.clone();
                child.prot_run(p(3)).unwrap();
                let log = child.prot_packet(donation, p(1)).unwrap();
                (render(&log), vec!["codonation>p1", "sub msg<p1", "ack>p1"])
            },
        },
        BranchCase {
            trigger: "donation",
            branch: "co-donation that replays cannot install",
            run: || {
                // p0 acked p1's m before the join; the ack is still in
                // flight, so p1 re-enacts it against the joiner's entry.
                let mut member = start(&ROSTER, 1);
                let m = sent_msg(&member.prot_broadcast("m".into()).unwrap());
                let mut parent = start(&ROSTER, 0);
                deliver(&mut parent, &m, 1);
                let mut child = parent.clone();
                child.prot_run(p(3)).unwrap();
                parent.prot_join(p(3), p(0)).unwrap();
                let donation = sent(&member.prot_join(p(3), p(0)).unwrap(), "donation");
                let codonation = sent(&child.prot_packet(donation, p(1)).unwrap(), "codonation");
                let log = member.prot_packet(codonation, p(3)).unwrap();
                (render(&log), vec!["sub ack<p3"])
            },
        },
        BranchCase {
            trigger: "donation",
            branch: "co-donation without replays installs and launches",
            run: || {
                let parent = start(&ROSTER, 0);
                let mut member = start(&ROSTER, 1);
                let donation = sent(&member.prot_join(p(3), p(0)).unwrap(), "donation");
                member.prot_broadcast("z".into()).unwrap();
                for q in [0, 2, 1] {
                    member
                        .prot_packet(
                            PacketKind::Flush {
                                view: cbcast::ViewId(1),
                            },
                            p(q),
                        )
                        .unwrap();
                }
                let mut child = parent.clone();
                child.prot_run(p(3)).unwrap();
                let codonation = sent(&child.prot_packet(donation, p(1)).unwrap(), "codonation");
                let log = member.prot_packet(codonation, p(3)).unwrap();
                (render(&log), vec!["install 1 gap 0", "msg>p0,p1,p2,p3"])
            },
        },
    ]
}

pub mod mutate;
