//! Corrupted traces for checker sensitivity.
//!
//! Every case starts from a conforming trace, breaks exactly one thing the
//! named checker looks at, and must make that checker FAIL.

use std::sync::OnceLock;

use cbcast::checker::{
    self, donation_oracle, History, CAUSAL_ORDER, CENTRAL_LEMMA, DONATION, HISTORY_AXIOMS,
    INSTALL_FLUSH, PROGRESS, UNIQUE_TAKEUP, VIEW_AGREEMENT,
};
use cbcast::protocol::SubTxKind;
use cbcast::scenario::{generate_scenarios, GenerateLimits, Scenario};
use cbcast::simnet::{run_scenario, RunOptions};
use cbcast::trace::{Actor, EventKind, Trace, TraceEvent};
use cbcast::{MessageId, Notification, PacketKind, Payload, ViewId};

use super::p;

pub const FORWARD_AND_JOIN: &str = include_str!("../../../../scenarios/forward-and-join.toml");

pub struct Fixtures {
    /// Forwarding after a removal, then a join.
    pub base: Trace,
    /// A join with untimely packets on both donation sides.
    pub donation: Trace,
}

pub fn fixtures() -> &'static Fixtures {
    static F: OnceLock<Fixtures> = OnceLock::new();
    F.get_or_init(|| {
        let s = Scenario::parse(FORWARD_AND_JOIN).unwrap();
        let base = run_scenario(&s, RunOptions::default()).unwrap().trace;
        let donation = generate_scenarios(11, 60, GenerateLimits::donation())
            .iter()
            .map(|s| run_scenario(s, RunOptions::default()).unwrap().trace)
            .find(|t| {
                let cases = donation_oracle(&History::new(t));
                let rich = |side: checker::DonationSide| {
                    cases
                        .iter()
                        .any(|c| c.side == side && c.expected.len() >= 2)
                };
                rich(checker::DonationSide::Donation) && rich(checker::DonationSide::Codonation)
            })
            .expect("some generated join has untimely packets on both sides");
        Fixtures { base, donation }
    })
}

fn at(ev: &TraceEvent, n: u32) -> bool {
    ev.actor == Actor::Process(p(n))
}

/// Position of the first event at `n` matching `pred`.
pub fn find(t: &Trace, n: u32, pred: impl Fn(&EventKind) -> bool) -> usize {
    t.events
        .iter()
        .position(|e| at(e, n) && pred(&e.kind))
        .unwrap_or_else(|| panic!("no matching event at p{n}"))
}

fn payload_of(id: &MessageId, t: &Trace) -> Payload {
    t.events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Deliver { id: d, payload } if d == id => Some(payload.clone()),
            _ => None,
        })
        .expect("message delivered somewhere")
}

/// Id of the message carrying `payload`.
pub fn msg_id(t: &Trace, payload: &str) -> MessageId {
    let want = Payload::from(payload);
    t.events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Deliver { id, payload } if *payload == want => Some(id.clone()),
            _ => None,
        })
        .unwrap_or_else(|| panic!("no delivery of {payload:?}"))
}

fn delivers(id: &MessageId) -> impl Fn(&EventKind) -> bool + '_ {
    move |k| matches!(k, EventKind::Deliver { id: d, .. } if d == id)
}

fn takes_up(id: &MessageId) -> impl Fn(&EventKind) -> bool + '_ {
    move |k| matches!(k, EventKind::TakeUp { id: d, .. } if d == id)
}

fn installs(v: u64) -> impl Fn(&EventKind) -> bool {
    move |k| matches!(k, EventKind::Install { view, .. } if *view == ViewId(v))
}

/// Restores strictly increasing sequence numbers and monotone ticks.
pub fn renumber(mut t: Trace) -> Trace {
    let mut tick = 0;
    for (i, e) in t.events.iter_mut().enumerate() {
        e.seq = i as u64;
        tick = tick.max(e.tick);
        e.tick = tick;
    }
    t
}

fn remove(mut t: Trace, i: usize) -> Trace {
    t.events.remove(i);
    renumber(t)
}

fn insert(mut t: Trace, i: usize, actor: u32, kind: EventKind) -> Trace {
    let tick = t.events[i.saturating_sub(1)].tick;
    t.events.insert(
        i,
        TraceEvent {
            seq: 0,
            tick,
            actor: Actor::Process(p(actor)),
            kind,
        },
    );
    renumber(t)
}

/// Moves the event at `from` to just after the event at `after`.
fn move_after(mut t: Trace, from: usize, after: usize) -> Trace {
    let ev = t.events.remove(from);
    let after = if from < after { after - 1 } else { after };
    t.events.insert(after + 1, ev);
    renumber(t)
}

fn swap_kinds(mut t: Trace, a: usize, b: usize) -> Trace {
    let ka = t.events[a].kind.clone();
    t.events[a].kind = std::mem::replace(&mut t.events[b].kind, ka);
    t
}

/// The message `payload` from p0 with a forged vector entry.
fn forged(t: &Trace) -> MessageId {
    let mut id = msg_id(t, "a");
    id.orig = p(1);
    id.mvt.set(p(1), 9);
    id
}

/// Two deliveries at one process, from different originators, where the
/// second message causally follows the first.
fn causal_pair(t: &Trace) -> (usize, usize) {
    let dl: Vec<(usize, &MessageId)> = t
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match &e.kind {
            EventKind::Deliver { id, .. } => Some((i, id)),
            _ => None,
        })
        .collect();
    for (k, &(i, x)) in dl.iter().enumerate() {
        for &(j, y) in &dl[k + 1..] {
            if t.events[i].actor == t.events[j].actor
                && x.orig != y.orig
                && x.mview == y.mview
                && y.mvt.get(x.orig) >= x.mvt.get(x.orig)
            {
                return (i, j);
            }
        }
    }
    panic!("no causally related deliveries")
}

/// First packet-in at `n` from `from` whose packet matches `pred`.
fn packet_in(t: &Trace, n: u32, from: u32, pred: impl Fn(&PacketKind) -> bool) -> usize {
    find(
        t,
        n,
        |k| matches!(k, EventKind::PacketIn { from: f, packet, .. } if *f == p(from) && pred(&packet.kind)),
    )
}

/// A hand-written trace: p0 broadcasts m1 then m2, p1 delivers m2 first.
pub const SWAPPED_DELIVERY: &str = r#"# cbcast-trace v1 scenario=0 seed=0 prng=ChaCha8Rng
0 0 gms view {"members":["p0","p1"],"view":0}
1 0 p0 notify {"note":{"note":"new","pid":"p0"},"view":0}
2 0 p1 notify {"note":{"note":"new","pid":"p1"},"view":0}
3 1 p0 request-in {"payload":"m1"}
4 1 p0 broadcast {"id":{"mview":0,"mvt":{"p0":1,"p1":0},"orig":"p0"}}
5 2 p0 request-in {"payload":"m2"}
6 2 p0 broadcast {"id":{"mview":0,"mvt":{"p0":2,"p1":0},"orig":"p0"}}
7 3 p1 deliver {"id":{"mview":0,"mvt":{"p0":2,"p1":0},"orig":"p0"},"payload":"m2"}
8 4 p1 deliver {"id":{"mview":0,"mvt":{"p0":1,"p1":0},"orig":"p0"},"payload":"m1"}
# end status=quiescent ticks=4
"#;

pub struct MutationCase {
    pub property: &'static str,
    pub name: &'static str,
    pub build: fn(&Fixtures) -> Trace,
}

fn first_subtx(t: &Trace) -> usize {
    t.events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Subtx { .. }))
        .expect("donation fixture has sub-transactions")
}

pub fn mutation_cases() -> Vec<MutationCase> {
    vec![
        // Causal order.
        MutationCase {
            property: CAUSAL_ORDER,
            name: "hand-written trace delivers m2 before m1",
            build: |_| Trace::parse(SWAPPED_DELIVERY).unwrap(),
        },
        MutationCase {
            property: CAUSAL_ORDER,
            name: "swap two deliveries from one originator",
            build: |f| {
                let t = &f.base;
                let (a, b) = (msg_id(t, "a"), msg_id(t, "b"));
                swap_kinds(
                    t.clone(),
                    find(t, 1, delivers(&a)),
                    find(t, 1, delivers(&b)),
                )
            },
        },
        MutationCase {
            property: CAUSAL_ORDER,
            name: "delete a delivery",
            build: |f| {
                let t = &f.base;
                remove(t.clone(), find(t, 1, delivers(&msg_id(t, "a"))))
            },
        },
        MutationCase {
            property: CAUSAL_ORDER,
            name: "deliver a message twice",
            build: |f| {
                let t = &f.base;
                let i = find(t, 0, delivers(&msg_id(t, "e")));
                insert(t.clone(), i + 1, 0, t.events[i].kind.clone())
            },
        },
        MutationCase {
            property: CAUSAL_ORDER,
            name: "deliver a message before its causal predecessor",
            build: |f| {
                let (a, b) = causal_pair(&f.base);
                swap_kinds(f.base.clone(), a, b)
            },
        },
        // Progress.
        MutationCase {
            property: PROGRESS,
            name: "a survivor never delivers a survivor's message",
            build: |f| {
                let t = &f.base;
                let m = msg_id(t, "f");
                let mut out = t.clone();
                out.events
                    .retain(|e| !(at(e, 3) && (delivers(&m)(&e.kind) || takes_up(&m)(&e.kind))));
                renumber(out)
            },
        },
        MutationCase {
            property: PROGRESS,
            name: "a broadcast request is never stamped",
            build: |f| {
                let t = &f.base;
                let n = t.events.len();
                insert(
                    t.clone(),
                    n,
                    0,
                    EventKind::RequestIn {
                        payload: "lost".into(),
                    },
                )
            },
        },
        MutationCase {
            property: PROGRESS,
            name: "trace cut short but marked quiescent",
            build: |f| {
                let t = &f.base;
                let m = msg_id(t, "f");
                let cut = t
                    .events
                    .iter()
                    .position(|e| matches!(&e.kind, EventKind::Broadcast { id } if *id == m))
                    .unwrap();
                let mut out = t.clone();
                out.events.truncate(cut + 2);
                out
            },
        },
        // Receipt agreement at gap-0 installs.
        MutationCase {
            property: CENTRAL_LEMMA,
            name: "an installer misses a forwarded message",
            build: |f| {
                let t = &f.base;
                remove(t.clone(), find(t, 0, takes_up(&msg_id(t, "d"))))
            },
        },
        MutationCase {
            property: CENTRAL_LEMMA,
            name: "take-up moved after the install",
            build: |f| {
                let t = &f.base;
                let i = find(t, 0, takes_up(&msg_id(t, "c")));
                move_after(t.clone(), i, find(t, 0, installs(1)))
            },
        },
        MutationCase {
            property: CENTRAL_LEMMA,
            name: "an installer takes up a message nobody else saw",
            build: |f| {
                let t = &f.base;
                let i = find(t, 1, installs(1));
                let kind = EventKind::TakeUp {
                    id: forged(t),
                    from: p(1),
                };
                insert(t.clone(), i, 1, kind)
            },
        },
        // Install flush.
        MutationCase {
            property: INSTALL_FLUSH,
            name: "flush packet removed before an install",
            build: |f| {
                let t = &f.base;
                let i = packet_in(
                    t,
                    0,
                    1,
                    |k| matches!(k, PacketKind::Flush { view } if *view == ViewId(1)),
                );
                remove(t.clone(), i)
            },
        },
        MutationCase {
            property: INSTALL_FLUSH,
            name: "flush packet lowered",
            build: |f| {
                let t = &f.base;
                let i = packet_in(
                    t,
                    0,
                    1,
                    |k| matches!(k, PacketKind::Flush { view } if *view == ViewId(1)),
                );
                let mut out = t.clone();
                if let EventKind::PacketIn { packet, .. } = &mut out.events[i].kind {
                    packet.kind = PacketKind::Flush { view: ViewId(0) };
                }
                out
            },
        },
        MutationCase {
            property: INSTALL_FLUSH,
            name: "co-donation carrying the joiner's flush removed",
            build: |f| {
                let t = &f.base;
                let i = packet_in(t, 1, 3, |k| matches!(k, PacketKind::Codonation { .. }));
                remove(t.clone(), i)
            },
        },
        // Unique take-up.
        MutationCase {
            property: UNIQUE_TAKEUP,
            name: "take-up duplicated",
            build: |f| {
                let t = &f.base;
                let i = find(t, 2, takes_up(&msg_id(t, "a")));
                insert(t.clone(), i + 1, 2, t.events[i].kind.clone())
            },
        },
        MutationCase {
            property: UNIQUE_TAKEUP,
            name: "take-up credited to a sender whose packet never arrived",
            build: |f| {
                let t = &f.base;
                let i = find(t, 0, takes_up(&msg_id(t, "d")));
                let mut out = t.clone();
                if let EventKind::TakeUp { from, .. } = &mut out.events[i].kind {
                    *from = p(2);
                }
                out
            },
        },
        MutationCase {
            property: UNIQUE_TAKEUP,
            name: "message queued before it was broadcast",
            build: |f| {
                let t = &f.base;
                let a = msg_id(t, "a");
                let b = find(
                    t,
                    0,
                    |k| matches!(k, EventKind::Broadcast { id } if *id == a),
                );
                swap_kinds(t.clone(), b, b + 1)
            },
        },
        MutationCase {
            property: UNIQUE_TAKEUP,
            name: "relay forwarded a message it never took up",
            build: |f| {
                let t = &f.base;
                remove(t.clone(), find(t, 1, takes_up(&msg_id(t, "d"))))
            },
        },
        // Donation correspondence.
        MutationCase {
            property: DONATION,
            name: "sub-transaction deleted",
            build: |f| remove(f.donation.clone(), first_subtx(&f.donation)),
        },
        MutationCase {
            property: DONATION,
            name: "sub-transaction duplicated",
            build: |f| {
                let t = &f.donation;
                let i = first_subtx(t);
                let actor = match t.events[i].actor {
                    Actor::Process(q) => q.0,
                    Actor::Gms => unreachable!(),
                };
                insert(t.clone(), i + 1, actor, t.events[i].kind.clone())
            },
        },
        MutationCase {
            property: DONATION,
            name: "sub-transaction kind flipped",
            build: |f| {
                let mut t = f.donation.clone();
                let i = first_subtx(&t);
                if let EventKind::Subtx { sub, .. } = &mut t.events[i].kind {
                    *sub = match sub {
                        SubTxKind::Msg => SubTxKind::Ack,
                        SubTxKind::Ack => SubTxKind::Msg,
                    };
                }
                t
            },
        },
        MutationCase {
            property: DONATION,
            name: "untimely packet erased from the channel record",
            build: |f| {
                let t = &f.donation;
                let h = History::new(t);
                let case = donation_oracle(&h)
                    .into_iter()
                    .find(|c| !c.expected.is_empty())
                    .unwrap();
                let (sub, id) = case.expected[0].clone();
                let (src, dst) = match case.side {
                    checker::DonationSide::Donation => (case.member, case.parent),
                    checker::DonationSide::Codonation => (case.parent, case.member),
                };
                let i = t
                    .events
                    .iter()
                    .position(|e| {
                        e.process() == Some(src)
                            && matches!(&e.kind, EventKind::Queue { to, .. } if to.contains_key(&dst))
                            && match (&e.kind, sub) {
                                (EventKind::Queue { packet, .. }, SubTxKind::Msg) => {
                                    matches!(&packet.kind, PacketKind::Msg { msg } if msg.id() == id)
                                }
                                (EventKind::Queue { packet, .. }, SubTxKind::Ack) => {
                                    matches!(&packet.kind, PacketKind::Ack { id: a } if *a == id)
                                }
                                _ => false,
                            }
                    })
                    .unwrap();
                let mut out = t.clone();
                if let EventKind::Queue { packet, .. } = &mut out.events[i].kind {
                    packet.kind = PacketKind::Ghost {
                        view: packet.height,
                    };
                }
                out
            },
        },
        // History axioms.
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "channel dequeued out of order",
            build: |f| {
                let t = &f.base;
                let is_from_p0 =
                    |k: &EventKind| matches!(k, EventKind::PacketIn { from, .. } if *from == p(0));
                let first = find(t, 1, is_from_p0);
                let second = (first + 1..t.events.len())
                    .find(|&j| at(&t.events[j], 1) && is_from_p0(&t.events[j].kind))
                    .unwrap();
                swap_kinds(t.clone(), first, second)
            },
        },
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "packet queued to a removed process",
            build: |f| {
                let t = &f.base;
                let i = find(
                    t,
                    0,
                    |k| matches!(k, EventKind::Queue { packet, .. } if packet.height == ViewId(2)),
                );
                let mut out = t.clone();
                if let EventKind::Queue { to, .. } = &mut out.events[i].kind {
                    to.insert(p(2), 99);
                }
                out
            },
        },
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "process acts after halting",
            build: |f| {
                let t = &f.base;
                let h = find(t, 2, |k| matches!(k, EventKind::Halt { .. }));
                insert(
                    t.clone(),
                    h + 1,
                    2,
                    EventKind::RequestIn {
                        payload: "zombie".into(),
                    },
                )
            },
        },
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "notification skipped",
            build: |f| {
                let t = &f.base;
                remove(
                    t.clone(),
                    find(
                        t,
                        0,
                        |k| matches!(k, EventKind::Notify { view, .. } if *view == ViewId(1)),
                    ),
                )
            },
        },
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "packet changed in transit",
            build: |f| {
                let t = &f.base;
                let i = packet_in(t, 1, 0, |k| matches!(k, PacketKind::Msg { .. }));
                let mut out = t.clone();
                if let EventKind::PacketIn { packet, .. } = &mut out.events[i].kind {
                    if let PacketKind::Msg { msg } = &mut packet.kind {
                        msg.payload = "tampered".into();
                    }
                }
                out
            },
        },
        MutationCase {
            property: HISTORY_AXIOMS,
            name: "joiner notified without being forked",
            build: |f| {
                let t = &f.base;
                let i = find(t, 3, |k| {
                    matches!(
                        k,
                        EventKind::Notify {
                            note: Notification::New { .. },
                            ..
                        }
                    )
                });
                let mut out = t.clone();
                if let EventKind::Notify {
                    note: Notification::New { parent, .. },
                    ..
                } = &mut out.events[i].kind
                {
                    *parent = Some(p(0));
                }
                out
            },
        },
        // View agreement (report-only).
        MutationCase {
            property: VIEW_AGREEMENT,
            name: "installer skips a delivery",
            build: |f| {
                let t = &f.base;
                remove(t.clone(), find(t, 0, delivers(&msg_id(t, "c"))))
            },
        },
        MutationCase {
            property: VIEW_AGREEMENT,
            name: "installer delivers an extra message",
            build: |f| {
                let t = &f.base;
                let i = find(t, 1, installs(1));
                let id = forged(t);
                let payload = payload_of(&msg_id(t, "a"), t);
                insert(t.clone(), i, 1, EventKind::Deliver { id, payload })
            },
        },
        MutationCase {
            property: VIEW_AGREEMENT,
            name: "delivery moved after the install",
            build: |f| {
                let t = &f.base;
                let i = find(t, 0, delivers(&msg_id(t, "d")));
                move_after(t.clone(), i, find(t, 0, installs(1)))
            },
        },
    ]
}

/// Runs one mutation; `Ok` carries the failing counterexample.
pub fn run_mutation(case: &MutationCase) -> Result<Vec<u64>, String> {
    let trace = (case.build)(fixtures());
    // A mutated trace must still survive a render/parse round trip.
    let trace = Trace::parse(&trace.render()).map_err(|e| e.to_string())?;
    let verdicts = checker::run_all(&trace);
    let v = verdicts
        .iter()
        .find(|v| v.property == case.property)
        .ok_or_else(|| format!("no verdict for {}", case.property))?;
    match v.result {
        checker::Outcome::Fail if !v.counterexample.is_empty() => Ok(v.counterexample.clone()),
        checker::Outcome::Fail => Err("failed without a counterexample".into()),
        other => Err(format!("{other}: {}", v.note)),
    }
}
