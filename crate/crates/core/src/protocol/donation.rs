//! Donation and co-donation processing.
//!
//! Both sides merge two sets of untimely wait records, sort them by
//! `(height_a, height_b)` and replay each as a message or ack receipt. The
//! sort is stable. Records of the process that sent the donation go first:
//! the body on the joiner's side, the local wait set on the donor's side.

use super::{Cast, Effect, ProcessState, ProtocolError, SubTxKind};
use crate::app::ReplicatedData;
use crate::types::{DonationBody, PacketKind, ProcessId, WaitRecord};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Record from the donated body.
    Peer,
    /// Record from the local wait set.
    Own,
}

struct Untimely {
    rec: WaitRecord,
    side: Side,
    key: (u64, u64),
}

/// Sorts untimely records, reporting exact key ties across the two sides.
fn sort_untimely(mut unt: Vec<Untimely>, out: &mut Vec<Effect>) -> Vec<Untimely> {
    unt.sort_by_key(|u| u.key);
    for pair in unt.windows(2) {
        if pair[0].key == pair[1].key && pair[0].side != pair[1].side {
            out.push(Effect::UntTie {
                a: pair[0].rec.msg.id(),
                b: pair[1].rec.msg.id(),
            });
        }
    }
    unt
}

impl<D: ReplicatedData> ProcessState<D> {
    /// Own records that still wait for an ack from `peer`, keyed by their
    /// outgoing index.
    fn own_untimely(&self, peer: ProcessId) -> Vec<Untimely> {
        self.wait_set()
            .filter(|r| r.iset.contains_key(&peer))
            .map(|r| Untimely {
                rec: r.clone(),
                side: Side::Own,
                key: (r.index.total(), 0),
            })
            .collect()
    }

    /// Body records that still wait for an ack from this process.
    fn peer_untimely(&self, body: &DonationBody) -> Vec<Untimely> {
        let me = self.self_id;
        body.wait_set
            .iter()
            .filter_map(|r| {
                let mine = r.iset.get(&me)?;
                Some(Untimely {
                    rec: r.clone(),
                    side: Side::Peer,
                    key: (mine.total(), r.index.total()),
                })
            })
            .collect()
    }

    fn replay(
        &mut self,
        unt: Vec<Untimely>,
        body_in: u64,
        sender: ProcessId,
        out: &mut Vec<Effect>,
    ) {
        for u in unt {
            match u.side {
                Side::Peer => {
                    let seen = self.mpkt_in.get(&sender).map_or(0, |c| c.total());
                    if u.rec.index.total() > seen {
                        out.push(Effect::SubTx {
                            kind: SubTxKind::Msg,
                            id: u.rec.msg.id(),
                            sender,
                        });
                        self.receive_message(u.rec.msg, sender, out);
                    }
                }
                Side::Own => {
                    if u.rec.index.total() <= body_in {
                        let id = u.rec.msg.id();
                        out.push(Effect::SubTx {
                            kind: SubTxKind::Ack,
                            id: id.clone(),
                            sender,
                        });
                        self.receive_ack(&id, sender, out);
                    }
                }
            }
        }
    }

    pub(super) fn receive_donation(
        &mut self,
        body: DonationBody,
        sender: ProcessId,
        out: &mut Vec<Effect>,
    ) -> Result<(), ProtocolError> {
        let me = self.self_id;
        let body_in = body
            .mpkt_in
            .get(&me)
            .ok_or(ProtocolError::MissingDonationEntry {
                what: "donation",
                sender,
                at: me,
            })?
            .total();
        self.contact_set.insert(sender);
        out.push(Effect::Queue {
            packet: PacketKind::Codonation {
                body: self.donation_body(),
            },
            to: Cast::Unicast(sender),
        });
        let mut unt = self.peer_untimely(&body);
        unt.extend(self.own_untimely(sender));
        let unt = sort_untimely(unt, out);
        self.replay(unt, body_in, sender, out);
        self.ghost.insert(sender, body.ghost_height);
        self.flush.insert(sender, body.flush_height);
        Ok(())
    }

    pub(super) fn receive_codonation(
        &mut self,
        body: DonationBody,
        sender: ProcessId,
        out: &mut Vec<Effect>,
    ) -> Result<(), ProtocolError> {
        let me = self.self_id;
        let body_in = body
            .mpkt_in
            .get(&me)
            .ok_or(ProtocolError::MissingDonationEntry {
                what: "co-donation",
                sender,
                at: me,
            })?
            .total();
        let mut unt = self.own_untimely(sender);
        unt.extend(self.peer_untimely(&body));
        let unt = sort_untimely(unt, out);
        self.replay(unt, body_in, sender, out);
        self.ghost.insert(sender, body.ghost_height);
        self.flush.insert(sender, body.flush_height);
        self.try_to_install(out)
    }
}
