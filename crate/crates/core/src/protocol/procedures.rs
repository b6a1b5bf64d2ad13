//! Internal procedures shared by the interface calls.

use super::{Cast, Effect, ProcessState, ProtocolError};
use crate::app::ReplicatedData;
use crate::types::{
    MessageId, PacketKind, Payload, PendingChange, ProcessId, StampedMessage, VectorTime, ViewId,
    WaitKind, WaitRecord,
};

impl<D: ReplicatedData> ProcessState<D> {
    pub(super) fn contact_cast(&self) -> Cast {
        Cast::Multicast(self.contact_set.iter().copied().collect())
    }

    pub(super) fn broadcast_message(&mut self, payload: Payload, out: &mut Vec<Effect>) {
        if self.v_gap > 0 {
            self.launch_queue.push_back(payload);
            return;
        }
        self.mpkt_out.incr_b();
        let me = self.self_id;
        let own_in = self.mpkt_in.get(&me).map_or(0, |c| c.b);
        let stamp = self.vt.get(me) + self.mpkt_out.b - own_in;
        let mut mvt = self.vt.clone();
        mvt.set(me, stamp);
        let msg = StampedMessage {
            payload,
            orig: me,
            mview: self.cur_view,
            mvt,
        };
        out.push(Effect::Broadcast { id: msg.id() });
        out.push(Effect::Queue {
            packet: PacketKind::Msg { msg: msg.clone() },
            to: self.contact_cast(),
        });
        // A fresh stamp never collides with an existing record.
        self.bcast_wait_set.push(WaitRecord {
            msg,
            index: self.mpkt_out,
            iset: self.mpkt_in.clone(),
            kind: WaitKind::Bcast,
        });
    }

    pub(super) fn receive_message(
        &mut self,
        msg: StampedMessage,
        sender: ProcessId,
        out: &mut Vec<Effect>,
    ) {
        let id = msg.id();
        out.push(Effect::Queue {
            packet: PacketKind::Ack { id: id.clone() },
            to: Cast::Unicast(sender),
        });
        let counter = self
            .mpkt_in
            .get_mut(&sender)
            .expect("mpkt_in is keyed by the live set");
        if msg.orig == sender {
            counter.incr_b();
        } else {
            counter.incr_f();
        }
        if msg.mview < self.cur_view
            || (msg.mview == self.cur_view && self.vt.get(msg.orig) >= msg.mvt.get(msg.orig))
            || self.receive_set.contains_key(&id)
        {
            return;
        }
        self.receive_set.insert(id.clone(), msg.clone());
        self.fwd_queue
            .get_mut(&sender)
            .expect("fwd_queue is keyed by the live set")
            .push_back(msg);
        out.push(Effect::TakeUp { id, sender });
        self.scan(out);
    }

    pub(super) fn receive_ack(&mut self, id: &MessageId, sender: ProcessId, out: &mut Vec<Effect>) {
        let found = [&mut self.bcast_wait_set, &mut self.fwd_wait_set]
            .into_iter()
            .find_map(|set| {
                let pos = set.iter().position(|r| &r.msg.id() == id)?;
                set[pos].iset.remove(&sender);
                let stable = set[pos].iset.is_empty();
                if stable {
                    set.remove(pos);
                }
                Some(stable)
            });
        match found {
            None => out.push(Effect::StaleAck {
                id: id.clone(),
                sender,
            }),
            Some(true) => self.check_flush(out),
            Some(false) => {}
        }
    }

    pub(super) fn receive_ghost(
        &mut self,
        view: ViewId,
        sender: ProcessId,
    ) -> Result<(), ProtocolError> {
        let slot = self
            .ghost
            .get_mut(&sender)
            .expect("ghost is keyed by the live set");
        if view < *slot {
            return Err(ProtocolError::GhostRegression {
                sender,
                old: *slot,
                new: view,
            });
        }
        *slot = view;
        Ok(())
    }

    pub(super) fn receive_flush(
        &mut self,
        view: ViewId,
        sender: ProcessId,
        out: &mut Vec<Effect>,
    ) -> Result<(), ProtocolError> {
        let slot = self
            .flush
            .get_mut(&sender)
            .expect("flush is keyed by the live set");
        if view < *slot {
            return Err(ProtocolError::FlushRegression {
                sender,
                old: *slot,
                new: view,
            });
        }
        *slot = view;
        self.try_to_install(out)
    }

    pub(super) fn check_flush(&mut self, out: &mut Vec<Effect>) {
        if !self.fwd_wait_set.is_empty() {
            return;
        }
        let h = self.height();
        if self.ghost_height < h {
            self.ghost_height = h;
            out.push(Effect::Queue {
                packet: PacketKind::Ghost { view: h },
                to: self.contact_cast(),
            });
        }
        if !self.bcast_wait_set.is_empty() {
            return;
        }
        if self.flush_height < h {
            self.flush_height = h;
            out.push(Effect::Queue {
                packet: PacketKind::Flush { view: h },
                to: self.contact_cast(),
            });
        }
    }

    pub(super) fn try_to_install(&mut self, out: &mut Vec<Effect>) -> Result<(), ProtocolError> {
        let h = self.height();
        if self
            .live_set
            .iter()
            .any(|p| self.flush.get(p).is_some_and(|&f| f < h))
        {
            return Ok(());
        }
        while self.v_gap > 0 {
            let cur = self.cur_view;
            self.receive_set.retain(|id, _| id.mview != cur);
            for pid in &self.live_set {
                if let Some(q) = self.fwd_queue.get_mut(pid) {
                    q.retain(|m| m.mview != cur);
                }
            }
            self.cur_view = cur.next();
            self.v_gap -= 1;
            let change = self
                .pend_view_queue
                .pop_front()
                .ok_or(ProtocolError::EmptyPendViewQueue)?;
            let mut launch = false;
            match change {
                PendingChange::Join(pid) => {
                    self.mset.insert(pid);
                    self.data.apply_join(pid);
                    launch = pid == self.self_id;
                }
                PendingChange::Remove(pid) => {
                    self.mset.remove(&pid);
                    self.data.apply_removal(pid);
                }
            }
            self.vt = VectorTime::zeros(&self.mset);
            out.push(Effect::Install {
                view: self.cur_view,
                gap: self.v_gap,
                change,
            });
            if launch {
                out.push(Effect::LaunchMain);
            }
            self.scan(out);
        }
        while let Some(payload) = self.launch_queue.pop_front() {
            self.broadcast_message(payload, out);
        }
        Ok(())
    }

    pub(super) fn scan(&mut self, out: &mut Vec<Effect>) {
        loop {
            let mut found = false;
            let keys: Vec<MessageId> = self.receive_set.keys().cloned().collect();
            for id in keys {
                if !self.deliverable(&id) {
                    continue;
                }
                found = true;
                let msg = self
                    .receive_set
                    .remove(&id)
                    .expect("key taken from the receive set");
                self.vt.set(msg.orig, self.vt.get(msg.orig) + 1);
                self.data.apply_message(&msg.payload, msg.orig);
                out.push(Effect::Deliver {
                    id,
                    payload: msg.payload,
                });
            }
            if !found {
                break;
            }
        }
    }

    fn deliverable(&self, id: &MessageId) -> bool {
        id.mview == self.cur_view
            && id.mvt.get(id.orig) == self.vt.get(id.orig) + 1
            && self
                .mset
                .iter()
                .filter(|&&p| p != id.orig)
                .all(|&p| id.mvt.get(p) <= self.vt.get(p))
    }
}
