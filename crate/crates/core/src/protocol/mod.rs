//! The per-process protocol state machine.
//!
//! A [`ProcessState`] is driven by the interface calls `prot_start`,
//! `prot_run`, `prot_broadcast`, `prot_join`, `prot_remove` and
//! `prot_packet`. Each call runs one atomic transaction and returns the
//! ordered list of [`Effect`]s it produced: packets queued, messages taken
//! up and delivered, views installed and so on. The caller owns the
//! channels; the state machine never performs I/O.

mod donation;
mod omnibus;
mod procedures;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::ReplicatedData;
use crate::types::{
    CounterPair, DonationBody, MessageId, PacketKind, Payload, PendingChange, ProcessId,
    StampedMessage, VectorTime, ViewId, WaitKind, WaitRecord,
};

pub use omnibus::{check_local_invariants, InvariantViolation};

/// Contract violations detected by the state machine.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{pid} is not in the roster")]
    NotInRoster { pid: ProcessId },
    #[error("empty roster")]
    EmptyRoster,
    #[error("{pid} is not live at {at}")]
    NotLive { pid: ProcessId, at: ProcessId },
    #[error("{pid} is already live at {at}")]
    AlreadyLive { pid: ProcessId, at: ProcessId },
    #[error("parent {parent} of {pid} is not live at {at}")]
    ParentNotLive {
        pid: ProcessId,
        parent: ProcessId,
        at: ProcessId,
    },
    #[error("packet from {sender}, which is not live at {at}")]
    SenderNotLive { sender: ProcessId, at: ProcessId },
    #[error("ghost height from {sender} regressed from {old} to {new}")]
    GhostRegression {
        sender: ProcessId,
        old: ViewId,
        new: ViewId,
    },
    #[error("flush height from {sender} regressed from {old} to {new}")]
    FlushRegression {
        sender: ProcessId,
        old: ViewId,
        new: ViewId,
    },
    #[error("{what} body from {sender} lacks an entry for {at}")]
    MissingDonationEntry {
        what: &'static str,
        sender: ProcessId,
        at: ProcessId,
    },
    #[error("pending view queue is empty while the view gap is positive")]
    EmptyPendViewQueue,
    #[error("message {id} has both a broadcast and a forward wait record")]
    DuplicateWaitRecord { id: MessageId },
}

/// Destination of a queued packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cast", content = "to", rename_all = "lowercase")]
pub enum Cast {
    /// One copy per member of the set, in ascending id order.
    Multicast(Vec<ProcessId>),
    Unicast(ProcessId),
}

impl Cast {
    pub fn targets(&self) -> Vec<ProcessId> {
        match self {
            Cast::Multicast(v) => v.clone(),
            Cast::Unicast(p) => vec![*p],
        }
    }
}

/// Kind of a simulated sub-transaction inside donation processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubTxKind {
    Msg,
    Ack,
}

/// One observable step of a transaction, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// A packet is queued to one or more channels.
    Queue { packet: PacketKind, to: Cast },
    /// A message is stamped and broadcast by this process. Always followed
    /// by the `Queue` of its message packets.
    Broadcast { id: MessageId },
    /// A message packet was accepted into the receive set (first receipt).
    TakeUp { id: MessageId, sender: ProcessId },
    /// `ApplyMessage` up-call.
    Deliver { id: MessageId, payload: Payload },
    /// A pending view was installed; `gap` is the view gap right after.
    Install {
        view: ViewId,
        gap: u64,
        change: PendingChange,
    },
    /// The application main thread is launched at this process.
    LaunchMain,
    /// A donation or co-donation re-enacts a message or ack receipt.
    SubTx {
        kind: SubTxKind,
        id: MessageId,
        sender: ProcessId,
    },
    /// An ack arrived for a message with no wait record.
    StaleAck { id: MessageId, sender: ProcessId },
    /// Two untimely records from different sets sorted to the same key.
    UntTie { a: MessageId, b: MessageId },
}

/// Ordered effects of one transaction.
pub type TxLog = Vec<Effect>;

/// Complete local state of one process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessState<D> {
    pub self_id: ProcessId,
    pub cur_view: ViewId,
    pub v_gap: u64,
    pub mset: BTreeSet<ProcessId>,
    pub pend_view_queue: VecDeque<PendingChange>,
    pub live_set: BTreeSet<ProcessId>,
    pub contact_set: BTreeSet<ProcessId>,
    pub vt: VectorTime,
    pub receive_set: BTreeMap<MessageId, StampedMessage>,
    pub fwd_queue: BTreeMap<ProcessId, VecDeque<StampedMessage>>,
    pub bcast_wait_set: Vec<WaitRecord>,
    pub fwd_wait_set: Vec<WaitRecord>,
    pub launch_queue: VecDeque<Payload>,
    pub ghost_height: ViewId,
    pub flush_height: ViewId,
    pub ghost: BTreeMap<ProcessId, ViewId>,
    pub flush: BTreeMap<ProcessId, ViewId>,
    pub mpkt_out: CounterPair,
    pub mpkt_in: BTreeMap<ProcessId, CounterPair>,
    pub data: D,
}

impl<D: ReplicatedData> ProcessState<D> {
    /// Initial state of a roster member, as created at view 0.
    pub fn prot_start(
        roster: &[ProcessId],
        pid: ProcessId,
    ) -> Result<(Self, TxLog), ProtocolError> {
        if roster.is_empty() {
            return Err(ProtocolError::EmptyRoster);
        }
        let roster: BTreeSet<ProcessId> = roster.iter().copied().collect();
        if !roster.contains(&pid) {
            return Err(ProtocolError::NotInRoster { pid });
        }
        let mut st = ProcessState {
            self_id: pid,
            cur_view: ViewId(0),
            v_gap: 0,
            mset: roster.clone(),
            pend_view_queue: VecDeque::new(),
            live_set: roster.clone(),
            contact_set: roster.clone(),
            vt: VectorTime::new(),
            receive_set: BTreeMap::new(),
            fwd_queue: BTreeMap::new(),
            bcast_wait_set: Vec::new(),
            fwd_wait_set: Vec::new(),
            launch_queue: VecDeque::new(),
            ghost_height: ViewId(0),
            flush_height: ViewId(0),
            ghost: BTreeMap::new(),
            flush: BTreeMap::new(),
            mpkt_out: CounterPair::default(),
            mpkt_in: BTreeMap::new(),
            data: D::ground_state(),
        };
        for &id in &roster {
            st.vt.set(id, 0);
            st.fwd_queue.insert(id, VecDeque::new());
            st.mpkt_in.insert(id, CounterPair::default());
            st.ghost.insert(id, ViewId(0));
            st.flush.insert(id, ViewId(0));
            st.data.apply_join(id);
        }
        Ok((st, vec![Effect::LaunchMain]))
    }

    /// Highest view this process has been notified of.
    pub fn height(&self) -> ViewId {
        self.cur_view + self.v_gap
    }

    /// The broadcast and forward wait sets, in that order.
    pub fn wait_set(&self) -> impl Iterator<Item = &WaitRecord> {
        self.bcast_wait_set.iter().chain(self.fwd_wait_set.iter())
    }

    /// Broadcasts `payload`, or parks it in the launch queue while a view
    /// change is in progress.
    pub fn prot_broadcast(&mut self, payload: Payload) -> Result<TxLog, ProtocolError> {
        let mut out = Vec::new();
        self.broadcast_message(payload, &mut out);
        Ok(out)
    }

    /// First transaction of a freshly forked child. `self` must be a clone
    /// of the parent taken just before the parent handles the join.
    pub fn prot_run(&mut self, pid: ProcessId) -> Result<TxLog, ProtocolError> {
        if self.live_set.contains(&pid) {
            return Err(ProtocolError::AlreadyLive {
                pid,
                at: self.self_id,
            });
        }
        let mut out = Vec::new();
        self.v_gap += 1;
        self.pend_view_queue.push_back(PendingChange::Join(pid));
        self.live_set.insert(pid);
        self.contact_set = BTreeSet::from([pid]);
        self.fwd_queue.insert(pid, VecDeque::new());
        self.bcast_wait_set.clear();
        for rec in &mut self.fwd_wait_set {
            rec.index.b = 0;
        }
        self.launch_queue.clear();
        self.flush_height = self.ghost_height;
        self.ghost.insert(pid, self.ghost_height);
        self.flush.insert(pid, self.ghost_height);
        self.mpkt_out.b = 0;
        self.mpkt_in.insert(pid, self.mpkt_out);
        self.self_id = pid;
        self.check_flush(&mut out);
        Ok(out)
    }

    /// Handles the notification that `rem` is removed.
    pub fn prot_remove(&mut self, rem: ProcessId) -> Result<TxLog, ProtocolError> {
        if !self.live_set.contains(&rem) || rem == self.self_id {
            return Err(ProtocolError::NotLive {
                pid: rem,
                at: self.self_id,
            });
        }
        let mut out = Vec::new();
        self.v_gap += 1;
        self.pend_view_queue.push_back(PendingChange::Remove(rem));
        self.live_set.remove(&rem);
        self.contact_set.remove(&rem);
        for set in [&mut self.bcast_wait_set, &mut self.fwd_wait_set] {
            set.retain_mut(|rec| {
                rec.iset.remove(&rem);
                !rec.iset.is_empty()
            });
        }
        self.mpkt_in.remove(&rem);
        let pending = self.fwd_queue.remove(&rem).unwrap_or_default();
        for msg in pending {
            self.mpkt_out.incr_f();
            let rec = WaitRecord {
                msg: msg.clone(),
                index: self.mpkt_out,
                iset: self.mpkt_in.clone(),
                kind: WaitKind::Fwd,
            };
            out.push(Effect::Queue {
                packet: PacketKind::Msg { msg },
                to: Cast::Multicast(self.contact_set.iter().copied().collect()),
            });
            self.insert_wait_record(rec)?;
        }
        self.ghost.remove(&rem);
        self.flush.remove(&rem);
        self.check_flush(&mut out);
        Ok(out)
    }

    /// Handles the notification that `jn` joins, forked from `parent`.
    /// The parent itself runs this right after forking.
    pub fn prot_join(&mut self, jn: ProcessId, parent: ProcessId) -> Result<TxLog, ProtocolError> {
        if self.live_set.contains(&jn) {
            return Err(ProtocolError::AlreadyLive {
                pid: jn,
                at: self.self_id,
            });
        }
        let (Some(&parent_ghost), Some(&parent_in)) =
            (self.ghost.get(&parent), self.mpkt_in.get(&parent))
        else {
            return Err(ProtocolError::ParentNotLive {
                pid: jn,
                parent,
                at: self.self_id,
            });
        };
        let mut out = Vec::new();
        self.v_gap += 1;
        self.pend_view_queue.push_back(PendingChange::Join(jn));
        self.live_set.insert(jn);
        self.contact_set.insert(jn);
        self.fwd_queue.insert(jn, VecDeque::new());
        for rec in self
            .bcast_wait_set
            .iter_mut()
            .chain(self.fwd_wait_set.iter_mut())
        {
            if let Some(p) = rec.iset.get(&parent).copied() {
                rec.iset.insert(jn, CounterPair::new(0, p.f));
            }
        }
        self.ghost.insert(jn, parent_ghost);
        self.flush.insert(jn, parent_ghost);
        self.mpkt_in.insert(jn, CounterPair::new(0, parent_in.f));
        let body = self.donation_body();
        out.push(Effect::Queue {
            packet: PacketKind::Donation { body },
            to: Cast::Unicast(jn),
        });
        self.check_flush(&mut out);
        Ok(out)
    }

    /// Handles one packet dequeued from the channel `sender -> self`.
    pub fn prot_packet(
        &mut self,
        packet: PacketKind,
        sender: ProcessId,
    ) -> Result<TxLog, ProtocolError> {
        if !self.live_set.contains(&sender) {
            return Err(ProtocolError::SenderNotLive {
                sender,
                at: self.self_id,
            });
        }
        let mut out = Vec::new();
        match packet {
            PacketKind::Msg { msg } => self.receive_message(msg, sender, &mut out),
            PacketKind::Ack { id } => self.receive_ack(&id, sender, &mut out),
            PacketKind::Ghost { view } => self.receive_ghost(view, sender)?,
            PacketKind::Flush { view } => self.receive_flush(view, sender, &mut out)?,
            PacketKind::Donation { body } => self.receive_donation(body, sender, &mut out)?,
            PacketKind::Codonation { body } => self.receive_codonation(body, sender, &mut out)?,
        }
        Ok(out)
    }

    fn donation_body(&self) -> DonationBody {
        DonationBody {
            wait_set: self.wait_set().cloned().collect(),
            mpkt_in: self.mpkt_in.clone(),
            ghost_height: self.ghost_height,
            flush_height: self.flush_height,
        }
    }

    fn insert_wait_record(&mut self, rec: WaitRecord) -> Result<(), ProtocolError> {
        let id = rec.msg.id();
        if self.wait_set().any(|r| r.msg.id() == id) {
            return Err(ProtocolError::DuplicateWaitRecord { id });
        }
        match rec.kind {
            WaitKind::Bcast => self.bcast_wait_set.push(rec),
            WaitKind::Fwd => self.fwd_wait_set.push(rec),
        }
        Ok(())
    }
}
