//! Deterministic fault-injecting simulator.
//!
//! One scheduler loop owns every process, channel and the membership oracle.
//! Each tick it collects the enabled triggers and picks one with a seeded
//! `ChaCha8Rng`:
//!
//! * a notification dequeue, once the process's self-channel is empty;
//! * a packet dequeue from the head of a channel, once the receiver has been
//!   notified up to the packet's piggybacked height;
//! * a broadcast-request dequeue;
//! * a Main slot, which moves the next scripted payload into the request
//!   queue.
//!
//! Timed directives from the scenario fire before the choice. When nothing
//! is enabled the clock jumps to the next directive; when nothing is left the
//! run is quiescent.

mod channel;
mod checks;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::app::DeliveryLog;
use crate::gms::Gms;
use crate::protocol::{Effect, InvariantViolation, ProcessState, ProtocolError, TxLog};
use crate::scenario::{Action, MainScript, Scenario, ScenarioError};
use crate::trace::{
    Actor, EventKind, HaltReason, RunStatus, Trace, TraceEnd, TraceEvent, TraceHeader,
};
use crate::types::{Notification, Packet, Payload, ProcessId, ViewChange, ViewId};

use channel::Channel;
use checks::HeightLedger;

pub const PRNG_NAME: &str = "ChaCha8Rng";

/// Something that went wrong inside a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Invariant(InvariantViolation),
    Protocol {
        process: ProcessId,
        error: ProtocolError,
    },
    Membership(String),
    UntTie {
        process: ProcessId,
        detail: String,
    },
    /// Quiescent, but a live process still has unfinished protocol work.
    Stall {
        process: ProcessId,
        detail: String,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Invariant(v) => write!(f, "invariant {v}"),
            Violation::Protocol { process, error } => {
                write!(f, "protocol error at {process}: {error}")
            }
            Violation::Membership(m) => write!(f, "membership: {m}"),
            Violation::UntTie { process, detail } => {
                write!(f, "untimely tie at {process}: {detail}")
            }
            Violation::Stall { process, detail } => write!(f, "stall at {process}: {detail}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub transactions: u64,
    pub discards: u64,
    pub dropped_packets: u64,
    pub stale_acks: u64,
}

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub ticks: u64,
    pub trace: Trace,
    pub logs: BTreeMap<ProcessId, DeliveryLog>,
    pub halted: BTreeSet<ProcessId>,
    pub violations: Vec<Violation>,
    pub stats: RunStats,
}

/// Overrides applied on top of a scenario.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub max_ticks: Option<u64>,
}

struct Proc {
    state: Option<ProcessState<DeliveryLog>>,
    halted: bool,
    /// Index of the next entry in the membership queue.
    next_note: usize,
    /// View of the last notification dequeued.
    notified: ViewId,
    stalled: bool,
    requests: VecDeque<Payload>,
    launched_at: Option<u64>,
    script: MainScript,
    script_pos: usize,
    stream_next: Option<u64>,
    stream_count: u64,
    /// Senders whose removal this process has been notified of.
    removed_seen: BTreeSet<ProcessId>,
    /// Processes whose donation this process has handled.
    donors: BTreeSet<ProcessId>,
}

impl Proc {
    fn new(script: MainScript) -> Self {
        let stream_next = script.stream.map(|(t, _)| t);
        Proc {
            state: None,
            halted: false,
            next_note: 0,
            notified: ViewId(0),
            stalled: false,
            requests: VecDeque::new(),
            launched_at: None,
            script,
            script_pos: 0,
            stream_next,
            stream_count: 0,
            removed_seen: BTreeSet::new(),
            donors: BTreeSet::new(),
        }
    }

    fn active(&self) -> bool {
        self.state.is_some() && !self.halted
    }

    fn delivered(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.data.message_count())
    }

    /// Tick at which the Main script next wants a slot, if any.
    fn main_due(&self) -> Option<u64> {
        let launched = self.launched_at?;
        if !self.active() {
            return None;
        }
        let step = self.script.steps.get(self.script_pos).and_then(|s| {
            let ready = s.after_deliveries.is_none_or(|n| self.delivered() >= n);
            ready.then_some(s.at_tick)
        });
        let stream = self.stream_next;
        [step, stream]
            .into_iter()
            .flatten()
            .min()
            .map(|t| t.max(launched))
    }
}

#[derive(Debug, Clone, Copy)]
enum Trigger {
    Notify(ProcessId),
    Packet { from: ProcessId, to: ProcessId },
    Request(ProcessId),
    Main(ProcessId),
}

struct Sim<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
    tick: u64,
    max_ticks: u64,
    gms: Gms,
    procs: BTreeMap<ProcessId, Proc>,
    channels: BTreeMap<(ProcessId, ProcessId), Channel>,
    pending: VecDeque<crate::scenario::Directive>,
    auto_removals: BTreeMap<ProcessId, u64>,
    drop_notes: BTreeSet<(ProcessId, ViewId)>,
    events: Vec<TraceEvent>,
    seq: u64,
    violations: Vec<Violation>,
    stats: RunStats,
    heights: HeightLedger,
    aborted: bool,
}

/// Runs a scenario to quiescence, timeout or abort.
pub fn run_scenario(scenario: &Scenario, opts: RunOptions) -> Result<RunOutcome, ScenarioError> {
    scenario.validate()?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let mut sim = Sim::new(scenario, seed, opts.max_ticks.unwrap_or(scenario.max_ticks))?;
    let status = sim.run();
    Ok(sim.finish(status, seed))
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, seed: u64, max_ticks: u64) -> Result<Self, ScenarioError> {
        let roster: BTreeSet<ProcessId> = scenario.roster.iter().copied().collect();
        let gms = Gms::new(&roster).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut scripts = scenario.main_scripts();
        let mut procs = BTreeMap::new();
        let all: BTreeSet<ProcessId> = scenario.membership()?.processes().collect();
        for p in all {
            procs.insert(p, Proc::new(scripts.remove(&p).unwrap_or_default()));
        }
        Ok(Sim {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            max_ticks,
            gms,
            procs,
            channels: BTreeMap::new(),
            pending: scenario.timeline().into_iter().cloned().collect(),
            auto_removals: BTreeMap::new(),
            drop_notes: BTreeSet::new(),
            events: Vec::new(),
            seq: 0,
            violations: Vec::new(),
            stats: RunStats::default(),
            heights: HeightLedger::default(),
            aborted: false,
        })
    }

    fn emit(&mut self, actor: Actor, kind: EventKind) {
        self.events.push(TraceEvent {
            seq: self.seq,
            tick: self.tick,
            actor,
            kind,
        });
        self.seq += 1;
    }

    fn run(&mut self) -> RunStatus {
        let view0 = self.gms.views()[0].clone();
        self.emit(Actor::Gms, EventKind::View(view0));
        for pid in self
            .scenario
            .roster
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
        {
            self.start_original(pid);
        }
        loop {
            if self.aborted {
                return RunStatus::Aborted;
            }
            self.apply_due_directives();
            if self.aborted {
                return RunStatus::Aborted;
            }
            self.discard_from_removed();
            let enabled = self.enabled();
            if enabled.is_empty() {
                match self.next_wakeup() {
                    Some(t) if t < self.max_ticks => {
                        self.tick = t.max(self.tick + 1);
                        continue;
                    }
                    Some(_) => return RunStatus::Timeout,
                    None => {
                        self.report_stalls();
                        return RunStatus::Quiescent;
                    }
                }
            }
            if self.tick >= self.max_ticks {
                return RunStatus::Timeout;
            }
            let pick = enabled[self.rng.gen_range(0..enabled.len())];
            self.execute(pick);
            self.tick += 1;
        }
    }

    fn finish(self, status: RunStatus, seed: u64) -> RunOutcome {
        let logs = self
            .procs
            .iter()
            .filter_map(|(&p, pr)| pr.state.as_ref().map(|s| (p, s.data.clone())))
            .collect();
        let halted = self
            .procs
            .iter()
            .filter(|(_, pr)| pr.halted)
            .map(|(&p, _)| p)
            .collect();
        let trace = Trace {
            header: TraceHeader {
                scenario_hash: self.scenario.hash(),
                seed,
                prng: PRNG_NAME.into(),
            },
            events: self.events,
            end: Some(TraceEnd {
                status,
                ticks: self.tick,
            }),
        };
        RunOutcome {
            status,
            ticks: self.tick,
            trace,
            logs,
            halted,
            violations: self.violations,
            stats: self.stats,
        }
    }

    fn start_original(&mut self, pid: ProcessId) {
        let roster = self.scenario.roster.clone();
        self.emit(
            Actor::Process(pid),
            EventKind::Notify {
                view: ViewId(0),
                note: Notification::New { pid, parent: None },
            },
        );
        match ProcessState::prot_start(&roster, pid) {
            Ok((st, log)) => {
                self.procs.get_mut(&pid).expect("roster member").state = Some(st);
                self.apply_effects(pid, log);
                self.post_checks(pid, None);
            }
            Err(error) => self.abort(pid, error),
        }
    }

    fn abort(&mut self, process: ProcessId, error: ProtocolError) {
        self.violations.push(Violation::Protocol { process, error });
        self.aborted = true;
    }

    fn apply_due_directives(&mut self) {
        while self.pending.front().is_some_and(|d| d.tick <= self.tick) {
            let d = self.pending.pop_front().expect("front checked");
            match d.action {
                Action::ProposeJoin { pid, parent } => {
                    self.propose(ViewChange::Join { pid, parent });
                }
                Action::ProposeRemove { pid } => {
                    self.auto_removals.remove(&pid);
                    self.propose(ViewChange::Remove { pid });
                }
                Action::Halt { pid } => self.halt(pid, HaltReason::Crash),
                Action::DropPackets {
                    src,
                    dst,
                    from_ordinal,
                } => {
                    let ch = self.channels.entry((src, dst)).or_default();
                    self.stats.dropped_packets += ch.set_drop_from(from_ordinal);
                }
                Action::DropNotification { pid, view } => {
                    self.drop_notes.insert((pid, view));
                }
                Action::Broadcast { .. } | Action::BroadcastEvery { .. } => {}
            }
            if self.aborted {
                return;
            }
        }
        let due: Vec<ProcessId> = self
            .auto_removals
            .iter()
            .filter(|(_, &t)| t <= self.tick)
            .map(|(&p, _)| p)
            .collect();
        for pid in due {
            self.auto_removals.remove(&pid);
            if self.gms.current_members().contains(&pid) {
                self.propose(ViewChange::Remove { pid });
            }
        }
    }

    fn propose(&mut self, change: ViewChange) {
        match self.gms.propose_change(change) {
            Ok(view) => {
                let rec = self.gms.views()[view.0 as usize].clone();
                self.emit(Actor::Gms, EventKind::View(rec));
                if let ViewChange::Join { pid, parent } = change {
                    // A child whose parent can no longer fork it never starts.
                    if self.procs.get(&parent).is_none_or(|p| p.halted) {
                        self.doom(pid);
                    }
                }
            }
            Err(e) => {
                self.violations
                    .push(Violation::Membership(format!("tick {}: {e}", self.tick)));
                self.aborted = true;
            }
        }
    }

    /// Marks an uninitialized child as never starting.
    fn doom(&mut self, pid: ProcessId) {
        let pr = self.procs.get_mut(&pid).expect("known process");
        if pr.state.is_none() && !pr.halted {
            pr.halted = true;
            self.schedule_detection(pid);
        }
    }

    fn schedule_detection(&mut self, pid: ProcessId) {
        let explicit = self
            .pending
            .iter()
            .any(|d| matches!(d.action, Action::ProposeRemove { pid: p } if p == pid));
        let removed = self.gms.removal_view(pid).is_some();
        if !explicit && !removed {
            let at = self.tick + self.scenario.detect_delay;
            self.auto_removals.entry(pid).or_insert(at);
        }
    }

    fn halt(&mut self, pid: ProcessId, reason: HaltReason) {
        let Some(pr) = self.procs.get_mut(&pid) else {
            return;
        };
        if pr.halted {
            return;
        }
        pr.halted = true;
        if pr.state.is_none() {
            self.schedule_detection(pid);
            return;
        }
        self.emit(Actor::Process(pid), EventKind::Halt { reason });
        let outgoing: Vec<(ProcessId, ProcessId)> = self
            .channels
            .keys()
            .filter(|(s, _)| *s == pid)
            .copied()
            .collect();
        for key in outgoing {
            let ch = self.channels.get_mut(&key).expect("key from map");
            let k = self.rng.gen_range(0..=ch.len());
            self.stats.dropped_packets += ch.drop_suffix(k);
        }
        // Children not yet forked by this process never start.
        let unborn: Vec<ProcessId> = self
            .procs
            .iter()
            .filter(|(&c, p)| p.state.is_none() && self.gms.parent(c) == Some(pid))
            .map(|(&c, _)| c)
            .collect();
        for c in unborn {
            self.doom(c);
        }
        if reason == HaltReason::Crash {
            self.schedule_detection(pid);
        }
    }

    fn discard_from_removed(&mut self) {
        let keys: Vec<(ProcessId, ProcessId)> = self.channels.keys().copied().collect();
        for (src, dst) in keys {
            let Some(pr) = self.procs.get(&dst) else {
                continue;
            };
            if !pr.active() || !pr.removed_seen.contains(&src) {
                continue;
            }
            while let Some((ord, packet)) =
                self.channels.get_mut(&(src, dst)).and_then(Channel::pop)
            {
                self.stats.discards += 1;
                self.emit(
                    Actor::Process(dst),
                    EventKind::Discard {
                        from: src,
                        ord,
                        packet,
                    },
                );
            }
        }
    }

    fn next_note(&self, pid: ProcessId) -> Option<(ViewId, Notification)> {
        let pr = &self.procs[&pid];
        if !pr.active() || pr.stalled {
            return None;
        }
        self.gms.notifications(pid).get(pr.next_note).copied()
    }

    fn enabled(&mut self) -> Vec<Trigger> {
        let mut out = Vec::new();
        let pids: Vec<ProcessId> = self.procs.keys().copied().collect();
        for &p in &pids {
            if let Some((view, _)) = self.next_note(p) {
                if self.drop_notes.contains(&(p, view)) {
                    self.procs.get_mut(&p).expect("known").stalled = true;
                } else if self.channels.get(&(p, p)).is_none_or(Channel::is_empty) {
                    out.push(Trigger::Notify(p));
                }
            }
        }
        for (&(from, to), ch) in &self.channels {
            let pr = &self.procs[&to];
            if pr.active() && ch.head().is_some_and(|k| k.height <= pr.notified) {
                out.push(Trigger::Packet { from, to });
            }
        }
        for (&p, pr) in &self.procs {
            if pr.active() && !pr.requests.is_empty() {
                out.push(Trigger::Request(p));
            }
            if pr.main_due().is_some_and(|t| t <= self.tick) {
                out.push(Trigger::Main(p));
            }
        }
        out
    }

    fn next_wakeup(&self) -> Option<u64> {
        let directive = self.pending.front().map(|d| d.tick);
        let detect = self.auto_removals.values().min().copied();
        let main = self.procs.values().filter_map(Proc::main_due).min();
        [directive, detect, main].into_iter().flatten().min()
    }

    fn report_stalls(&mut self) {
        for (&p, pr) in &self.procs {
            let Some(st) = pr.state.as_ref().filter(|_| !pr.halted) else {
                continue;
            };
            let mut issues = Vec::new();
            if st.v_gap > 0 {
                issues.push(format!("view gap {}", st.v_gap));
            }
            let waiting = st.bcast_wait_set.len() + st.fwd_wait_set.len();
            if waiting > 0 {
                issues.push(format!("{waiting} unstable messages"));
            }
            if !st.receive_set.is_empty() {
                issues.push(format!("{} undeliverable messages", st.receive_set.len()));
            }
            if !st.launch_queue.is_empty() {
                issues.push(format!("{} parked broadcasts", st.launch_queue.len()));
            }
            if !issues.is_empty() {
                self.violations.push(Violation::Stall {
                    process: p,
                    detail: issues.join(", "),
                });
            }
        }
    }

    fn execute(&mut self, t: Trigger) {
        self.stats.transactions += 1;
        match t {
            Trigger::Notify(p) => self.do_notification(p),
            Trigger::Packet { from, to } => self.do_packet(from, to),
            Trigger::Request(p) => {
                let payload = self
                    .procs
                    .get_mut(&p)
                    .and_then(|pr| pr.requests.pop_front())
                    .expect("enabled request");
                self.emit(
                    Actor::Process(p),
                    EventKind::RequestIn {
                        payload: payload.clone(),
                    },
                );
                self.transact(p, |st| st.prot_broadcast(payload));
            }
            Trigger::Main(p) => {
                let tick = self.tick;
                let pr = self.procs.get_mut(&p).expect("enabled main");
                let step_ready = pr.script.steps.get(pr.script_pos).is_some_and(|s| {
                    s.at_tick <= tick && s.after_deliveries.is_none_or(|n| pr.delivered() >= n)
                });
                if step_ready {
                    let payload = pr.script.steps[pr.script_pos].payload.clone();
                    pr.script_pos += 1;
                    pr.requests.push_back(payload);
                } else if let (Some((_, period)), Some(next)) = (pr.script.stream, pr.stream_next) {
                    pr.stream_count += 1;
                    pr.requests
                        .push_back(Payload::from(format!("{p}-stream-{}", pr.stream_count)));
                    pr.stream_next = Some(next.max(tick) + period);
                }
            }
        }
    }

    fn do_notification(&mut self, p: ProcessId) {
        let (view, note) = self.next_note(p).expect("enabled notification");
        let pr = self.procs.get_mut(&p).expect("known");
        pr.next_note += 1;
        pr.notified = view;
        self.emit(Actor::Process(p), EventKind::Notify { view, note });
        let pre = self.procs[&p].state.clone().expect("active");
        self.heights.record_pre(p, view, &pre);
        match note {
            Notification::Dead => self.halt(p, HaltReason::Dead),
            Notification::Remove { pid } => {
                self.procs
                    .get_mut(&p)
                    .expect("known")
                    .removed_seen
                    .insert(pid);
                self.transact(p, |st| st.prot_remove(pid));
            }
            Notification::Join { pid, parent } => {
                self.transact(p, |st| st.prot_join(pid, parent));
                if parent == p && !self.procs[&pid].halted && !self.aborted {
                    self.fork(p, pid, pre);
                }
            }
            Notification::New { .. } => {}
        }
        if let Some(st) = self.procs[&p]
            .state
            .as_ref()
            .filter(|_| !self.procs[&p].halted)
        {
            self.heights.record_post(p, view, st);
        }
        self.check_heights(p, view);
    }

    fn fork(&mut self, parent: ProcessId, child: ProcessId, snapshot: ProcessState<DeliveryLog>) {
        let view = self.gms.join_view(child).expect("child has a join view");
        let pr = self.procs.get_mut(&child).expect("known child");
        pr.state = Some(snapshot.clone());
        pr.next_note = 1;
        pr.notified = view;
        self.emit(
            Actor::Process(child),
            EventKind::Notify {
                view,
                note: Notification::New {
                    pid: child,
                    parent: Some(parent),
                },
            },
        );
        // protRun copies ghost_height into flush_height, so the joiner's
        // starting heights are both the parent's ghost_height.
        let mut inherited = snapshot.clone();
        inherited.flush_height = inherited.ghost_height;
        self.heights.record_pre(child, view, &inherited);
        self.transact(child, |st| st.prot_run(child));
        if let Some(st) = self.procs[&child].state.as_ref() {
            self.heights.record_post(child, view, st);
        }
        self.check_heights(child, view);
    }

    fn do_packet(&mut self, from: ProcessId, to: ProcessId) {
        let (ord, packet) = self
            .channels
            .get_mut(&(from, to))
            .and_then(Channel::pop)
            .expect("enabled packet");
        self.emit(
            Actor::Process(to),
            EventKind::PacketIn {
                from,
                ord,
                packet: packet.clone(),
            },
        );
        if matches!(packet.kind, crate::types::PacketKind::Donation { .. }) {
            self.procs.get_mut(&to).expect("known").donors.insert(from);
        }
        self.transact(to, |st| st.prot_packet(packet.kind, from));
    }

    /// Runs one protocol call at `p`, records its effects and checks the
    /// resulting state.
    fn transact(
        &mut self,
        p: ProcessId,
        call: impl FnOnce(&mut ProcessState<DeliveryLog>) -> Result<TxLog, ProtocolError>,
    ) {
        let st = self
            .procs
            .get_mut(&p)
            .and_then(|pr| pr.state.as_mut())
            .expect("active process");
        let pre = (st.live_set.clone(), st.ghost.clone(), st.flush.clone());
        match call(st) {
            Ok(log) => {
                self.apply_effects(p, log);
                self.post_checks(p, Some(pre));
            }
            Err(e) => self.abort(p, e),
        }
    }

    fn apply_effects(&mut self, p: ProcessId, log: TxLog) {
        let actor = Actor::Process(p);
        for eff in log {
            let kind = match eff {
                Effect::Queue { packet, to } => {
                    let height = self.procs[&p].notified;
                    let live = &self.procs[&p].state.as_ref().expect("active").live_set;
                    if let Some(bad) = to.targets().into_iter().find(|t| !live.contains(t)) {
                        self.violations.push(Violation::Protocol {
                            process: p,
                            error: ProtocolError::NotLive { pid: bad, at: p },
                        });
                    }
                    let packet = Packet {
                        kind: packet,
                        height,
                    };
                    let mut ords = BTreeMap::new();
                    for target in to.targets() {
                        let ch = self.channels.entry((p, target)).or_default();
                        let (ord, kept) = ch.push(packet.clone());
                        if !kept {
                            self.stats.dropped_packets += 1;
                        }
                        ords.insert(target, ord);
                    }
                    EventKind::Queue { packet, to: ords }
                }
                Effect::Broadcast { id } => EventKind::Broadcast { id },
                Effect::TakeUp { id, sender } => EventKind::TakeUp { id, from: sender },
                Effect::Deliver { id, payload } => EventKind::Deliver { id, payload },
                Effect::Install { view, gap, change } => EventKind::Install { view, gap, change },
                Effect::LaunchMain => {
                    let at = if self.scenario.roster.contains(&p) && self.tick == 0 {
                        self.scenario.main_delay
                    } else {
                        self.tick
                    };
                    self.procs.get_mut(&p).expect("known").launched_at = Some(at);
                    EventKind::Launch {}
                }
                Effect::SubTx { kind, id, sender } => EventKind::Subtx {
                    sub: kind,
                    id,
                    from: sender,
                },
                Effect::StaleAck { id, sender } => {
                    self.stats.stale_acks += 1;
                    EventKind::StaleAck { id, from: sender }
                }
                Effect::UntTie { a, b } => {
                    self.violations.push(Violation::UntTie {
                        process: p,
                        detail: format!("{a} and {b}"),
                    });
                    EventKind::UntTie { a, b }
                }
            };
            self.emit(actor, kind);
        }
    }
}
