//! Random conforming scenarios for the property suites.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, Directive, Scenario, DEFAULT_DETECT_DELAY, DEFAULT_MAX_TICKS};
use crate::types::{Payload, ProcessId, ViewId};

/// Size limits and shape of generated scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateLimits {
    pub max_processes: u32,
    pub max_view_changes: u32,
    pub max_broadcasts: u32,
    /// Include crashes and conforming packet and notification drops.
    pub faults: bool,
    /// Every scenario opens with a join proposed while a burst of
    /// broadcasts is in flight.
    pub join_burst: bool,
}

impl Default for GenerateLimits {
    fn default() -> Self {
        GenerateLimits {
            max_processes: 6,
            max_view_changes: 8,
            max_broadcasts: 50,
            faults: true,
            join_burst: false,
        }
    }
}

impl GenerateLimits {
    /// Scenarios built to leave packets in flight across the first join.
    pub fn donation() -> Self {
        GenerateLimits {
            join_burst: true,
            ..GenerateLimits::default()
        }
    }
}

/// `count` scenarios, fully determined by `(seed, count, limits)`.
///
/// Every fifth scenario (and every one when `join_burst` is set) proposes
/// its first join in the middle of a broadcast burst.
pub fn generate_scenarios(seed: u64, count: usize, limits: GenerateLimits) -> Vec<Scenario> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let burst = limits.join_burst || i % 5 == 0;
            let mut s = one(&mut rng, limits, burst);
            s.name = format!("gen-{seed}-{i}");
            s
        })
        .collect()
}

struct Builder {
    events: Vec<Directive>,
    members: Vec<ProcessId>,
    all: Vec<ProcessId>,
    next_id: u32,
    /// Processes that crash at some point; never chosen as parents.
    crashing: BTreeSet<ProcessId>,
    /// Processes chosen as parents; they never crash.
    parents: BTreeSet<ProcessId>,
    view: u64,
    changes: u32,
    broadcasts: u32,
}

impl Builder {
    fn push(&mut self, tick: u64, action: Action) {
        self.events.push(Directive { tick, action });
    }

    fn broadcast(&mut self, rng: &mut ChaCha8Rng, tick: u64, pid: ProcessId, gated: bool) {
        self.broadcasts += 1;
        let after_deliveries = (gated && rng.gen_bool(0.15)).then(|| rng.gen_range(1..=4));
        let payload = Payload::from(format!("m{}", self.broadcasts));
        self.push(
            tick,
            Action::Broadcast {
                pid,
                payload,
                after_deliveries,
            },
        );
    }

    fn pick_parent(&self, rng: &mut ChaCha8Rng) -> Option<ProcessId> {
        let parents: Vec<ProcessId> = self
            .members
            .iter()
            .copied()
            .filter(|p| !self.crashing.contains(p))
            .collect();
        parents.choose(rng).copied()
    }

    fn join(&mut self, rng: &mut ChaCha8Rng, tick: u64) -> bool {
        match self.pick_parent(rng) {
            Some(parent) => {
                self.join_with(tick, parent);
                true
            }
            None => false,
        }
    }

    fn join_with(&mut self, tick: u64, parent: ProcessId) {
        let pid = ProcessId(self.next_id);
        self.next_id += 1;
        self.parents.insert(parent);
        self.push(tick, Action::ProposeJoin { pid, parent });
        self.members.push(pid);
        self.all.push(pid);
        self.view += 1;
        self.changes += 1;
    }

    fn remove(&mut self, rng: &mut ChaCha8Rng, tick: u64, limits: GenerateLimits) -> bool {
        if self.members.len() < 2 {
            return false;
        }
        // Keep at least one member that never crashes.
        let steady = self
            .members
            .iter()
            .filter(|p| !self.crashing.contains(p))
            .count();
        let pid = *self.members.choose(rng).expect("non-empty");
        if steady == 1 && !self.crashing.contains(&pid) {
            return false;
        }
        let crash = limits.faults && !self.parents.contains(&pid) && rng.gen_bool(0.5);
        if crash {
            self.crashing.insert(pid);
            let lead = rng.gen_range(0..=15).min(tick);
            self.push(tick - lead, Action::Halt { pid });
            if rng.gen_bool(0.3) {
                // The crash may also lose a notification it was due.
                let view = ViewId(rng.gen_range(1..=self.view + 1));
                self.push(tick - lead, Action::DropNotification { pid, view });
            }
        }
        if limits.faults && rng.gen_bool(0.4) {
            let others: Vec<ProcessId> = self.all.iter().copied().filter(|&q| q != pid).collect();
            if let Some(&q) = others.choose(rng) {
                let (src, dst) = if rng.gen_bool(0.5) {
                    (pid, q)
                } else {
                    (q, pid)
                };
                self.push(
                    tick.saturating_sub(rng.gen_range(0..10)),
                    Action::DropPackets {
                        src,
                        dst,
                        from_ordinal: rng.gen_range(1..=6),
                    },
                );
            }
        }
        self.push(tick, Action::ProposeRemove { pid });
        self.members.retain(|&p| p != pid);
        self.view += 1;
        self.changes += 1;
        true
    }
}

fn one(rng: &mut ChaCha8Rng, limits: GenerateLimits, burst: bool) -> Scenario {
    let mut max_roster = limits.max_processes.clamp(2, 6);
    if burst {
        max_roster = max_roster
            .min(limits.max_processes.saturating_sub(1))
            .max(2);
    }
    let roster_len = rng.gen_range(2..=max_roster);
    let roster: Vec<ProcessId> = (0..roster_len).map(ProcessId).collect();
    let mut b = Builder {
        events: Vec::new(),
        members: roster.clone(),
        all: roster.clone(),
        next_id: roster_len,
        crashing: BTreeSet::new(),
        parents: BTreeSet::new(),
        view: 0,
        changes: 0,
        broadcasts: 0,
    };
    let horizon: u64 = rng.gen_range(60..400);
    let mut start = 0;

    if burst && b.all.len() < limits.max_processes as usize && limits.max_view_changes > 0 {
        // Messages from the other members to the parent, still in flight
        // when the join is announced.
        let at: u64 = rng.gen_range(6..40);
        let parent = b.pick_parent(rng).expect("no crashes yet");
        let senders: Vec<ProcessId> = b.members.iter().copied().filter(|&p| p != parent).collect();
        let n = rng.gen_range(3..=10).min(limits.max_broadcasts);
        for _ in 0..n {
            let pid = *senders.choose(rng).expect("roster has two members");
            let t = at - rng.gen_range(0..5);
            b.broadcast(rng, t, pid, false);
        }
        b.join_with(at, parent);
        start = at + 1;
    }

    let changes = rng.gen_range(0..=limits.max_view_changes);
    let mut ticks: Vec<u64> = (0..changes)
        .map(|_| rng.gen_range(start..horizon))
        .collect();
    ticks.sort_unstable();
    for t in ticks {
        if b.changes >= limits.max_view_changes {
            break;
        }
        let can_join = b.all.len() < limits.max_processes as usize;
        let want_join = can_join && (b.members.len() < 2 || rng.gen_bool(0.5));
        if !(want_join && b.join(rng, t)) {
            let _ = b.remove(rng, t, limits) || (can_join && b.join(rng, t));
        }
    }

    let extra = rng.gen_range(0..=limits.max_broadcasts.saturating_sub(b.broadcasts));
    for _ in 0..extra {
        let pid = *b.all.choose(rng).expect("non-empty");
        let t = rng.gen_range(0..horizon);
        b.broadcast(rng, t, pid, true);
    }

    let mut events = b.events;
    events.sort_by_key(|d| d.tick);
    Scenario {
        name: String::new(),
        seed: rng.gen_range(0..1 << 32),
        max_ticks: DEFAULT_MAX_TICKS,
        main_delay: rng.gen_range(0..5),
        detect_delay: DEFAULT_DETECT_DELAY,
        roster,
        events,
    }
}
