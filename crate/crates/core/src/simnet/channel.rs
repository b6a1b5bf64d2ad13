use std::collections::VecDeque;

use crate::types::Packet;

/// One FIFO channel. Ordinals start at 1 and count every queued packet,
/// including dropped ones.
#[derive(Debug, Default)]
pub(super) struct Channel {
    queue: VecDeque<(u64, Packet)>,
    last_ord: u64,
    drop_from: Option<u64>,
}

impl Channel {
    /// Appends a packet; returns its ordinal and whether it was kept.
    pub fn push(&mut self, packet: Packet) -> (u64, bool) {
        self.last_ord += 1;
        let ord = self.last_ord;
        let kept = self.drop_from.is_none_or(|from| ord < from);
        if kept {
            self.queue.push_back((ord, packet));
        }
        (ord, kept)
    }

    pub fn pop(&mut self) -> Option<(u64, Packet)> {
        self.queue.pop_front()
    }

    pub fn head(&self) -> Option<&Packet> {
        self.queue.front().map(|(_, k)| k)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Drops the last `k` queued packets; returns how many were dropped.
    pub fn drop_suffix(&mut self, k: usize) -> u64 {
        let keep = self.queue.len().saturating_sub(k);
        let dropped = self.queue.len() - keep;
        self.queue.truncate(keep);
        dropped as u64
    }

    /// Drops every packet with ordinal `from` or later, now and in the
    /// future; returns how many queued packets were purged.
    pub fn set_drop_from(&mut self, from: u64) -> u64 {
        let from = self.drop_from.map_or(from, |f| f.min(from));
        self.drop_from = Some(from);
        let before = self.queue.len();
        self.queue.retain(|(ord, _)| *ord < from);
        (before - self.queue.len()) as u64
    }
}
