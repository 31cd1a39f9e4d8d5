//! gNB-side RLC buffer with drop-tail admission and slotted service.

use std::collections::VecDeque;

use crate::sim::SimTime;
use crate::tcp::Segment;

/// Full-buffer byte budget of one slot: `⌊rate · slot / 8⌋`.
pub fn slot_budget(phy_rate_bps: u64, slot: SimTime) -> u64 {
    (phy_rate_bps as u128 * slot.as_micros() as u128 / 8_000_000) as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RlcStats {
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
    pub dropped_segments: u64,
    pub delivered_segments: u64,
}

#[derive(Debug, Clone)]
pub struct Queued {
    pub segment: Segment,
    pub enqueued_at: SimTime,
}

/// FIFO drop-tail RLC queue.
///
/// Segments are never split. Budget left unused because the head segment is
/// larger than the remaining allowance carries over to the next slot while the
/// queue is non-empty, so a 20 kB segment still drains on a link whose
/// per-slot budget is a few kB.
#[derive(Debug, Clone)]
pub struct RlcBuffer {
    capacity: u64,
    occupancy: u64,
    queue: VecDeque<Queued>,
    credit: u64,
    stats: RlcStats,
}

impl RlcBuffer {
    pub fn new(capacity: u64) -> Self {
        RlcBuffer {
            capacity,
            occupancy: 0,
            queue: VecDeque::new(),
            credit: 0,
            stats: RlcStats::default(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn free(&self) -> u64 {
        self.capacity - self.occupancy
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn stats(&self) -> &RlcStats {
        &self.stats
    }

    /// Current occupancy `B` in bytes.
    pub fn occupancy_report(&self) -> u64 {
        self.occupancy
    }

    /// Admit `seg` if it fits whole; otherwise drop it.
    pub fn enqueue(&mut self, segment: Segment, now: SimTime) -> bool {
        let len = segment.len as u64;
        self.stats.offered_bytes += len;
        if len > self.free() {
            self.stats.dropped_bytes += len;
            self.stats.dropped_segments += 1;
            return false;
        }
        self.occupancy += len;
        self.queue.push_back(Queued {
            segment,
            enqueued_at: now,
        });
        true
    }

    /// Serve one slot with `budget` bytes, appending served segments to `out`.
    pub fn serve_slot(&mut self, budget: u64, out: &mut Vec<Queued>) {
        if self.queue.is_empty() {
            self.credit = 0;
            return;
        }
        if budget == 0 {
            return;
        }
        self.credit += budget;
        while let Some(head) = self.queue.front() {
            let len = head.segment.len as u64;
            if len > self.credit {
                break;
            }
            self.credit -= len;
            self.occupancy -= len;
            self.stats.delivered_bytes += len;
            self.stats.delivered_segments += 1;
            out.push(self.queue.pop_front().expect("front exists"));
        }
        if self.queue.is_empty() {
            self.credit = 0;
        }
    }

    /// `offered = delivered + dropped + queued`.
    pub fn conserves_bytes(&self) -> bool {
        let s = &self.stats;
        s.offered_bytes == s.delivered_bytes + s.dropped_bytes + self.occupancy
            && self.occupancy == self.queue.iter().map(|q| q.segment.len as u64).sum::<u64>()
    }
}
