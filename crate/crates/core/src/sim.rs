//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, insertion_id)`, so two events scheduled
//! for the same instant run in the order they were scheduled. All randomness
//! flows from a single run seed fanned out into named [`RngStream`]s.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Simulated time in integer microseconds since the start of a run.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Handle returned by [`Engine::schedule`]; used to cancel a pending event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn insertion_id(self) -> u64 {
        self.0
    }
}

struct Pending<E> {
    key: (SimTime, u64),
    payload: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<E> Eq for Pending<E> {}
impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Pending<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Single-threaded event queue with a virtual clock.
pub struct Engine<E> {
    now: SimTime,
    next_id: u64,
    queue: BinaryHeap<Reverse<Pending<E>>>,
    live: HashSet<u64>,
    executed: u64,
    trace: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_id: 0,
            queue: BinaryHeap::new(),
            live: HashSet::new(),
            executed: 0,
            trace: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events executed so far (cancelled events excluded).
    pub fn executed(&self) -> u64 {
        self.executed
    }

    /// FNV-style fold of every executed `(fire_at, insertion_id)` key.
    pub fn trace_hash(&self) -> u64 {
        self.trace
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Enqueue `payload` to fire at `at`.
    ///
    /// Panics if `at` lies in the past: that is always a model bug.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past ({at} < now {})",
            self.now
        );
        let id = self.next_id;
        self.next_id += 1;
        self.live.insert(id);
        self.queue.push(Reverse(Pending {
            key: (at, id),
            payload,
        }));
        EventHandle(id)
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        self.schedule(self.now + delay, payload)
    }

    /// Cancel a pending event. Cancelling an already executed event is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        self.live.remove(&handle.0);
    }

    /// Pop the next live event whose time is `<= t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.queue.peek()?;
            if head.0.key.0 > t_end {
                return None;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            let (at, id) = ev.key;
            if !self.live.remove(&id) {
                continue;
            }
            debug_assert!(at >= self.now);
            self.now = at;
            self.executed += 1;
            self.trace = fold(fold(self.trace, at.0), id);
            return Some((at, ev.payload));
        }
    }

    /// Execute every event with `fire_at <= t_end` in key order and return the
    /// final clock value. The clock is left at the last executed event; an
    /// empty queue terminates early.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Engine<E>, E),
    {
        while let Some((_, ev)) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.now
    }
}

fn fold(h: u64, v: u64) -> u64 {
    let mut h = h;
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named random sub-stream of a run seed.
///
/// Identical `(seed, label)` pairs produce identical draws on every platform;
/// adding a new label never perturbs existing streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        RngStream {
            seed,
            label: label.into(),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.label.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}
