//! A hand-written NewReno reference and a lossy in-memory loop to drive the
//! crate's sender against it.
//!
//! After every ACK or timeout the sender's `(cwnd, ssthresh, phase)` is
//! compared with the reference fed the same event and the same pre-event
//! flight.
#![allow(dead_code)]

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};

use milliproxy::tcp::{NewRenoSender, Phase, Receiver, Segment, SenderConfig};
use milliproxy::SimTime;

pub const MSS: u64 = 1400;
const ONE_WAY_US: u64 = 5_000;
const SPACING_US: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefPhase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

/// NewReno as written in the textbook, nothing shared with the crate.
struct Reference {
    cwnd: u64,
    ssthresh: u64,
    dup: u32,
    in_recovery: bool,
    recover: Option<u64>,
}

impl Reference {
    fn new() -> Self {
        Reference { cwnd: 10 * MSS, ssthresh: u64::MAX, dup: 0, in_recovery: false, recover: None }
    }

    fn phase(&self) -> RefPhase {
        if self.in_recovery {
            RefPhase::FastRecovery
        } else if self.cwnd < self.ssthresh {
            RefPhase::SlowStart
        } else {
            RefPhase::CongestionAvoidance
        }
    }

    fn ack(&mut self, ack_no: u64, snd_una: u64, snd_max: u64, flight: u64) {
        if ack_no < snd_una || ack_no > snd_max {
            return;
        }
        if ack_no == snd_una {
            if snd_max == snd_una {
                return;
            }
            self.dup += 1;
            if self.in_recovery {
                self.cwnd += MSS;
            } else if self.dup == 3 && self.recover.map_or(true, |r| snd_una > r) {
                self.ssthresh = std::cmp::max(flight / 2, 2 * MSS);
                self.cwnd = self.ssthresh + 3 * MSS;
                self.recover = Some(snd_max - 1);
                self.in_recovery = true;
            }
            return;
        }
        let newly = ack_no - snd_una;
        if self.in_recovery {
            if ack_no > self.recover.unwrap() {
                self.cwnd = self.ssthresh;
                self.in_recovery = false;
                self.dup = 0;
            } else {
                self.cwnd = std::cmp::max(self.cwnd.saturating_sub(newly) + MSS, MSS);
            }
        } else {
            self.dup = 0;
            if self.cwnd < self.ssthresh {
                self.cwnd += MSS;
            } else {
                self.cwnd += std::cmp::max(MSS * MSS / self.cwnd, 1);
            }
        }
    }

    fn timeout(&mut self, snd_max: u64, flight: u64) {
        self.ssthresh = std::cmp::max(flight / 2, 2 * MSS);
        self.cwnd = MSS;
        self.in_recovery = false;
        self.dup = 0;
        self.recover = Some(snd_max - 1);
    }
}

fn map_phase(p: Phase) -> RefPhase {
    match p {
        Phase::SlowStart => RefPhase::SlowStart,
        Phase::CongestionAvoidance => RefPhase::CongestionAvoidance,
        Phase::FastRecovery => RefPhase::FastRecovery,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Ack(u64),
    Timeout,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub steps: Vec<(Step, u64, u64, RefPhase)>,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub rto_ssthresh: Vec<(u64, u64)>,
    pub delivered: u64,
    /// First step where the sender and the reference disagreed.
    pub mismatch: Option<String>,
}

enum Item {
    Data(Segment),
    Ack(Segment),
}

/// Run a bounded transfer, dropping the `n`-th transmission (0 = original)
/// of each listed offset.
pub fn run_script(total_segments: u64, drops: &[(u64, u32)]) -> Outcome {
    let total = total_segments * MSS;
    let mut sender = NewRenoSender::new(SenderConfig {
        total_bytes: Some(total),
        initial_rto: SimTime::from_millis(200),
        ..SenderConfig::default()
    });
    let mut receiver = Receiver::new(64 << 20, false);
    let mut reference = Reference::new();
    let mut out = Outcome::default();
    let mut queue: BTreeMap<(u64, u64), Item> = BTreeMap::new();
    let counter = Cell::new(0u64);
    let mut link_free = 0u64;
    let mut sent_count: HashMap<u64, u32> = HashMap::new();
    let mut now = 0u64;

    let mut emit = |segs: Vec<Segment>, now: u64, queue: &mut BTreeMap<(u64, u64), Item>| {
        for s in segs {
            let n = sent_count.entry(s.seq).or_insert(0);
            let this = *n;
            *n += 1;
            if drops.contains(&(s.seq, this)) {
                continue;
            }
            let at = (now + ONE_WAY_US).max(link_free + SPACING_US);
            link_free = at;
            counter.set(counter.get() + 1);
            queue.insert((at, counter.get()), Item::Data(s));
        }
    };

    let mut buf = Vec::new();
    sender.start(SimTime(now), &mut buf);
    emit(std::mem::take(&mut buf), now, &mut queue);

    for _ in 0..1_000_000 {
        if sender.is_complete() || out.mismatch.is_some() {
            break;
        }
        let next_item = queue.keys().next().copied();
        let timer = sender.timer().map(|(t, _)| t.as_micros());
        let fire_timer = match (next_item, timer) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some((t, _)), Some(d)) => d < t,
        };
        if fire_timer {
            now = timer.unwrap();
            let (snd_max, flight) = (sender.snd_max(), sender.in_flight());
            sender.on_timer(SimTime(now), &mut buf);
            if sender.stats().timeouts > out.timeouts {
                out.timeouts = sender.stats().timeouts;
                reference.timeout(snd_max, flight);
                out.rto_ssthresh.push((flight, sender.ssthresh()));
                compare(&sender, &reference, Step::Timeout, &mut out);
            }
            emit(std::mem::take(&mut buf), now, &mut queue);
            continue;
        }
        let Some(key) = next_item else { break };
        let item = queue.remove(&key).unwrap();
        now = key.0;
        match item {
            Item::Data(seg) => {
                let ack = receiver.on_data(&seg, SimTime(now));
                counter.set(counter.get() + 1);
                queue.insert((now + ONE_WAY_US, counter.get()), Item::Ack(ack));
            }
            Item::Ack(ack) => {
                let (una, max, flight) = (sender.snd_una(), sender.snd_max(), sender.in_flight());
                sender.on_ack(&ack, SimTime(now), &mut buf);
                reference.ack(ack.ack_no, una, max, flight);
                compare(&sender, &reference, Step::Ack(ack.ack_no), &mut out);
                emit(std::mem::take(&mut buf), now, &mut queue);
            }
        }
    }
    out.fast_retransmits = sender.stats().fast_retransmits;
    out.delivered = receiver.delivered();
    out
}

fn compare(sender: &NewRenoSender, reference: &Reference, step: Step, out: &mut Outcome) {
    let got = (sender.cwnd(), sender.ssthresh(), map_phase(sender.phase()));
    let want = (reference.cwnd, reference.ssthresh, reference.phase());
    if got != want && out.mismatch.is_none() {
        out.mismatch = Some(format!("step {} ({step:?}): got {got:?}, want {want:?}", out.steps.len()));
    }
    out.steps.push((step, got.0, got.1, got.2));
}

