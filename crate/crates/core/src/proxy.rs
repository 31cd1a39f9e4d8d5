//! Per-flow split-loop proxy.
//!
//! The proxy sits on the path between server and UE without terminating the
//! connection. Server payloads are stored in a per-flow buffer and forwarded
//! to the UE as larger aggregates, as far as the flow window allows. ACKs
//! toward the server are only generated from UE ACKs, fanned out roughly one
//! per original server segment, with the advertised window overwritten so the
//! server's sending rate follows the proxy's flow window.
//!
//! Invariant: the highest ACK relayed to the server never exceeds the highest
//! byte acknowledged by the UE.

use std::collections::BTreeMap;

use bytes::{Bytes, BytesMut};

use crate::bus::CrossLayerSample;
use crate::error::Result;
use crate::policy::{FlowWindowInput, FlowWindowPolicy, PolicyConfig, PolicyRegistry, MB};
use crate::sim::SimTime;
use crate::tcp::{MssClass, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub buffer_capacity: u64,
    /// Server → proxy segment size.
    pub mss1: u32,
    /// Proxy → UE aggregate size.
    pub mss2: u32,
    /// Emit a partial aggregate after this long without new arrivals.
    pub flush_timeout: SimTime,
    /// Re-forward from the UE's cumulative ACK if it makes no progress for
    /// this long.
    pub retransmit_timeout: SimTime,
    pub policy: PolicyConfig,
    pub carry_payload: bool,
    pub trace: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            buffer_capacity: 10 * MB,
            mss1: 1400,
            mss2: 20000,
            flush_timeout: SimTime::from_millis(1),
            retransmit_timeout: SimTime::from_millis(200),
            policy: PolicyConfig::default(),
            carry_payload: false,
            trace: false,
        }
    }
}

/// RTT estimation from the timestamp option, assuming both end hosts share
/// one clock.
///
/// Server data gives the uplink latency `ts_val - ts_echo` (the server's send
/// time minus the time the UE sent the ACK it echoes); UE ACKs give the
/// downlink latency the same way. The RTT estimate is their sum, and only its
/// running minimum is kept so queuing delay is filtered out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RttEstimator {
    uplink: Option<SimTime>,
    downlink: Option<SimTime>,
    last: Option<SimTime>,
    rtt_min: Option<SimTime>,
}

impl RttEstimator {
    pub fn rtt_min(&self) -> Option<SimTime> {
        self.rtt_min
    }

    pub fn is_available(&self) -> bool {
        self.rtt_min.is_some()
    }

    pub fn last_estimate(&self) -> Option<SimTime> {
        self.last
    }

    pub fn uplink(&self) -> Option<SimTime> {
        self.uplink
    }

    pub fn downlink(&self) -> Option<SimTime> {
        self.downlink
    }

    fn delta(seg: &Segment) -> Option<SimTime> {
        if seg.ts_val == SimTime::ZERO || seg.ts_echo == SimTime::ZERO || seg.ts_val < seg.ts_echo
        {
            return None;
        }
        Some(seg.ts_val - seg.ts_echo)
    }

    /// Server data segment: uplink (UE → server) latency sample.
    pub fn on_server_data(&mut self, seg: &Segment) {
        if let Some(d) = Self::delta(seg) {
            self.uplink = Some(d);
            self.combine();
        }
    }

    /// UE ACK: downlink (server → UE) latency sample.
    pub fn on_ue_ack(&mut self, ack: &Segment) {
        if let Some(d) = Self::delta(ack) {
            self.downlink = Some(d);
            self.combine();
        }
    }

    fn combine(&mut self) {
        if let (Some(up), Some(down)) = (self.uplink, self.downlink) {
            let rtt = up + down;
            self.last = Some(rtt);
            self.rtt_min = Some(self.rtt_min.map_or(rtt, |m| m.min(rtt)));
        }
    }
}

#[derive(Debug, Clone)]
struct Chunk {
    len: u32,
    ts_val: SimTime,
    ts_echo: SimTime,
    payload: Option<Bytes>,
}

impl Chunk {
    fn slice(&self, from: u32, to: u32) -> Chunk {
        Chunk {
            len: to - from,
            ts_val: self.ts_val,
            ts_echo: self.ts_echo,
            payload: self
                .payload
                .as_ref()
                .map(|p| p.slice(from as usize..to as usize)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub segments_in: u64,
    pub bytes_stored: u64,
    pub duplicates: u64,
    pub drops: u64,
    pub dropped_bytes: u64,
    pub forwarded_segments: u64,
    pub forwarded_bytes: u64,
    pub reforwarded_bytes: u64,
    pub relayed_acks: u64,
    pub relayed_dup_acks: u64,
    pub window_updates: u64,
    pub flushes: u64,
    /// Aggregates emitted beyond the flow window; always zero.
    pub window_violations: u64,
}

/// One row of the proxy trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxySample {
    pub time: SimTime,
    pub fw: u64,
    pub rtt_min: Option<SimTime>,
    pub buffer_occupancy: u64,
    pub forwarded_bytes: u64,
    pub relayed_acks: u64,
}

/// Proxy state for a single TCP flow.
pub struct ProxyInstance {
    cfg: ProxyConfig,
    buffer: BTreeMap<u64, Chunk>,
    occupancy: u64,
    contiguous_end: u64,
    ue_acked: u64,
    forwarded: u64,
    highest_forwarded: u64,
    relayed_ack: u64,
    /// Server timestamp of the segment carrying the last byte acknowledged.
    acked_tail_ts: SimTime,
    ue_dup_acks: u32,
    fw: u64,
    last_adv: Option<u64>,
    rtt: RttEstimator,
    policy: Box<dyn FlowWindowPolicy>,
    info: Option<CrossLayerSample>,
    last_arrival: SimTime,
    flush_deadline: Option<SimTime>,
    last_progress: SimTime,
    stats: ProxyStats,
    trace: Vec<ProxySample>,
}

impl std::fmt::Debug for ProxyInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProxyInstance")
            .field("policy", &self.policy.name())
            .field("fw", &self.fw)
            .field("occupancy", &self.occupancy)
            .field("ue_acked", &self.ue_acked)
            .field("forwarded", &self.forwarded)
            .field("relayed_ack", &self.relayed_ack)
            .field("rtt", &self.rtt)
            .finish()
    }
}

impl ProxyInstance {
    pub fn new(cfg: ProxyConfig, registry: &PolicyRegistry) -> Result<Self> {
        let policy = registry.build(&cfg.policy)?;
        Ok(Self::with_policy(cfg, policy))
    }

    pub fn with_policy(cfg: ProxyConfig, mut policy: Box<dyn FlowWindowPolicy>) -> Self {
        let fw = policy.compute(&FlowWindowInput::default());
        ProxyInstance {
            buffer: BTreeMap::new(),
            occupancy: 0,
            contiguous_end: 0,
            ue_acked: 0,
            forwarded: 0,
            highest_forwarded: 0,
            relayed_ack: 0,
            acked_tail_ts: SimTime::ZERO,
            ue_dup_acks: 0,
            fw,
            last_adv: None,
            rtt: RttEstimator::default(),
            policy,
            info: None,
            last_arrival: SimTime::ZERO,
            flush_deadline: None,
            last_progress: SimTime::ZERO,
            stats: ProxyStats::default(),
            trace: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.cfg
    }
    pub fn flow_window(&self) -> u64 {
        self.fw
    }
    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }
    pub fn free_space(&self) -> u64 {
        self.cfg.buffer_capacity.saturating_sub(self.occupancy)
    }
    pub fn ue_acked(&self) -> u64 {
        self.ue_acked
    }
    pub fn relayed_ack(&self) -> u64 {
        self.relayed_ack
    }
    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }
    pub fn outstanding(&self) -> u64 {
        self.forwarded - self.ue_acked
    }
    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }
    pub fn stats(&self) -> &ProxyStats {
        &self.stats
    }
    pub fn trace(&self) -> &[ProxySample] {
        &self.trace
    }
    pub fn advertised_window(&self) -> u64 {
        self.fw.min(self.free_space())
    }

    /// Process a server data segment: sample RTT, store the payload.
    ///
    /// Returns an upstream ACK only when the segment is a probe against a
    /// zero window we advertised.
    pub fn intercept_data(&mut self, seg: &Segment, now: SimTime) -> Option<Segment> {
        self.stats.segments_in += 1;
        self.estimate_rtt(seg);
        self.last_arrival = now;
        self.flush_deadline = Some(now + self.cfg.flush_timeout);
        self.store(seg);
        if self.last_adv == Some(0) {
            let adv = self.advertised_window();
            self.last_adv = Some(adv);
            self.stats.window_updates += 1;
            return Some(self.upstream_ack(self.relayed_ack, adv, now, self.acked_tail_ts));
        }
        None
    }

    /// Feed a timestamped segment from either side to the RTT estimator.
    pub fn estimate_rtt(&mut self, seg: &Segment) {
        if seg.is_data() {
            self.rtt.on_server_data(seg);
        } else if seg.is_ack() {
            self.rtt.on_ue_ack(seg);
        }
    }

    fn store(&mut self, seg: &Segment) {
        let (mut start, end) = (seg.seq, seg.end());
        if end <= self.ue_acked {
            self.stats.duplicates += 1;
            return;
        }
        start = start.max(self.ue_acked);
        // Sub-ranges of [start, end) not yet held.
        let mut gaps = Vec::new();
        let mut cursor = start;
        if let Some((&s, c)) = self.buffer.range(..start).next_back() {
            cursor = cursor.max(s + c.len as u64);
        }
        for (&s, c) in self.buffer.range(start..end) {
            if s > cursor {
                gaps.push((cursor, s));
            }
            cursor = cursor.max(s + c.len as u64);
        }
        if cursor < end {
            gaps.push((cursor, end));
        }
        let new_bytes: u64 = gaps.iter().map(|(a, b)| b - a).sum();
        if new_bytes == 0 {
            self.stats.duplicates += 1;
            return;
        }
        if new_bytes > self.free_space() {
            self.stats.drops += 1;
            self.stats.dropped_bytes += new_bytes;
            return;
        }
        let whole = Chunk {
            len: seg.len,
            ts_val: seg.ts_val,
            ts_echo: seg.ts_echo,
            payload: seg.payload.clone(),
        };
        for (a, b) in gaps {
            let from = (a - seg.seq) as u32;
            let to = (b - seg.seq) as u32;
            self.buffer.insert(a, whole.slice(from, to));
        }
        self.occupancy += new_bytes;
        self.stats.bytes_stored += new_bytes;
        while let Some(c) = self.buffer.get(&self.contiguous_end) {
            self.contiguous_end += c.len as u64;
        }
    }

    /// Split the chunk straddling `pos` so that a chunk starts exactly there.
    fn split_at(&mut self, pos: u64) {
        let Some((&s, c)) = self.buffer.range(..pos).next_back() else {
            return;
        };
        let end = s + c.len as u64;
        if end <= pos {
            return;
        }
        let cut = (pos - s) as u32;
        let tail = c.slice(cut, c.len);
        let head = c.slice(0, cut);
        self.buffer.insert(s, head);
        self.buffer.insert(pos, tail);
    }

    /// Earliest time the caller must invoke [`ProxyInstance::on_timer`].
    pub fn next_deadline(&self) -> Option<SimTime> {
        let flush = self
            .flush_deadline
            .filter(|_| self.forwarded < self.contiguous_end);
        let rto =
            (self.forwarded > self.ue_acked).then(|| self.last_progress + self.cfg.retransmit_timeout);
        match (flush, rto) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Handle flush and UE-side retransmission deadlines due at `now`.
    pub fn on_timer(&mut self, now: SimTime, to_ue: &mut Vec<Segment>) {
        if self.forwarded > self.ue_acked
            && now >= self.last_progress + self.cfg.retransmit_timeout
        {
            self.rewind(now);
        }
        if self.flush_deadline.is_some_and(|d| now >= d) {
            self.flush_deadline = None;
            if self.forwarded < self.contiguous_end {
                self.stats.flushes += 1;
            }
        }
        self.forward(now, to_ue);
    }

    fn rewind(&mut self, now: SimTime) {
        self.forwarded = self.ue_acked;
        self.last_progress = now;
        self.ue_dup_acks = 0;
    }

    /// Emit aggregates toward the UE. Aggregates consist of whole stored
    /// payloads and are sent once no further payload would fit in `mss2`, or
    /// once arrivals have paused for the flush timeout.
    pub fn aggregate_and_forward(&mut self, now: SimTime, to_ue: &mut Vec<Segment>) {
        self.forward(now, to_ue);
    }

    fn forward(&mut self, now: SimTime, to_ue: &mut Vec<Segment>) {
        // Once arrivals have paused for the flush timeout, partial aggregates
        // go out whenever the window allows.
        let force = now >= self.last_arrival + self.cfg.flush_timeout;
        let mss1 = self.cfg.mss1 as u64;
        let mss2 = self.cfg.mss2 as u64;
        loop {
            if self.forwarded >= self.contiguous_end {
                break;
            }
            let headroom = self.fw.saturating_sub(self.outstanding());
            if headroom == 0 {
                break;
            }
            let limit = mss2.min(headroom);
            let mut len = 0u64;
            let mut blocked_by_size = false;
            for (&s, c) in self.buffer.range(self.forwarded..) {
                if s != self.forwarded + len {
                    break;
                }
                if len + c.len as u64 > limit {
                    blocked_by_size = true;
                    break;
                }
                len += c.len as u64;
            }
            let reached_end = self.forwarded + len == self.contiguous_end;
            if len == 0 {
                // The head payload alone exceeds the limit. Split it if the
                // aggregate size is the constraint or nothing is outstanding;
                // otherwise wait for ACKs to open the window.
                if limit == mss2 || self.outstanding() == 0 {
                    self.split_at(self.forwarded + limit);
                    len = limit;
                } else {
                    break;
                }
            } else {
                let full = blocked_by_size || (reached_end && mss2 - len < mss1);
                if !(full || force) {
                    break;
                }
            }
            let seg = self.build_aggregate(self.forwarded, len, now);
            if self.outstanding() + len > self.fw {
                self.stats.window_violations += 1;
            }
            if self.outstanding() == 0 {
                self.last_progress = now;
            }
            if self.forwarded < self.highest_forwarded {
                self.stats.reforwarded_bytes += len.min(self.highest_forwarded - self.forwarded);
            }
            self.forwarded += len;
            self.highest_forwarded = self.highest_forwarded.max(self.forwarded);
            self.stats.forwarded_segments += 1;
            self.stats.forwarded_bytes += len;
            to_ue.push(seg);
        }
    }

    fn build_aggregate(&self, seq: u64, len: u64, now: SimTime) -> Segment {
        let end = seq + len;
        let mut tail: Option<&Chunk> = None;
        let mut payload = self.cfg.carry_payload.then(|| BytesMut::with_capacity(len as usize));
        for (_, c) in self.buffer.range(seq..end) {
            if let (Some(buf), Some(p)) = (payload.as_mut(), c.payload.as_ref()) {
                buf.extend_from_slice(p);
            }
            tail = Some(c);
        }
        let tail = tail.expect("aggregate covers at least one chunk");
        let mut seg = Segment::data(seq, len as u32, tail.ts_val, tail.ts_echo);
        seg.mss_class = MssClass::UeSide;
        seg.payload = payload.map(BytesMut::freeze);
        debug_assert!(seg.ts_val <= now);
        seg
    }

    fn upstream_ack(&self, ack_no: u64, adv: u64, ts_val: SimTime, ts_echo: SimTime) -> Segment {
        Segment::ack(ack_no, adv, ts_val, ts_echo)
    }

    /// Server timestamp of the stored segment that carried byte `pos`.
    fn ts_of_byte(&self, pos: u64) -> SimTime {
        self.buffer
            .range(..=pos)
            .next_back()
            .filter(|(&s, c)| pos < s + c.len as u64)
            .map_or(self.acked_tail_ts, |(_, c)| c.ts_val)
    }

    /// Process an ACK from the UE. Upstream ACKs go to `to_server`, any
    /// aggregates released by the freed window to `to_ue`.
    pub fn on_ue_ack(
        &mut self,
        ack: &Segment,
        now: SimTime,
        to_server: &mut Vec<Segment>,
        to_ue: &mut Vec<Segment>,
    ) {
        self.estimate_rtt(ack);
        let ack_no = ack.ack_no;
        if ack_no > self.highest_forwarded {
            return;
        }
        if ack_no <= self.ue_acked {
            self.ue_dup_acks += 1;
            if self.ue_dup_acks == 3 && self.forwarded > self.ue_acked {
                self.rewind(now);
            }
            self.refresh_flow_window(now);
            let adv = self.advertised_window();
            self.last_adv = Some(adv);
            to_server.push(self.upstream_ack(self.relayed_ack, adv, ack.ts_val, self.acked_tail_ts));
            self.stats.relayed_acks += 1;
            self.stats.relayed_dup_acks += 1;
            self.forward(now, to_ue);
            return;
        }

        let prev = self.ue_acked;
        let mss1 = self.cfg.mss1 as u64;
        let newly = ack_no - prev;
        let count = newly.div_ceil(mss1);
        let points: Vec<(u64, SimTime)> = (1..=count)
            .map(|i| {
                let a = if i < count { prev + i * mss1 } else { ack_no };
                (a, self.ts_of_byte(a - 1))
            })
            .collect();
        self.acked_tail_ts = points.last().expect("count >= 1").1;

        self.evict_below(ack_no);
        self.ue_acked = ack_no;
        if self.forwarded < ack_no {
            self.forwarded = ack_no;
        }
        self.ue_dup_acks = 0;
        self.last_progress = now;

        self.refresh_flow_window(now);
        let adv = self.advertised_window();
        self.last_adv = Some(adv);
        for (a, ts_echo) in points {
            to_server.push(self.upstream_ack(a, adv, ack.ts_val, ts_echo));
        }
        self.relayed_ack = ack_no;
        self.stats.relayed_acks += count;
        self.forward(now, to_ue);
    }

    fn evict_below(&mut self, ack_no: u64) {
        self.split_at(ack_no);
        let keep = self.buffer.split_off(&ack_no);
        let freed: u64 = self.buffer.values().map(|c| c.len as u64).sum();
        self.buffer = keep;
        self.occupancy -= freed;
        if self.contiguous_end < ack_no {
            self.contiguous_end = ack_no;
            while let Some(c) = self.buffer.get(&self.contiguous_end) {
                self.contiguous_end += c.len as u64;
            }
        }
    }

    /// Deliver a cross-layer sample: refresh the flow window, release any
    /// aggregates it allows, and reopen a zero window toward the server.
    pub fn on_cross_layer(
        &mut self,
        sample: CrossLayerSample,
        now: SimTime,
        to_server: &mut Vec<Segment>,
        to_ue: &mut Vec<Segment>,
    ) {
        self.info = Some(sample);
        self.refresh_flow_window(now);
        let adv = self.advertised_window();
        if self.last_adv == Some(0) && adv > 0 {
            self.last_adv = Some(adv);
            self.stats.window_updates += 1;
            to_server.push(self.upstream_ack(self.relayed_ack, adv, now, self.acked_tail_ts));
        }
        if self.cfg.trace {
            self.trace.push(ProxySample {
                time: now,
                fw: self.fw,
                rtt_min: self.rtt.rtt_min(),
                buffer_occupancy: self.occupancy,
                forwarded_bytes: self.stats.forwarded_bytes,
                relayed_acks: self.stats.relayed_acks,
            });
        }
        self.forward(now, to_ue);
    }

    /// Recompute the flow window from the active policy.
    pub fn refresh_flow_window(&mut self, now: SimTime) -> u64 {
        let input = match self.info {
            Some(s) => FlowWindowInput {
                rtt_min: self.rtt.rtt_min(),
                rate_bps: s.rate_bps,
                rlc_occupancy: s.rlc_occupancy,
                info_age: now.saturating_sub(s.taken_at),
            },
            None => FlowWindowInput::default(),
        };
        self.fw = self.policy.compute(&input);
        self.fw
    }
}
