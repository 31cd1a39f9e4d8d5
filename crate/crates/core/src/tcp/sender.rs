use crate::sim::SimTime;

use super::{MssClass, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct SenderConfig {
    pub mss: u32,
    pub initial_cwnd_segments: u32,
    pub initial_rto: SimTime,
    pub min_rto: SimTime,
    pub max_rto: SimTime,
    /// Bytes to transfer; `None` for an unbounded bulk source.
    pub total_bytes: Option<u64>,
    pub carry_payload: bool,
    pub trace: bool,
}

impl Default for SenderConfig {
    fn default() -> Self {
        SenderConfig {
            mss: 1400,
            initial_cwnd_segments: 10,
            initial_rto: SimTime::from_secs(1),
            min_rto: SimTime::from_millis(200),
            max_rto: SimTime::from_secs(60),
            total_bytes: None,
            carry_payload: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SlowStart => "slow_start",
            Phase::CongestionAvoidance => "congestion_avoidance",
            Phase::FastRecovery => "fast_recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    Retransmit,
    Persist,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub segments_sent: u64,
    pub bytes_sent: u64,
    pub retransmits: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub window_probes: u64,
    /// ACKs acknowledging bytes never sent.
    pub invalid_acks: u64,
    /// Transmissions of new data that would exceed `min(cwnd, awnd)`.
    pub window_violations: u64,
}

/// One row of the per-ACK sender trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SenderSample {
    pub time: SimTime,
    pub cwnd: u64,
    pub awnd: u64,
    pub in_flight: u64,
    pub phase: Phase,
}

/// Bulk-transfer TCP NewReno sender.
///
/// Sequence space starts at 0. `snd_max` is the highest offset ever sent; a
/// timeout rewinds `snd_nxt` to `snd_una` (go-back-N) without forgetting it.
#[derive(Debug, Clone)]
pub struct NewRenoSender {
    cfg: SenderConfig,
    cwnd: u64,
    ssthresh: u64,
    awnd: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    /// Highest byte outstanding when the last recovery began.
    recover: Option<u64>,
    dup_acks: u32,
    in_recovery: bool,
    partial_ack_seen: bool,
    srtt: Option<u64>,
    rttvar: u64,
    rto: u64,
    ts_recent: SimTime,
    timer: Option<(SimTime, TimerKind)>,
    stats: SenderStats,
    trace: Vec<SenderSample>,
}

impl NewRenoSender {
    pub fn new(cfg: SenderConfig) -> Self {
        let mss = cfg.mss as u64;
        NewRenoSender {
            cwnd: mss * cfg.initial_cwnd_segments.max(1) as u64,
            ssthresh: u64::MAX,
            awnd: u64::MAX,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            recover: None,
            dup_acks: 0,
            in_recovery: false,
            partial_ack_seen: false,
            srtt: None,
            rttvar: 0,
            rto: cfg.initial_rto.as_micros(),
            ts_recent: SimTime::ZERO,
            timer: None,
            stats: SenderStats::default(),
            trace: Vec::new(),
            cfg,
        }
    }

    pub fn mss(&self) -> u64 {
        self.cfg.mss as u64
    }
    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }
    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }
    pub fn awnd(&self) -> u64 {
        self.awnd
    }
    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }
    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }
    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }
    pub fn in_flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }
    pub fn dup_acks(&self) -> u32 {
        self.dup_acks
    }
    pub fn rto(&self) -> SimTime {
        SimTime(self.rto)
    }
    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt.map(SimTime)
    }
    pub fn timer(&self) -> Option<(SimTime, TimerKind)> {
        self.timer
    }
    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }
    pub fn trace(&self) -> &[SenderSample] {
        &self.trace
    }

    pub fn phase(&self) -> Phase {
        if self.in_recovery {
            Phase::FastRecovery
        } else if self.cwnd < self.ssthresh {
            Phase::SlowStart
        } else {
            Phase::CongestionAvoidance
        }
    }

    /// True once every byte of a bounded transfer is acknowledged.
    pub fn is_complete(&self) -> bool {
        self.cfg.total_bytes.is_some_and(|t| self.snd_una >= t)
    }

    /// Open the flow: send the initial window.
    pub fn start(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        self.send_new_data(now, out);
        self.update_idle_timer(now);
    }

    /// Process an incoming ACK, pushing any (re)transmissions onto `out`.
    pub fn on_ack(&mut self, ack: &Segment, now: SimTime, out: &mut Vec<Segment>) {
        if !ack.is_ack() {
            return;
        }
        if ack.ack_no > self.snd_max {
            self.stats.invalid_acks += 1;
            return;
        }
        if ack.ack_no < self.snd_una {
            return;
        }
        if ack.ts_val >= self.ts_recent {
            self.ts_recent = ack.ts_val;
        }
        let prev_awnd = self.awnd;
        self.awnd = ack.adv_window;
        let mss = self.mss();

        if ack.ack_no == self.snd_una {
            let is_dup = ack.len == 0 && self.snd_max > self.snd_una && prev_awnd > 0;
            if is_dup {
                self.on_dup_ack(now, out);
            } else {
                // Window update.
                self.send_new_data(now, out);
                self.update_idle_timer(now);
            }
            self.record(now);
            return;
        }

        let acked = ack.ack_no - self.snd_una;
        self.snd_una = ack.ack_no;
        if self.snd_nxt < self.snd_una {
            self.snd_nxt = self.snd_una;
        }
        if ack.ts_echo > SimTime::ZERO && now >= ack.ts_echo {
            self.rtt_sample(now.as_micros() - ack.ts_echo.as_micros());
        }

        let mut restart_timer = true;
        if self.in_recovery {
            if self.recover.is_some_and(|r| ack.ack_no > r) {
                // Full ACK.
                self.cwnd = self.ssthresh.max(mss);
                self.in_recovery = false;
                self.dup_acks = 0;
            } else {
                // Partial ACK: retransmit the next hole, deflate by the amount
                // acknowledged, add back one segment.
                self.retransmit(self.snd_una, now, out);
                self.cwnd = (self.cwnd.saturating_sub(acked) + mss).max(mss);
                restart_timer = !self.partial_ack_seen;
                self.partial_ack_seen = true;
            }
        } else {
            self.dup_acks = 0;
            if self.cwnd < self.ssthresh {
                self.cwnd += mss;
            } else {
                self.cwnd += (mss * mss / self.cwnd).max(1);
            }
        }

        self.send_new_data(now, out);
        if self.snd_una == self.snd_max {
            self.timer = None;
            self.update_idle_timer(now);
        } else if restart_timer || self.timer.is_none() {
            self.arm(now, TimerKind::Retransmit);
        }
        self.record(now);
    }

    fn on_dup_ack(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        let mss = self.mss();
        self.dup_acks += 1;
        if self.in_recovery {
            self.cwnd += mss;
            self.send_new_data(now, out);
        } else if self.dup_acks == 3 && self.recover.is_none_or(|r| self.snd_una > r) {
            let flight = self.in_flight();
            self.ssthresh = (flight / 2).max(2 * mss);
            self.cwnd = self.ssthresh + 3 * mss;
            self.recover = Some(self.snd_max - 1);
            self.in_recovery = true;
            self.partial_ack_seen = false;
            self.stats.fast_retransmits += 1;
            self.retransmit(self.snd_una, now, out);
            self.arm(now, TimerKind::Retransmit);
            self.send_new_data(now, out);
        }
    }

    /// Fire the pending timer. The caller invokes this at `timer().0`.
    pub fn on_timer(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        let Some((_, kind)) = self.timer.take() else {
            return;
        };
        match kind {
            TimerKind::Retransmit => self.on_rto(now, out),
            TimerKind::Persist => self.on_persist(now, out),
        }
        self.record(now);
    }

    fn on_rto(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        if self.snd_una == self.snd_max {
            self.update_idle_timer(now);
            return;
        }
        let mss = self.mss();
        let flight = self.in_flight();
        self.ssthresh = (flight / 2).max(2 * mss);
        self.cwnd = mss;
        self.in_recovery = false;
        self.dup_acks = 0;
        self.recover = Some(self.snd_max - 1);
        self.stats.timeouts += 1;
        self.snd_nxt = self.snd_una;
        self.rto = (self.rto * 2).min(self.cfg.max_rto.as_micros());
        let len = self.segment_len_at(self.snd_nxt);
        if len > 0 {
            out.push(self.make_segment(self.snd_nxt, len, now));
            self.stats.retransmits += 1;
            self.snd_nxt += len as u64;
        }
        self.arm(now, TimerKind::Retransmit);
    }

    fn on_persist(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        if self.awnd > 0 {
            self.send_new_data(now, out);
            self.update_idle_timer(now);
            return;
        }
        if self.has_unsent() && self.snd_una == self.snd_max {
            // One-byte zero-window probe, deliberately beyond the window.
            out.push(self.make_segment(self.snd_nxt, 1, now));
            self.stats.window_probes += 1;
            self.snd_nxt += 1;
            self.snd_max = self.snd_max.max(self.snd_nxt);
        }
        self.rto = (self.rto * 2).min(self.cfg.max_rto.as_micros());
        self.arm(now, TimerKind::Persist);
    }

    fn rtt_sample(&mut self, r: u64) {
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2;
            }
            Some(srtt) => {
                self.rttvar = (3 * self.rttvar + srtt.abs_diff(r)) / 4;
                self.srtt = Some((7 * srtt + r) / 8);
            }
        }
        let srtt = self.srtt.expect("just set");
        self.rto = (srtt + (4 * self.rttvar).max(1))
            .clamp(self.cfg.min_rto.as_micros(), self.cfg.max_rto.as_micros());
    }

    fn has_unsent(&self) -> bool {
        self.cfg.total_bytes.is_none_or(|t| self.snd_nxt < t)
    }

    fn segment_len_at(&self, seq: u64) -> u32 {
        let mss = self.mss();
        let limit = match self.cfg.total_bytes {
            Some(t) => t.saturating_sub(seq).min(mss),
            None => mss,
        };
        // Retransmissions never straddle the highest byte sent.
        let limit = if seq < self.snd_max {
            limit.min(self.snd_max - seq)
        } else {
            limit
        };
        limit as u32
    }

    fn make_segment(&mut self, seq: u64, len: u32, now: SimTime) -> Segment {
        self.stats.segments_sent += 1;
        self.stats.bytes_sent += len as u64;
        let mut seg = Segment::data(seq, len, now, self.ts_recent);
        seg.mss_class = MssClass::ServerSide;
        if self.cfg.carry_payload {
            seg = seg.with_payload();
        }
        seg
    }

    fn retransmit(&mut self, seq: u64, now: SimTime, out: &mut Vec<Segment>) {
        let len = self.segment_len_at(seq);
        if len > 0 {
            out.push(self.make_segment(seq, len, now));
            self.stats.retransmits += 1;
        }
    }

    fn send_new_data(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        loop {
            if !self.has_unsent() {
                break;
            }
            let wnd = self.cwnd.min(self.awnd);
            let flight = self.in_flight();
            let full = self.segment_len_at(self.snd_nxt) as u64;
            let len = if flight + full <= wnd {
                full
            } else if flight == 0 && wnd > 0 {
                full.min(wnd)
            } else {
                break;
            };
            if len == 0 {
                break;
            }
            if self.in_flight() + len > wnd {
                self.stats.window_violations += 1;
            }
            let seg = self.make_segment(self.snd_nxt, len as u32, now);
            if self.snd_nxt < self.snd_max {
                self.stats.retransmits += 1;
            }
            out.push(seg);
            self.snd_nxt += len;
            self.snd_max = self.snd_max.max(self.snd_nxt);
            if self.timer.is_none() {
                self.arm(now, TimerKind::Retransmit);
            }
        }
    }

    /// Arm the persist timer when stalled on a zero window with nothing
    /// outstanding; otherwise leave timers alone.
    fn update_idle_timer(&mut self, now: SimTime) {
        if self.snd_una == self.snd_max {
            if self.awnd == 0 && self.has_unsent() {
                if !matches!(self.timer, Some((_, TimerKind::Persist))) {
                    self.arm(now, TimerKind::Persist);
                }
            } else {
                self.timer = None;
            }
        }
    }

    fn arm(&mut self, now: SimTime, kind: TimerKind) {
        self.timer = Some((now + SimTime(self.rto), kind));
    }

    fn record(&mut self, now: SimTime) {
        if self.cfg.trace {
            self.trace.push(SenderSample {
                time: now,
                cwnd: self.cwnd,
                awnd: self.awnd,
                in_flight: self.in_flight(),
                phase: self.phase(),
            });
        }
    }
}
