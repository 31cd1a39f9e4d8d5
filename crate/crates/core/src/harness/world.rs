//! Topology of one run: server ─ core ─ gNB (+ proxy) ─ radio link ─ UE.

use serde::{Deserialize, Serialize};

use crate::bus::{CrossLayerBus, CrossLayerSample};
use crate::channel::{LinkLabel, Scenario};
use crate::error::Result;
use crate::harness::config::{RunConfig, Transport};
use crate::policy::PolicyRegistry;
use crate::proxy::{ProxyInstance, ProxySample};
use crate::ran::{slot_budget, Queued, RlcBuffer};
use crate::sim::{Engine, SimTime};
use crate::tcp::{stream_digest, NewRenoSender, Receiver, Segment, SenderSample, UdpSource};

/// Summary of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub duration_s: f64,
    /// In-order application bytes at the UE.
    pub delivered_bytes: u64,
    pub goodput_bps: f64,
    /// Mean over delivered PDUs of gNB ingress → UE delivery, µs.
    pub ran_latency_mean_us: f64,
    pub ran_latency_p50_us: u64,
    pub ran_latency_p95_us: u64,
    pub ran_latency_max_us: u64,
    pub latency_samples: u64,
    pub rlc_drops: u64,
    pub rlc_dropped_bytes: u64,
    pub proxy_drops: u64,
    pub mean_rlc_occupancy: f64,
    pub max_rlc_occupancy: u64,
    /// Time-averaged configured link capacity, bit/s.
    pub capacity_bps: f64,
    pub retransmits: u64,
    pub timeouts: u64,
    /// All invariant breaches, including the window violations below.
    pub invariant_violations: u64,
    /// New data sent beyond `min(cwnd, awnd)` by the server, or beyond the
    /// flow window by the proxy.
    pub window_violations: u64,
    /// `None` unless payload verification was enabled.
    pub digest_ok: Option<bool>,
    pub events: u64,
}

/// One row of the per-slot RAN trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RanSample {
    pub time_us: u64,
    #[serde(rename = "B_bytes")]
    pub b_bytes: u64,
    pub phy_rate_bps: u64,
    pub state: LinkLabel,
}

/// Optional time series collected during a run.
#[derive(Debug, Clone, Default)]
pub struct RunTraces {
    pub ran: Vec<RanSample>,
    pub sender: Vec<SenderSample>,
    pub proxy: Vec<ProxySample>,
    pub bus: Vec<CrossLayerSample>,
}

#[derive(Debug)]
enum Ev {
    DataAtGnb(Vec<Segment>),
    AcksAtGnb(Vec<Segment>),
    AcksAtServer(Vec<Segment>),
    UeDeliver(Vec<Queued>),
    Slot,
    SenderTimer,
    ProxyTimer,
    BusSample,
    BusDeliver,
    UdpTick,
}

struct World {
    cfg: RunConfig,
    scenario: Scenario,
    end: SimTime,
    core: SimTime,
    slot: SimTime,
    sender: Option<NewRenoSender>,
    udp: Option<UdpSource>,
    receiver: Receiver,
    udp_bytes: u64,
    rlc: RlcBuffer,
    proxy: Option<ProxyInstance>,
    bus: Option<CrossLayerBus>,
    sender_timer_at: Option<SimTime>,
    proxy_timer_at: Option<SimTime>,
    latencies: Vec<u32>,
    capacity_bytes: u128,
    occupancy_sum: u128,
    occupancy_max: u64,
    slots: u64,
    violations: u64,
    record: bool,
    ran_trace: Vec<RanSample>,
    scratch: Vec<Segment>,
}

/// Run one configuration to completion.
pub fn run_one(cfg: &RunConfig) -> Result<RunMetrics> {
    Ok(run_traced(cfg, false)?.0)
}

/// Run one configuration, optionally collecting all traces.
pub fn run_traced(cfg: &RunConfig, traces: bool) -> Result<(RunMetrics, RunTraces)> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let registry = PolicyRegistry::default();
    let proxy = match cfg.transport {
        Transport::MilliProxy => {
            let mut pc = cfg.proxy_config();
            pc.trace = traces;
            Some(ProxyInstance::new(pc, &registry)?)
        }
        _ => None,
    };
    let bus = proxy
        .as_ref()
        .map(|_| CrossLayerBus::new(cfg.bus_config(), traces));
    let mut sender_cfg = cfg.sender_config();
    sender_cfg.trace = traces;
    let (sender, udp) = match cfg.transport {
        Transport::Udp => (
            None,
            Some(UdpSource::new(cfg.udp_rate(), cfg.udp_datagram, SimTime::ZERO)),
        ),
        _ => (Some(NewRenoSender::new(sender_cfg)), None),
    };
    let mut w = World {
        end: cfg.duration()?,
        core: cfg.core_delay(),
        slot: cfg.slot(),
        scenario,
        sender,
        udp,
        receiver: Receiver::new(cfg.ue_window(), cfg.verify_payload),
        udp_bytes: 0,
        rlc: RlcBuffer::new(cfg.rlc_capacity()),
        proxy,
        bus,
        sender_timer_at: None,
        proxy_timer_at: None,
        latencies: Vec::new(),
        capacity_bytes: 0,
        occupancy_sum: 0,
        occupancy_max: 0,
        slots: 0,
        violations: 0,
        record: traces,
        ran_trace: Vec::new(),
        scratch: Vec::new(),
        cfg: cfg.clone(),
    };
    let mut eng: Engine<Ev> = Engine::new();
    eng.schedule(SimTime::ZERO, Ev::Slot);
    if w.udp.is_some() {
        eng.schedule(SimTime::ZERO, Ev::UdpTick);
    }
    if w.bus.is_some() {
        eng.schedule(SimTime::ZERO, Ev::BusSample);
    }
    if let Some(s) = w.sender.as_mut() {
        let mut out = Vec::new();
        s.start(SimTime::ZERO, &mut out);
        if !out.is_empty() {
            eng.schedule(w.core, Ev::DataAtGnb(out));
        }
        w.sync_sender_timer(&mut eng);
    }
    let end = w.end;
    eng.run_until(end, |eng, ev| w.handle(eng, ev));
    let events = eng.executed();
    Ok(w.finish(events))
}

impl World {
    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Ev) {
        let now = eng.now();
        match ev {
            Ev::DataAtGnb(segs) => self.on_data_at_gnb(eng, segs),
            Ev::AcksAtGnb(acks) => self.on_acks_at_gnb(eng, acks),
            Ev::AcksAtServer(acks) => {
                let mut out = std::mem::take(&mut self.scratch);
                if let Some(s) = self.sender.as_mut() {
                    for a in &acks {
                        s.on_ack(a, now, &mut out);
                    }
                }
                self.send_from_server(eng, out);
                self.sync_sender_timer(eng);
            }
            Ev::UeDeliver(batch) => self.deliver_to_ue(eng, batch),
            Ev::Slot => self.on_slot(eng),
            Ev::SenderTimer => {
                self.sender_timer_at = None;
                let mut out = Vec::new();
                if let Some(s) = self.sender.as_mut() {
                    if s.timer().is_some_and(|(at, _)| at <= now) {
                        s.on_timer(now, &mut out);
                    }
                }
                self.send_from_server(eng, out);
                self.sync_sender_timer(eng);
            }
            Ev::ProxyTimer => {
                self.proxy_timer_at = None;
                let mut down = Vec::new();
                if let Some(p) = self.proxy.as_mut() {
                    if p.next_deadline().is_some_and(|d| d <= now) {
                        p.on_timer(now, &mut down);
                    }
                }
                self.enqueue_rlc(now, down);
                self.sync_proxy_timer(eng);
            }
            Ev::BusSample => {
                let state = self.scenario.channel_state_at(now, &self.cfg.rates());
                let occupancy = self.rlc.occupancy_report();
                let served = self.rlc.stats().delivered_bytes;
                let bus = self.bus.as_mut().expect("bus exists with proxy");
                let at = bus.sample(now, &state, self.slot, occupancy, served);
                let period = bus.config().t_info;
                eng.schedule(at, Ev::BusDeliver);
                eng.schedule(now + period, Ev::BusSample);
            }
            Ev::BusDeliver => {
                let sample = self.bus.as_mut().and_then(|b| b.deliver());
                if let (Some(s), Some(p)) = (sample, self.proxy.as_mut()) {
                    let mut up = Vec::new();
                    let mut down = Vec::new();
                    p.on_cross_layer(s, now, &mut up, &mut down);
                    self.enqueue_rlc(now, down);
                    if !up.is_empty() {
                        eng.schedule(now + self.core, Ev::AcksAtServer(up));
                    }
                    self.sync_proxy_timer(eng);
                }
            }
            Ev::UdpTick => {
                let mut out = Vec::new();
                if let Some(u) = self.udp.as_mut() {
                    u.emit(now, &mut out);
                }
                if !out.is_empty() {
                    eng.schedule(now + self.core, Ev::DataAtGnb(out));
                }
                eng.schedule(now + self.slot, Ev::UdpTick);
            }
        }
        if self.cfg.check_invariants {
            self.check_invariants();
        }
    }

    fn check_invariants(&mut self) {
        if let Some(s) = &self.sender {
            if s.snd_una() > self.receiver.rcv_nxt() {
                self.violations += 1;
            }
        }
        if let Some(p) = &self.proxy {
            if p.relayed_ack() > p.ue_acked() || p.occupancy() > p.config().buffer_capacity {
                self.violations += 1;
            }
        }
    }

    fn send_from_server(&mut self, eng: &mut Engine<Ev>, mut out: Vec<Segment>) {
        if out.is_empty() {
            self.scratch = out;
            return;
        }
        let batch = std::mem::take(&mut out);
        eng.schedule(eng.now() + self.core, Ev::DataAtGnb(batch));
        self.scratch = out;
    }

    fn sync_sender_timer(&mut self, eng: &mut Engine<Ev>) {
        let Some((at, _)) = self.sender.as_ref().and_then(|s| s.timer()) else {
            return;
        };
        // Lazily scheduled: a stale wake-up simply re-arms.
        if self.sender_timer_at.is_none_or(|t| at < t) {
            let at = at.max(eng.now());
            eng.schedule(at, Ev::SenderTimer);
            self.sender_timer_at = Some(at);
        }
    }

    fn sync_proxy_timer(&mut self, eng: &mut Engine<Ev>) {
        let Some(at) = self.proxy.as_ref().and_then(|p| p.next_deadline()) else {
            return;
        };
        if self.proxy_timer_at.is_none_or(|t| at < t) {
            let at = at.max(eng.now());
            eng.schedule(at, Ev::ProxyTimer);
            self.proxy_timer_at = Some(at);
        }
    }

    fn on_data_at_gnb(&mut self, eng: &mut Engine<Ev>, segs: Vec<Segment>) {
        let now = eng.now();
        match self.proxy.as_mut() {
            Some(p) => {
                let mut up = Vec::new();
                let mut down = Vec::new();
                for s in &segs {
                    if let Some(a) = p.intercept_data(s, now) {
                        up.push(a);
                    }
                }
                p.aggregate_and_forward(now, &mut down);
                if !up.is_empty() {
                    eng.schedule(now + self.core, Ev::AcksAtServer(up));
                }
                self.enqueue_rlc(now, down);
                self.sync_proxy_timer(eng);
            }
            None => self.enqueue_rlc(now, segs),
        }
    }

    fn enqueue_rlc(&mut self, now: SimTime, segs: Vec<Segment>) {
        for s in segs {
            self.rlc.enqueue(s, now);
        }
    }

    fn on_slot(&mut self, eng: &mut Engine<Ev>) {
        let now = eng.now();
        let state = self.scenario.channel_state_at(now, &self.cfg.rates());
        let budget = slot_budget(state.phy_rate, self.slot);
        self.capacity_bytes += budget as u128;
        let occ = self.rlc.occupancy_report();
        self.occupancy_sum += occ as u128;
        self.occupancy_max = self.occupancy_max.max(occ);
        self.slots += 1;
        if self.record {
            self.ran_trace.push(RanSample {
                time_us: now.as_micros(),
                b_bytes: occ,
                phy_rate_bps: state.phy_rate,
                state: state.label,
            });
        }
        let mut served = Vec::new();
        self.rlc.serve_slot(budget, &mut served);
        if !served.is_empty() {
            let delay = SimTime(self.cfg.link_delay_us);
            if delay == SimTime::ZERO {
                self.deliver_to_ue(eng, served);
            } else {
                eng.schedule(now + delay, Ev::UeDeliver(served));
            }
        }
        if now + self.slot < self.end {
            eng.schedule(now + self.slot, Ev::Slot);
        }
    }

    fn deliver_to_ue(&mut self, eng: &mut Engine<Ev>, batch: Vec<Queued>) {
        let now = eng.now();
        let mut acks = Vec::new();
        for q in batch {
            let lat = now.saturating_sub(q.enqueued_at).as_micros();
            self.latencies.push(lat.min(u32::MAX as u64) as u32);
            if self.udp.is_some() {
                self.udp_bytes += q.segment.len as u64;
            } else {
                acks.push(self.receiver.on_data(&q.segment, now));
            }
        }
        if !acks.is_empty() {
            eng.schedule(now + SimTime(self.cfg.ack_delay_us), Ev::AcksAtGnb(acks));
        }
    }

    fn on_acks_at_gnb(&mut self, eng: &mut Engine<Ev>, acks: Vec<Segment>) {
        let now = eng.now();
        match self.proxy.as_mut() {
            Some(p) => {
                let mut up = Vec::new();
                let mut down = Vec::new();
                for a in &acks {
                    p.on_ue_ack(a, now, &mut up, &mut down);
                }
                if !up.is_empty() {
                    eng.schedule(now + self.core, Ev::AcksAtServer(up));
                }
                self.enqueue_rlc(now, down);
                self.sync_proxy_timer(eng);
            }
            None => {
                eng.schedule(now + self.core, Ev::AcksAtServer(acks));
            }
        }
    }

    fn finish(mut self, events: u64) -> (RunMetrics, RunTraces) {
        let duration = self.end.as_secs_f64();
        let delivered = if self.udp.is_some() {
            self.udp_bytes
        } else {
            self.receiver.delivered()
        };
        let n = self.latencies.len();
        let mean = if n == 0 {
            0.0
        } else {
            self.latencies.iter().map(|&l| l as u64).sum::<u64>() as f64 / n as f64
        };
        let pct = |v: &mut Vec<u32>, q: f64| -> u64 {
            if v.is_empty() {
                return 0;
            }
            let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
            *v.select_nth_unstable(idx).1 as u64
        };
        let p50 = pct(&mut self.latencies, 0.50);
        let p95 = pct(&mut self.latencies, 0.95);
        let max = self.latencies.iter().copied().max().unwrap_or(0) as u64;
        let (retransmits, timeouts, sender_violations) = self
            .sender
            .as_ref()
            .map(|s| {
                let st = s.stats();
                (st.retransmits, st.timeouts, st.window_violations)
            })
            .unwrap_or_default();
        let proxy_violations = self.proxy.as_ref().map_or(0, |p| p.stats().window_violations);
        let digest_ok = (self.cfg.verify_payload && self.udp.is_none()).then(|| {
            self.receiver.digest() == Some(stream_digest(self.receiver.rcv_nxt()))
        });
        let rlc = *self.rlc.stats();
        let metrics = RunMetrics {
            duration_s: duration,
            delivered_bytes: delivered,
            goodput_bps: delivered as f64 * 8.0 / duration,
            ran_latency_mean_us: mean,
            ran_latency_p50_us: p50,
            ran_latency_p95_us: p95,
            ran_latency_max_us: max,
            latency_samples: n as u64,
            rlc_drops: rlc.dropped_segments,
            rlc_dropped_bytes: rlc.dropped_bytes,
            proxy_drops: self.proxy.as_ref().map_or(0, |p| p.stats().drops),
            mean_rlc_occupancy: self.occupancy_sum as f64 / self.slots.max(1) as f64,
            max_rlc_occupancy: self.occupancy_max,
            capacity_bps: self.capacity_bytes as f64 * 8.0 / duration,
            retransmits,
            timeouts,
            invariant_violations: self.violations + sender_violations + proxy_violations,
            window_violations: sender_violations + proxy_violations,
            digest_ok,
            events,
        };
        let traces = RunTraces {
            ran: self.ran_trace,
            sender: self.sender.as_ref().map(|s| s.trace().to_vec()).unwrap_or_default(),
            proxy: self.proxy.as_ref().map(|p| p.trace().to_vec()).unwrap_or_default(),
            bus: self.bus.as_ref().map(|b| b.history().to_vec()).unwrap_or_default(),
        };
        (metrics, traces)
    }
}
