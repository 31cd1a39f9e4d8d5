use crate::sim::SimTime;

use super::Segment;

/// Open-loop constant-bit-rate source. Datagrams are released in batches at
/// each tick so that the cumulative count tracks `rate · t` exactly.
#[derive(Debug, Clone)]
pub struct UdpSource {
    rate_bps: u64,
    datagram: u32,
    start: SimTime,
    sent: u64,
}

impl UdpSource {
    pub fn new(rate_bps: u64, datagram: u32, start: SimTime) -> Self {
        assert!(rate_bps > 0 && datagram > 0, "UDP rate and size must be positive");
        UdpSource {
            rate_bps,
            datagram,
            start,
            sent: 0,
        }
    }

    pub fn datagrams_sent(&self) -> u64 {
        self.sent
    }

    pub fn bytes_sent(&self) -> u64 {
        self.sent * self.datagram as u64
    }

    /// Emit every datagram due by `now`.
    pub fn emit(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        let elapsed = now.saturating_sub(self.start).as_micros() as u128;
        let due = elapsed * self.rate_bps as u128 / (8_000_000 * self.datagram as u128);
        let due = due as u64;
        while self.sent < due {
            let seq = self.sent * self.datagram as u64;
            out.push(Segment::data(seq, self.datagram, now, SimTime::ZERO));
            self.sent += 1;
        }
    }
}
