//! TCP endpoints: the NewReno bulk sender, the cumulative-ACK receiver and a
//! constant-rate UDP source used as a capacity baseline.
//!
//! Segments carry sequence space, not bytes. A payload is attached only when a
//! run verifies end-to-end stream integrity; its content is a fixed function
//! of the stream offset (see [`stream_payload`]).

mod receiver;
mod sender;
mod udp;

pub use receiver::Receiver;
pub use sender::{NewRenoSender, Phase, SenderConfig, SenderSample, SenderStats, TimerKind};
pub use udp::UdpSource;

use bytes::Bytes;
use sha2::{Digest, Sha256};

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const SYN: Flags = Flags(0b0001);
    pub const ACK: Flags = Flags(0b0010);
    pub const FIN: Flags = Flags(0b0100);
    pub const DATA: Flags = Flags(0b1000);

    pub const fn empty() -> Flags {
        Flags(0)
    }

    pub const fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

/// Which hop's segment size produced a data segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum MssClass {
    /// Server → proxy (end-to-end) segment size.
    #[default]
    ServerSide,
    /// Proxy → UE aggregate.
    UeSide,
}

/// A data or ACK unit. Sequence numbers are absolute byte offsets in the
/// stream; timestamps are simulated microseconds with zero meaning "absent".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segment {
    pub seq: u64,
    pub len: u32,
    pub flags: Flags,
    pub ack_no: u64,
    pub adv_window: u64,
    pub ts_val: SimTime,
    pub ts_echo: SimTime,
    pub mss_class: MssClass,
    pub payload: Option<Bytes>,
}

impl Segment {
    pub fn data(seq: u64, len: u32, ts_val: SimTime, ts_echo: SimTime) -> Segment {
        debug_assert!(len > 0);
        Segment {
            seq,
            len,
            flags: Flags::DATA,
            ts_val,
            ts_echo,
            ..Default::default()
        }
    }

    pub fn ack(ack_no: u64, adv_window: u64, ts_val: SimTime, ts_echo: SimTime) -> Segment {
        Segment {
            seq: 0,
            len: 0,
            flags: Flags::ACK,
            ack_no,
            adv_window,
            ts_val,
            ts_echo,
            ..Default::default()
        }
    }

    pub fn is_data(&self) -> bool {
        self.flags.contains(Flags::DATA)
    }

    pub fn is_ack(&self) -> bool {
        self.flags.contains(Flags::ACK)
    }

    /// One past the last byte carried.
    pub fn end(&self) -> u64 {
        self.seq + self.len as u64
    }

    pub fn with_payload(mut self) -> Segment {
        self.payload = Some(stream_payload(self.seq, self.len as usize));
        self
    }
}

/// Content of stream byte `offset`.
#[inline]
pub fn stream_byte(offset: u64) -> u8 {
    let x = offset.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ((x >> 29) ^ (offset >> 11)) as u8
}

/// Bytes `[offset, offset + len)` of the transferred stream.
pub fn stream_payload(offset: u64, len: usize) -> Bytes {
    (offset..offset + len as u64).map(stream_byte).collect()
}

/// SHA-256 of the first `len` bytes of the transferred stream.
pub fn stream_digest(len: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    let mut buf = Vec::with_capacity(1 << 16);
    let mut off = 0;
    while off < len {
        let n = (len - off).min(1 << 16);
        buf.clear();
        buf.extend((off..off + n).map(stream_byte));
        h.update(&buf);
        off += n;
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_prefix_consistent() {
        let mut h = Sha256::new();
        h.update(stream_payload(0, 1000));
        h.update(stream_payload(1000, 400));
        let d: [u8; 32] = h.finalize().into();
        assert_eq!(d, stream_digest(1400));
        assert_ne!(d, stream_digest(1399));
    }

    #[test]
    fn flags_compose() {
        let f = Flags::ACK | Flags::DATA;
        assert!(f.contains(Flags::ACK) && f.contains(Flags::DATA));
        assert!(!f.contains(Flags::SYN));
    }
}
