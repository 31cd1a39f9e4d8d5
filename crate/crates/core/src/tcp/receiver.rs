use std::collections::BTreeMap;

use bytes::Bytes;
use sha2::{Digest, Sha256};

use crate::sim::SimTime;

use super::Segment;

/// Default receive window advertised by the UE (64 MiB).
pub const DEFAULT_RECEIVE_WINDOW: u64 = 64 << 20;

/// Cumulative-ACK receiver, one ACK per data segment.
#[derive(Debug, Clone)]
pub struct Receiver {
    rcv_nxt: u64,
    out_of_order: BTreeMap<u64, (u32, Option<Bytes>)>,
    adv_window: u64,
    digest: Option<Sha256>,
    duplicate_segments: u64,
}

impl Default for Receiver {
    fn default() -> Self {
        Receiver::new(DEFAULT_RECEIVE_WINDOW, false)
    }
}

impl Receiver {
    /// `verify` enables the running digest of the in-order stream; segments
    /// must then carry payloads.
    pub fn new(adv_window: u64, verify: bool) -> Self {
        Receiver {
            rcv_nxt: 0,
            out_of_order: BTreeMap::new(),
            adv_window,
            digest: verify.then(Sha256::new),
            duplicate_segments: 0,
        }
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    /// In-order application bytes delivered so far.
    pub fn delivered(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn duplicate_segments(&self) -> u64 {
        self.duplicate_segments
    }

    pub fn buffered_out_of_order(&self) -> usize {
        self.out_of_order.len()
    }

    /// SHA-256 of the delivered prefix, when verification is on.
    pub fn digest(&self) -> Option<[u8; 32]> {
        self.digest.as_ref().map(|h| h.clone().finalize().into())
    }

    /// Accept a data segment and produce the ACK it triggers.
    pub fn on_data(&mut self, seg: &Segment, now: SimTime) -> Segment {
        if seg.len > 0 {
            let end = seg.end();
            if end <= self.rcv_nxt {
                self.duplicate_segments += 1;
            } else if seg.seq <= self.rcv_nxt {
                self.accept(seg.seq, seg.len, seg.payload.as_ref());
                self.drain();
            } else {
                let keep = self
                    .out_of_order
                    .get(&seg.seq)
                    .is_none_or(|(len, _)| *len < seg.len);
                if keep {
                    self.out_of_order
                        .insert(seg.seq, (seg.len, seg.payload.clone()));
                }
            }
        }
        Segment::ack(self.rcv_nxt, self.adv_window, now, seg.ts_val)
    }

    fn accept(&mut self, seq: u64, len: u32, payload: Option<&Bytes>) {
        let end = seq + len as u64;
        if end <= self.rcv_nxt {
            return;
        }
        let skip = (self.rcv_nxt - seq) as usize;
        if let Some(h) = self.digest.as_mut() {
            let p = payload.expect("payload verification enabled but segment has no payload");
            h.update(&p[skip..]);
        }
        self.rcv_nxt = end;
    }

    fn drain(&mut self) {
        while let Some((&seq, _)) = self.out_of_order.first_key_value() {
            if seq > self.rcv_nxt {
                break;
            }
            let (len, payload) = self.out_of_order.remove(&seq).expect("present");
            self.accept(seq, len, payload.as_ref());
        }
    }
}
