//! Cross-layer information path from the gNB to the proxy.
//!
//! Every `T_info` the gNB samples its RLC occupancy and an achievable-rate
//! estimate; the sample reaches the proxy `D_info` later. A proxy co-located
//! with the gNB has `D_info = 0`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{config_err, Result};
use crate::ran::slot_budget;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateEstimator {
    /// Bytes the scheduler could allocate in the next slot under a full
    /// buffer, divided by the slot duration. Independent of offered load.
    FullBuffer,
    /// Bytes actually served over the last period, divided by the period.
    /// Underestimates whenever the source does not saturate the link.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusConfig {
    pub d_info: SimTime,
    pub t_info: SimTime,
    pub estimator: RateEstimator,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            d_info: SimTime::ZERO,
            t_info: SimTime::from_millis(10),
            estimator: RateEstimator::FullBuffer,
        }
    }
}

impl BusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_info == SimTime::ZERO {
            return Err(config_err("T_info must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossLayerSample {
    pub taken_at: SimTime,
    pub delivered_at: SimTime,
    pub rlc_occupancy: u64,
    pub rate_bps: u64,
    pub outage: bool,
}

/// Most recent delivered sample together with its age at query time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatestInfo {
    pub sample: CrossLayerSample,
    pub info_age: SimTime,
}

/// Full-buffer achievable rate: slot budget scaled back to bit/s.
pub fn full_buffer_rate(state: &ChannelState, slot: SimTime) -> u64 {
    let budget = slot_budget(state.phy_rate, slot) as u128;
    (budget * 8_000_000 / slot.as_micros() as u128) as u64
}

#[derive(Debug, Clone)]
pub struct CrossLayerBus {
    cfg: BusConfig,
    in_transit: VecDeque<CrossLayerSample>,
    latest: Option<CrossLayerSample>,
    delivered: Vec<CrossLayerSample>,
    record: bool,
    served_at_last_sample: u64,
    last_sample_at: SimTime,
}

impl CrossLayerBus {
    pub fn new(cfg: BusConfig, record: bool) -> Self {
        CrossLayerBus {
            cfg,
            in_transit: VecDeque::new(),
            latest: None,
            delivered: Vec::new(),
            record,
            served_at_last_sample: 0,
            last_sample_at: SimTime::ZERO,
        }
    }

    pub fn config(&self) -> &BusConfig {
        &self.cfg
    }

    /// Take a sample at `now`; returns the time it must be delivered.
    ///
    /// `served_bytes` is the cumulative RLC byte count, used only by the
    /// measured estimator.
    pub fn sample(
        &mut self,
        now: SimTime,
        state: &ChannelState,
        slot: SimTime,
        rlc_occupancy: u64,
        served_bytes: u64,
    ) -> SimTime {
        let rate_bps = match self.cfg.estimator {
            RateEstimator::FullBuffer => full_buffer_rate(state, slot),
            RateEstimator::Measured => {
                let span = now.saturating_sub(self.last_sample_at).as_micros().max(1);
                let bytes = served_bytes - self.served_at_last_sample;
                (bytes as u128 * 8_000_000 / span as u128) as u64
            }
        };
        self.served_at_last_sample = served_bytes;
        self.last_sample_at = now;
        let delivered_at = now + self.cfg.d_info;
        self.in_transit.push_back(CrossLayerSample {
            taken_at: now,
            delivered_at,
            rlc_occupancy,
            rate_bps,
            outage: state.outage,
        });
        delivered_at
    }

    /// Deliver the oldest in-transit sample. Samples leave in FIFO order.
    pub fn deliver(&mut self) -> Option<CrossLayerSample> {
        let s = self.in_transit.pop_front()?;
        self.latest = Some(s);
        if self.record {
            self.delivered.push(s);
        }
        Some(s)
    }

    pub fn latest_info(&self, now: SimTime) -> Option<LatestInfo> {
        self.latest.map(|sample| LatestInfo {
            sample,
            info_age: now.saturating_sub(sample.taken_at),
        })
    }

    /// Delivered samples, if recording was requested.
    pub fn history(&self) -> &[CrossLayerSample] {
        &self.delivered
    }
}
