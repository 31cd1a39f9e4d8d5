//! Run configuration: a flat key/value document with one key per parameter.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bus::{BusConfig, RateEstimator};
use crate::channel::{ObstacleConfig, OutageInterval, Point, RateConfig, Rect, Scenario};
use crate::error::{config_err, Error, Result};
use crate::policy::{PolicyConfig, PolicyRegistry, MB};
use crate::proxy::ProxyConfig;
use crate::sim::SimTime;
use crate::tcp::SenderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transport {
    /// Plain end-to-end NewReno.
    #[serde(rename = "newreno")]
    NewReno,
    /// NewReno through the per-flow proxy at the gNB.
    #[serde(rename = "milliproxy", alias = "newreno+milliproxy")]
    MilliProxy,
    /// Open-loop constant-rate source.
    #[serde(rename = "udp")]
    Udp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::NewReno => "newreno",
            Transport::MilliProxy => "milliproxy",
            Transport::Udp => "udp",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newreno" => Ok(Transport::NewReno),
            "milliproxy" | "newreno+milliproxy" => Ok(Transport::MilliProxy),
            "udp" => Ok(Transport::Udp),
            other => Err(config_err(format!(
                "unknown transport `{other}` (expected newreno, milliproxy or udp)"
            ))),
        }
    }
}

/// Every parameter of a single run. Delays are in milliseconds unless the
/// key says otherwise; buffer sizes in MB are multiples of 2^20 bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub transport: Transport,

    pub d_s1_ms: f64,
    pub d_rs_ms: f64,
    pub b_rlc_mb: f64,
    pub mss1: u32,
    pub mss2: u32,
    pub slot_us: u64,
    pub ack_delay_us: u64,
    pub link_delay_us: u64,
    pub los_rate_bps: u64,
    pub nlos_rate_bps: u64,

    pub gnb_x: f64,
    pub gnb_y: f64,
    pub ue_start_x: f64,
    pub ue_start_y: f64,
    pub ue_end_x: f64,
    pub ue_end_y: f64,
    pub ue_speed: f64,
    pub obstacle_count: usize,
    pub obstacle_width_min: f64,
    pub obstacle_width_max: f64,
    pub obstacle_height_min: f64,
    pub obstacle_height_max: f64,
    pub obstacle_region_x_min: f64,
    pub obstacle_region_y_min: f64,
    pub obstacle_region_x_max: f64,
    pub obstacle_region_y_max: f64,
    /// Forced outage intervals as `[start_ms, end_ms]` pairs.
    pub outages_ms: Vec<[f64; 2]>,

    pub policy: String,
    pub init_window_mb: f64,
    pub buffer_threshold_mb: f64,
    pub fixed_window_bytes: u64,
    /// Enables hysteresis on the conservative policy when set.
    pub release_threshold_mb: Option<f64>,
    pub proxy_buffer_mb: f64,
    pub flush_timeout_ms: f64,
    pub proxy_retransmit_ms: f64,
    pub d_info_ms: f64,
    pub t_info_ms: f64,
    pub rate_estimator: RateEstimator,

    pub init_cwnd_segments: u32,
    pub initial_rto_ms: f64,
    pub min_rto_ms: f64,
    pub ue_window_mb: f64,
    /// Stop the server after this many bytes; unlimited when unset.
    pub total_bytes: Option<u64>,
    /// Defaults to the LOS rate.
    pub udp_rate_bps: Option<u64>,
    pub udp_datagram: u32,

    /// Defaults to the UE traverse time plus `drain_s`.
    pub duration_s: Option<f64>,
    pub drain_s: f64,
    /// Carry real payload bytes and compare stream digests at the UE.
    pub verify_payload: bool,
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let obstacles = ObstacleConfig::default();
        RunConfig {
            seed: 1,
            transport: Transport::MilliProxy,
            d_s1_ms: 1.0,
            d_rs_ms: 1.0,
            b_rlc_mb: 10.0,
            mss1: 1400,
            mss2: 20000,
            slot_us: 125,
            ack_delay_us: 125,
            link_delay_us: 0,
            los_rate_bps: RateConfig::default().los_bps,
            nlos_rate_bps: RateConfig::default().nlos_bps,
            gnb_x: 25.0,
            gnb_y: 100.0,
            ue_start_x: 0.0,
            ue_start_y: 0.0,
            ue_end_x: 50.0,
            ue_end_y: 0.0,
            ue_speed: 5.0,
            obstacle_count: obstacles.count,
            obstacle_width_min: obstacles.width.0,
            obstacle_width_max: obstacles.width.1,
            obstacle_height_min: obstacles.height.0,
            obstacle_height_max: obstacles.height.1,
            obstacle_region_x_min: obstacles.region.x_min,
            obstacle_region_y_min: obstacles.region.y_min,
            obstacle_region_x_max: obstacles.region.x_max,
            obstacle_region_y_max: obstacles.region.y_max,
            outages_ms: Vec::new(),
            policy: "bdp".into(),
            init_window_mb: 400.0,
            buffer_threshold_mb: 2.0,
            fixed_window_bytes: 4 * MB,
            release_threshold_mb: None,
            proxy_buffer_mb: 10.0,
            flush_timeout_ms: 1.0,
            proxy_retransmit_ms: 200.0,
            d_info_ms: 0.0,
            t_info_ms: 10.0,
            rate_estimator: RateEstimator::FullBuffer,
            init_cwnd_segments: 10,
            initial_rto_ms: 1000.0,
            min_rto_ms: 200.0,
            ue_window_mb: 64.0,
            total_bytes: None,
            udp_rate_bps: None,
            udp_datagram: 1400,
            duration_s: None,
            drain_s: 1.0,
            verify_payload: false,
            check_invariants: true,
        }
    }
}

fn ms(v: f64) -> SimTime {
    SimTime((v * 1000.0).round() as u64)
}

fn mb(v: f64) -> u64 {
    (v * MB as f64).floor() as u64
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    /// Names of all keys, in declaration order.
    pub fn keys() -> Vec<String> {
        let v = toml::Value::try_from(RunConfig::default()).expect("serializes");
        let mut keys: Vec<String> = v
            .as_table()
            .expect("table")
            .keys()
            .cloned()
            .collect();
        // Optional keys are absent from the serialized default.
        for k in [
            "release_threshold_mb",
            "total_bytes",
            "udp_rate_bps",
            "duration_s",
        ] {
            if !keys.iter().any(|x| x == k) {
                keys.push(k.to_string());
            }
        }
        keys
    }

    /// Set one key from its textual value, as given on a command line.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.set_value(key, parse_scalar(raw))
    }

    /// Set one key from a structured value.
    pub fn set_value(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let mut table = toml::Value::try_from(&*self)
            .expect("serializes")
            .as_table()
            .cloned()
            .expect("table");
        if !Self::keys().iter().any(|k| k == key) {
            return Err(config_err(format!("unknown configuration key `{key}`")));
        }
        table.insert(key.to_string(), value);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(format!("key `{key}`: {}", e.message())))?;
        *self = cfg;
        Ok(())
    }

    /// Return one key to its default; optional keys become unset.
    pub fn reset(&mut self, key: &str) -> Result<()> {
        if !Self::keys().iter().any(|k| k == key) {
            return Err(config_err(format!("unknown configuration key `{key}`")));
        }
        let mut table = toml::Value::try_from(&*self)
            .expect("serializes")
            .as_table()
            .cloned()
            .expect("table");
        table.remove(key);
        *self = toml::Value::Table(table)
            .try_into()
            .expect("defaults fill removed keys");
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("d_s1_ms", self.d_s1_ms),
            ("d_rs_ms", self.d_rs_ms),
            ("d_info_ms", self.d_info_ms),
            ("flush_timeout_ms", self.flush_timeout_ms),
            ("drain_s", self.drain_s),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        let positive = [
            ("b_rlc_mb", self.b_rlc_mb),
            ("proxy_buffer_mb", self.proxy_buffer_mb),
            ("t_info_ms", self.t_info_ms),
            ("initial_rto_ms", self.initial_rto_ms),
            ("min_rto_ms", self.min_rto_ms),
            ("proxy_retransmit_ms", self.proxy_retransmit_ms),
            ("ue_window_mb", self.ue_window_mb),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mss1 == 0 || self.mss2 == 0 || self.udp_datagram == 0 {
            return Err(config_err("segment sizes must be positive"));
        }
        if self.slot_us == 0 {
            return Err(config_err("slot_us must be positive"));
        }
        if self.init_cwnd_segments == 0 {
            return Err(config_err("init_cwnd_segments must be positive"));
        }
        if self.udp_rate_bps == Some(0) {
            return Err(config_err("udp_rate_bps must be positive"));
        }
        self.rates().validate()?;
        for [a, b] in &self.outages_ms {
            if !(a.is_finite() && b.is_finite() && *a >= 0.0 && a <= b) {
                return Err(config_err(format!("invalid outage interval [{a}, {b}]")));
            }
        }
        if !PolicyRegistry::default().contains(&self.policy) {
            return Err(Error::UnknownPolicy(self.policy.clone()));
        }
        let sc = self.base_scenario()?;
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                return Err(config_err(format!("duration_s must be positive, got {d}")));
            }
            if SimTime((d * 1e6).round() as u64) < sc.traverse_time() {
                return Err(config_err(format!(
                    "duration_s = {d} does not cover the {} s UE traverse",
                    sc.traverse_time().as_secs_f64()
                )));
            }
        }
        Ok(())
    }

    pub fn rates(&self) -> RateConfig {
        RateConfig {
            los_bps: self.los_rate_bps,
            nlos_bps: self.nlos_rate_bps,
        }
    }

    pub fn obstacle_config(&self) -> ObstacleConfig {
        ObstacleConfig {
            count: self.obstacle_count,
            width: (self.obstacle_width_min, self.obstacle_width_max),
            height: (self.obstacle_height_min, self.obstacle_height_max),
            region: Rect::new(
                self.obstacle_region_x_min,
                self.obstacle_region_y_min,
                self.obstacle_region_x_max,
                self.obstacle_region_y_max,
            ),
        }
    }

    fn base_scenario(&self) -> Result<Scenario> {
        let sc = Scenario::new(
            Point::new(self.gnb_x, self.gnb_y),
            Point::new(self.ue_start_x, self.ue_start_y),
            Point::new(self.ue_end_x, self.ue_end_y),
            self.ue_speed,
            Vec::new(),
        )?
        .with_outages(
            self.outages_ms
                .iter()
                .map(|[a, b]| OutageInterval {
                    start: ms(*a),
                    end: ms(*b),
                })
                .collect(),
        );
        sc.validate()?;
        Ok(sc)
    }

    /// Scenario with obstacles drawn from this run's seed.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut sc = self.base_scenario()?;
        let stream = crate::sim::RngStream::new(self.seed, "obstacles");
        sc.obstacles = crate::channel::generate_obstacles(&self.obstacle_config(), &stream)?;
        sc.validate()?;
        Ok(sc)
    }

    /// One-way fixed-network delay between gNB and server.
    pub fn core_delay(&self) -> SimTime {
        ms(self.d_s1_ms + self.d_rs_ms)
    }

    pub fn slot(&self) -> SimTime {
        SimTime(self.slot_us)
    }

    pub fn duration(&self) -> Result<SimTime> {
        Ok(match self.duration_s {
            Some(d) => SimTime((d * 1e6).round() as u64),
            None => self.base_scenario()?.traverse_time() + SimTime((self.drain_s * 1e6).round() as u64),
        })
    }

    pub fn rlc_capacity(&self) -> u64 {
        mb(self.b_rlc_mb)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            kind: self.policy.clone(),
            init_window: mb(self.init_window_mb),
            buffer_threshold: mb(self.buffer_threshold_mb),
            fixed_value: self.fixed_window_bytes,
            release_threshold: self.release_threshold_mb.map(mb),
        }
    }

    pub fn proxy_config(&self) -> ProxyConfig {
        ProxyConfig {
            buffer_capacity: mb(self.proxy_buffer_mb),
            mss1: self.mss1,
            mss2: self.mss2,
            flush_timeout: ms(self.flush_timeout_ms),
            retransmit_timeout: ms(self.proxy_retransmit_ms),
            policy: self.policy_config(),
            carry_payload: self.verify_payload,
            trace: false,
        }
    }

    pub fn bus_config(&self) -> BusConfig {
        BusConfig {
            d_info: ms(self.d_info_ms),
            t_info: ms(self.t_info_ms),
            estimator: self.rate_estimator,
        }
    }

    pub fn sender_config(&self) -> SenderConfig {
        SenderConfig {
            mss: self.mss1,
            initial_cwnd_segments: self.init_cwnd_segments,
            initial_rto: ms(self.initial_rto_ms),
            min_rto: ms(self.min_rto_ms),
            total_bytes: self.total_bytes,
            carry_payload: self.verify_payload,
            ..SenderConfig::default()
        }
    }

    pub fn ue_window(&self) -> u64 {
        mb(self.ue_window_mb)
    }

    pub fn udp_rate(&self) -> u64 {
        self.udp_rate_bps.unwrap_or(self.los_rate_bps)
    }
}

/// Interpret a command-line value as a TOML scalar, falling back to a string.
pub fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
