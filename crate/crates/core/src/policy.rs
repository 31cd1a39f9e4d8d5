//! Flow-window policies.
//!
//! A policy maps the cross-layer triple `(RTT_min, R_e, B)` to the number of
//! bytes the proxy may have outstanding toward the UE. Policies are looked up
//! by name in a [`PolicyRegistry`], so new ones can be plugged in without
//! touching the proxy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimTime;

pub const MB: u64 = 1 << 20;

/// Inputs to a flow-window computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowWindowInput {
    /// Minimum RTT seen so far, if any estimate exists.
    pub rtt_min: Option<SimTime>,
    /// Estimated achievable rate, bit/s.
    pub rate_bps: u64,
    /// RLC buffer occupancy, bytes.
    pub rlc_occupancy: u64,
    /// Age of the cross-layer sample.
    pub info_age: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Bdp,
    ConservativeBdp,
    Fixed,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Bdp => "bdp",
            PolicyKind::ConservativeBdp => "conservative_bdp",
            PolicyKind::Fixed => "fixed",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Registry name of the policy (`bdp`, `conservative_bdp`, `fixed`, or a
    /// user-registered one).
    pub kind: String,
    pub init_window: u64,
    pub buffer_threshold: u64,
    pub fixed_value: u64,
    /// Conservative variant only: once engaged, stay engaged until `B` falls
    /// below this many bytes. `None` disables hysteresis.
    pub release_threshold: Option<u64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Bdp.name().to_string(),
            init_window: 400 * MB,
            buffer_threshold: 2 * MB,
            fixed_value: 4 * MB,
            release_threshold: None,
        }
    }
}

impl PolicyConfig {
    pub fn with_kind(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind: kind.name().to_string(),
            ..Default::default()
        }
    }
}

/// `⌊rtt_min · rate / 8⌋` in bytes, with the RTT in microseconds.
pub fn bdp_bytes(rtt_min: SimTime, rate_bps: u64) -> u64 {
    (rtt_min.as_micros() as u128 * rate_bps as u128 / 8_000_000) as u64
}

/// Stateless evaluation of the built-in policies.
pub fn compute_window(kind: PolicyKind, cfg: &PolicyConfig, input: &FlowWindowInput) -> u64 {
    match kind {
        PolicyKind::Fixed => cfg.fixed_value,
        PolicyKind::Bdp | PolicyKind::ConservativeBdp => {
            let Some(rtt) = input.rtt_min else {
                return cfg.init_window;
            };
            let w = bdp_bytes(rtt, input.rate_bps);
            if kind == PolicyKind::ConservativeBdp && input.rlc_occupancy > cfg.buffer_threshold {
                w.saturating_sub(2 * input.rlc_occupancy)
            } else {
                w
            }
        }
    }
}

pub trait FlowWindowPolicy: Send {
    fn name(&self) -> &str;
    fn compute(&mut self, input: &FlowWindowInput) -> u64;
}

#[derive(Debug, Clone)]
pub struct BdpPolicy {
    cfg: PolicyConfig,
}

impl FlowWindowPolicy for BdpPolicy {
    fn name(&self) -> &str {
        PolicyKind::Bdp.name()
    }
    fn compute(&mut self, input: &FlowWindowInput) -> u64 {
        compute_window(PolicyKind::Bdp, &self.cfg, input)
    }
}

#[derive(Debug, Clone)]
pub struct ConservativeBdpPolicy {
    cfg: PolicyConfig,
    engaged: bool,
}

impl FlowWindowPolicy for ConservativeBdpPolicy {
    fn name(&self) -> &str {
        PolicyKind::ConservativeBdp.name()
    }

    fn compute(&mut self, input: &FlowWindowInput) -> u64 {
        let Some(release) = self.cfg.release_threshold else {
            return compute_window(PolicyKind::ConservativeBdp, &self.cfg, input);
        };
        let b = input.rlc_occupancy;
        if b > self.cfg.buffer_threshold {
            self.engaged = true;
        } else if b < release {
            self.engaged = false;
        }
        let Some(rtt) = input.rtt_min else {
            return self.cfg.init_window;
        };
        let w = bdp_bytes(rtt, input.rate_bps);
        if self.engaged {
            w.saturating_sub(2 * b)
        } else {
            w
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPolicy {
    value: u64,
}

impl FlowWindowPolicy for FixedPolicy {
    fn name(&self) -> &str {
        PolicyKind::Fixed.name()
    }
    fn compute(&mut self, _input: &FlowWindowInput) -> u64 {
        self.value
    }
}

pub type PolicyFactory = fn(&PolicyConfig) -> Box<dyn FlowWindowPolicy>;

/// Name → factory table, populated once at startup.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        PolicyRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(PolicyKind::Bdp.name(), |cfg| {
            Box::new(BdpPolicy { cfg: cfg.clone() })
        })
        .expect("fresh registry");
        r.register(PolicyKind::ConservativeBdp.name(), |cfg| {
            Box::new(ConservativeBdpPolicy {
                cfg: cfg.clone(),
                engaged: false,
            })
        })
        .expect("fresh registry");
        r.register(PolicyKind::Fixed.name(), |cfg| {
            Box::new(FixedPolicy {
                value: cfg.fixed_value,
            })
        })
        .expect("fresh registry");
        r
    }

    pub fn register(&mut self, name: &str, factory: PolicyFactory) -> Result<()> {
        if self.factories.contains_key(name) {
            return Err(Error::DuplicatePolicy(name.to_string()));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, cfg: &PolicyConfig) -> Result<Box<dyn FlowWindowPolicy>> {
        let factory = self
            .factories
            .get(&cfg.kind)
            .ok_or_else(|| Error::UnknownPolicy(cfg.kind.clone()))?;
        Ok(factory(cfg))
    }
}
