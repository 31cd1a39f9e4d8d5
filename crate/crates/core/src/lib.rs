//! Discrete-event model of a cross-layer TCP proxy on a mmWave access link.
//!
//! A NewReno server sends bulk data through a core network to a gNB whose RLC
//! buffer is drained slot by slot over a blockage-driven channel. An optional
//! per-flow proxy splits the control loop: it buffers server payloads,
//! aggregates them toward the UE, and paces the server through the receive
//! window it advertises, sized from RTT and cross-layer RAN information.

pub mod bus;
pub mod channel;
pub mod error;
pub mod harness;
pub mod policy;
pub mod proxy;
pub mod ran;
pub mod sim;
pub mod tcp;

pub use error::{Error, Result};
pub use sim::{Engine, RngStream, SimTime};
pub use harness::{run_one, run_sweep, RunConfig, RunMetrics, SweepGrid, Transport};
