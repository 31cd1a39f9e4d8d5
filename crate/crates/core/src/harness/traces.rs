//! CSV export of per-run time series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::harness::world::RunTraces;

#[derive(Serialize)]
struct SenderRow {
    time_us: u64,
    cwnd: u64,
    awnd_seen: u64,
    in_flight: u64,
    phase: &'static str,
}

#[derive(Serialize)]
struct ProxyRow {
    time_us: u64,
    fw_bytes: u64,
    rtt_min_us: Option<u64>,
    buffer_occupancy: u64,
    forwarded_bytes: u64,
    relayed_acks: u64,
}

#[derive(Serialize)]
struct BusRow {
    taken_at_us: u64,
    delivered_at_us: u64,
    #[serde(rename = "B_bytes")]
    b_bytes: u64,
    #[serde(rename = "R_e_bps")]
    r_e_bps: u64,
    outage: bool,
}

fn write<T: Serialize>(path: &Path, header: &[&str], rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the RAN, sender, proxy and cross-layer traces into `dir`.
pub fn write_traces(dir: &Path, t: &RunTraces) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ran = dir.join("ran_trace.csv");
    write(&ran, &["time_us", "B_bytes", "phy_rate_bps", "state"], t.ran.iter())?;
    let sender = dir.join("sender_trace.csv");
    write(
        &sender,
        &["time_us", "cwnd", "awnd_seen", "in_flight", "phase"],
        t.sender.iter().map(|s| SenderRow {
            time_us: s.time.as_micros(),
            cwnd: s.cwnd,
            awnd_seen: s.awnd,
            in_flight: s.in_flight,
            phase: s.phase.as_str(),
        }),
    )?;
    let proxy = dir.join("proxy_trace.csv");
    write(
        &proxy,
        &[
            "time_us",
            "fw_bytes",
            "rtt_min_us",
            "buffer_occupancy",
            "forwarded_bytes",
            "relayed_acks",
        ],
        t.proxy.iter().map(|p| ProxyRow {
            time_us: p.time.as_micros(),
            fw_bytes: p.fw,
            rtt_min_us: p.rtt_min.map(|r| r.as_micros()),
            buffer_occupancy: p.buffer_occupancy,
            forwarded_bytes: p.forwarded_bytes,
            relayed_acks: p.relayed_acks,
        }),
    )?;
    let bus = dir.join("bus_trace.csv");
    write(
        &bus,
        &["taken_at_us", "delivered_at_us", "B_bytes", "R_e_bps", "outage"],
        t.bus.iter().map(|s| BusRow {
            taken_at_us: s.taken_at.as_micros(),
            delivered_at_us: s.delivered_at.as_micros(),
            b_bytes: s.rlc_occupancy,
            r_e_bps: s.rate_bps,
            outage: s.outage,
        }),
    )?;
    Ok(vec![ran, sender, proxy, bus])
}
