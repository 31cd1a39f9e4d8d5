//! Seed sweeps over a configuration grid, paired summaries and file output.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{config_err, Result};
use crate::harness::config::{RunConfig, Transport};
use crate::harness::world::{run_one, RunMetrics};

/// A named grid cell: the base config with some keys overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub config_id: String,
    pub assignments: Vec<(String, String)>,
    pub config: RunConfig,
}

/// Base config, the axes to vary, and the seeds to run at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub base: RunConfig,
    pub axes: Vec<(String, Vec<toml::Value>)>,
    pub seeds: Vec<u64>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) if f.fract() == 0.0 && f.abs() < 1e15 => format!("{}", *f as i64),
        other => other.to_string(),
    }
}

impl SweepGrid {
    pub fn new(base: RunConfig) -> Self {
        SweepGrid {
            base,
            axes: Vec::new(),
            seeds: vec![1],
        }
    }

    /// Add an axis; values must be valid for `key`.
    pub fn axis<V: Into<toml::Value>>(mut self, key: &str, values: Vec<V>) -> Result<Self> {
        let values: Vec<toml::Value> = values.into_iter().map(Into::into).collect();
        if values.is_empty() {
            return Err(config_err(format!("axis `{key}` has no values")));
        }
        if key == "seed" {
            return Err(config_err("seeds are set with `seeds`, not as an axis"));
        }
        for v in &values {
            self.base.clone().set_value(key, v.clone())?;
        }
        self.axes.push((key.to_string(), values));
        Ok(self)
    }

    /// Seeds `1..=n`.
    pub fn with_seed_count(mut self, n: u64) -> Self {
        self.seeds = (1..=n).collect();
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    /// Parse a sweep file: a run config in which any key given as an array
    /// becomes an axis. `seeds` is either a count or an explicit list.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s)?;
        let seeds = match table.remove("seeds") {
            None => vec![1],
            Some(toml::Value::Integer(n)) if n > 0 => (1..=n as u64).collect(),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| {
                    v.as_integer()
                        .filter(|&i| i >= 0)
                        .map(|i| i as u64)
                        .ok_or_else(|| config_err("seeds must be non-negative integers"))
                })
                .collect::<Result<_>>()?,
            Some(other) => return Err(config_err(format!("invalid seeds value {other}"))),
        };
        let mut axes = Vec::new();
        let keys: Vec<String> = table.keys().cloned().collect();
        for k in keys {
            if k == "outages_ms" {
                continue;
            }
            if let Some(toml::Value::Array(_)) = table.get(&k) {
                let Some(toml::Value::Array(vals)) = table.remove(&k) else {
                    unreachable!()
                };
                axes.push((k, vals));
            }
        }
        let base: RunConfig = toml::Value::Table(table).try_into()?;
        base.validate()?;
        let mut grid = SweepGrid::new(base).with_seeds(seeds);
        for (k, v) in axes {
            grid = grid.axis(&k, v)?;
        }
        Ok(grid)
    }

    /// All grid points in row-major axis order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = vec![Cell {
            config_id: String::new(),
            assignments: Vec::new(),
            config: self.base.clone(),
        }];
        for (key, values) in &self.axes {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for c in &cells {
                for v in values {
                    let mut cfg = c.config.clone();
                    cfg.set_value(key, v.clone())?;
                    let mut assignments = c.assignments.clone();
                    assignments.push((key.clone(), value_label(v)));
                    next.push(Cell {
                        config_id: String::new(),
                        assignments,
                        config: cfg,
                    });
                }
            }
            cells = next;
        }
        for c in &mut cells {
            c.config_id = config_id(&c.assignments);
        }
        Ok(cells)
    }
}

fn config_id(assignments: &[(String, String)]) -> String {
    if assignments.is_empty() {
        return "base".to_string();
    }
    assignments
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// One CSV row: identity of the run plus every metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub config_id: String,
    pub seed: u64,
    pub transport: String,
    pub d_s1_ms: f64,
    pub d_rs_ms: f64,
    pub b_rlc_mb: f64,
    pub d_info_ms: f64,
    pub t_info_ms: f64,
    pub policy: String,
    pub duration_s: f64,
    pub delivered_bytes: u64,
    pub goodput_bps: f64,
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
    pub capacity_bps: f64,
    pub retransmits: u64,
    pub timeouts: u64,
    pub invariant_violations: u64,
    pub window_violations: u64,
    pub digest_ok: Option<bool>,
    pub events: u64,
}

impl RunRow {
    pub fn new(config_id: &str, cfg: &RunConfig, m: &RunMetrics) -> Self {
        RunRow {
            config_id: config_id.to_string(),
            seed: cfg.seed,
            transport: cfg.transport.as_str().to_string(),
            d_s1_ms: cfg.d_s1_ms,
            d_rs_ms: cfg.d_rs_ms,
            b_rlc_mb: cfg.b_rlc_mb,
            d_info_ms: cfg.d_info_ms,
            t_info_ms: cfg.t_info_ms,
            policy: cfg.policy.clone(),
            duration_s: m.duration_s,
            delivered_bytes: m.delivered_bytes,
            goodput_bps: m.goodput_bps,
            ran_latency_mean_us: m.ran_latency_mean_us,
            ran_latency_p50_us: m.ran_latency_p50_us,
            ran_latency_p95_us: m.ran_latency_p95_us,
            ran_latency_max_us: m.ran_latency_max_us,
            latency_samples: m.latency_samples,
            rlc_drops: m.rlc_drops,
            rlc_dropped_bytes: m.rlc_dropped_bytes,
            proxy_drops: m.proxy_drops,
            mean_rlc_occupancy: m.mean_rlc_occupancy,
            max_rlc_occupancy: m.max_rlc_occupancy,
            capacity_bps: m.capacity_bps,
            retransmits: m.retransmits,
            timeouts: m.timeouts,
            invariant_violations: m.invariant_violations,
            window_violations: m.window_violations,
            digest_ok: m.digest_ok,
            events: m.events,
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            duration_s: self.duration_s,
            delivered_bytes: self.delivered_bytes,
            goodput_bps: self.goodput_bps,
            ran_latency_mean_us: self.ran_latency_mean_us,
            ran_latency_p50_us: self.ran_latency_p50_us,
            ran_latency_p95_us: self.ran_latency_p95_us,
            ran_latency_max_us: self.ran_latency_max_us,
            latency_samples: self.latency_samples,
            rlc_drops: self.rlc_drops,
            rlc_dropped_bytes: self.rlc_dropped_bytes,
            proxy_drops: self.proxy_drops,
            mean_rlc_occupancy: self.mean_rlc_occupancy,
            max_rlc_occupancy: self.max_rlc_occupancy,
            capacity_bps: self.capacity_bps,
            retransmits: self.retransmits,
            timeouts: self.timeouts,
            invariant_violations: self.invariant_violations,
            window_violations: self.window_violations,
            digest_ok: self.digest_ok,
            events: self.events,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub config_id: String,
    pub seed: u64,
    pub error: String,
}

/// Per-config statistics over seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config_id: String,
    pub transport: String,
    pub d_s1_ms: f64,
    pub d_rs_ms: f64,
    pub b_rlc_mb: f64,
    pub d_info_ms: f64,
    pub policy: String,
    pub runs: u64,
    pub goodput_mean_bps: f64,
    pub goodput_ci95_bps: f64,
    pub latency_mean_us: f64,
    pub latency_ci95_us: f64,
    pub latency_p95_mean_us: f64,
    pub rlc_drops_mean: f64,
    pub capacity_mean_bps: f64,
    pub invariant_violations: u64,
}

/// Milliproxy cell against its NewReno twin over the seeds both ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedGain {
    pub config_id: String,
    pub baseline_id: String,
    pub d_s1_ms: f64,
    pub d_rs_ms: f64,
    pub b_rlc_mb: f64,
    pub d_info_ms: f64,
    pub pairs: u64,
    /// Mean proxy goodput over mean baseline goodput.
    pub goodput_gain: f64,
    /// Mean baseline latency over mean proxy latency.
    pub latency_reduction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub configs: Vec<ConfigSummary>,
    pub gains: Vec<PairedGain>,
}

impl SweepSummary {
    pub fn config(&self, id: &str) -> Option<&ConfigSummary> {
        self.configs.iter().find(|c| c.config_id == id)
    }

    pub fn gain(&self, id: &str) -> Option<&PairedGain> {
        self.gains.iter().find(|g| g.config_id == id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<RunRow>,
    pub failures: Vec<CellFailure>,
    pub summary: SweepSummary,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Student-t 95% half-width of the mean; zero below two samples.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

/// Run every (cell, seed) pair. Failing runs are reported, not fatal.
pub fn run_sweep(grid: &SweepGrid) -> Result<SweepOutcome> {
    let cells = grid.cells()?;
    if cells.is_empty() || grid.seeds.is_empty() {
        return Err(config_err("sweep grid is empty"));
    }
    let jobs: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| grid.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<std::result::Result<RunRow, CellFailure>> = jobs
        .par_iter()
        .map(|(cell, seed)| {
            let mut cfg = cell.config.clone();
            cfg.seed = *seed;
            run_one(&cfg)
                .map(|m| RunRow::new(&cell.config_id, &cfg, &m))
                .map_err(|e| CellFailure {
                    config_id: cell.config_id.clone(),
                    seed: *seed,
                    error: e.to_string(),
                })
        })
        .collect();
    let mut out = SweepOutcome::default();
    for r in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(f) => out.failures.push(f),
        }
    }
    out.summary = summarize(&out.rows);
    Ok(out)
}

/// Aggregate per-run rows. Pure function of the rows, so a summary
/// recomputed from a CSV file matches the original.
pub fn summarize(rows: &[RunRow]) -> SweepSummary {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&RunRow>> = HashMap::new();
    for r in rows {
        let g = groups.entry(&r.config_id).or_default();
        if g.is_empty() {
            order.push(&r.config_id);
        }
        g.push(r);
    }
    let mut configs = Vec::new();
    for id in &order {
        let g = &groups[id];
        let first = g[0];
        let goodput: Vec<f64> = g.iter().map(|r| r.goodput_bps).collect();
        let latency: Vec<f64> = g.iter().map(|r| r.ran_latency_mean_us).collect();
        configs.push(ConfigSummary {
            config_id: id.to_string(),
            transport: first.transport.clone(),
            d_s1_ms: first.d_s1_ms,
            d_rs_ms: first.d_rs_ms,
            b_rlc_mb: first.b_rlc_mb,
            d_info_ms: first.d_info_ms,
            policy: first.policy.clone(),
            runs: g.len() as u64,
            goodput_mean_bps: mean(&goodput),
            goodput_ci95_bps: ci95_half_width(&goodput),
            latency_mean_us: mean(&latency),
            latency_ci95_us: ci95_half_width(&latency),
            latency_p95_mean_us: mean(&g.iter().map(|r| r.ran_latency_p95_us as f64).collect::<Vec<_>>()),
            rlc_drops_mean: mean(&g.iter().map(|r| r.rlc_drops as f64).collect::<Vec<_>>()),
            capacity_mean_bps: mean(&g.iter().map(|r| r.capacity_bps).collect::<Vec<_>>()),
            invariant_violations: g.iter().map(|r| r.invariant_violations).sum(),
        });
    }

    let mut gains = Vec::new();
    for id in &order {
        let g = &groups[id];
        if g[0].transport != Transport::MilliProxy.as_str() {
            continue;
        }
        let base_id = baseline_id(id);
        let Some(base) = groups.get(base_id.as_str()) else {
            continue;
        };
        let base_by_seed: BTreeMap<u64, &RunRow> = base.iter().map(|r| (r.seed, *r)).collect();
        let pairs: Vec<(&RunRow, &RunRow)> = g
            .iter()
            .filter_map(|p| base_by_seed.get(&p.seed).map(|b| (*p, *b)))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let pg = mean(&pairs.iter().map(|(p, _)| p.goodput_bps).collect::<Vec<_>>());
        let bg = mean(&pairs.iter().map(|(_, b)| b.goodput_bps).collect::<Vec<_>>());
        let pl = mean(&pairs.iter().map(|(p, _)| p.ran_latency_mean_us).collect::<Vec<_>>());
        let bl = mean(&pairs.iter().map(|(_, b)| b.ran_latency_mean_us).collect::<Vec<_>>());
        let first = g[0];
        gains.push(PairedGain {
            config_id: id.to_string(),
            baseline_id: base_id,
            d_s1_ms: first.d_s1_ms,
            d_rs_ms: first.d_rs_ms,
            b_rlc_mb: first.b_rlc_mb,
            d_info_ms: first.d_info_ms,
            pairs: pairs.len() as u64,
            goodput_gain: pg / bg,
            latency_reduction: bl / pl,
        });
    }
    SweepSummary { configs, gains }
}

/// Id of the NewReno cell that shares every other axis value with `id`.
fn baseline_id(id: &str) -> String {
    id.split(';')
        .map(|kv| match kv.split_once('=') {
            Some(("transport", _)) => "transport=newreno".to_string(),
            _ => kv.to_string(),
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Plot series name: the config id with the delay axes removed.
fn series_name(id: &str) -> String {
    let s: Vec<&str> = id
        .split(';')
        .filter(|kv| !kv.starts_with("d_rs_ms=") && !kv.starts_with("d_s1_ms="))
        .collect();
    if s.is_empty() {
        "base".to_string()
    } else {
        s.join(";")
    }
}

fn header_of<T: Serialize + Default>() -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(T::default()).expect("default row serializes");
    let buf = w.into_inner().expect("in-memory writer");
    let end = buf.iter().position(|&b| b == b'\n').expect("header line");
    buf[..=end].to_vec()
}

/// Write `rows` with a header, even when there are no rows.
pub fn write_csv_to<W: Write, T: Serialize + Default>(mut out: W, rows: &[T]) -> Result<()> {
    out.write_all(&header_of::<T>())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize + Default>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_to(io::BufWriter::new(fs::File::create(path)?), rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_runs_csv(path: &Path, rows: &[RunRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>> {
    read_csv(path)
}

/// Write `runs.csv`, `summary.csv`, `gains.csv` and, if any, `failures.csv`.
pub fn write_sweep(dir: &Path, out: &SweepOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let runs = dir.join("runs.csv");
    write_runs_csv(&runs, &out.rows)?;
    written.push(runs);
    let summary = dir.join("summary.csv");
    write_csv(&summary, &out.summary.configs)?;
    written.push(summary);
    let gains = dir.join("gains.csv");
    write_csv(&gains, &out.summary.gains)?;
    written.push(gains);
    if !out.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_csv(&failures, &out.failures)?;
        written.push(failures);
    }
    Ok(written)
}

/// One point of a plot series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    /// One-way fixed-network latency `D_S1 + D_RS`, ms.
    pub x_ms: f64,
    pub mean: f64,
    pub ci95: f64,
}

/// Goodput (Mbit/s) and RAN latency (ms) points, one series per config
/// with the delay axes collapsed onto x.
pub fn plot_points(summary: &SweepSummary) -> (Vec<PlotPoint>, Vec<PlotPoint>) {
    let mut goodput = Vec::new();
    let mut latency = Vec::new();
    for c in &summary.configs {
        let series = series_name(&c.config_id);
        let x_ms = c.d_s1_ms + c.d_rs_ms;
        goodput.push(PlotPoint {
            series: series.clone(),
            x_ms,
            mean: c.goodput_mean_bps / 1e6,
            ci95: c.goodput_ci95_bps / 1e6,
        });
        latency.push(PlotPoint {
            series,
            x_ms,
            mean: c.latency_mean_us / 1e3,
            ci95: c.latency_ci95_us / 1e3,
        });
    }
    let key = |p: &PlotPoint| (p.series.clone(), (p.x_ms * 1e6) as i64);
    goodput.sort_by_key(key);
    latency.sort_by_key(key);
    (goodput, latency)
}

/// Write `goodput.csv` and `latency.csv` plot data into `dir`.
pub fn emit_plots(summary: &SweepSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (goodput, latency) = plot_points(summary);
    let g = dir.join("goodput.csv");
    let l = dir.join("latency.csv");
    write_csv(&g, &goodput)?;
    write_csv(&l, &latency)?;
    Ok(vec![g, l])
}
