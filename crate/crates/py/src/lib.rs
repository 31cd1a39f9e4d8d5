//! Python bindings: run configurations, single runs, sweeps, the flow-window
//! policies, the channel model and a standalone proxy instance.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use pyo3::IntoPyObjectExt;

use milliproxy::bus::CrossLayerSample;
use milliproxy::harness::{self, RunRow, SweepGrid};
use milliproxy::policy::{compute_window as policy_window, FlowWindowInput, PolicyConfig, PolicyKind, PolicyRegistry};
use milliproxy::proxy::{ProxyConfig, ProxyInstance};
use milliproxy::tcp::Segment;
use milliproxy::{Error, SimTime};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if obj.is_instance_of::<PyBool>() {
        Ok(toml::Value::Boolean(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(toml::Value::Integer(obj.extract()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(toml::Value::Float(obj.extract()?))
    } else if obj.is_instance_of::<PyString>() {
        Ok(toml::Value::String(obj.extract()?))
    } else if let Ok(items) = obj.extract::<Vec<Bound<'_, PyAny>>>() {
        Ok(toml::Value::Array(items.iter().map(to_value).collect::<PyResult<_>>()?))
    } else {
        Err(PyValueError::new_err(format!("unsupported value {obj}")))
    }
}

fn from_value<'py>(py: Python<'py>, v: &toml::Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        toml::Value::String(s) => s.into_bound_py_any(py),
        toml::Value::Integer(i) => i.into_bound_py_any(py),
        toml::Value::Float(f) => f.into_bound_py_any(py),
        toml::Value::Boolean(b) => b.into_bound_py_any(py),
        toml::Value::Datetime(d) => d.to_string().into_bound_py_any(py),
        toml::Value::Array(a) => {
            let items = a.iter().map(|x| from_value(py, x)).collect::<PyResult<Vec<_>>>()?;
            Ok(PyList::new(py, items)?.into_any())
        }
        toml::Value::Table(t) => {
            let d = PyDict::new(py);
            for (k, x) in t {
                d.set_item(k, from_value(py, x)?)?;
            }
            Ok(d.into_any())
        }
    }
}

/// Serialize a record into a dict; `None` fields come back as `None`.
fn record<'py, T: serde::Serialize>(py: Python<'py>, x: &T, optional: &[&str]) -> PyResult<Bound<'py, PyDict>> {
    let v = toml::Value::try_from(x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = from_value(py, &v)?.cast_into::<PyDict>()?;
    for k in optional {
        if !d.contains(*k)? {
            d.set_item(*k, py.None())?;
        }
    }
    Ok(d)
}

/// All parameters of one run, addressed by key like a dict.
#[pyclass(name = "RunConfig", module = "milliproxy", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: harness::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyRunConfig { inner: harness::RunConfig::default() };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.__setitem__(&k.extract::<String>()?, &v)?;
            }
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        harness::RunConfig::from_toml_str(text).map(|inner| PyRunConfig { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn keys() -> Vec<String> {
        harness::RunConfig::keys()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let keys = harness::RunConfig::keys();
        let optional: Vec<&str> = keys.iter().map(String::as_str).collect();
        record(py, &self.inner, &optional)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    fn __getitem__<'py>(&self, py: Python<'py>, key: &str) -> PyResult<Bound<'py, PyAny>> {
        if !harness::RunConfig::keys().iter().any(|k| k == key) {
            return Err(PyKeyError::new_err(key.to_string()));
        }
        let d = self.to_dict(py)?;
        Ok(d.get_item(key)?.expect("every key present"))
    }

    /// Setting `None` returns the key to its default.
    fn __setitem__(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        if value.is_none() {
            return self.inner.reset(key).map_err(py_err);
        }
        self.inner.set_value(key, to_value(value)?).map_err(py_err)
    }

    fn __delitem__(&mut self, key: &str) -> PyResult<()> {
        self.inner.reset(key).map_err(py_err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(transport={:?}, seed={}, d_s1_ms={}, d_rs_ms={}, b_rlc_mb={})",
            self.inner.transport.as_str(),
            self.inner.seed,
            self.inner.d_s1_ms,
            self.inner.d_rs_ms,
            self.inner.b_rlc_mb
        )
    }
}

/// Run one configuration and return its metrics as a dict. With `trace_dir`,
/// per-slot, sender, proxy and cross-layer traces are written there as CSV.
#[pyfunction]
#[pyo3(signature = (config, trace_dir = None))]
fn run_one<'py>(py: Python<'py>, config: &PyRunConfig, trace_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let tracing = trace_dir.is_some();
    let (m, traces) = py.detach(move || harness::run_traced(&cfg, tracing)).map_err(py_err)?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(&dir).map_err(|e| py_err(e.into()))?;
        harness::write_traces(&dir, &traces).map_err(py_err)?;
    }
    record(py, &m, &["digest_ok"])
}

/// Run every combination of `axes` (key -> list of values) over `seeds`
/// (a count or an explicit list). Returns rows, per-config summaries, paired
/// gains and failures.
#[pyfunction]
#[pyo3(signature = (base, axes = None, seeds = None, out_dir = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    base: &PyRunConfig,
    axes: Option<&Bound<'py, PyDict>>,
    seeds: Option<&Bound<'py, PyAny>>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut grid = SweepGrid::new(base.inner.clone());
    if let Some(axes) = axes {
        for (k, v) in axes.iter() {
            let values = match to_value(&v)? {
                toml::Value::Array(a) => a,
                other => vec![other],
            };
            grid = grid.axis(&k.extract::<String>()?, values).map_err(py_err)?;
        }
    }
    if let Some(s) = seeds {
        grid = match s.extract::<u64>() {
            Ok(n) => grid.with_seed_count(n),
            Err(_) => grid.with_seeds(s.extract::<Vec<u64>>()?),
        };
    }
    let out = py.detach(move || harness::run_sweep(&grid)).map_err(py_err)?;
    if let Some(dir) = out_dir {
        harness::write_sweep(&dir, &out).map_err(py_err)?;
        harness::emit_plots(&out.summary, &dir).map_err(py_err)?;
    }
    let d = PyDict::new(py);
    let rows = out.rows.iter().map(|r: &RunRow| record(py, r, &["digest_ok"])).collect::<PyResult<Vec<_>>>()?;
    d.set_item("rows", rows)?;
    let configs = out.summary.configs.iter().map(|c| record(py, c, &[])).collect::<PyResult<Vec<_>>>()?;
    d.set_item("configs", configs)?;
    let gains = out.summary.gains.iter().map(|g| record(py, g, &[])).collect::<PyResult<Vec<_>>>()?;
    d.set_item("gains", gains)?;
    let failures = out.failures.iter().map(|f| record(py, f, &[])).collect::<PyResult<Vec<_>>>()?;
    d.set_item("failures", failures)?;
    Ok(d)
}

fn policy_kind(name: &str) -> PyResult<PolicyKind> {
    match name {
        "bdp" => Ok(PolicyKind::Bdp),
        "conservative_bdp" => Ok(PolicyKind::ConservativeBdp),
        "fixed" => Ok(PolicyKind::Fixed),
        other => Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
    }
}

/// Flow window in bytes for one set of cross-layer inputs.
#[pyfunction]
#[pyo3(signature = (policy, rtt_min_us, rate_bps, rlc_occupancy = 0, init_window = None, buffer_threshold = None, fixed_value = None))]
fn compute_window(
    policy: &str,
    rtt_min_us: Option<u64>,
    rate_bps: u64,
    rlc_occupancy: u64,
    init_window: Option<u64>,
    buffer_threshold: Option<u64>,
    fixed_value: Option<u64>,
) -> PyResult<u64> {
    let kind = policy_kind(policy)?;
    let mut cfg = PolicyConfig::with_kind(kind);
    if let Some(v) = init_window {
        cfg.init_window = v;
    }
    if let Some(v) = buffer_threshold {
        cfg.buffer_threshold = v;
    }
    if let Some(v) = fixed_value {
        cfg.fixed_value = v;
    }
    let input = FlowWindowInput {
        rtt_min: rtt_min_us.map(SimTime),
        rate_bps,
        rlc_occupancy,
        ..Default::default()
    };
    Ok(policy_window(kind, &cfg, &input))
}

/// Link state and PHY rate at `t_us` for the scenario described by `config`.
#[pyfunction]
fn channel_state(config: &PyRunConfig, t_us: u64) -> PyResult<(String, u64)> {
    let sc = config.inner.scenario().map_err(py_err)?;
    let st = sc.channel_state_at(SimTime(t_us), &config.inner.rates());
    Ok((st.label.as_str().to_string(), st.phy_rate))
}

/// Obstacles of the configured scenario as `(x_min, y_min, x_max, y_max)`.
#[pyfunction]
fn obstacles(config: &PyRunConfig) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let sc = config.inner.scenario().map_err(py_err)?;
    Ok(sc.obstacles.iter().map(|r| (r.x_min, r.y_min, r.x_max, r.y_max)).collect())
}

type Upstream = Vec<(u64, u64, u64)>;
type Downstream = Vec<(u64, u32, u64)>;

fn upstream(v: Vec<Segment>) -> Upstream {
    v.into_iter().map(|a| (a.ack_no, a.adv_window, a.ts_echo.as_micros())).collect()
}

fn downstream(v: Vec<Segment>) -> Downstream {
    v.into_iter().map(|s| (s.seq, s.len, s.ts_val.as_micros())).collect()
}

/// A single proxy instance driven by hand. Times are microseconds.
///
/// Upstream ACKs are `(ack_no, adv_window, ts_echo)`; segments toward the UE
/// are `(seq, length, ts_val)`.
#[pyclass(name = "Proxy", module = "milliproxy", unsendable)]
struct PyProxy {
    inner: ProxyInstance,
}

#[pymethods]
impl PyProxy {
    #[new]
    #[pyo3(signature = (buffer_capacity = None, mss1 = None, mss2 = None, policy = "bdp", flush_timeout_us = None))]
    fn new(
        buffer_capacity: Option<u64>,
        mss1: Option<u32>,
        mss2: Option<u32>,
        policy: &str,
        flush_timeout_us: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg = ProxyConfig::default();
        if let Some(v) = buffer_capacity {
            cfg.buffer_capacity = v;
        }
        if let Some(v) = mss1 {
            cfg.mss1 = v;
        }
        if let Some(v) = mss2 {
            cfg.mss2 = v;
        }
        if let Some(v) = flush_timeout_us {
            cfg.flush_timeout = SimTime(v);
        }
        cfg.policy.kind = policy.to_string();
        let inner = ProxyInstance::new(cfg, &PolicyRegistry::default()).map_err(py_err)?;
        Ok(PyProxy { inner })
    }

    /// Accept a server segment; returns an upstream ACK only for a probe
    /// against a zero window.
    fn intercept(&mut self, seq: u64, length: u32, ts_val: u64, ts_echo: u64, now: u64) -> PyResult<Option<(u64, u64, u64)>> {
        if length == 0 {
            return Err(PyValueError::new_err("length must be positive"));
        }
        let seg = Segment::data(seq, length, SimTime(ts_val), SimTime(ts_echo));
        Ok(self.inner.intercept_data(&seg, SimTime(now)).map(|a| (a.ack_no, a.adv_window, a.ts_echo.as_micros())))
    }

    /// Aggregate buffered data and forward what the flow window allows.
    fn forward(&mut self, now: u64) -> Downstream {
        let mut out = Vec::new();
        self.inner.aggregate_and_forward(SimTime(now), &mut out);
        downstream(out)
    }

    fn next_deadline(&self) -> Option<u64> {
        self.inner.next_deadline().map(SimTime::as_micros)
    }

    fn on_timer(&mut self, now: u64) -> Downstream {
        let mut out = Vec::new();
        self.inner.on_timer(SimTime(now), &mut out);
        downstream(out)
    }

    fn ue_ack(&mut self, ack_no: u64, ts_val: u64, ts_echo: u64, now: u64) -> (Upstream, Downstream) {
        let (mut up, mut down) = (Vec::new(), Vec::new());
        let ack = Segment::ack(ack_no, u64::MAX, SimTime(ts_val), SimTime(ts_echo));
        self.inner.on_ue_ack(&ack, SimTime(now), &mut up, &mut down);
        (upstream(up), downstream(down))
    }

    fn cross_layer(&mut self, rate_bps: u64, rlc_occupancy: u64, now: u64) -> (Upstream, Downstream) {
        let (mut up, mut down) = (Vec::new(), Vec::new());
        let sample = CrossLayerSample {
            taken_at: SimTime(now),
            delivered_at: SimTime(now),
            rlc_occupancy,
            rate_bps,
            outage: false,
        };
        self.inner.on_cross_layer(sample, SimTime(now), &mut up, &mut down);
        (upstream(up), downstream(down))
    }

    #[getter]
    fn flow_window(&self) -> u64 {
        self.inner.flow_window()
    }
    #[getter]
    fn advertised_window(&self) -> u64 {
        self.inner.advertised_window()
    }
    #[getter]
    fn occupancy(&self) -> u64 {
        self.inner.occupancy()
    }
    #[getter]
    fn ue_acked(&self) -> u64 {
        self.inner.ue_acked()
    }
    #[getter]
    fn relayed_ack(&self) -> u64 {
        self.inner.relayed_ack()
    }
    #[getter]
    fn rtt_min_us(&self) -> Option<u64> {
        self.inner.rtt().rtt_min().map(SimTime::as_micros)
    }
}

#[pymodule]
#[pyo3(name = "milliproxy")]
fn milliproxy_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyProxy>()?;
    m.add_function(wrap_pyfunction!(run_one, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(compute_window, m)?)?;
    m.add_function(wrap_pyfunction!(channel_state, m)?)?;
    m.add_function(wrap_pyfunction!(obstacles, m)?)?;
    m.add("MB", milliproxy::policy::MB)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
