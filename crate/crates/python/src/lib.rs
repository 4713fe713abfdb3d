#![allow(clippy::useless_conversion)] // false positive from the pyo3 0.22 macros

//! Python bindings for the movi simulator.
//!
//!     import movi
//!     s = movi.Scenario(node_count=10, seed=1)
//!     r = s.run()
//!     print(r.improvement)

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use movi_core::discovery::{addr_meta, ConnectivityUpdate, WIFI_FREQUENCY_MHZ};
use movi_core::model::{NeighborRecord, NodeId, PieceId, Source};
use movi_core::radio::{self, Position, RadioParams};
use movi_core::scheduler::{ScheduleDecision, ServerState as CoreServer};
use movi_core::trust::{TrustEvaluation, TrustState as CoreTrust};
use movi_core::{cli, metrics, sim, Mode, MoviError};

fn to_py(e: MoviError) -> PyErr {
    match e {
        MoviError::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
        MoviError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import_bound("json")?.call_method1("loads", (text,))
}

/// A simulation scenario. The default constructor builds the flash-crowd
/// scenario: nodes in a 50 m square joining over 120 s.
#[pyclass(module = "movi")]
#[derive(Clone)]
struct Scenario {
    inner: movi_core::Scenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (node_count=30, seed=0))]
    fn new(node_count: u32, seed: u64) -> PyResult<Self> {
        let inner = movi_core::Scenario::flash_crowd(node_count, seed);
        inner.validate().map_err(to_py)?;
        Ok(Scenario { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = movi_core::Scenario::from_json(text).map_err(to_py)?;
        Ok(Scenario { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = movi_core::Scenario::load(&path).map_err(to_py)?;
        Ok(Scenario { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    #[getter]
    fn node_count(&self) -> u32 {
        self.inner.node_count
    }

    #[setter]
    fn set_node_count(&mut self, n: u32) {
        self.inner.node_count = n;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    /// "p2p" or "server-only".
    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = match mode {
            "p2p" => Mode::P2p,
            "server-only" => Mode::ServerOnly,
            _ => return Err(PyValueError::new_err(format!("unknown mode {mode:?}"))),
        };
        Ok(())
    }

    #[getter]
    fn piece_count(&self) -> u32 {
        self.inner.video.piece_count
    }

    #[setter]
    fn set_piece_count(&mut self, n: u32) {
        self.inner.video.piece_count = n;
    }

    #[getter]
    fn report_interval_s(&self) -> f64 {
        self.inner.timers.report_s
    }

    #[setter]
    fn set_report_interval_s(&mut self, s: f64) {
        self.inner.timers.report_s = s;
    }

    /// Runs the scenario. The GIL is released while the simulation runs.
    fn run(&self, py: Python<'_>) -> PyResult<Report> {
        let scenario = self.inner.clone();
        let inner = py.allow_threads(|| sim::run(&scenario)).map_err(to_py)?;
        Ok(Report { inner })
    }

    /// Runs server-only and P2P with the same seed; returns the comparison
    /// as a dict.
    fn compare<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let scenario = self.inner.clone();
        let cmp = py
            .allow_threads(|| cli::compare_modes(&scenario))
            .map_err(to_py)?;
        let text = serde_json::to_string(&cmp).expect("comparison serializes");
        json_value(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(node_count={}, seed={}, mode={:?})",
            self.inner.node_count,
            self.inner.seed,
            self.inner.mode.to_string()
        )
    }
}

/// Result of one run.
#[pyclass(module = "movi")]
struct Report {
    inner: metrics::Report,
}

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = metrics::Report::from_json(text).map_err(to_py)?;
        Ok(Report { inner })
    }

    /// Fraction of delivered bytes carried by peers; None if nothing moved.
    #[getter]
    fn improvement(&self) -> Option<f64> {
        self.inner.global.improvement
    }

    #[getter]
    fn server_bytes(&self) -> u64 {
        self.inner.global.server_bytes
    }

    #[getter]
    fn peer_bytes(&self) -> u64 {
        self.inner.global.peer_bytes
    }

    #[getter]
    fn truncated(&self) -> bool {
        self.inner.global.truncated
    }

    #[getter]
    fn run_duration_s(&self) -> f64 {
        self.inner.global.run_duration_s
    }

    #[getter]
    fn mean_startup_delay_s(&self) -> Option<f64> {
        self.inner.mean_startup_delay()
    }

    #[getter]
    fn mean_stall_total_s(&self) -> Option<f64> {
        self.inner.mean_stall_total()
    }

    #[getter]
    fn decision_count(&self) -> usize {
        self.inner.decisions.len()
    }

    /// Per-node metrics as a list of dicts.
    fn nodes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.nodes).expect("nodes serialize");
        json_value(py, &text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        let improvement = self
            .inner
            .global
            .improvement
            .map_or_else(|| "None".to_string(), |f| f.to_string());
        format!(
            "Report(mode={:?}, server_bytes={}, peer_bytes={}, improvement={improvement})",
            self.inner.mode.to_string(),
            self.inner.global.server_bytes,
            self.inner.global.peer_bytes,
        )
    }
}

/// Server-side trust map: evaluations, mean trust per node, blacklist.
#[pyclass(module = "movi")]
#[derive(Clone)]
struct TrustState {
    inner: CoreTrust,
}

#[pymethods]
impl TrustState {
    #[new]
    #[pyo3(signature = (threshold=0.5, default_trust=1.0, sticky_blacklist=false))]
    fn new(threshold: f64, default_trust: f64, sticky_blacklist: bool) -> Self {
        TrustState {
            inner: CoreTrust::new(threshold, default_trust).with_sticky_blacklist(sticky_blacklist),
        }
    }

    #[pyo3(signature = (evaluator, subject, value, at=0.0))]
    fn record(&mut self, evaluator: u32, subject: u32, value: f64, at: f64) -> PyResult<()> {
        self.inner
            .record_evaluation(TrustEvaluation {
                at,
                evaluator: NodeId(evaluator),
                subject: NodeId(subject),
                value,
            })
            .map_err(to_py)
    }

    fn trust_of(&self, node: u32) -> f64 {
        self.inner.trust_of(NodeId(node))
    }

    fn is_schedulable(&self, node: u32) -> bool {
        self.inner.is_schedulable(NodeId(node))
    }

    #[getter]
    fn blacklist(&self) -> Vec<u32> {
        self.inner.blacklist().iter().map(|n| n.0).collect()
    }
}

/// Outcome of one scheduling decision.
#[pyclass(module = "movi", get_all)]
struct Decision {
    /// Peer id, or None when the server delivers.
    peer: Option<u32>,
    /// Survivors after each stage: neighbors, have piece, trusted, rssi, idle.
    stages: (u32, u32, u32, u32, u32),
    winning_rbt: Option<f64>,
}

impl From<ScheduleDecision> for Decision {
    fn from(d: ScheduleDecision) -> Self {
        let s = d.audit.stages.as_array();
        Decision {
            peer: match d.source {
                Source::Peer(p) => Some(p.0),
                Source::Server => None,
            },
            stages: (s[0], s[1], s[2], s[3], s[4]),
            winning_rbt: d.audit.winning_rbt,
        }
    }
}

#[pymethods]
impl Decision {
    fn __repr__(&self) -> String {
        match self.peer {
            Some(p) => format!("Decision(peer={p}, stages={:?})", self.stages),
            None => format!("Decision(server, stages={:?})", self.stages),
        }
    }
}

/// The scheduler's view of the network, built up by hand.
#[pyclass(module = "movi")]
struct ServerState {
    inner: CoreServer,
}

#[pymethods]
impl ServerState {
    #[new]
    #[pyo3(signature = (piece_count, trust=None, rssi_threshold_dbm=-75.0))]
    fn new(piece_count: u32, trust: Option<TrustState>, rssi_threshold_dbm: f64) -> Self {
        let trust = trust.map(|t| t.inner).unwrap_or_default();
        ServerState {
            inner: CoreServer::new(piece_count, trust, rssi_threshold_dbm),
        }
    }

    fn register(&mut self, node: u32) {
        self.inner.register(NodeId(node));
    }

    /// Replaces `node`'s neighbour list with `(neighbor, rssi_dbm)` pairs.
    fn set_neighbors(&mut self, node: u32, neighbors: Vec<(u32, f64)>) -> PyResult<()> {
        let mut entries: Vec<NeighborRecord> = neighbors
            .into_iter()
            .map(|(n, rssi)| NeighborRecord {
                neighbor: NodeId(n),
                rssi_dbm: rssi,
                frequency_mhz: WIFI_FREQUENCY_MHZ,
                addr_meta: addr_meta(NodeId(n)),
                last_seen: 0.0,
            })
            .collect();
        entries.sort_by_key(|r| r.neighbor);
        self.inner
            .apply_connectivity_update(ConnectivityUpdate {
                node: NodeId(node),
                entries,
                at: 0.0,
            })
            .map_err(to_py)
    }

    fn add_piece(&mut self, node: u32, piece: u32) -> PyResult<()> {
        self.inner
            .apply_content_update(NodeId(node), PieceId(piece))
            .map_err(to_py)
    }

    fn set_rbt(&mut self, node: u32, rbt: f64) {
        self.inner.apply_rbt_report(NodeId(node), rbt);
    }

    #[pyo3(signature = (evaluator, subject, value, at=0.0))]
    fn record_trust(&mut self, evaluator: u32, subject: u32, value: f64, at: f64) -> PyResult<()> {
        self.inner
            .trust
            .record_evaluation(TrustEvaluation {
                at,
                evaluator: NodeId(evaluator),
                subject: NodeId(subject),
                value,
            })
            .map_err(to_py)
    }

    fn mark_busy(&mut self, node: u32) -> PyResult<()> {
        self.inner.mark_busy(NodeId(node)).map_err(to_py)
    }

    fn mark_idle(&mut self, node: u32) -> PyResult<()> {
        self.inner.mark_idle(NodeId(node)).map_err(to_py)
    }

    fn schedule_piece(&self, requester: u32, piece: u32) -> PyResult<Decision> {
        self.inner
            .schedule_piece(NodeId(requester), PieceId(piece))
            .map(Decision::from)
            .map_err(to_py)
    }
}

/// Path loss in dB at `distance_m` under the default radio model.
#[pyfunction]
fn path_loss(distance_m: f64) -> PyResult<f64> {
    radio::path_loss(distance_m, &RadioParams::default()).map_err(to_py)
}

/// RSSI in dBm between two points under the default radio model.
#[pyfunction]
fn rssi(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    let params = RadioParams::default();
    radio::rssi(&Position::new(a.0, a.1), &Position::new(b.0, b.1), &params).map_err(to_py)
}

/// Discovery range of the default radio model, metres.
#[pyfunction]
fn max_range_m() -> f64 {
    RadioParams::default().max_range_m()
}

#[pymodule]
fn movi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Report>()?;
    m.add_class::<TrustState>()?;
    m.add_class::<ServerState>()?;
    m.add_class::<Decision>()?;
    m.add_function(wrap_pyfunction!(path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rssi, m)?)?;
    m.add_function(wrap_pyfunction!(max_range_m, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
