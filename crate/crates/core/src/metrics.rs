//! Run reports and the headline metric: the share of delivered bytes the
//! server did not have to carry over 3G.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};
use crate::model::{NodeId, PieceId, Source};
use crate::radio::Position;
use crate::scenario::{Mode, Scenario, SCHEMA_VERSION};
use crate::scheduler::{Audit, ScheduleDecision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub at: f64,
    pub requester: NodeId,
    pub piece: PieceId,
    pub source: Source,
    pub audit: Audit,
}

impl DecisionRecord {
    pub fn new(at: f64, d: &ScheduleDecision) -> Self {
        DecisionRecord {
            at,
            requester: d.requester,
            piece: d.piece,
            source: d.source,
            audit: d.audit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub id: u64,
    pub source: Source,
    pub dest: NodeId,
    pub piece: PieceId,
    /// When the scheduling decision was taken.
    pub decided_at: f64,
    pub started: f64,
    pub finished: f64,
    pub bytes: u64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub position: Position,
    pub joined_at: f64,
    pub bytes_from_server: u64,
    pub bytes_from_peers: u64,
    pub startup_delay_s: Option<f64>,
    pub stall_count: u32,
    pub stall_total_s: f64,
    pub completed: bool,
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub server_bytes: u64,
    pub peer_bytes: u64,
    pub improvement: Option<f64>,
    pub run_duration_s: f64,
    pub truncated: bool,
    pub nodes_completed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub scenario: Scenario,
    pub global: GlobalMetrics,
    pub nodes: Vec<NodeMetrics>,
    /// Ad-hoc groups as of the end of the run.
    pub groups: Vec<Vec<NodeId>>,
    pub decisions: Vec<DecisionRecord>,
    pub transfers: Vec<TransferRecord>,
}

/// `peer / (server + peer)`; absent when nothing was delivered.
pub fn improvement_from_bytes(server_bytes: u64, peer_bytes: u64) -> Option<f64> {
    let total = server_bytes + peer_bytes;
    (total > 0).then(|| peer_bytes as f64 / total as f64)
}

/// Fraction of delivered bytes that did not come from the server. Equals
/// the saving against the server-only baseline, which carries everything.
pub fn improvement(report: &Report) -> Option<f64> {
    improvement_from_bytes(report.global.server_bytes, report.global.peer_bytes)
}

impl Report {
    pub fn new(
        scenario: Scenario,
        nodes: Vec<NodeMetrics>,
        groups: Vec<Vec<NodeId>>,
        decisions: Vec<DecisionRecord>,
        transfers: Vec<TransferRecord>,
        run_duration_s: f64,
        truncated: bool,
    ) -> Self {
        let server_bytes = nodes.iter().map(|n| n.bytes_from_server).sum();
        let peer_bytes = nodes.iter().map(|n| n.bytes_from_peers).sum();
        let global = GlobalMetrics {
            server_bytes,
            peer_bytes,
            improvement: improvement_from_bytes(server_bytes, peer_bytes),
            run_duration_s,
            truncated,
            nodes_completed: nodes.iter().filter(|n| n.completed).count() as u32,
        };
        Report {
            schema_version: SCHEMA_VERSION,
            mode: scenario.mode,
            seed: scenario.seed,
            scenario,
            global,
            nodes,
            groups,
            decisions,
            transfers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| MoviError::Json {
            context: "report".into(),
            source,
        })
    }

    pub fn mean_startup_delay(&self) -> Option<f64> {
        mean(self.nodes.iter().filter_map(|n| n.startup_delay_s))
    }

    pub fn mean_stall_total(&self) -> Option<f64> {
        mean(self.nodes.iter().map(|n| n.stall_total_s))
    }

    /// Writes the flat per-node table.
    pub fn write_nodes_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for n in &self.nodes {
            w.serialize(NodeRow::from(n))?;
        }
        w.flush().map_err(|source| MoviError::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }
}

#[derive(Serialize)]
struct NodeRow {
    node: u32,
    x: f64,
    y: f64,
    joined_at: f64,
    bytes_from_server: u64,
    bytes_from_peers: u64,
    startup_delay_s: Option<f64>,
    stall_count: u32,
    stall_total_s: f64,
    completed: bool,
}

impl From<&NodeMetrics> for NodeRow {
    fn from(n: &NodeMetrics) -> Self {
        NodeRow {
            node: n.node.0,
            x: n.position.x,
            y: n.position.y,
            joined_at: n.joined_at,
            bytes_from_server: n.bytes_from_server,
            bytes_from_peers: n.bytes_from_peers,
            startup_delay_s: n.startup_delay_s,
            stall_count: n.stall_count,
            stall_total_s: n.stall_total_s,
            completed: n.completed,
        }
    }
}

pub fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Byte totals re-derived from the transfer log alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub server_bytes: u64,
    pub peer_bytes: u64,
    pub improvement: Option<f64>,
    pub per_node: BTreeMap<NodeId, (u64, u64)>,
    pub peer_decisions: usize,
    pub server_decisions: usize,
}

pub fn summarize_logs(decisions: &[DecisionRecord], transfers: &[TransferRecord]) -> LogSummary {
    let mut per_node: BTreeMap<NodeId, (u64, u64)> = BTreeMap::new();
    let (mut server_bytes, mut peer_bytes) = (0, 0);
    for t in transfers {
        let entry = per_node.entry(t.dest).or_default();
        match t.source {
            Source::Server => {
                server_bytes += t.bytes;
                entry.0 += t.bytes;
            }
            Source::Peer(_) => {
                peer_bytes += t.bytes;
                entry.1 += t.bytes;
            }
        }
    }
    let peer_decisions = decisions
        .iter()
        .filter(|d| d.source.peer().is_some())
        .count();
    LogSummary {
        server_bytes,
        peer_bytes,
        improvement: improvement_from_bytes(server_bytes, peer_bytes),
        per_node,
        peer_decisions,
        server_decisions: decisions.len() - peer_decisions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub server_bytes: u64,
    pub peer_bytes: u64,
    pub improvement: Option<f64>,
    pub mean_startup_delay_s: Option<f64>,
    pub mean_stall_total_s: Option<f64>,
    pub truncated: bool,
}

impl From<&Report> for Summary {
    fn from(r: &Report) -> Self {
        Summary {
            mode: r.mode,
            seed: r.seed,
            server_bytes: r.global.server_bytes,
            peer_bytes: r.global.peer_bytes,
            improvement: r.global.improvement,
            mean_startup_delay_s: r.mean_startup_delay(),
            mean_stall_total_s: r.mean_stall_total(),
            truncated: r.global.truncated,
        }
    }
}

/// `candidate - baseline` for each compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub server_bytes: i64,
    pub improvement: Option<f64>,
    pub mean_startup_delay_s: Option<f64>,
    pub mean_stall_total_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Summary,
    pub candidate: Summary,
    pub delta: Delta,
    pub baseline_scenario: Scenario,
    pub candidate_scenario: Scenario,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Side-by-side summary of two runs of the same scenario (modes may
/// differ).
pub fn compare(baseline: &Report, candidate: &Report) -> Result<Comparison> {
    let mut a = baseline.scenario.clone();
    let mut b = candidate.scenario.clone();
    a.mode = Mode::P2p;
    b.mode = Mode::P2p;
    if a != b {
        return Err(MoviError::input(
            "compare: reports come from different scenarios (beyond mode)",
        ));
    }
    let sa = Summary::from(baseline);
    let sb = Summary::from(candidate);
    let delta = Delta {
        server_bytes: sb.server_bytes as i64 - sa.server_bytes as i64,
        improvement: diff(sa.improvement, sb.improvement),
        mean_startup_delay_s: diff(sa.mean_startup_delay_s, sb.mean_startup_delay_s),
        mean_stall_total_s: diff(sa.mean_stall_total_s, sb.mean_stall_total_s),
    };
    Ok(Comparison {
        baseline: sa,
        candidate: sb,
        delta,
        baseline_scenario: baseline.scenario.clone(),
        candidate_scenario: candidate.scenario.clone(),
    })
}
