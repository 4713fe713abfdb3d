//! Independent oracles shared by the integration suites. Nothing here
//! calls into the scheduler or the playout model's own derived quantities;
//! each check re-derives its answer from raw state or from the logs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use movi_core::client::PlayoutState;
use movi_core::metrics::Report;
use movi_core::model::{NodeId, PieceId, Source, VideoSpec};
use movi_core::scenario::Mode;
use movi_core::scheduler::{ScheduleDecision, ServerState};
use movi_core::sim::Observer;

/// Scan-forward RBT: walk piece by piece from the playhead while pieces
/// are held, and measure how far we got.
pub fn scan_forward_rbt(client: &PlayoutState, video: &VideoSpec) -> f64 {
    let pd = video.piece_duration();
    let start = client.playhead();
    let mut t = start;
    loop {
        let idx = (t / pd + 1e-9).floor() as u32;
        if idx >= video.piece_count || !client.held().contains(&PieceId(idx)) {
            break;
        }
        t = (idx + 1) as f64 * pd;
    }
    (t - start).max(0.0)
}

fn mean_trust(state: &ServerState, node: NodeId) -> Option<f64> {
    let vals: Vec<f64> = state
        .trust
        .evaluations()
        .iter()
        .filter(|e| e.subject == node)
        .map(|e| e.value)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// The five stage predicates, evaluated from raw state.
pub fn qualifies(
    state: &ServerState,
    requester: NodeId,
    candidate: NodeId,
    piece: PieceId,
) -> bool {
    let Some(rec) = state
        .connectivity
        .neighbors(requester)
        .iter()
        .find(|r| r.neighbor == candidate)
    else {
        return false;
    };
    let holds = state
        .content
        .holdings(candidate)
        .is_some_and(|h| h.contains(&piece));
    let trust = mean_trust(state, candidate).unwrap_or(state.trust.default_trust());
    let trusted = trust >= state.trust.threshold() && !state.trust.blacklist().contains(&candidate);
    let audible = rec.rssi_dbm >= state.rssi_threshold_dbm;
    let idle = !state.busy().contains(&candidate);
    holds && trusted && audible && idle
}

/// Re-verifies one live decision against the snapshot it was made on.
pub fn verify_decision(state: &ServerState, d: &ScheduleDecision) -> Result<(), String> {
    if !d.audit.stages.is_monotone() {
        return Err(format!("non-monotone audit {:?}", d.audit.stages));
    }
    let qualified: Vec<NodeId> = state
        .connectivity
        .neighbors(d.requester)
        .iter()
        .map(|r| r.neighbor)
        .filter(|&c| qualifies(state, d.requester, c, d.piece))
        .collect();
    match d.source {
        Source::Server => {
            if !qualified.is_empty() {
                return Err(format!(
                    "{} for {} went to the server although {:?} qualified",
                    d.requester, d.piece, qualified
                ));
            }
        }
        Source::Peer(p) => {
            if !qualified.contains(&p) {
                return Err(format!(
                    "{p} chosen for {} but fails a stage predicate",
                    d.requester
                ));
            }
            if state.trust.blacklist().contains(&p) {
                return Err(format!("blacklisted {p} chosen"));
            }
            let chosen = state.rbt_of(p);
            if let Some(better) = qualified.iter().find(|&&c| state.rbt_of(c) > chosen) {
                return Err(format!("{better} has larger RBT than chosen {p}"));
            }
            if let Some(lower) = qualified
                .iter()
                .find(|&&c| state.rbt_of(c) == chosen && c < p)
            {
                return Err(format!("tie with {lower} should have gone to the lower id"));
            }
        }
    }
    Ok(())
}

/// Observer that audits every decision and every client report live.
#[derive(Default)]
pub struct Audit {
    /// Server-only runs bypass the pipeline; their decisions are not
    /// re-verified against the predicates.
    pub server_only: bool,
    pub violations: Vec<String>,
    pub peer_decisions: usize,
    pub server_decisions: usize,
    pub reports_checked: usize,
    pub blacklisted_sources: BTreeMap<NodeId, usize>,
}

impl Audit {
    pub fn for_mode(mode: Mode) -> Self {
        Audit {
            server_only: mode == Mode::ServerOnly,
            ..Audit::default()
        }
    }
}

impl Observer for Audit {
    fn on_decision(&mut self, at: f64, state: &ServerState, d: &ScheduleDecision) {
        match d.source {
            Source::Peer(_) => self.peer_decisions += 1,
            Source::Server => self.server_decisions += 1,
        }
        if let Source::Peer(p) = d.source {
            if state.trust.blacklist().contains(&p) {
                *self.blacklisted_sources.entry(p).or_default() += 1;
            }
        }
        if self.server_only {
            if d.source != Source::Server {
                self.violations
                    .push(format!("t={at:.6}: peer source in a server-only run"));
            }
            return;
        }
        if let Err(e) = verify_decision(state, d) {
            self.violations.push(format!("t={at:.6}: {e}"));
        }
    }

    fn on_report(&mut self, at: f64, client: &PlayoutState, video: &VideoSpec, rbt: f64) {
        self.reports_checked += 1;
        let oracle = scan_forward_rbt(client, video);
        if (oracle - rbt).abs() > 1e-9 {
            self.violations.push(format!(
                "t={at:.6}: {} reported rbt {rbt} but oracle says {oracle}",
                client.node
            ));
        }
    }
}

/// Audits that need only the finished report.
pub fn audit_report(report: &Report) -> Vec<String> {
    let mut bad = Vec::new();
    let s = &report.scenario;
    let video = s.video;

    // Half-duplex: no node in two overlapping transfers.
    let mut spans: BTreeMap<NodeId, Vec<(f64, f64)>> = BTreeMap::new();
    for t in &report.transfers {
        spans
            .entry(t.dest)
            .or_default()
            .push((t.started, t.finished));
        if let Source::Peer(p) = t.source {
            spans.entry(p).or_default().push((t.started, t.finished));
        }
    }
    for (node, list) in &mut spans {
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in list.windows(2) {
            if w[1].0 < w[0].1 - 1e-12 {
                bad.push(format!(
                    "{node} in overlapping transfers {:?} and {:?}",
                    w[0], w[1]
                ));
            }
        }
    }

    // Source validity: a peer source finished receiving the piece before the
    // decision that named it.
    let mut got: BTreeMap<(NodeId, PieceId), f64> = BTreeMap::new();
    for t in &report.transfers {
        got.insert((t.dest, t.piece), t.finished);
    }
    for t in &report.transfers {
        if let Source::Peer(p) = t.source {
            match got.get(&(p, t.piece)) {
                Some(&when) if when <= t.decided_at => {}
                other => bad.push(format!(
                    "{p} served {} to {} at {} but received it at {:?}",
                    t.piece, t.dest, t.decided_at, other
                )),
            }
        }
    }

    // In-order: each node's requested pieces strictly increase.
    let mut last: BTreeMap<NodeId, PieceId> = BTreeMap::new();
    for d in &report.decisions {
        if let Some(prev) = last.insert(d.requester, d.piece) {
            if d.piece <= prev {
                bad.push(format!(
                    "{} requested {} after {}",
                    d.requester, d.piece, prev
                ));
            }
        }
        if !d.audit.stages.is_monotone() {
            bad.push(format!("non-monotone audit in log at {}", d.at));
        }
    }

    // Log and decision agree one-to-one on (requester, piece, source).
    let decided: BTreeSet<(NodeId, PieceId, Source)> = report
        .decisions
        .iter()
        .map(|d| (d.requester, d.piece, d.source))
        .collect();
    for t in &report.transfers {
        if !decided.contains(&(t.dest, t.piece, t.source)) {
            bad.push(format!("transfer {} has no matching decision", t.id));
        }
    }

    // Global sums equal per-node sums; improvement recomputes from the log.
    let per_server: u64 = report.nodes.iter().map(|n| n.bytes_from_server).sum();
    let per_peer: u64 = report.nodes.iter().map(|n| n.bytes_from_peers).sum();
    let log_server: u64 = report
        .transfers
        .iter()
        .filter(|t| t.source == Source::Server)
        .map(|t| t.bytes)
        .sum();
    let log_peer: u64 = report
        .transfers
        .iter()
        .filter(|t| t.source != Source::Server)
        .map(|t| t.bytes)
        .sum();
    if (per_server, per_peer) != (report.global.server_bytes, report.global.peer_bytes)
        || (log_server, log_peer) != (report.global.server_bytes, report.global.peer_bytes)
    {
        bad.push("byte totals disagree between global, per-node and transfer log".into());
    }
    let total = log_server + log_peer;
    let recomputed = (total > 0).then(|| log_peer as f64 / total as f64);
    if recomputed != report.global.improvement {
        bad.push(format!(
            "improvement {:?} != {:?} recomputed from the log",
            report.global.improvement, recomputed
        ));
    }

    // Accounting identity for finished playback.
    for n in report.nodes.iter().filter(|n| n.completed) {
        let fin = n.finished_at.unwrap();
        let lhs = video.duration() + n.stall_total_s + n.startup_delay_s.unwrap() + n.joined_at;
        if (lhs - fin).abs() > 1e-6 {
            bad.push(format!(
                "{}: playout accounting {lhs} != finished {fin}",
                n.node
            ));
        }
    }
    bad
}

/// Byte conservation for untruncated runs.
pub fn conserved(report: &Report) -> bool {
    let s = &report.scenario;
    report.global.server_bytes + report.global.peer_bytes
        == s.node_count as u64 * s.video.piece_count as u64 * s.video.piece_size_bytes
}
