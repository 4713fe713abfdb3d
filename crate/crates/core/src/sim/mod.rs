//! Deterministic discrete-event simulation of a flash crowd streaming one
//! video through the server-coordinated scheduler.
//!
//! The loop is single threaded. Every event carries `(time, kind rank, node,
//! insertion order)`, which totally orders the queue, and all randomness
//! comes from labelled streams of the scenario seed, so a scenario always
//! produces the same report.

mod queue;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::client::PlayoutState;
use crate::discovery::{self, NeighborList};
use crate::error::{MoviError, Result};
use crate::metrics::{DecisionRecord, NodeMetrics, Report, TransferRecord};
use crate::model::{NodeId, PieceId, Source, VideoSpec};
use crate::radio::{self, Position};
use crate::rng::{rng_stream, Stream};
use crate::scenario::{Mode, Resolved, Scenario};
use crate::scheduler::{Audit, Grouping, ScheduleDecision, ServerState, StageCounts};
use crate::trust::TrustState;

pub use queue::{EventKind, EventQueue, TransferId};

/// Added to watermark wake-ups so the buffer is strictly below the
/// watermark when the node re-checks.
const WATERMARK_NUDGE_S: f64 = 1e-6;

/// Hooks into the event loop, used by audits that need the live server
/// state rather than the report.
pub trait Observer {
    /// Called right after a scheduling decision, before its transfer starts.
    fn on_decision(&mut self, _at: f64, _state: &ServerState, _decision: &ScheduleDecision) {}

    /// Called on every client state report with the RBT sent to the server.
    fn on_report(&mut self, _at: f64, _client: &PlayoutState, _video: &VideoSpec, _rbt: f64) {}
}

impl Observer for () {}

#[derive(Debug, Clone)]
struct Transfer {
    source: Source,
    dest: NodeId,
    piece: PieceId,
    decided_at: f64,
    started: f64,
    rate_bps: f64,
}

#[derive(Debug, Clone, Copy)]
struct QueuedServerTransfer {
    dest: NodeId,
    piece: PieceId,
    decided_at: f64,
}

struct NodeRuntime {
    joined: bool,
    playout: PlayoutState,
    neighbors: NeighborList,
    list_version: u64,
    reported_version: u64,
    probe_phase: f64,
    report_phase: f64,
    probe_round: u64,
    report_round: u64,
    /// A request came due while the node was busy serving a peer.
    deferred_request: bool,
    bytes_from_server: u64,
    bytes_from_peers: u64,
    last_requested: Option<PieceId>,
}

struct World<'a, O: Observer> {
    scenario: &'a Scenario,
    resolved: Resolved,
    video: VideoSpec,
    now: f64,
    queue: EventQueue,
    nodes: Vec<NodeRuntime>,
    server: ServerState,
    transfers: BTreeMap<TransferId, Transfer>,
    next_transfer: TransferId,
    server_slots: Option<usize>,
    active_server_transfers: usize,
    cell_backlog: VecDeque<QueuedServerTransfer>,
    decisions: Vec<DecisionRecord>,
    transfer_log: Vec<TransferRecord>,
    groups: Vec<Vec<NodeId>>,
    probe_loss: Stream,
    finished: usize,
    observer: &'a mut O,
}

/// Runs a scenario to completion (or its duration cap).
pub fn run(scenario: &Scenario) -> Result<Report> {
    run_observed(scenario, &mut ())
}

pub fn run_observed<O: Observer>(scenario: &Scenario, observer: &mut O) -> Result<Report> {
    let resolved = scenario.resolve()?;
    let mut world = World::new(scenario, resolved, observer);
    world.run()?;
    Ok(world.into_report())
}

impl<'a, O: Observer> World<'a, O> {
    fn new(scenario: &'a Scenario, resolved: Resolved, observer: &'a mut O) -> Self {
        let n = scenario.node_count;
        let video = scenario.video;
        let trust = TrustState::new(
            scenario.scheduler.trust_threshold,
            scenario.scheduler.default_trust,
        )
        .with_sticky_blacklist(scenario.scheduler.sticky_blacklist);
        let server = ServerState::new(
            video.piece_count,
            trust,
            scenario.scheduler.rssi_threshold_dbm,
        );

        let nodes = (0..n)
            .map(|i| {
                let id = NodeId(i);
                let joined_at = resolved.join_times[i as usize];
                NodeRuntime {
                    joined: false,
                    playout: PlayoutState::new(id, joined_at, &scenario.client),
                    neighbors: NeighborList::new(id),
                    list_version: 0,
                    reported_version: 0,
                    probe_phase: discovery::stagger_phase(id, n, scenario.timers.probe_s),
                    report_phase: discovery::stagger_phase(id, n, scenario.timers.report_s),
                    probe_round: 0,
                    report_round: 0,
                    deferred_request: false,
                    bytes_from_server: 0,
                    bytes_from_peers: 0,
                    last_requested: None,
                }
            })
            .collect();

        let mut queue = EventQueue::new();
        for (i, &t) in resolved.join_times.iter().enumerate() {
            let id = NodeId(i as u32);
            queue.push(t, EventKind::NodeJoin(id), id);
        }
        for (i, ev) in scenario.trust_events.iter().enumerate() {
            queue.push(ev.at, EventKind::TrustEvent(i), ev.subject);
        }

        World {
            scenario,
            resolved,
            video,
            now: 0.0,
            queue,
            nodes,
            server,
            transfers: BTreeMap::new(),
            next_transfer: 0,
            server_slots: scenario.radio.cell_slots(),
            active_server_transfers: 0,
            cell_backlog: VecDeque::new(),
            decisions: Vec::new(),
            transfer_log: Vec::new(),
            groups: Vec::new(),
            probe_loss: rng_stream(scenario.seed, "probe-loss"),
            finished: 0,
            observer,
        }
    }

    fn run(&mut self) -> Result<()> {
        let cap = self.scenario.duration_cap_s;
        while self.finished < self.nodes.len() {
            let Some(ev) = self.queue.pop() else { break };
            if ev.at > cap {
                break;
            }
            debug_assert!(ev.at >= self.now);
            self.now = ev.at;
            self.handle(ev.kind).map_err(|e| match e {
                MoviError::Protocol(msg) => {
                    MoviError::Protocol(format!("t={:.6} {:?}: {msg}", ev.at, ev.kind))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    fn handle(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::NodeJoin(n) => self.on_join(n),
            EventKind::ProbeRound(n) => self.on_probe(n),
            EventKind::ReportTick(n) => self.on_report(n),
            EventKind::PieceRequest(n) => self.on_request(n),
            EventKind::TransferComplete(id) => self.on_transfer_complete(id),
            EventKind::PlayoutTick(n) => self.on_playout_tick(n),
            EventKind::TrustEvent(i) => {
                let ev = self.scenario.trust_events[i];
                self.server.trust.record_evaluation(ev)
            }
        }
    }

    fn node(&mut self, n: NodeId) -> &mut NodeRuntime {
        &mut self.nodes[n.index()]
    }

    fn sync(&mut self, n: NodeId) {
        let now = self.now;
        let video = self.video;
        let node = &mut self.nodes[n.index()];
        let was_finished = node.playout.is_finished();
        node.playout.sync_to(now, &video);
        if !was_finished && node.playout.is_finished() {
            self.finished += 1;
        }
    }

    fn on_join(&mut self, n: NodeId) -> Result<()> {
        let now = self.now;
        let timers = self.scenario.timers;
        let node = self.node(n);
        node.joined = true;
        let probe_at = discovery::next_slot(now, node.probe_phase, timers.probe_s);
        let report_at = discovery::next_slot(now, node.report_phase, timers.report_s);
        node.probe_round = ((probe_at - node.probe_phase) / timers.probe_s).round() as u64;
        node.report_round = ((report_at - node.report_phase) / timers.report_s).round() as u64;
        self.server.register(n);
        self.queue.push(probe_at, EventKind::ProbeRound(n), n);
        self.queue.push(report_at, EventKind::ReportTick(n), n);
        self.queue.push(now, EventKind::PieceRequest(n), n);
        Ok(())
    }

    fn joined_positions(&self) -> BTreeMap<NodeId, Position> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, node)| node.joined)
            .map(|(i, _)| (NodeId(i as u32), self.resolved.position(i, self.now)))
            .collect()
    }

    fn on_probe(&mut self, n: NodeId) -> Result<()> {
        let positions = self.joined_positions();
        let params = self.scenario.radio;
        let timers = self.scenario.timers;
        let now = self.now;
        let loss = timers.probe_loss_prob;
        let rng = &mut self.probe_loss;
        let node = &mut self.nodes[n.index()];
        let list = std::mem::replace(&mut node.neighbors, NeighborList::new(n));
        let list = discovery::run_probe_round_lossy(n, &positions, &params, now, list, |_| {
            loss > 0.0 && rng.gen::<f64>() < loss
        })?;
        let list = discovery::expire_stale(list, now, &timers);
        node.neighbors = list;
        node.list_version += 1;
        node.probe_round += 1;
        let next = node.probe_phase + node.probe_round as f64 * timers.probe_s;
        self.queue.push(next, EventKind::ProbeRound(n), n);
        Ok(())
    }

    fn on_report(&mut self, n: NodeId) -> Result<()> {
        self.sync(n);
        let timers = self.scenario.timers;
        let video = self.video;
        let now = self.now;
        let node = &mut self.nodes[n.index()];

        let state = node.playout.report_state(&video);
        self.observer
            .on_report(now, &node.playout, &video, state.rbt);
        self.server.apply_rbt_report(n, state.rbt);

        if node.list_version != node.reported_version {
            node.reported_version = node.list_version;
            let update = discovery::report_to_server(n, &node.neighbors)?;
            self.server.apply_connectivity_update(update)?;
            if self.scenario.scheduler.grouping == Grouping::Components {
                self.regroup();
            }
        }

        let node = &mut self.nodes[n.index()];
        node.report_round += 1;
        let next = node.report_phase + node.report_round as f64 * timers.report_s;
        self.queue.push(next, EventKind::ReportTick(n), n);
        Ok(())
    }

    fn regroup(&mut self) {
        let joined: BTreeSet<NodeId> = self.server.known_nodes().clone();
        self.groups = self
            .server
            .assign_groups(&joined, self.scenario.scheduler.grouping);
    }

    fn on_playout_tick(&mut self, n: NodeId) -> Result<()> {
        self.sync(n);
        let node = &self.nodes[n.index()];
        if node.playout.inflight().is_none() && !node.playout.is_finished() {
            self.on_request(n)?;
        }
        Ok(())
    }

    fn on_request(&mut self, n: NodeId) -> Result<()> {
        self.sync(n);
        let video = self.video;
        let now = self.now;
        let node = &self.nodes[n.index()];
        if !node.joined || node.playout.inflight().is_some() {
            return Ok(());
        }
        if self.server.is_busy(n) {
            self.node(n).deferred_request = true;
            return Ok(());
        }
        let Some(piece) = node.playout.next_request(&video) else {
            // Paused by the watermark: wake up once the buffer drains below it.
            if node.playout.is_playing() && (node.playout.held().len() as u32) < video.piece_count {
                let wait = node.playout.until_below_watermark(&video);
                if wait > 0.0 {
                    self.queue
                        .push(now + wait + WATERMARK_NUDGE_S, EventKind::PlayoutTick(n), n);
                }
            }
            return Ok(());
        };
        if let Some(prev) = node.last_requested {
            if piece <= prev {
                return Err(MoviError::protocol(format!(
                    "{n} requested {piece} after {prev}: in-order policy violated"
                )));
            }
        }

        let decision = match self.scenario.mode {
            Mode::P2p => self.server.schedule_piece(n, piece)?,
            Mode::ServerOnly => ScheduleDecision {
                requester: n,
                piece,
                source: Source::Server,
                audit: Audit {
                    stages: StageCounts::default(),
                    winning_rbt: None,
                },
            },
        };
        self.observer.on_decision(now, &self.server, &decision);
        self.decisions.push(DecisionRecord::new(now, &decision));

        let node = self.node(n);
        node.playout.begin_request(piece)?;
        node.last_requested = Some(piece);
        node.deferred_request = false;

        self.server.mark_busy(n)?;
        match decision.source {
            Source::Peer(p) => {
                self.server.mark_busy(p)?;
                self.start_transfer(decision.source, n, piece, now);
            }
            Source::Server => match self.server_slots {
                Some(slots) if self.active_server_transfers >= slots => {
                    self.cell_backlog.push_back(QueuedServerTransfer {
                        dest: n,
                        piece,
                        decided_at: now,
                    });
                }
                _ => self.start_transfer(Source::Server, n, piece, now),
            },
        }
        Ok(())
    }

    fn start_transfer(&mut self, source: Source, dest: NodeId, piece: PieceId, decided_at: f64) {
        let params = &self.scenario.radio;
        let rate_bps = match source {
            Source::Server => {
                self.active_server_transfers += 1;
                params.cell_rate_bps
            }
            Source::Peer(p) => {
                let a = self.resolved.position(p.index(), self.now);
                let b = self.resolved.position(dest.index(), self.now);
                let level = radio::rssi(&a, &b, params).unwrap_or(f64::NEG_INFINITY);
                params.wifi_rate_at(level)
            }
        };
        let duration = self.video.piece_bits() / rate_bps;
        let id = self.next_transfer;
        self.next_transfer += 1;
        self.transfers.insert(
            id,
            Transfer {
                source,
                dest,
                piece,
                decided_at,
                started: self.now,
                rate_bps,
            },
        );
        self.queue
            .push(self.now + duration, EventKind::TransferComplete(id), dest);
    }

    fn on_transfer_complete(&mut self, id: TransferId) -> Result<()> {
        let t = self
            .transfers
            .remove(&id)
            .ok_or_else(|| MoviError::protocol(format!("unknown transfer {id}")))?;
        let now = self.now;
        let video = self.video;
        let bytes = video.piece_size_bytes;

        self.server.mark_idle(t.dest)?;
        if let Source::Peer(p) = t.source {
            if !self.server.content.has_piece(p, t.piece) {
                return Err(MoviError::protocol(format!(
                    "{p} served {} without holding it",
                    t.piece
                )));
            }
            self.server.mark_idle(p)?;
        }

        self.sync(t.dest);
        let update = self.nodes[t.dest.index()]
            .playout
            .on_piece_received(t.piece, now, &video)?;
        self.server
            .apply_content_update(update.node, update.piece)?;

        let node = self.node(t.dest);
        match t.source {
            Source::Server => node.bytes_from_server += bytes,
            Source::Peer(_) => node.bytes_from_peers += bytes,
        }
        self.transfer_log.push(TransferRecord {
            id,
            source: t.source,
            dest: t.dest,
            piece: t.piece,
            decided_at: t.decided_at,
            started: t.started,
            finished: now,
            bytes,
            rate_bps: t.rate_bps,
        });

        if t.source == Source::Server {
            self.active_server_transfers -= 1;
            if let Some(next) = self.cell_backlog.pop_front() {
                self.start_transfer(Source::Server, next.dest, next.piece, next.decided_at);
            }
        }

        // wake the receiver for its next piece and at its next buffer boundary
        let playout = &self.nodes[t.dest.index()].playout;
        if playout.is_playing() {
            let lead = playout.rbt(&video);
            self.queue
                .push(now + lead, EventKind::PlayoutTick(t.dest), t.dest);
        }
        self.queue
            .push(now, EventKind::PieceRequest(t.dest), t.dest);
        if let Source::Peer(p) = t.source {
            if std::mem::take(&mut self.node(p).deferred_request) {
                self.queue.push(now, EventKind::PieceRequest(p), p);
            }
        }
        Ok(())
    }

    fn into_report(mut self) -> Report {
        let all_done = self.finished == self.nodes.len();
        let end = if all_done {
            self.nodes
                .iter()
                .filter_map(|n| n.playout.finished_at())
                .fold(0.0, f64::max)
        } else {
            self.scenario.duration_cap_s
        };
        let video = self.video;
        for node in &mut self.nodes {
            if node.joined {
                node.playout.sync_to(end, &video);
            }
        }
        if self.scenario.scheduler.grouping == Grouping::Global || self.groups.is_empty() {
            self.regroup();
        }

        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let p = &node.playout;
                NodeMetrics {
                    node: NodeId(i as u32),
                    position: self.resolved.position(i, 0.0),
                    joined_at: p.joined_at(),
                    bytes_from_server: node.bytes_from_server,
                    bytes_from_peers: node.bytes_from_peers,
                    startup_delay_s: p.startup_delay(),
                    stall_count: p.stall_count() as u32,
                    stall_total_s: p.stall_total(),
                    completed: p.is_finished(),
                    finished_at: p.finished_at(),
                }
            })
            .collect();
        Report::new(
            self.scenario.clone(),
            nodes,
            self.groups,
            self.decisions,
            self.transfer_log,
            end,
            !all_done,
        )
    }
}
