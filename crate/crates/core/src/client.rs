//! Per-node client: in-order requesting, playout buffer, remaining buffer
//! time, and startup/stall bookkeeping.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};
use crate::model::{NodeId, PieceId, VideoSpec};

/// Tolerance for comparing playout positions against piece boundaries.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientParams {
    /// Buffered seconds needed before playback starts.
    pub prebuffer_s: f64,
    /// Requests pause while the buffer holds at least this many seconds.
    pub high_watermark_s: f64,
    pub pipeline_depth: u32,
}

impl Default for ClientParams {
    fn default() -> Self {
        ClientParams {
            prebuffer_s: VideoSpec::default().piece_duration(),
            high_watermark_s: 30.0,
            pipeline_depth: 1,
        }
    }
}

impl ClientParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prebuffer_s.is_finite() && self.prebuffer_s >= 0.0) {
            return Err(MoviError::config(
                "client.prebuffer_s must be finite and >= 0",
            ));
        }
        if !(self.high_watermark_s.is_finite() && self.high_watermark_s > 0.0) {
            return Err(MoviError::config("client.high_watermark_s must be > 0"));
        }
        if self.prebuffer_s > self.high_watermark_s {
            return Err(MoviError::config(
                "client.prebuffer_s must not exceed client.high_watermark_s",
            ));
        }
        if self.pipeline_depth != 1 {
            return Err(MoviError::config(
                "client.pipeline_depth: only 1 is supported (one transfer per node at a time)",
            ));
        }
        Ok(())
    }
}

/// Content update emitted toward the server when a piece lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentUpdate {
    pub node: NodeId,
    pub piece: PieceId,
}

/// Periodic client report: current RBT and held pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct StateReport {
    pub node: NodeId,
    pub rbt: f64,
    pub held: BTreeSet<PieceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayoutState {
    pub node: NodeId,
    held: BTreeSet<PieceId>,
    playhead: f64,
    playing: bool,
    prebuffer_target: f64,
    high_watermark: f64,
    joined_at: f64,
    /// Simulation time the playout model has been advanced to.
    clock: f64,
    started_at: Option<f64>,
    finished_at: Option<f64>,
    open_stall: Option<f64>,
    stall_intervals: Vec<(f64, f64)>,
    inflight: Option<PieceId>,
}

impl PlayoutState {
    pub fn new(node: NodeId, joined_at: f64, params: &ClientParams) -> Self {
        PlayoutState {
            node,
            held: BTreeSet::new(),
            playhead: 0.0,
            playing: false,
            prebuffer_target: params.prebuffer_s,
            high_watermark: params.high_watermark_s,
            joined_at,
            clock: joined_at,
            started_at: None,
            finished_at: None,
            open_stall: None,
            stall_intervals: Vec::new(),
            inflight: None,
        }
    }

    pub fn held(&self) -> &BTreeSet<PieceId> {
        &self.held
    }

    pub fn playhead(&self) -> f64 {
        self.playhead
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    pub fn joined_at(&self) -> f64 {
        self.joined_at
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn started_at(&self) -> Option<f64> {
        self.started_at
    }

    pub fn finished_at(&self) -> Option<f64> {
        self.finished_at
    }

    pub fn is_finished(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn is_stalled(&self) -> bool {
        self.open_stall.is_some()
    }

    pub fn stall_intervals(&self) -> &[(f64, f64)] {
        &self.stall_intervals
    }

    pub fn inflight(&self) -> Option<PieceId> {
        self.inflight
    }

    pub fn high_watermark(&self) -> f64 {
        self.high_watermark
    }

    pub fn startup_delay(&self) -> Option<f64> {
        self.started_at.map(|t| t - self.joined_at)
    }

    /// Closed stalls plus the open one, if any, measured up to the clock.
    pub fn stall_total(&self) -> f64 {
        let closed: f64 = self.stall_intervals.iter().map(|(a, b)| b - a).sum();
        closed + self.open_stall.map_or(0.0, |s| self.clock - s)
    }

    pub fn stall_count(&self) -> usize {
        self.stall_intervals.len() + usize::from(self.open_stall.is_some())
    }

    fn current_piece(&self, spec: &VideoSpec) -> u32 {
        ((self.playhead / spec.piece_duration()) + EPS).floor() as u32
    }

    /// End of the contiguous run of held pieces starting at the playhead's
    /// piece, as a piece index one past the run.
    fn run_end(&self, spec: &VideoSpec) -> u32 {
        let mut k = self.current_piece(spec);
        while k < spec.piece_count && self.held.contains(&PieceId(k)) {
            k += 1;
        }
        k
    }

    /// Seconds of contiguously buffered video ahead of the playhead.
    pub fn rbt(&self, spec: &VideoSpec) -> f64 {
        let end = self.run_end(spec);
        (end as f64 * spec.piece_duration() - self.playhead).max(0.0)
    }

    /// Next piece to ask for under the in-order policy, if any.
    pub fn next_request(&self, spec: &VideoSpec) -> Option<PieceId> {
        if self.inflight.is_some() || self.held.len() as u32 >= spec.piece_count {
            return None;
        }
        if self.rbt(spec) >= self.high_watermark {
            return None;
        }
        spec.pieces().find(|p| !self.held.contains(p))
    }

    /// Seconds until the watermark stops blocking requests; zero if it does
    /// not block now. Only meaningful while playing.
    pub fn until_below_watermark(&self, spec: &VideoSpec) -> f64 {
        (self.rbt(spec) - self.high_watermark).max(0.0)
    }

    /// Records that `piece` has been requested.
    pub fn begin_request(&mut self, piece: PieceId) -> Result<()> {
        if let Some(p) = self.inflight {
            return Err(MoviError::protocol(format!(
                "{} requested {piece} while {p} is in flight",
                self.node
            )));
        }
        if self.held.contains(&piece) {
            return Err(MoviError::protocol(format!(
                "{} requested {piece} it already holds",
                self.node
            )));
        }
        self.inflight = Some(piece);
        Ok(())
    }

    /// Advances the playout clock by `dt` seconds.
    pub fn advance_playout(&mut self, dt: f64, spec: &VideoSpec) {
        if dt.is_nan() || dt <= 0.0 {
            return;
        }
        if self.playing && self.open_stall.is_none() {
            let lead = self.rbt(spec);
            if lead > dt + EPS {
                self.playhead += dt;
            } else {
                let end = self.run_end(spec);
                self.playhead = end as f64 * spec.piece_duration();
                let reached = self.clock + lead;
                if end >= spec.piece_count {
                    self.playhead = spec.duration();
                    self.playing = false;
                    self.finished_at = Some(reached);
                } else {
                    self.open_stall = Some(reached);
                }
            }
        }
        self.clock += dt;
    }

    /// Brings the playout model forward to absolute time `now`.
    pub fn sync_to(&mut self, now: f64, spec: &VideoSpec) {
        if now > self.clock {
            self.advance_playout(now - self.clock, spec);
        }
    }

    /// Delivers the in-flight piece at time `now`.
    pub fn on_piece_received(
        &mut self,
        piece: PieceId,
        now: f64,
        spec: &VideoSpec,
    ) -> Result<ContentUpdate> {
        if self.inflight != Some(piece) {
            return Err(MoviError::protocol(format!(
                "{} received {piece} but expected {:?}",
                self.node, self.inflight
            )));
        }
        self.sync_to(now, spec);
        self.inflight = None;
        self.held.insert(piece);

        if let Some(start) = self.open_stall {
            if self.held.contains(&PieceId(self.current_piece(spec))) {
                // a piece landing on the boundary only looks late through rounding
                if self.clock - start > EPS {
                    self.stall_intervals.push((start, self.clock));
                }
                self.open_stall = None;
            }
        }
        if !self.playing
            && self.started_at.is_none()
            && self.rbt(spec) + EPS >= self.prebuffer_target
        {
            self.playing = true;
            self.started_at = Some(self.clock);
        }
        Ok(ContentUpdate {
            node: self.node,
            piece,
        })
    }

    pub fn report_state(&self, spec: &VideoSpec) -> StateReport {
        StateReport {
            node: self.node,
            rbt: self.rbt(spec),
            held: self.held.clone(),
        }
    }
}
