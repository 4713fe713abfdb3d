//! Scenario file schema (JSON, strict) and its resolution into concrete
//! node tracks and join times.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::client::ClientParams;
use crate::discovery::DiscoveryTimers;
use crate::error::{MoviError, Result};
use crate::model::VideoSpec;
use crate::radio::{self, Position, RadioParams, Waypoint};
use crate::rng::rng_stream;
use crate::scheduler::Grouping;
use crate::trust::TrustEvaluation;

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_SQUARE_SIDE_M: f64 = 50.0;
pub const DEFAULT_OFFSET_RANGE_S: [f64; 2] = [0.0, 120.0];
pub const DEFAULT_DURATION_CAP_S: f64 = 3600.0;
pub const DEFAULT_NODE_COUNT: u32 = 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Every piece comes from the server over 3G.
    #[serde(rename = "server-only")]
    ServerOnly,
    #[default]
    #[serde(rename = "p2p")]
    P2p,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::ServerOnly => "server-only",
            Mode::P2p => "p2p",
        })
    }
}

/// Exactly one of the three fields must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square_side_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Position>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<Vec<Waypoint>>>,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            square_side_m: Some(DEFAULT_SQUARE_SIDE_M),
            positions: None,
            waypoints: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerParams {
    pub trust_threshold: f64,
    pub rssi_threshold_dbm: f64,
    pub grouping: Grouping,
    pub default_trust: f64,
    pub sticky_blacklist: bool,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        SchedulerParams {
            trust_threshold: 0.5,
            rssi_threshold_dbm: -75.0,
            grouping: Grouping::Global,
            default_trust: 1.0,
            sticky_blacklist: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub node_count: u32,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub video: VideoSpec,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub timers: DiscoveryTimers,
    #[serde(default)]
    pub scheduler: SchedulerParams,
    #[serde(default)]
    pub client: ClientParams,
    #[serde(default)]
    pub trust_events: Vec<TrustEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_offsets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_range_s: Option<[f64; 2]>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub duration_cap_s: f64,
}

fn default_cap() -> f64 {
    DEFAULT_DURATION_CAP_S
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::flash_crowd(DEFAULT_NODE_COUNT, 0)
    }
}

/// Concrete per-node inputs derived from a scenario and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub tracks: Vec<Vec<Waypoint>>,
    pub join_times: Vec<f64>,
}

impl Resolved {
    pub fn position(&self, node: usize, t: f64) -> Position {
        radio::position_at(&self.tracks[node], t)
    }
}

impl Scenario {
    /// The default flash crowd: `node_count` phones scattered over a 50 m
    /// square, joining at uniformly random times within two minutes.
    pub fn flash_crowd(node_count: u32, seed: u64) -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            node_count,
            layout: Layout::default(),
            video: VideoSpec::default(),
            radio: RadioParams::default(),
            timers: DiscoveryTimers::default(),
            scheduler: SchedulerParams::default(),
            client: ClientParams::default(),
            trust_events: Vec::new(),
            start_offsets: None,
            offset_range_s: None,
            mode: Mode::P2p,
            seed,
            duration_cap_s: DEFAULT_DURATION_CAP_S,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| MoviError::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| MoviError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            MoviError::Config(msg) => MoviError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MoviError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.node_count == 0 {
            return Err(MoviError::config("node_count must be >= 1"));
        }
        let n = self.node_count as usize;
        self.video.validate()?;
        self.radio.validate()?;
        self.timers.validate()?;
        self.client.validate()?;

        let sched = &self.scheduler;
        if !(0.0..=1.0).contains(&sched.trust_threshold) {
            return Err(MoviError::config(
                "scheduler.trust_threshold must be in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&sched.default_trust) {
            return Err(MoviError::config(
                "scheduler.default_trust must be in [0, 1]",
            ));
        }
        if !(sched.rssi_threshold_dbm.is_finite()
            && sched.rssi_threshold_dbm >= self.radio.rssi_floor_dbm)
        {
            return Err(MoviError::config(
                "scheduler.rssi_threshold_dbm must be finite and >= radio.rssi_floor_dbm",
            ));
        }

        let layout = &self.layout;
        let set = [
            layout.square_side_m.is_some(),
            layout.positions.is_some(),
            layout.waypoints.is_some(),
        ];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(MoviError::config(
                "layout: exactly one of square_side_m, positions, waypoints must be given",
            ));
        }
        if let Some(side) = layout.square_side_m {
            if !(side.is_finite() && side >= 0.0) {
                return Err(MoviError::config(
                    "layout.square_side_m must be finite and >= 0",
                ));
            }
        }
        if let Some(pos) = &layout.positions {
            if pos.len() != n {
                return Err(MoviError::config(format!(
                    "layout.positions has {} entries for {n} nodes",
                    pos.len()
                )));
            }
            if let Some(i) = pos.iter().position(|p| !p.is_finite()) {
                return Err(MoviError::config(format!(
                    "layout.positions[{i}] is not finite"
                )));
            }
        }
        if let Some(tracks) = &layout.waypoints {
            if tracks.len() != n {
                return Err(MoviError::config(format!(
                    "layout.waypoints has {} tracks for {n} nodes",
                    tracks.len()
                )));
            }
            for (i, track) in tracks.iter().enumerate() {
                if track.is_empty() {
                    return Err(MoviError::config(format!("layout.waypoints[{i}] is empty")));
                }
                if track
                    .iter()
                    .any(|w| !(w.t.is_finite() && w.x.is_finite() && w.y.is_finite()))
                {
                    return Err(MoviError::config(format!(
                        "layout.waypoints[{i}] has non-finite values"
                    )));
                }
                if track.windows(2).any(|w| w[1].t < w[0].t) {
                    return Err(MoviError::config(format!(
                        "layout.waypoints[{i}] times must be non-decreasing"
                    )));
                }
            }
        }

        match (&self.start_offsets, &self.offset_range_s) {
            (Some(_), Some(_)) => {
                return Err(MoviError::config(
                    "give at most one of start_offsets and offset_range_s",
                ))
            }
            (Some(offsets), None) => {
                if offsets.len() != n {
                    return Err(MoviError::config(format!(
                        "start_offsets has {} entries for {n} nodes",
                        offsets.len()
                    )));
                }
                if let Some(i) = offsets.iter().position(|o| !(o.is_finite() && *o >= 0.0)) {
                    return Err(MoviError::config(format!(
                        "start_offsets[{i}] must be finite and >= 0"
                    )));
                }
            }
            (None, Some([lo, hi])) => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi) {
                    return Err(MoviError::config(
                        "offset_range_s must satisfy 0 <= lo <= hi",
                    ));
                }
            }
            (None, None) => {}
        }

        for (i, ev) in self.trust_events.iter().enumerate() {
            let describe = || {
                format!(
                    "trust_events[{i}] (at {}, evaluator {}, subject {})",
                    ev.at, ev.evaluator.0, ev.subject.0
                )
            };
            if ev.evaluator.0 >= self.node_count || ev.subject.0 >= self.node_count {
                return Err(MoviError::config(format!(
                    "{}: node id out of range for node_count {}",
                    describe(),
                    self.node_count
                )));
            }
            if !(ev.at.is_finite() && ev.at >= 0.0) {
                return Err(MoviError::config(format!(
                    "{}: time must be finite and >= 0",
                    describe()
                )));
            }
            ev.validate()
                .map_err(|e| MoviError::config(format!("{}: {e}", describe())))?;
        }

        if !(self.duration_cap_s.is_finite() && self.duration_cap_s > 0.0) {
            return Err(MoviError::config("duration_cap_s must be finite and > 0"));
        }
        Ok(())
    }

    /// Draws positions and join times from the seed where the scenario
    /// leaves them random.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let n = self.node_count as usize;
        let tracks = if let Some(side) = self.layout.square_side_m {
            let mut rng = rng_stream(self.seed, "layout");
            (0..n)
                .map(|_| {
                    let x = rng.gen::<f64>() * side;
                    let y = rng.gen::<f64>() * side;
                    vec![Waypoint { t: 0.0, x, y }]
                })
                .collect()
        } else if let Some(pos) = &self.layout.positions {
            pos.iter()
                .map(|p| {
                    vec![Waypoint {
                        t: 0.0,
                        x: p.x,
                        y: p.y,
                    }]
                })
                .collect()
        } else {
            self.layout.waypoints.clone().unwrap_or_default()
        };

        let join_times = match &self.start_offsets {
            Some(offsets) => offsets.clone(),
            None => {
                let [lo, hi] = self.offset_range_s.unwrap_or(DEFAULT_OFFSET_RANGE_S);
                let mut rng = rng_stream(self.seed, "offsets");
                (0..n).map(|_| lo + rng.gen::<f64>() * (hi - lo)).collect()
            }
        };
        Ok(Resolved { tracks, join_times })
    }
}
