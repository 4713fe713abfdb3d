//! Neighbour discovery: periodic broadcast probes, unicast responses that
//! populate the local neighbour list, and periodic reports to the server.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};
use crate::model::{NeighborRecord, NodeId};
use crate::radio::{self, Position, RadioParams};

/// Channel 1; informational only.
pub const WIFI_FREQUENCY_MHZ: f64 = 2412.0;

/// Opaque address string standing in for a node's IP and MAC.
pub fn addr_meta(node: NodeId) -> String {
    let b = node.0.to_be_bytes();
    format!(
        "10.{}.{}.{}/02:00:{:02x}:{:02x}:{:02x}:{:02x}",
        b[1], b[2], b[3], b[0], b[1], b[2], b[3]
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryTimers {
    pub probe_s: f64,
    pub report_s: f64,
    pub staleness_rounds: u32,
    /// Probability that a single probe response is lost.
    #[serde(default)]
    pub probe_loss_prob: f64,
}

impl Default for DiscoveryTimers {
    fn default() -> Self {
        DiscoveryTimers {
            probe_s: 2.0,
            report_s: 0.020,
            staleness_rounds: 3,
            probe_loss_prob: 0.0,
        }
    }
}

impl DiscoveryTimers {
    pub fn validate(&self) -> Result<()> {
        if !(self.probe_s.is_finite() && self.probe_s > 0.0) {
            return Err(MoviError::config("timers.probe_s must be > 0"));
        }
        if !(self.report_s.is_finite() && self.report_s > 0.0) {
            return Err(MoviError::config("timers.report_s must be > 0"));
        }
        if self.staleness_rounds == 0 {
            return Err(MoviError::config("timers.staleness_rounds must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.probe_loss_prob) {
            return Err(MoviError::config(
                "timers.probe_loss_prob must be in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Entries older than this are dropped.
    pub fn staleness_s(&self) -> f64 {
        self.staleness_rounds as f64 * self.probe_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub owner: NodeId,
    /// Sorted by neighbour id, unique.
    pub entries: Vec<NeighborRecord>,
    pub generated_at: f64,
}

impl NeighborList {
    pub fn new(owner: NodeId) -> Self {
        NeighborList {
            owner,
            entries: Vec::new(),
            generated_at: 0.0,
        }
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&NeighborRecord> {
        self.entries
            .binary_search_by_key(&neighbor, |r| r.neighbor)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A neighbour list on its way to the server. Consuming it replaces the
/// server's entry for `node` wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityUpdate {
    pub node: NodeId,
    pub entries: Vec<NeighborRecord>,
    pub at: f64,
}

/// Broadcast a probe from `node` and fold the responses into `list`.
pub fn run_probe_round(
    node: NodeId,
    positions: &BTreeMap<NodeId, Position>,
    params: &RadioParams,
    now: f64,
    list: NeighborList,
) -> Result<NeighborList> {
    run_probe_round_lossy(node, positions, params, now, list, |_| false)
}

/// As [`run_probe_round`], dropping the response of every responder for
/// which `lost` returns true.
pub fn run_probe_round_lossy(
    node: NodeId,
    positions: &BTreeMap<NodeId, Position>,
    params: &RadioParams,
    now: f64,
    mut list: NeighborList,
    mut lost: impl FnMut(NodeId) -> bool,
) -> Result<NeighborList> {
    let origin = positions
        .get(&node)
        .ok_or_else(|| MoviError::input(format!("unknown node {node} in probe round")))?;
    if list.owner != node {
        return Err(MoviError::input(format!(
            "probe by {node} on a list owned by {}",
            list.owner
        )));
    }
    for (&peer, pos) in positions {
        if peer == node {
            continue;
        }
        let level = radio::rssi(origin, pos, params)?;
        if level < params.rssi_floor_dbm || lost(peer) {
            continue;
        }
        let fresh = NeighborRecord {
            neighbor: peer,
            rssi_dbm: level,
            frequency_mhz: WIFI_FREQUENCY_MHZ,
            addr_meta: addr_meta(peer),
            last_seen: now,
        };
        match list.entries.binary_search_by_key(&peer, |r| r.neighbor) {
            Ok(i) => list.entries[i] = fresh,
            Err(i) => list.entries.insert(i, fresh),
        }
    }
    list.generated_at = now;
    Ok(list)
}

/// Drop entries not heard from for longer than the staleness window.
pub fn expire_stale(mut list: NeighborList, now: f64, timers: &DiscoveryTimers) -> NeighborList {
    let window = timers.staleness_s();
    list.entries.retain(|r| now - r.last_seen <= window);
    list
}

pub fn report_to_server(node: NodeId, list: &NeighborList) -> Result<ConnectivityUpdate> {
    if list.owner != node {
        return Err(MoviError::input(format!(
            "{node} cannot report a list owned by {}",
            list.owner
        )));
    }
    Ok(ConnectivityUpdate {
        node,
        entries: list.entries.clone(),
        at: list.generated_at,
    })
}

/// First tick at or after `from` on the grid `phase + k * interval`.
pub fn next_slot(from: f64, phase: f64, interval: f64) -> f64 {
    if from <= phase {
        return phase;
    }
    let k = ((from - phase) / interval).ceil();
    let t = phase + k * interval;
    // guard against the ceil landing one slot early through rounding
    if t < from {
        phase + (k + 1.0) * interval
    } else {
        t
    }
}

/// Deterministic phase offset for node `id` among `n` nodes.
pub fn stagger_phase(node: NodeId, node_count: u32, interval: f64) -> f64 {
    node.0 as f64 * (interval / node_count.max(1) as f64)
}
