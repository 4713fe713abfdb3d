//! Shared domain vocabulary: node and piece identifiers, the video
//! description, and the server-side content and connectivity maps.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};

/// Identity of a mobile node. Ids are dense `0..N` for an N-node scenario.
///
/// The server is deliberately not a `NodeId`; see [`Source::Server`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Deterministic tie-break order between nodes: plain integer order.
pub fn canonical_order(a: NodeId, b: NodeId) -> Ordering {
    a.0.cmp(&b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PieceId(pub u32);

impl PieceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PieceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Where a piece comes from: a neighbouring peer over Wi-Fi, or the
/// seeding server over the cellular link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Peer(NodeId),
    Server,
}

impl Source {
    pub fn peer(self) -> Option<NodeId> {
        match self {
            Source::Peer(n) => Some(n),
            Source::Server => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Peer(n) => write!(f, "peer({n})"),
            Source::Server => f.write_str("server"),
        }
    }
}

/// Constant-bitrate video split into equal pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSpec {
    pub piece_count: u32,
    pub piece_size_bytes: u64,
    pub bitrate_bps: f64,
}

impl Default for VideoSpec {
    fn default() -> Self {
        // 256 KiB pieces at 512 kbit/s (binary kilo) give 4 s of video per
        // piece; 75 pieces make a five minute clip.
        VideoSpec {
            piece_count: 75,
            piece_size_bytes: 256 * 1024,
            bitrate_bps: 512.0 * 1024.0,
        }
    }
}

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        if self.piece_count == 0 {
            return Err(MoviError::config("video.piece_count must be >= 1"));
        }
        if self.piece_size_bytes == 0 {
            return Err(MoviError::config("video.piece_size_bytes must be > 0"));
        }
        if !(self.bitrate_bps.is_finite() && self.bitrate_bps > 0.0) {
            return Err(MoviError::config(
                "video.bitrate_bps must be finite and > 0",
            ));
        }
        Ok(())
    }

    pub fn piece_bits(&self) -> f64 {
        self.piece_size_bytes as f64 * 8.0
    }

    /// Seconds of playback carried by one piece.
    pub fn piece_duration(&self) -> f64 {
        self.piece_bits() / self.bitrate_bps
    }

    pub fn duration(&self) -> f64 {
        self.piece_count as f64 * self.piece_duration()
    }

    pub fn total_bytes(&self) -> u64 {
        self.piece_count as u64 * self.piece_size_bytes
    }

    pub fn contains(&self, piece: PieceId) -> bool {
        piece.0 < self.piece_count
    }

    pub fn pieces(&self) -> impl Iterator<Item = PieceId> {
        (0..self.piece_count).map(PieceId)
    }
}

/// Per-node piece holdings as known to the server. Monotone: pieces are
/// only ever added.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContentMap {
    piece_count: u32,
    holdings: BTreeMap<NodeId, BTreeSet<PieceId>>,
}

impl ContentMap {
    pub fn new(piece_count: u32) -> Self {
        ContentMap {
            piece_count,
            holdings: BTreeMap::new(),
        }
    }

    pub fn piece_count(&self) -> u32 {
        self.piece_count
    }

    /// Absent nodes hold nothing.
    pub fn has_piece(&self, node: NodeId, piece: PieceId) -> bool {
        self.holdings
            .get(&node)
            .is_some_and(|set| set.contains(&piece))
    }

    /// Like [`has_piece`](Self::has_piece), but the server is a seeder and
    /// always has everything.
    pub fn source_has_piece(&self, source: Source, piece: PieceId) -> bool {
        match source {
            Source::Server => piece.0 < self.piece_count,
            Source::Peer(n) => self.has_piece(n, piece),
        }
    }

    /// Adds `piece` to `node`'s holdings. Returns whether it was new.
    pub fn add(&mut self, node: NodeId, piece: PieceId) -> Result<bool> {
        if piece.0 >= self.piece_count {
            return Err(MoviError::input(format!(
                "piece {} out of range (piece_count {})",
                piece.0, self.piece_count
            )));
        }
        Ok(self.holdings.entry(node).or_default().insert(piece))
    }

    /// Makes `node` known with an empty holding set.
    pub fn register(&mut self, node: NodeId) {
        self.holdings.entry(node).or_default();
    }

    pub fn holdings(&self, node: NodeId) -> Option<&BTreeSet<PieceId>> {
        self.holdings.get(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.holdings.keys().copied()
    }
}

/// One entry of a node's neighbour list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub neighbor: NodeId,
    pub rssi_dbm: f64,
    pub frequency_mhz: f64,
    /// IP/MAC stand-in; never consulted by scheduling.
    pub addr_meta: String,
    pub last_seen: f64,
}

/// Server-side view of every node's most recently reported neighbours.
/// Not assumed symmetric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityMap {
    view: BTreeMap<NodeId, Vec<NeighborRecord>>,
}

impl ConnectivityMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces `node`'s neighbour list wholesale.
    pub fn replace(&mut self, node: NodeId, entries: Vec<NeighborRecord>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.neighbor == node {
                return Err(MoviError::protocol(format!(
                    "{node} lists itself as a neighbour"
                )));
            }
            if !seen.insert(e.neighbor) {
                return Err(MoviError::protocol(format!(
                    "{node} lists {} twice",
                    e.neighbor
                )));
            }
            if !e.rssi_dbm.is_finite() {
                return Err(MoviError::protocol(format!(
                    "{node} reported non-finite rssi for {}",
                    e.neighbor
                )));
            }
        }
        self.view.insert(node, entries);
        Ok(())
    }

    pub fn neighbors(&self, node: NodeId) -> &[NeighborRecord] {
        self.view.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lists(&self, node: NodeId, other: NodeId) -> bool {
        self.neighbors(node).iter().any(|r| r.neighbor == other)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.view.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_integer_order() {
        assert_eq!(canonical_order(NodeId(3), NodeId(7)), Ordering::Less);
        assert_eq!(canonical_order(NodeId(5), NodeId(5)), Ordering::Equal);
        let mut ids = vec![NodeId(9), NodeId(2), NodeId(4)];
        ids.sort_by(|a, b| canonical_order(*a, *b));
        assert_eq!(ids, vec![NodeId(2), NodeId(4), NodeId(9)]);
    }

    #[test]
    fn content_map_queries() {
        let mut map = ContentMap::new(10);
        assert!(!map.has_piece(NodeId(0), PieceId(0)));
        assert!(map.add(NodeId(1), PieceId(3)).unwrap());
        assert!(map.has_piece(NodeId(1), PieceId(3)));
        assert!(!map.add(NodeId(1), PieceId(3)).unwrap());
        assert!(map.source_has_piece(Source::Server, PieceId(9)));
        assert!(map.add(NodeId(1), PieceId(10)).is_err());
    }

    #[test]
    fn default_video_has_four_second_pieces() {
        let v = VideoSpec::default();
        assert_eq!(v.piece_duration(), 4.0);
        assert_eq!(v.duration(), 300.0);
    }

    #[test]
    fn connectivity_rejects_self_and_duplicates() {
        let rec = |n| NeighborRecord {
            neighbor: NodeId(n),
            rssi_dbm: -50.0,
            frequency_mhz: 2412.0,
            addr_meta: String::new(),
            last_seen: 0.0,
        };
        let mut map = ConnectivityMap::new();
        assert!(map.replace(NodeId(0), vec![rec(0)]).is_err());
        assert!(map.replace(NodeId(0), vec![rec(1), rec(1)]).is_err());
        map.replace(NodeId(0), vec![rec(1)]).unwrap();
        assert!(map.lists(NodeId(0), NodeId(1)));
        assert!(!map.lists(NodeId(1), NodeId(0)));
    }
}
