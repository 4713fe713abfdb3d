//! The server's scheduling brain.
//!
//! [`ServerState`] holds the connectivity, content and trust maps plus the
//! set of nodes currently in a transfer and the latest remaining buffer
//! time (RBT) each node reported. [`ServerState::schedule_piece`] runs one
//! request through the filter pipeline:
//!
//! 0. the requester's reported neighbours,
//! 1. that hold the piece,
//! 2. that pass the trust gate,
//! 3. that the requester hears at or above the RSSI threshold,
//! 4. that are not already sending or receiving.
//!
//! The survivor with the largest RBT serves the piece (lowest id on ties);
//! with no survivor the server delivers it over the cellular link.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::discovery::{ConnectivityUpdate, NeighborList};
use crate::error::{MoviError, Result};
use crate::model::{canonical_order, ConnectivityMap, ContentMap, NodeId, PieceId, Source};
use crate::trust::TrustState;

/// Candidates surviving each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub neighbors: u32,
    pub have_piece: u32,
    pub trusted: u32,
    pub rssi_ok: u32,
    pub idle: u32,
}

impl StageCounts {
    pub fn as_array(&self) -> [u32; 5] {
        [
            self.neighbors,
            self.have_piece,
            self.trusted,
            self.rssi_ok,
            self.idle,
        ]
    }

    pub fn is_monotone(&self) -> bool {
        self.as_array().windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub stages: StageCounts,
    /// RBT of the chosen peer; absent for server delivery.
    pub winning_rbt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub requester: NodeId,
    pub piece: PieceId,
    pub source: Source,
    pub audit: Audit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Everybody joins one ad-hoc group.
    #[default]
    Global,
    /// Connected components of the mutual-reachability graph.
    Components,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub connectivity: ConnectivityMap,
    pub content: ContentMap,
    pub trust: TrustState,
    busy: BTreeSet<NodeId>,
    pub rssi_threshold_dbm: f64,
    rbt_view: BTreeMap<NodeId, f64>,
    known: BTreeSet<NodeId>,
}

impl ServerState {
    pub fn new(piece_count: u32, trust: TrustState, rssi_threshold_dbm: f64) -> Self {
        ServerState {
            connectivity: ConnectivityMap::new(),
            content: ContentMap::new(piece_count),
            trust,
            busy: BTreeSet::new(),
            rssi_threshold_dbm,
            rbt_view: BTreeMap::new(),
            known: BTreeSet::new(),
        }
    }

    /// Makes `node` known to the server with no pieces and zero RBT.
    pub fn register(&mut self, node: NodeId) {
        self.known.insert(node);
        self.content.register(node);
        self.rbt_view.entry(node).or_insert(0.0);
    }

    pub fn known_nodes(&self) -> &BTreeSet<NodeId> {
        &self.known
    }

    pub fn busy(&self) -> &BTreeSet<NodeId> {
        &self.busy
    }

    pub fn is_busy(&self, node: NodeId) -> bool {
        self.busy.contains(&node)
    }

    /// Last RBT reported by `node`; nodes that never reported count as 0.
    pub fn rbt_of(&self, node: NodeId) -> f64 {
        self.rbt_view.get(&node).copied().unwrap_or(0.0)
    }

    pub fn rbt_view(&self) -> &BTreeMap<NodeId, f64> {
        &self.rbt_view
    }

    pub fn schedule_piece(&self, requester: NodeId, piece: PieceId) -> Result<ScheduleDecision> {
        if self.busy.contains(&requester) {
            return Err(MoviError::protocol(format!(
                "{requester} requested {piece} while busy"
            )));
        }
        if self.content.has_piece(requester, piece) {
            return Err(MoviError::protocol(format!(
                "{requester} requested {piece} it already holds"
            )));
        }
        if piece.0 >= self.content.piece_count() {
            return Err(MoviError::input(format!("piece {piece} out of range")));
        }

        let mut stages = StageCounts::default();
        let neighbors = self.connectivity.neighbors(requester);
        stages.neighbors = neighbors.len() as u32;

        let holding: Vec<_> = neighbors
            .iter()
            .filter(|r| self.content.has_piece(r.neighbor, piece))
            .collect();
        stages.have_piece = holding.len() as u32;

        let trusted: Vec<_> = holding
            .into_iter()
            .filter(|r| self.trust.is_schedulable(r.neighbor))
            .collect();
        stages.trusted = trusted.len() as u32;

        let audible: Vec<_> = trusted
            .into_iter()
            .filter(|r| r.rssi_dbm >= self.rssi_threshold_dbm)
            .collect();
        stages.rssi_ok = audible.len() as u32;

        let idle: Vec<_> = audible
            .into_iter()
            .filter(|r| !self.busy.contains(&r.neighbor))
            .collect();
        stages.idle = idle.len() as u32;

        let best = idle
            .iter()
            .map(|r| (r.neighbor, self.rbt_of(r.neighbor)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| canonical_order(b.0, a.0)));

        let (source, winning_rbt) = match best {
            Some((peer, rbt)) => (Source::Peer(peer), Some(rbt)),
            None => (Source::Server, None),
        };
        Ok(ScheduleDecision {
            requester,
            piece,
            source,
            audit: Audit {
                stages,
                winning_rbt,
            },
        })
    }

    /// Replaces the server's view of `node`'s neighbourhood.
    pub fn apply_connectivity_report(&mut self, node: NodeId, list: &NeighborList) -> Result<()> {
        self.connectivity.replace(node, list.entries.clone())
    }

    pub fn apply_connectivity_update(&mut self, update: ConnectivityUpdate) -> Result<()> {
        self.connectivity.replace(update.node, update.entries)
    }

    pub fn apply_content_update(&mut self, node: NodeId, piece: PieceId) -> Result<()> {
        self.content.add(node, piece)?;
        Ok(())
    }

    pub fn apply_rbt_report(&mut self, node: NodeId, rbt: f64) {
        self.rbt_view.insert(node, rbt.max(0.0));
    }

    pub fn mark_busy(&mut self, node: NodeId) -> Result<()> {
        if !self.busy.insert(node) {
            return Err(MoviError::protocol(format!("{node} marked busy twice")));
        }
        Ok(())
    }

    pub fn mark_idle(&mut self, node: NodeId) -> Result<()> {
        if !self.busy.remove(&node) {
            return Err(MoviError::protocol(format!(
                "{node} marked idle while not busy"
            )));
        }
        Ok(())
    }

    /// Ad-hoc group assignment. Returns the groups, each sorted, ordered by
    /// their smallest member.
    pub fn assign_groups(&self, nodes: &BTreeSet<NodeId>, policy: Grouping) -> Vec<Vec<NodeId>> {
        match policy {
            Grouping::Global => {
                if nodes.is_empty() {
                    Vec::new()
                } else {
                    vec![nodes.iter().copied().collect()]
                }
            }
            Grouping::Components => {
                let mut seen = BTreeSet::new();
                let mut groups = Vec::new();
                for &start in nodes {
                    if !seen.insert(start) {
                        continue;
                    }
                    let mut group = vec![start];
                    let mut queue = VecDeque::from([start]);
                    while let Some(n) = queue.pop_front() {
                        for rec in self.connectivity.neighbors(n) {
                            let m = rec.neighbor;
                            if nodes.contains(&m) && self.connectivity.lists(m, n) && seen.insert(m)
                            {
                                group.push(m);
                                queue.push_back(m);
                            }
                        }
                    }
                    group.sort();
                    groups.push(group);
                }
                groups
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::WIFI_FREQUENCY_MHZ;
    use crate::model::NeighborRecord;
    use crate::trust::TrustEvaluation;

    fn rec(n: u32, rssi: f64) -> NeighborRecord {
        NeighborRecord {
            neighbor: NodeId(n),
            rssi_dbm: rssi,
            frequency_mhz: WIFI_FREQUENCY_MHZ,
            addr_meta: String::new(),
            last_seen: 0.0,
        }
    }

    fn list(owner: u32, entries: Vec<NeighborRecord>) -> NeighborList {
        NeighborList {
            owner: NodeId(owner),
            entries,
            generated_at: 0.0,
        }
    }

    fn state() -> ServerState {
        let mut s = ServerState::new(10, TrustState::default(), -75.0);
        for n in 0..10 {
            s.register(NodeId(n));
        }
        s
    }

    #[test]
    fn no_neighbours_means_server() {
        let s = state();
        let d = s.schedule_piece(NodeId(0), PieceId(0)).unwrap();
        assert_eq!(d.source, Source::Server);
        assert_eq!(d.audit.stages, StageCounts::default());
        assert_eq!(d.audit.winning_rbt, None);
    }

    #[test]
    fn largest_rbt_wins() {
        let mut s = state();
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(1, -60.0), rec(2, -60.0)]))
            .unwrap();
        for n in [1, 2] {
            s.apply_content_update(NodeId(n), PieceId(3)).unwrap();
        }
        s.apply_rbt_report(NodeId(1), 8.0);
        s.apply_rbt_report(NodeId(2), 12.0);
        let d = s.schedule_piece(NodeId(0), PieceId(3)).unwrap();
        assert_eq!(d.source, Source::Peer(NodeId(2)));
        assert_eq!(d.audit.winning_rbt, Some(12.0));
        assert_eq!(d.audit.stages.as_array(), [2, 2, 2, 2, 2]);
    }

    #[test]
    fn low_trust_sole_candidate_falls_back_to_server() {
        let mut s = state();
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(1, -60.0)]))
            .unwrap();
        s.apply_content_update(NodeId(1), PieceId(0)).unwrap();
        s.apply_rbt_report(NodeId(1), 20.0);
        s.trust
            .record_evaluation(TrustEvaluation {
                at: 0.0,
                evaluator: NodeId(2),
                subject: NodeId(1),
                value: 0.2,
            })
            .unwrap();
        let d = s.schedule_piece(NodeId(0), PieceId(0)).unwrap();
        assert_eq!(d.source, Source::Server);
        assert_eq!(d.audit.stages.as_array(), [1, 1, 0, 0, 0]);
    }

    #[test]
    fn rbt_tie_goes_to_lowest_id() {
        let mut s = state();
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(4, -60.0), rec(9, -60.0)]))
            .unwrap();
        for n in [4, 9] {
            s.apply_content_update(NodeId(n), PieceId(0)).unwrap();
            s.apply_rbt_report(NodeId(n), 10.0);
        }
        let d = s.schedule_piece(NodeId(0), PieceId(0)).unwrap();
        assert_eq!(d.source, Source::Peer(NodeId(4)));
    }

    #[test]
    fn rssi_threshold_is_inclusive_and_busy_excluded() {
        let mut s = state();
        s.apply_connectivity_report(
            NodeId(0),
            &list(0, vec![rec(1, -75.0), rec(2, -75.1), rec(3, -50.0)]),
        )
        .unwrap();
        for n in [1, 2, 3] {
            s.apply_content_update(NodeId(n), PieceId(0)).unwrap();
        }
        s.apply_rbt_report(NodeId(3), 50.0);
        s.mark_busy(NodeId(3)).unwrap();
        let d = s.schedule_piece(NodeId(0), PieceId(0)).unwrap();
        assert_eq!(d.source, Source::Peer(NodeId(1)));
        assert_eq!(d.audit.stages.as_array(), [3, 3, 3, 2, 1]);
    }

    #[test]
    fn precondition_violations() {
        let mut s = state();
        s.apply_content_update(NodeId(0), PieceId(1)).unwrap();
        assert!(matches!(
            s.schedule_piece(NodeId(0), PieceId(1)),
            Err(MoviError::Protocol(_))
        ));
        s.mark_busy(NodeId(0)).unwrap();
        assert!(matches!(
            s.schedule_piece(NodeId(0), PieceId(2)),
            Err(MoviError::Protocol(_))
        ));
    }

    #[test]
    fn busy_round_trip() {
        let mut s = state();
        s.mark_busy(NodeId(1)).unwrap();
        assert!(s.is_busy(NodeId(1)));
        assert!(s.mark_busy(NodeId(1)).is_err());
        s.mark_idle(NodeId(1)).unwrap();
        assert!(!s.is_busy(NodeId(1)));
        assert!(matches!(
            s.mark_idle(NodeId(1)),
            Err(MoviError::Protocol(_))
        ));
    }

    #[test]
    fn connectivity_report_replaces() {
        let mut s = state();
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(1, -55.0)]))
            .unwrap();
        assert_eq!(s.connectivity.neighbors(NodeId(0)).len(), 1);
        assert_eq!(s.connectivity.neighbors(NodeId(0))[0].rssi_dbm, -55.0);
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(2, -60.0)]))
            .unwrap();
        let ids: Vec<_> = s
            .connectivity
            .neighbors(NodeId(0))
            .iter()
            .map(|r| r.neighbor)
            .collect();
        assert_eq!(ids, vec![NodeId(2)]);
        s.apply_connectivity_report(NodeId(0), &list(0, vec![]))
            .unwrap();
        assert!(s.connectivity.neighbors(NodeId(0)).is_empty());
    }

    #[test]
    fn content_updates_accumulate() {
        let mut s = state();
        for k in 0..5 {
            s.apply_content_update(NodeId(2), PieceId(k)).unwrap();
            s.apply_content_update(NodeId(2), PieceId(k)).unwrap();
        }
        let held: Vec<_> = s
            .content
            .holdings(NodeId(2))
            .unwrap()
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(held, (0..5).collect::<Vec<_>>());
        assert!(s.apply_content_update(NodeId(2), PieceId(10)).is_err());
    }

    #[test]
    fn grouping_policies() {
        let mut s = state();
        let nodes: BTreeSet<_> = (0..5).map(NodeId).collect();
        assert_eq!(s.assign_groups(&nodes, Grouping::Global).len(), 1);
        // 0-1-2 mutually reachable, 3-4 a second cluster; 2 hears 3 but not vice versa
        s.apply_connectivity_report(NodeId(0), &list(0, vec![rec(1, -50.0)]))
            .unwrap();
        s.apply_connectivity_report(NodeId(1), &list(1, vec![rec(0, -50.0), rec(2, -50.0)]))
            .unwrap();
        s.apply_connectivity_report(NodeId(2), &list(2, vec![rec(1, -50.0), rec(3, -80.0)]))
            .unwrap();
        s.apply_connectivity_report(NodeId(3), &list(3, vec![rec(4, -50.0)]))
            .unwrap();
        s.apply_connectivity_report(NodeId(4), &list(4, vec![rec(3, -50.0)]))
            .unwrap();
        let groups = s.assign_groups(&nodes, Grouping::Components);
        assert_eq!(
            groups,
            vec![
                vec![NodeId(0), NodeId(1), NodeId(2)],
                vec![NodeId(3), NodeId(4)]
            ]
        );
        let with_isolated: BTreeSet<_> = (0..6).map(NodeId).collect();
        let groups = s.assign_groups(&with_isolated, Grouping::Components);
        assert_eq!(groups.last().unwrap(), &vec![NodeId(5)]);
    }
}
