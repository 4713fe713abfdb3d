use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::NodeId;

pub type TransferId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    TransferComplete(TransferId),
    PieceRequest(NodeId),
    ReportTick(NodeId),
    ProbeRound(NodeId),
    PlayoutTick(NodeId),
    /// Index into the scenario's trust events.
    TrustEvent(usize),
    NodeJoin(NodeId),
}

impl EventKind {
    /// Tie-break rank at equal timestamps.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::TransferComplete(_) => 0,
            EventKind::PieceRequest(_) => 1,
            EventKind::ReportTick(_) => 2,
            EventKind::ProbeRound(_) => 3,
            EventKind::PlayoutTick(_) => 4,
            EventKind::TrustEvent(_) => 5,
            EventKind::NodeJoin(_) => 6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub at: f64,
    pub kind: EventKind,
    /// Node the event concerns; the secondary tie-break.
    pub node: NodeId,
    seq: u64,
}

impl Event {
    fn key(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.node.cmp(&other.node))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key(self)
    }
}

/// Min-queue over `(at, kind rank, node, insertion order)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: f64, kind: EventKind, node: NodeId) {
        self.seq += 1;
        self.heap.push(Event {
            at,
            kind,
            node,
            seq: self.seq,
        });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_rank_node_then_fifo() {
        let mut q = EventQueue::new();
        q.push(1.0, EventKind::PlayoutTick(NodeId(0)), NodeId(0));
        q.push(1.0, EventKind::TransferComplete(9), NodeId(5));
        q.push(0.5, EventKind::NodeJoin(NodeId(3)), NodeId(3));
        q.push(1.0, EventKind::PieceRequest(NodeId(2)), NodeId(2));
        q.push(1.0, EventKind::PieceRequest(NodeId(1)), NodeId(1));
        q.push(1.0, EventKind::PieceRequest(NodeId(1)), NodeId(1));
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.kind, e.seq))
            .collect();
        assert_eq!(
            order,
            vec![
                (EventKind::NodeJoin(NodeId(3)), 3),
                (EventKind::TransferComplete(9), 2),
                (EventKind::PieceRequest(NodeId(1)), 5),
                (EventKind::PieceRequest(NodeId(1)), 6),
                (EventKind::PieceRequest(NodeId(2)), 4),
                (EventKind::PlayoutTick(NodeId(0)), 1),
            ]
        );
    }
}
