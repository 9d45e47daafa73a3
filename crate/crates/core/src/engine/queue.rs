use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Event kinds in tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    ComputeEnd,
    MessageReady,
    CollectiveRound,
    PhaseEnter,
    NoiseStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Rank,
    /// Earliest completion on a memory domain, valid only for this epoch.
    Domain { domain: usize, epoch: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub rank: usize,
    pub sequence: u64,
    pub target: Target,
}

impl Event {
    fn key(&self) -> (EventKind, usize, u64) {
        (self.kind, self.rank, self.sequence)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Lexicographic on (time, kind, rank, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.key().cmp(&other.key()))
    }
}

/// Min-queue of events with a monotone sequence counter.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<std::cmp::Reverse<Event>>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind, rank: usize, target: Target) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(std::cmp::Reverse(Event {
            time,
            kind,
            rank,
            sequence,
            target,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|e| e.0)
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
    fn pops_in_lexicographic_order() {
        let mut q = EventQueue::default();
        q.push(2.0, EventKind::ComputeEnd, 0, Target::Rank);
        q.push(1.0, EventKind::PhaseEnter, 3, Target::Rank);
        q.push(1.0, EventKind::PhaseEnter, 1, Target::Rank);
        q.push(1.0, EventKind::ComputeEnd, 5, Target::Rank);
        q.push(1.0, EventKind::PhaseEnter, 1, Target::Rank);
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.kind, e.rank, e.sequence))
            .collect();
        assert_eq!(
            order,
            vec![
                (1.0, EventKind::ComputeEnd, 5, 3),
                (1.0, EventKind::PhaseEnter, 1, 2),
                (1.0, EventKind::PhaseEnter, 1, 4),
                (1.0, EventKind::PhaseEnter, 3, 1),
                (2.0, EventKind::ComputeEnd, 0, 0),
            ]
        );
    }
}
