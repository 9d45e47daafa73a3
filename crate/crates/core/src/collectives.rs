//! Collective algorithms rendered as rounds of pairwise messages.
//!
//! Executing a schedule round by round with the point-to-point model gives
//! each algorithm its own cost and its own way of coupling ranks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{CollectiveAlgo, CollectiveVariant, ExitSemantics, ProtocolMode};
use crate::network::{Fabric, MessageEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectiveError {
    #[error("root {root} out of range for {num_ranks} ranks")]
    RootOutOfRange { root: usize, num_ranks: usize },
    #[error("schedule has {expected} ranks but {found} entry times were given")]
    EntryMismatch { expected: usize, found: usize },
    #[error("round {round}: rank {sender} sends to {receiver}, which does not receive from it")]
    Inconsistent {
        round: usize,
        sender: usize,
        receiver: usize,
    },
}

/// What one rank does in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub send_to: Option<usize>,
    pub recv_from: Option<usize>,
    pub bytes: u64,
}

impl Slot {
    fn exchange(peer: usize, bytes: u64) -> Self {
        Slot {
            send_to: Some(peer),
            recv_from: Some(peer),
            bytes,
        }
    }

    fn send(to: usize, bytes: u64) -> Self {
        Slot {
            send_to: Some(to),
            recv_from: None,
            bytes,
        }
    }

    fn recv(from: usize, bytes: u64) -> Self {
        Slot {
            send_to: None,
            recv_from: Some(from),
            bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    /// Indexed by rank; `None` is an idle slot.
    pub slots: Vec<Option<Slot>>,
}

impl Round {
    fn idle(num_ranks: usize) -> Self {
        Round {
            slots: vec![None; num_ranks],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub variant: CollectiveVariant,
    pub num_ranks: usize,
    pub rounds: Vec<Round>,
}

/// Fixed-size set of ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankSet {
    words: Vec<u64>,
    len: usize,
}

impl RankSet {
    pub fn empty(len: usize) -> Self {
        RankSet {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn singleton(len: usize, rank: usize) -> Self {
        let mut s = Self::empty(len);
        s.insert(rank);
        s
    }

    pub fn insert(&mut self, rank: usize) {
        self.words[rank / 64] |= 1 << (rank % 64);
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.words[rank / 64] & (1 << (rank % 64)) != 0
    }

    pub fn union_with(&mut self, other: &RankSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.len
    }
}

fn floor_log2(p: usize) -> u32 {
    usize::BITS - 1 - p.leading_zeros()
}

fn ceil_log2(p: usize) -> u32 {
    if p <= 1 {
        0
    } else {
        floor_log2(p - 1) + 1
    }
}

/// Pre-round folding ranks >= 2^m onto their partner r - 2^m.
fn fold_in(num_ranks: usize, core: usize, bytes: u64) -> Round {
    let mut round = Round::idle(num_ranks);
    for r in core..num_ranks {
        round.slots[r] = Some(Slot::send(r - core, bytes));
        round.slots[r - core] = Some(Slot::recv(r, bytes));
    }
    round
}

fn fold_out(num_ranks: usize, core: usize, bytes: u64) -> Round {
    let mut round = Round::idle(num_ranks);
    for r in core..num_ranks {
        round.slots[r - core] = Some(Slot::send(r, bytes));
        round.slots[r] = Some(Slot::recv(r - core, bytes));
    }
    round
}

fn pairwise(num_ranks: usize, core: usize, distance: usize, bytes: u64) -> Round {
    let mut round = Round::idle(num_ranks);
    for r in 0..core {
        round.slots[r] = Some(Slot::exchange(r ^ distance, bytes));
    }
    round
}

/// Reduce-scatter then allgather around the ring, 2(P-1) rounds of
/// `ceil(n / P)` bytes.
pub fn ring_allreduce(num_ranks: usize, bytes: u64) -> Schedule {
    let p = num_ranks;
    let chunk = if p == 0 { 0 } else { bytes.div_ceil(p as u64) };
    let rounds = (0..2 * p.saturating_sub(1))
        .map(|_| Round {
            slots: (0..p)
                .map(|r| {
                    Some(Slot {
                        send_to: Some((r + 1) % p),
                        recv_from: Some((r + p - 1) % p),
                        bytes: chunk,
                    })
                })
                .collect(),
        })
        .collect();
    Schedule {
        variant: CollectiveVariant::Ring,
        num_ranks,
        rounds,
    }
}

/// Pairwise exchange with `r XOR 2^j`; non-powers of two fold the excess
/// ranks in before and out after.
pub fn recursive_doubling(num_ranks: usize, bytes: u64) -> Schedule {
    let mut rounds = Vec::new();
    if num_ranks > 1 {
        let m = floor_log2(num_ranks);
        let core = 1usize << m;
        if core < num_ranks {
            rounds.push(fold_in(num_ranks, core, bytes));
        }
        for j in 0..m {
            rounds.push(pairwise(num_ranks, core, 1 << j, bytes));
        }
        if core < num_ranks {
            rounds.push(fold_out(num_ranks, core, bytes));
        }
    }
    Schedule {
        variant: CollectiveVariant::RecursiveDoubling,
        num_ranks,
        rounds,
    }
}

/// Recursive-halving reduce-scatter followed by recursive-doubling
/// allgather, with the same folding as [`recursive_doubling`].
pub fn rabenseifner(num_ranks: usize, bytes: u64) -> Schedule {
    let mut rounds = Vec::new();
    if num_ranks > 1 {
        let m = floor_log2(num_ranks);
        let core = 1usize << m;
        if core < num_ranks {
            rounds.push(fold_in(num_ranks, core, bytes));
        }
        for j in 0..m {
            let distance = core >> (j + 1);
            rounds.push(pairwise(num_ranks, core, distance, bytes.div_ceil(1 << (j + 1))));
        }
        for j in 0..m {
            let distance = 1usize << j;
            rounds.push(pairwise(num_ranks, core, distance, bytes.div_ceil(1 << (m - j))));
        }
        if core < num_ranks {
            rounds.push(fold_out(num_ranks, core, bytes));
        }
    }
    Schedule {
        variant: CollectiveVariant::Rabenseifner,
        num_ranks,
        rounds,
    }
}

/// Binomial-tree reduce to `root`, then binomial broadcast from it.
pub fn reduce_broadcast(
    num_ranks: usize,
    bytes: u64,
    root: usize,
) -> Result<Schedule, CollectiveError> {
    let p = num_ranks;
    if root >= p.max(1) {
        return Err(CollectiveError::RootOutOfRange { root, num_ranks });
    }
    let depth = ceil_log2(p);
    let rank_of = |v: usize| (v + root) % p;
    let mut rounds = Vec::new();
    for j in 0..depth {
        let d = 1usize << j;
        let mut round = Round::idle(p);
        for v in 0..p {
            if v % (2 * d) == d {
                round.slots[rank_of(v)] = Some(Slot::send(rank_of(v - d), bytes));
            } else if v % (2 * d) == 0 && v + d < p {
                round.slots[rank_of(v)] = Some(Slot::recv(rank_of(v + d), bytes));
            }
        }
        rounds.push(round);
    }
    for j in 0..depth {
        let d = 1usize << (depth - 1 - j);
        let mut round = Round::idle(p);
        for v in 0..p {
            if v % (2 * d) == 0 && v + d < p {
                round.slots[rank_of(v)] = Some(Slot::send(rank_of(v + d), bytes));
            } else if v % (2 * d) == d {
                round.slots[rank_of(v)] = Some(Slot::recv(rank_of(v - d), bytes));
            }
        }
        rounds.push(round);
    }
    Ok(Schedule {
        variant: CollectiveVariant::ReduceBroadcast,
        num_ranks,
        rounds,
    })
}

/// Dissemination-style barrier: recursive doubling with empty messages.
pub fn barrier(num_ranks: usize) -> Schedule {
    Schedule {
        variant: CollectiveVariant::Barrier,
        ..recursive_doubling(num_ranks, 0)
    }
}

impl Schedule {
    pub fn build(
        algo: &CollectiveAlgo,
        num_ranks: usize,
        bytes: u64,
    ) -> Result<Schedule, CollectiveError> {
        Ok(match algo.variant {
            CollectiveVariant::Ring => ring_allreduce(num_ranks, bytes),
            CollectiveVariant::RecursiveDoubling => recursive_doubling(num_ranks, bytes),
            CollectiveVariant::Rabenseifner => rabenseifner(num_ranks, bytes),
            CollectiveVariant::ReduceBroadcast => reduce_broadcast(num_ranks, bytes, algo.root)?,
            CollectiveVariant::Barrier => barrier(num_ranks),
        })
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn slot(&self, round: usize, rank: usize) -> Option<Slot> {
        self.rounds[round].slots[rank]
    }

    /// Checks that every send is matched by a receive in the same round.
    pub fn check_consistency(&self) -> Result<(), CollectiveError> {
        for (j, round) in self.rounds.iter().enumerate() {
            for (r, slot) in round.slots.iter().enumerate() {
                let Some(slot) = slot else { continue };
                if let Some(q) = slot.send_to {
                    let matched = round.slots[q]
                        .is_some_and(|s| s.recv_from == Some(r) && s.bytes == slot.bytes);
                    if !matched {
                        return Err(CollectiveError::Inconsistent {
                            round: j,
                            sender: r,
                            receiver: q,
                        });
                    }
                }
                if let Some(q) = slot.recv_from {
                    if round.slots[q].and_then(|s| s.send_to) != Some(r) {
                        return Err(CollectiveError::Inconsistent {
                            round: j,
                            sender: q,
                            receiver: r,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Contribution sets at every rank after each round; entry 0 is the
    /// state before the first round.
    pub fn contribution_history(&self) -> Vec<Vec<RankSet>> {
        let p = self.num_ranks;
        let mut state: Vec<RankSet> = (0..p).map(|r| RankSet::singleton(p, r)).collect();
        let mut history = vec![state.clone()];
        for round in &self.rounds {
            let before = state.clone();
            for (r, slot) in round.slots.iter().enumerate() {
                if let Some(q) = slot.and_then(|s| s.recv_from) {
                    state[r].union_with(&before[q]);
                }
            }
            history.push(state.clone());
        }
        history
    }

    pub fn final_contributions(&self) -> Vec<RankSet> {
        let p = self.num_ranks;
        let mut state: Vec<RankSet> = (0..p).map(|r| RankSet::singleton(p, r)).collect();
        for round in &self.rounds {
            let before = state.clone();
            for (r, slot) in round.slots.iter().enumerate() {
                if let Some(q) = slot.and_then(|s| s.recv_from) {
                    state[r].union_with(&before[q]);
                }
            }
        }
        state
    }

    pub fn is_complete(&self) -> bool {
        self.final_contributions().iter().all(RankSet::is_full)
    }

    /// Index of the last round in which each rank sends, if any.
    pub fn last_send_round(&self) -> Vec<Option<usize>> {
        (0..self.num_ranks)
            .map(|r| {
                (0..self.rounds.len())
                    .rev()
                    .find(|&j| self.rounds[j].slots[r].is_some_and(|s| s.send_to.is_some()))
            })
            .collect()
    }

    /// Last round each rank waits on under the given semantics.
    pub fn awaited_rounds(&self, semantics: ExitSemantics) -> Vec<Option<usize>> {
        match semantics {
            ExitSemantics::Full => (0..self.num_ranks)
                .map(|r| (0..self.rounds.len()).rev().find(|&j| self.rounds[j].slots[r].is_some()))
                .collect(),
            ExitSemantics::Permeable => self.last_send_round(),
        }
    }

    /// Delimiter-separated `round,sender,receiver,bytes` table.
    pub fn to_table(&self, delimiter: char) -> String {
        let d = delimiter;
        let mut out = format!("round{d}sender{d}receiver{d}bytes\n");
        for (j, round) in self.rounds.iter().enumerate() {
            for (r, slot) in round.slots.iter().enumerate() {
                if let Some(Slot {
                    send_to: Some(q),
                    bytes,
                    ..
                }) = slot
                {
                    writeln!(out, "{j}{d}{r}{d}{q}{d}{bytes}").unwrap();
                }
            }
        }
        out
    }
}

/// Exit time of every rank when the schedule runs with the given entry
/// times. Each rank posts round `j` when its round `j - 1` is done; a round
/// is done when its send and receive are both complete.
///
/// Under permeable semantics a rank leaves after its last send round; its
/// later receives are posted at its exit time and never awaited.
pub fn exit_times(
    schedule: &Schedule,
    entry: &[f64],
    fabric: &Fabric,
    semantics: ExitSemantics,
) -> Result<Vec<f64>, CollectiveError> {
    let p = schedule.num_ranks;
    if entry.len() != p {
        return Err(CollectiveError::EntryMismatch {
            expected: p,
            found: entry.len(),
        });
    }
    let semantics = if schedule.variant == CollectiveVariant::Barrier {
        ExitSemantics::Full
    } else {
        semantics
    };
    let awaited = schedule.awaited_rounds(semantics);
    let mut ready = entry.to_vec();
    for (j, round) in schedule.rounds.iter().enumerate() {
        let mut next = ready.clone();
        for (r, slot) in round.slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            if awaited[r].map_or(true, |last| j > last) {
                continue;
            }
            let mode = fabric.protocol(slot.bytes, ProtocolMode::Auto);
            let mut done = ready[r];
            if let Some(q) = slot.send_to {
                let msg = fabric.complete(MessageEvent::new(r, q, slot.bytes, mode, ready[r], ready[q]));
                done = done.max(msg.send_complete);
            }
            if let Some(q) = slot.recv_from {
                let msg = fabric.complete(MessageEvent::new(q, r, slot.bytes, mode, ready[q], ready[r]));
                done = done.max(msg.recv_complete);
            }
            next[r] = done;
        }
        ready = next;
    }
    Ok(ready)
}

/// Fraction of the entry spread removed by the collective:
/// `1 - spread(exit) / spread(entry)`.
pub fn resync(entry: &[f64], exit: &[f64]) -> f64 {
    fn spread(v: &[f64]) -> f64 {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
    let before = spread(entry);
    if before == 0.0 {
        return 1.0;
    }
    1.0 - spread(exit) / before
}
