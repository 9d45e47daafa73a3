//! Collective exit times against a memoized longest-path oracle built from
//! the exported message table.

use std::collections::HashMap;

use desync_core::collectives::{exit_times, reduce_broadcast, Schedule};
use desync_core::model::{CollectiveAlgo, CollectiveVariant, ExitSemantics, NetworkSpec};
use desync_core::network::Fabric;
use proptest::prelude::*;

const ALPHA: f64 = 2e-6;
const BETA: f64 = 12.5e9;
const EAGER_LIMIT: u64 = 16384;
const HANDSHAKE: f64 = 1e-6;

fn net() -> NetworkSpec {
    NetworkSpec {
        latency: ALPHA,
        bandwidth: BETA,
        eager_limit: EAGER_LIMIT,
        rendezvous_handshake: HANDSHAKE,
        intra_node: None,
    }
}

struct Msg {
    round: usize,
    from: usize,
    to: usize,
    bytes: u64,
}

/// Dependency DAG over (rank, round) completion nodes.
struct Oracle {
    p: usize,
    rounds: usize,
    msgs: Vec<Msg>,
    entry: Vec<f64>,
    /// Last round each rank waits on.
    last: Vec<Option<usize>>,
    memo: HashMap<(usize, usize), f64>,
}

impl Oracle {
    fn new(table: &str, p: usize, entry: &[f64], permeable: bool) -> Self {
        let msgs: Vec<Msg> = table
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<u64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                Msg {
                    round: f[0] as usize,
                    from: f[1] as usize,
                    to: f[2] as usize,
                    bytes: f[3],
                }
            })
            .collect();
        let rounds = msgs.iter().map(|m| m.round + 1).max().unwrap_or(0);
        let last = (0..p)
            .map(|r| {
                msgs.iter()
                    .filter(|m| m.from == r || (!permeable && m.to == r))
                    .map(|m| m.round)
                    .max()
            })
            .collect();
        Oracle {
            p,
            rounds,
            msgs,
            entry: entry.to_vec(),
            last,
            memo: HashMap::new(),
        }
    }

    /// Time rank `r` posts its operations of `round`.
    fn post(&mut self, r: usize, round: usize) -> f64 {
        match self.last[r] {
            Some(l) if round > l => self.done(r, l),
            None => self.entry[r],
            _ if round == 0 => self.entry[r],
            _ => self.done(r, round - 1),
        }
    }

    /// Time rank `r` has finished everything it does in `round`.
    fn done(&mut self, r: usize, round: usize) -> f64 {
        if let Some(&t) = self.memo.get(&(r, round)) {
            return t;
        }
        let mine = self.post(r, round);
        let mut t = mine;
        let involved: Vec<(usize, usize, u64)> = self
            .msgs
            .iter()
            .filter(|m| m.round == round && (m.from == r || m.to == r))
            .map(|m| (m.from, m.to, m.bytes))
            .collect();
        for (from, to, bytes) in involved {
            let wire = ALPHA + bytes as f64 / BETA;
            let peer = if from == r { to } else { from };
            let theirs = self.post(peer, round);
            t = t.max(if bytes <= EAGER_LIMIT {
                if to == r {
                    theirs + wire
                } else {
                    mine
                }
            } else {
                mine.max(theirs) + HANDSHAKE + wire
            });
        }
        self.memo.insert((r, round), t);
        t
    }

    fn exits(&mut self) -> Vec<f64> {
        (0..self.p)
            .map(|r| match self.last[r] {
                Some(l) => self.done(r, l),
                None => self.entry[r],
            })
            .collect()
    }
}

fn oracle_exits(s: &Schedule, entry: &[f64], semantics: ExitSemantics) -> Vec<f64> {
    let permeable = semantics == ExitSemantics::Permeable && s.variant != CollectiveVariant::Barrier;
    let mut o = Oracle::new(&s.to_table(','), s.num_ranks, entry, permeable);
    assert!(o.rounds <= s.num_rounds());
    o.exits()
}

fn assert_close(got: &[f64], want: &[f64]) {
    for (r, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= 1e-15 + 1e-12 * w.abs(), "rank {r}: {g} vs {w}");
    }
}

#[test]
fn permeable_reduce_broadcast_regression() {
    let c = ALPHA + 8.0 / BETA;
    let d = 1e-3;
    let s = reduce_broadcast(4, 8, 0).unwrap();
    let entry = [0.0, 0.0, 0.0, d];
    let fabric = Fabric::uniform(net());
    let perm = exit_times(&s, &entry, &fabric, ExitSemantics::Permeable).unwrap();
    let full = exit_times(&s, &entry, &fabric, ExitSemantics::Full).unwrap();
    assert_close(&perm, &[d + 2.0 * c, 0.0, d + 3.0 * c, d]);
    assert_close(&full, &[d + 2.0 * c, d + 3.0 * c, d + 3.0 * c, d + 4.0 * c]);
    assert_close(&perm, &oracle_exits(&s, &entry, ExitSemantics::Permeable));
    assert_close(&full, &oracle_exits(&s, &entry, ExitSemantics::Full));
}

#[test]
fn large_payload_uses_rendezvous() {
    let s = Schedule::build(&CollectiveAlgo::new(CollectiveVariant::RecursiveDoubling), 6, 1 << 20)
        .unwrap();
    let entry = [0.0, 3e-4, 1e-4, 0.0, 7e-4, 2e-4];
    let got = exit_times(&s, &entry, &Fabric::uniform(net()), ExitSemantics::Full).unwrap();
    assert_close(&got, &oracle_exits(&s, &entry, ExitSemantics::Full));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn exit_times_follow_longest_path(
        variant in 0usize..5,
        p in 1usize..24,
        bytes in prop_oneof![Just(0u64), Just(8), Just(4096), Just(1 << 20)],
        permeable in any::<bool>(),
        root_seed in any::<usize>(),
        skew in prop::collection::vec(0.0f64..1e-3, 24),
    ) {
        let mut algo = CollectiveAlgo::new(CollectiveVariant::ALL[variant]);
        algo.root = root_seed % p;
        if permeable {
            algo = algo.permeable();
        }
        let s = Schedule::build(&algo, p, bytes).unwrap();
        let entry = &skew[..p];
        let got = exit_times(&s, entry, &Fabric::uniform(net()), algo.exit_semantics).unwrap();
        let want = oracle_exits(&s, entry, algo.exit_semantics);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-15 + 1e-12 * w.abs(), "{got:?} vs {want:?}");
        }
    }
}
