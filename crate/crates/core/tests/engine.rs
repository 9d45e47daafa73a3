use desync_core::collectives::{exit_times, Schedule};
use desync_core::engine::{composite_run, simulate, SimError};
use desync_core::model::{
    CollectiveAlgo, CollectiveVariant, Direction, ExitSemantics, Injection, MachineSpec,
    NetworkSpec, NoiseSpec, PhaseSpec, ProtocolMode, RunConfig,
};
use desync_core::network::Fabric;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn machine(domains: usize, per_domain: usize, b1: f64, b_max: f64) -> MachineSpec {
    MachineSpec {
        num_nodes: 1,
        domains_per_node: domains,
        ranks_per_domain: per_domain,
        domain_bandwidth: b_max,
        single_rank_bandwidth: b1,
        saturation_curve: None,
    }
}

fn network() -> NetworkSpec {
    NetworkSpec {
        latency: 2e-6,
        bandwidth: 12.5e9,
        eager_limit: 16384,
        rendezvous_handshake: 0.0,
        intra_node: None,
    }
}

fn chain_exchange(bytes: u64) -> PhaseSpec {
    PhaseSpec::Comm {
        partners: vec![1, -1],
        message_bytes: bytes,
        mode: ProtocolMode::Rendezvous,
        periodic: false,
        direction: Direction::Both,
    }
}

#[test]
fn two_ranks_share_bandwidth() {
    let b1 = 10e9;
    let v = 1e9;
    let cfg = RunConfig::new(
        machine(1, 2, b1, 1.5 * b1),
        network(),
        vec![PhaseSpec::compute(v as u64)],
        3,
    );
    let trace = simulate(&cfg).unwrap();
    let expected = 2.0 * v / (1.5 * b1);
    for r in 0..2 {
        for rec in trace.rank(r) {
            assert!((rec.wall_seconds() - expected).abs() <= 1e-9 * expected);
            assert!((rec.wall_seconds() - 4.0 / 3.0 * v / b1).abs() <= 1e-9 * expected);
        }
    }
}

#[test]
fn staggered_join_follows_processor_sharing() {
    // Rank 1 starts half-way through rank 0's solo phase.
    let b1 = 10e9;
    let b_max = 1.5 * b1;
    let v = 1e9;
    let mut cfg = RunConfig::new(
        machine(1, 2, b1, b_max),
        network(),
        vec![PhaseSpec::compute(v as u64)],
        1,
    );
    cfg.initial_skew = vec![0.0, 0.05];
    let trace = simulate(&cfg).unwrap();
    // Rank 0 streams alone for 0.05 s, then both share b_max / 2.
    let left0 = v - b1 * 0.05;
    let t0 = 0.05 + left0 / (b_max / 2.0);
    let done1 = (b_max / 2.0) * (t0 - 0.05);
    let t1 = t0 + (v - done1) / b1;
    assert!((trace.record(0, 0).t_exit - t0).abs() < 1e-12);
    assert!((trace.record(1, 0).t_exit - t1).abs() < 1e-12);
}

/// Longest-path recursion over the chain dependency graph: each rank
/// leaves its exchange when the later of its own and each neighbor's post
/// plus the transfer cost has passed.
fn chain_oracle(p: usize, iters: usize, work: f64, cost: f64, delay: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut start = vec![0.0; p];
    let mut waits = vec![vec![0.0; p]; iters];
    for i in 0..iters {
        let end: Vec<f64> = (0..p)
            .map(|r| {
                let extra: f64 = delay
                    .iter()
                    .filter(|&&(di, dr, _)| di == i && dr == r)
                    .map(|d| d.2)
                    .sum();
                start[r] + work + extra
            })
            .collect();
        for r in 0..p {
            let mut done = end[r];
            for q in [r.wrapping_sub(1), r + 1] {
                if q < p {
                    done = done.max(end[r].max(end[q]) + cost);
                }
            }
            waits[i][r] = done - end[r];
            start[r] = done;
        }
    }
    waits
}

fn idle_wave(p: usize, source: usize, inject_at: usize, iters: usize) {
    let work = 1e-3;
    let delta = 5e-3;
    let bytes = 1_000_000;
    let mut cfg = RunConfig::new(
        machine(p, 1, 10e9, 10e9),
        network(),
        vec![
            PhaseSpec::Compute {
                traffic_bytes: 0,
                scalable_seconds: work,
            },
            chain_exchange(bytes),
        ],
        iters,
    );
    cfg.noise = NoiseSpec::explicit(vec![Injection {
        iteration: inject_at as u64,
        rank: source,
        extra_seconds: delta,
    }]);
    let trace = simulate(&cfg).unwrap();
    let cost = network().latency + bytes as f64 / network().bandwidth;
    let oracle = chain_oracle(p, iters, work, cost, &[(inject_at, source, delta)]);
    for i in 0..iters {
        for r in 0..p {
            let got = trace.record(r, i).mpi_wait_seconds;
            assert!((got - oracle[i][r]).abs() < 1e-12, "rank {r} iteration {i}: {got} vs {}", oracle[i][r]);
        }
    }
    for r in 0..p {
        let n = r.abs_diff(source);
        if n == 0 {
            continue;
        }
        let first = (0..iters).find(|&i| trace.record(r, i).mpi_wait_seconds - cost >= delta / 2.0);
        // Counting the injection iteration as the first, distance n is hit
        // in the n-th iteration.
        assert_eq!(first, Some(inject_at + n - 1), "rank {r}");
    }
}

#[test]
fn idle_wave_four_rank_chain() {
    idle_wave(4, 0, 0, 8);
}

#[test]
fn idle_wave_sixteen_rank_chain() {
    idle_wave(16, 8, 3, 20);
}

#[test]
fn identical_configs_give_identical_traces() {
    let mut cfg = RunConfig::new(
        machine(2, 4, 10e9, 25e9),
        network(),
        vec![PhaseSpec::compute(2_000_000), PhaseSpec::exchange(vec![1, -1], 200_000)],
        200,
    );
    cfg.noise = NoiseSpec::periodic(3, 1e-4, 11);
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    cfg.noise.seed = 12;
    assert_ne!(simulate(&cfg).unwrap().digest(), a.digest());
}

#[test]
fn lock_step_degeneracy() {
    let cfg = RunConfig::new(
        machine(4, 8, 10e9, 40e9),
        network(),
        vec![PhaseSpec::compute(4_000_000)],
        50,
    );
    let trace = simulate(&cfg).unwrap();
    let composite = composite_run(&cfg).unwrap();
    for r in 0..cfg.num_ranks {
        for (i, rec) in trace.rank(r).iter().enumerate() {
            assert!((rec.wall_seconds() - composite[i]).abs() <= 1e-6 * composite[i]);
        }
    }
    assert!((composite[0] - 4_000_000.0 / (40e9 / 8.0)).abs() < 1e-15);
}

#[test]
fn composite_of_table_column() {
    // Compute and exchange calibrated to 5.896 ms and 6.34 ms.
    let m = machine(4, 8, 16e9, 64e9);
    let net = network();
    let traffic = (5.896e-3 * 64e9 / 8.0) as u64;
    let bytes = ((6.34e-3 - net.latency) * net.bandwidth) as u64;
    let cfg = RunConfig::new(m, net, vec![PhaseSpec::compute(traffic), PhaseSpec::exchange(vec![1, -1], bytes)], 3);
    let c = composite_run(&cfg).unwrap();
    assert!((c[0] - 12.236e-3).abs() < 1e-8);
}

#[test]
fn overlap_bound_holds_under_noise() {
    let b1 = 10e9;
    let traffic = 2_000_000u64;
    let mut cfg = RunConfig::new(
        machine(2, 8, b1, 2.0 * b1),
        network(),
        vec![PhaseSpec::compute(traffic), PhaseSpec::exchange(vec![1, -1], 300_000)],
        400,
    );
    cfg.noise = NoiseSpec::periodic(4, 2e-5, 5);
    let trace = simulate(&cfg).unwrap();
    let t_sat = traffic as f64 / (2.0 * b1 / 8.0);
    for r in 0..cfg.num_ranks {
        let recs = trace.rank(r);
        let span = recs.last().unwrap().t_exit - recs[0].t_enter;
        assert!(recs.len() as f64 / span <= 1.0 / t_sat * (1.0 + 1e-9));
    }
}

#[test]
fn collective_run_matches_exit_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in CollectiveVariant::ALL {
        for p in [1, 2, 5, 6, 8, 12] {
            for semantics in [ExitSemantics::Full, ExitSemantics::Permeable] {
                let mut algo = CollectiveAlgo::new(variant);
                algo.exit_semantics = semantics;
                let bytes = if rng.gen_bool(0.5) { 8 } else { 1 << 20 };
                let mut cfg = RunConfig::new(
                    machine(1, p, 10e9, 10e9),
                    network(),
                    vec![PhaseSpec::collective(algo.clone(), bytes, 1)],
                    1,
                );
                cfg.initial_skew = (0..p).map(|_| rng.gen_range(0.0..1e-4)).collect();
                let trace = simulate(&cfg).unwrap();
                let schedule = Schedule::build(&algo, p, bytes).unwrap();
                let fabric = Fabric::new(network(), &cfg.machine);
                let exit = exit_times(&schedule, &cfg.initial_skew, &fabric, semantics).unwrap();
                for r in 0..p {
                    assert_eq!(trace.record(r, 0).t_exit, exit[r], "{variant:?} P={p} {semantics:?} rank {r}");
                }
            }
        }
    }
}

#[test]
fn unmatched_receives_report_cycle() {
    let cfg = RunConfig::new(
        machine(1, 3, 10e9, 10e9),
        network(),
        vec![PhaseSpec::Comm {
            partners: vec![1],
            message_bytes: 64,
            mode: ProtocolMode::Auto,
            periodic: true,
            direction: Direction::RecvOnly,
        }],
        1,
    );
    match simulate(&cfg) {
        Err(SimError::Deadlock { cycle, .. }) => assert_eq!(cycle, vec![0, 2, 1]),
        other => panic!("expected deadlock, got {other:?}"),
    }
    assert!(composite_run(&cfg).is_err());
}

#[test]
fn trace_serializations_round_trip() {
    let mut cfg = RunConfig::new(
        machine(1, 4, 10e9, 20e9),
        network(),
        vec![PhaseSpec::compute(1_000_000), PhaseSpec::exchange(vec![1], 4096)],
        20,
    );
    cfg.noise = NoiseSpec::periodic(2, 3e-5, 1);
    cfg.seed = 77;
    let trace = simulate(&cfg).unwrap();
    let csv = trace.to_csv();
    assert!(csv.starts_with(&format!("# config_hash={} seed=77", cfg.config_hash())));
    let back = desync_core::engine::Trace::from_csv(&csv).unwrap();
    assert_eq!(back.records, trace.records);
    assert_eq!(back.meta, trace.meta);
    let back = desync_core::engine::Trace::from_jsonl(&trace.to_jsonl()).unwrap();
    assert_eq!(back.records, trace.records);
}

#[test]
fn full_detail_records_every_phase() {
    let mut cfg = RunConfig::new(
        machine(1, 2, 10e9, 20e9),
        network(),
        vec![PhaseSpec::compute(1_000_000), PhaseSpec::exchange(vec![1], 4096)],
        5,
    );
    cfg.trace_detail = desync_core::model::TraceDetail::Full;
    let trace = simulate(&cfg).unwrap();
    assert_eq!(trace.phases.len(), 2 * 2 * 5);
    for ph in &trace.phases {
        let rec = trace.record(ph.rank, ph.iteration);
        assert!(ph.t_enter >= rec.t_enter && ph.t_exit <= rec.t_exit);
    }
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        1usize..3,
        1usize..5,
        1.0f64..4.0,
        0u64..3_000_000,
        0.0f64..1e-4,
        prop::sample::select(vec![0u64, 64, 20_000, 400_000]),
        prop::sample::select(CollectiveVariant::ALL.to_vec()),
        1u64..4,
        any::<bool>(),
        (1u64..6, 0.0f64..5e-4, any::<u64>()),
        0.0f64..0.3,
    )
        .prop_map(
            |(domains, per, ratio, traffic, scalable, msg, variant, step, permeable, noise, spread)| {
                let mut algo = CollectiveAlgo::new(variant);
                if permeable {
                    algo = algo.permeable();
                }
                let mut cfg = RunConfig::new(
                    machine(domains, per, 5e9, 5e9 * ratio),
                    network(),
                    vec![
                        PhaseSpec::Compute {
                            traffic_bytes: traffic,
                            scalable_seconds: scalable,
                        },
                        PhaseSpec::exchange(vec![1, -1], msg),
                        PhaseSpec::collective(algo, 8, step),
                    ],
                    12,
                );
                cfg.noise = NoiseSpec::periodic(noise.0, noise.1, noise.2);
                cfg.imbalance = desync_core::model::ImbalanceSpec::linear_spread(cfg.num_ranks, spread);
                cfg
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_satisfy_invariants(cfg in arb_config()) {
        let trace = simulate(&cfg).unwrap();
        prop_assert!(trace.check_invariants(1e-9).is_ok(), "{:?}", trace.check_invariants(1e-9));
        for r in 0..cfg.num_ranks {
            let recs = trace.rank(r);
            let sum: f64 = recs.iter().map(|x| x.compute_seconds + x.mpi_wait_seconds + x.noise_seconds).sum();
            let span = recs.last().unwrap().t_exit - recs[0].t_enter;
            prop_assert!((sum - span).abs() <= 1e-9 * span.max(1e-12));
        }
        prop_assert_eq!(simulate(&cfg).unwrap(), trace);
    }
}
