//! Discrete-event execution of the per-iteration phase lists of all ranks.
//!
//! Compute phases stream their traffic through the processor-sharing memory
//! domain, then run their scalable part and any injected noise. Exchange
//! phases and collective rounds post all sends and receives at once and
//! continue when every awaited message is complete.

mod queue;
mod trace;

pub use queue::{Event, EventKind, EventQueue, Target};
pub use trace::{IterationRecord, PhaseTiming, Trace, TraceError, TraceMeta};

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use thiserror::Error;

use crate::collectives::{exit_times, CollectiveError, Schedule};
use crate::contention::{ContentionError, DomainState, SaturationLaw};
use crate::model::{Direction, ExitSemantics, PhaseSpec, ProtocolMode, RunConfig, TraceDetail};
use crate::network::{Fabric, MessageEvent, Protocol};
use crate::noise;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("deadlock at t = {time}: waiting cycle {cycle:?}, blocked ranks {blocked:?}")]
    Deadlock {
        /// Smallest cycle of ranks each waiting on the next; empty when the
        /// blocked ranks wait on finished ones.
        cycle: Vec<usize>,
        blocked: Vec<usize>,
        time: f64,
    },
    #[error(transparent)]
    Contention(#[from] ContentionError),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
}

/// Peers of `rank` in a point-to-point phase as `(peer, tag)` pairs, tagged
/// by offset index. Rank `r` sends to `r + o` and receives from `r - o`.
pub fn exchange_peers(
    partners: &[i64],
    periodic: bool,
    direction: Direction,
    rank: usize,
    num_ranks: usize,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let shift = |o: i64| -> Option<usize> {
        let t = rank as i64 + o;
        let p = num_ranks as i64;
        if periodic {
            Some(t.rem_euclid(p) as usize)
        } else if (0..p).contains(&t) {
            Some(t as usize)
        } else {
            None
        }
    };
    let mut sends = Vec::new();
    let mut recvs = Vec::new();
    for (tag, &o) in partners.iter().enumerate() {
        if direction != Direction::RecvOnly {
            if let Some(q) = shift(o).filter(|&q| q != rank) {
                sends.push((q, tag));
            }
        }
        if direction != Direction::SendOnly {
            if let Some(q) = shift(-o).filter(|&q| q != rank) {
                recvs.push((q, tag));
            }
        }
    }
    (sends, recvs)
}

enum PhasePlan {
    Compute {
        traffic: f64,
        scalable: f64,
    },
    Exchange {
        sends: Vec<Vec<(usize, usize)>>,
        recvs: Vec<Vec<(usize, usize)>>,
        bytes: u64,
        mode: ProtocolMode,
    },
    Collective {
        schedule: Schedule,
        awaited: Vec<Option<usize>>,
        semantics: ExitSemantics,
        step: u64,
    },
}

fn build_plans(config: &RunConfig) -> Result<Vec<PhasePlan>, SimError> {
    let p = config.num_ranks;
    config
        .program
        .iter()
        .map(|phase| {
            Ok(match phase {
                PhaseSpec::Compute {
                    traffic_bytes,
                    scalable_seconds,
                } => PhasePlan::Compute {
                    traffic: *traffic_bytes as f64,
                    scalable: *scalable_seconds,
                },
                PhaseSpec::Comm {
                    partners,
                    message_bytes,
                    mode,
                    periodic,
                    direction,
                } => {
                    let (sends, recvs) = (0..p)
                        .map(|r| exchange_peers(partners, *periodic, *direction, r, p))
                        .unzip();
                    PhasePlan::Exchange {
                        sends,
                        recvs,
                        bytes: *message_bytes,
                        mode: *mode,
                    }
                }
                PhaseSpec::Collective {
                    algorithm,
                    payload_bytes,
                    step,
                } => {
                    let schedule = Schedule::build(algorithm, p, *payload_bytes)?;
                    let semantics = algorithm.effective_semantics();
                    let awaited = schedule.awaited_rounds(semantics);
                    PhasePlan::Collective {
                        schedule,
                        awaited,
                        semantics,
                        step: *step,
                    }
                }
            })
        })
        .collect()
}

fn runs_in(step: u64, iteration: usize) -> bool {
    step > 0 && (iteration as u64 + 1) % step == 0
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Idle,
    Contended,
    Scalable,
    Noise,
    Exchange,
    Collective,
    Done,
}

#[derive(Debug, Clone, Copy, Default)]
struct Totals {
    compute: f64,
    mpi: f64,
    noise: f64,
    comm: f64,
    collective: f64,
    contended: f64,
    traffic: f64,
}

#[derive(Debug, Clone)]
struct RankState {
    iteration: usize,
    phase: usize,
    stage: Stage,
    iter_enter: f64,
    phase_enter: f64,
    noise_start: f64,
    scalable: f64,
    noise: f64,
    pending: usize,
    ready_at: f64,
    round: usize,
    totals: Totals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MsgKey {
    src: usize,
    dst: usize,
    iteration: usize,
    phase: usize,
    tag: usize,
}

#[derive(Debug, Clone, Copy)]
struct MsgState {
    bytes: u64,
    mode: Protocol,
    post_send: Option<f64>,
    post_recv: Option<f64>,
    send_awaited: bool,
    recv_awaited: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Send,
    Recv,
}

struct Sim<'a> {
    config: &'a RunConfig,
    plans: Rc<Vec<PhasePlan>>,
    fabric: Fabric,
    domains: Vec<DomainState>,
    epochs: Vec<u64>,
    queue: EventQueue,
    ranks: Vec<RankState>,
    messages: HashMap<MsgKey, MsgState>,
    noise: Vec<Vec<(usize, f64)>>,
    first_compute: Option<usize>,
    posting: Option<usize>,
    records: Vec<IterationRecord>,
    phases: Vec<PhaseTiming>,
    finished: usize,
    now: f64,
}

/// Runs `config` to completion. The configuration is expected to be
/// validated; identical configurations give bit-identical traces.
pub fn simulate(config: &RunConfig) -> Result<Trace, SimError> {
    let p = config.num_ranks;
    let n = config.num_iterations;
    let law = SaturationLaw::from_machine(&config.machine);
    let mut noise = vec![Vec::new(); n];
    for inj in noise::plan(&config.noise, p, n).entries {
        if (inj.iteration as usize) < n && inj.rank < p {
            noise[inj.iteration as usize].push((inj.rank, inj.extra_seconds));
        }
    }
    let blank = IterationRecord {
        iteration: 0,
        rank: 0,
        t_enter: 0.0,
        t_exit: 0.0,
        compute_seconds: 0.0,
        mpi_wait_seconds: 0.0,
        noise_seconds: 0.0,
        comm_seconds: 0.0,
        collective_seconds: 0.0,
        contended_seconds: 0.0,
        traffic_bytes: 0.0,
    };
    let mut sim = Sim {
        config,
        plans: Rc::new(build_plans(config)?),
        fabric: Fabric::new(config.network.clone(), &config.machine),
        domains: (0..config.machine.num_domains())
            .map(|d| DomainState::new(d, law.clone()))
            .collect(),
        epochs: vec![0; config.machine.num_domains()],
        queue: EventQueue::default(),
        ranks: (0..p)
            .map(|r| {
                let t0 = config.initial_skew.get(r).copied().unwrap_or(0.0);
                RankState {
                    iteration: 0,
                    phase: 0,
                    stage: Stage::Idle,
                    iter_enter: t0,
                    phase_enter: t0,
                    noise_start: t0,
                    scalable: 0.0,
                    noise: 0.0,
                    pending: 0,
                    ready_at: t0,
                    round: 0,
                    totals: Totals::default(),
                }
            })
            .collect(),
        messages: HashMap::new(),
        noise,
        first_compute: config
            .program
            .iter()
            .position(|ph| matches!(ph, PhaseSpec::Compute { .. })),
        posting: None,
        records: vec![blank; p * n],
        phases: Vec::new(),
        finished: 0,
        now: 0.0,
    };
    for r in 0..p {
        if n == 0 {
            sim.ranks[r].stage = Stage::Done;
            sim.finished += 1;
        } else {
            let t0 = sim.ranks[r].iter_enter;
            sim.queue.push(t0, EventKind::PhaseEnter, r, Target::Rank);
        }
    }
    sim.run()?;
    let total_wall_time = sim
        .records
        .iter()
        .map(|r| r.t_exit)
        .fold(0.0, f64::max);
    Ok(Trace {
        meta: TraceMeta {
            config_hash: config.config_hash(),
            seed: config.seed,
            num_ranks: p,
            num_iterations: n,
            total_wall_time,
            detail: config.trace_detail,
        },
        records: sim.records,
        phases: sim.phases,
    })
}

impl Sim<'_> {
    fn run(&mut self) -> Result<(), SimError> {
        while let Some(ev) = self.queue.pop() {
            let t = ev.time;
            self.now = t;
            let r = ev.rank;
            match (ev.kind, ev.target) {
                (EventKind::ComputeEnd, Target::Domain { domain, epoch }) => {
                    if epoch == self.epochs[domain] {
                        self.domain_due(domain, t)?;
                    }
                }
                (EventKind::ComputeEnd, Target::Rank) => match self.ranks[r].stage {
                    Stage::Scalable => self.after_scalable(r, t),
                    Stage::Noise => self.end_phase(r, t),
                    s => unreachable!("compute end in stage {s:?}"),
                },
                (EventKind::NoiseStart, _) => {
                    let st = &mut self.ranks[r];
                    st.stage = Stage::Noise;
                    st.noise_start = t;
                    let end = t + st.noise;
                    self.queue.push(end, EventKind::ComputeEnd, r, Target::Rank);
                }
                (EventKind::MessageReady, _) => self.end_phase(r, t),
                (EventKind::CollectiveRound, _) => self.advance_collective(r, t),
                (EventKind::PhaseEnter, _) => self.enter_phase(r, t)?,
            }
        }
        if self.finished < self.ranks.len() {
            return Err(self.deadlock());
        }
        Ok(())
    }

    fn arm_domain(&mut self, d: usize) {
        self.epochs[d] += 1;
        if let Some(p) = self.domains[d].next_completion() {
            self.queue.push(
                p.completion,
                EventKind::ComputeEnd,
                p.rank,
                Target::Domain {
                    domain: d,
                    epoch: self.epochs[d],
                },
            );
        }
    }

    fn domain_due(&mut self, d: usize, t: f64) -> Result<(), SimError> {
        let done = self.domains[d].complete_due(t)?;
        self.arm_domain(d);
        for m in done {
            self.after_contended(m.rank, t);
        }
        Ok(())
    }

    fn enter_phase(&mut self, r: usize, t: f64) -> Result<(), SimError> {
        let plans = Rc::clone(&self.plans);
        if self.ranks[r].phase == plans.len() {
            self.finish_iteration(r, t);
            if self.ranks[r].stage == Stage::Done {
                return Ok(());
            }
            if plans.is_empty() {
                self.queue.push(t, EventKind::PhaseEnter, r, Target::Rank);
                return Ok(());
            }
        }
        let st = &mut self.ranks[r];
        st.phase_enter = t;
        let phase = st.phase;
        let iteration = st.iteration;
        match &plans[phase] {
            PhasePlan::Compute { traffic, scalable } => {
                let m = self.config.imbalance.multipliers.get(r).copied().unwrap_or(1.0);
                let bytes = traffic * m;
                st.scalable = scalable * m;
                st.noise = if self.first_compute == Some(phase) {
                    self.noise[iteration]
                        .iter()
                        .filter(|(q, _)| *q == r)
                        .map(|(_, d)| d)
                        .sum()
                } else {
                    0.0
                };
                st.totals.traffic += bytes;
                if bytes > 0.0 {
                    st.stage = Stage::Contended;
                    let d = self.config.machine.domain_of(r);
                    self.domains[d].join(t, r, bytes)?;
                    self.arm_domain(d);
                } else {
                    self.after_contended(r, t);
                }
            }
            PhasePlan::Exchange {
                sends,
                recvs,
                bytes,
                mode,
            } => {
                st.stage = Stage::Exchange;
                let proto = self.fabric.protocol(*bytes, *mode);
                let sends: Vec<_> = sends[r].iter().map(|&(q, tag)| (q, tag, *bytes, proto)).collect();
                let recvs: Vec<_> = recvs[r].iter().map(|&(q, tag)| (q, tag, *bytes, proto)).collect();
                self.post_batch(r, t, &sends, &recvs);
            }
            PhasePlan::Collective { step, .. } => {
                if runs_in(*step, iteration) {
                    st.stage = Stage::Collective;
                    st.round = 0;
                    self.advance_collective(r, t);
                } else {
                    self.end_phase(r, t);
                }
            }
        }
        Ok(())
    }

    fn finish_iteration(&mut self, r: usize, t: f64) {
        let n = self.config.num_iterations;
        let st = &mut self.ranks[r];
        let tot = st.totals;
        self.records[r * n + st.iteration] = IterationRecord {
            iteration: st.iteration,
            rank: r,
            t_enter: st.iter_enter,
            t_exit: t,
            compute_seconds: tot.compute,
            mpi_wait_seconds: tot.mpi,
            noise_seconds: tot.noise,
            comm_seconds: tot.comm,
            collective_seconds: tot.collective,
            contended_seconds: tot.contended,
            traffic_bytes: tot.traffic,
        };
        st.iteration += 1;
        st.phase = 0;
        st.totals = Totals::default();
        st.iter_enter = t;
        if st.iteration == n {
            st.stage = Stage::Done;
            self.finished += 1;
        }
    }

    fn after_contended(&mut self, r: usize, t: f64) {
        let st = &mut self.ranks[r];
        st.totals.contended += t - st.phase_enter;
        if st.scalable > 0.0 {
            st.stage = Stage::Scalable;
            let end = t + st.scalable;
            self.queue.push(end, EventKind::ComputeEnd, r, Target::Rank);
        } else {
            self.after_scalable(r, t);
        }
    }

    fn after_scalable(&mut self, r: usize, t: f64) {
        if self.ranks[r].noise > 0.0 {
            self.queue.push(t, EventKind::NoiseStart, r, Target::Rank);
        } else {
            self.end_phase(r, t);
        }
    }

    fn end_phase(&mut self, r: usize, t: f64) {
        let st = &mut self.ranks[r];
        let dt = t - st.phase_enter;
        match &self.plans[st.phase] {
            PhasePlan::Compute { .. } => {
                let noise = if st.noise > 0.0 { t - st.noise_start } else { 0.0 };
                st.totals.noise += noise;
                st.totals.compute += dt - noise;
            }
            PhasePlan::Exchange { .. } => {
                st.totals.mpi += dt;
                st.totals.comm += dt;
            }
            PhasePlan::Collective { .. } => {
                st.totals.mpi += dt;
                st.totals.collective += dt;
            }
        }
        if self.config.trace_detail == TraceDetail::Full {
            self.phases.push(PhaseTiming {
                iteration: st.iteration,
                rank: r,
                phase: st.phase,
                t_enter: st.phase_enter,
                t_exit: t,
            });
        }
        st.phase += 1;
        st.stage = Stage::Idle;
        self.queue.push(t, EventKind::PhaseEnter, r, Target::Rank);
    }

    /// Posts the next non-idle awaited round, or leaves the collective,
    /// posting any receives it no longer waits for.
    fn advance_collective(&mut self, r: usize, t: f64) {
        let plans = Rc::clone(&self.plans);
        let st = &self.ranks[r];
        let PhasePlan::Collective {
            schedule, awaited, ..
        } = &plans[st.phase]
        else {
            unreachable!("collective round outside a collective phase");
        };
        let mut j = st.round;
        if let Some(last) = awaited[r] {
            while j <= last {
                if let Some(slot) = schedule.slot(j, r) {
                    self.ranks[r].round = j + 1;
                    let proto = self.fabric.protocol(slot.bytes, ProtocolMode::Auto);
                    let sends: Vec<_> = slot.send_to.map(|q| (q, j, slot.bytes, proto)).into_iter().collect();
                    let recvs: Vec<_> = slot.recv_from.map(|q| (q, j, slot.bytes, proto)).into_iter().collect();
                    self.post_batch(r, t, &sends, &recvs);
                    return;
                }
                j += 1;
            }
        }
        let first_detached = awaited[r].map_or(0, |last| last + 1);
        let (iteration, phase) = (self.ranks[r].iteration, self.ranks[r].phase);
        let mut due = Vec::new();
        for j in first_detached..schedule.num_rounds() {
            if let Some(slot) = schedule.slot(j, r) {
                if let Some(q) = slot.recv_from {
                    let key = MsgKey {
                        src: q,
                        dst: r,
                        iteration,
                        phase,
                        tag: j,
                    };
                    let proto = self.fabric.protocol(slot.bytes, ProtocolMode::Auto);
                    self.post(key, slot.bytes, proto, Side::Recv, t, false, &mut due);
                }
            }
        }
        for key in due {
            self.resolve(key);
        }
        self.end_phase(r, t);
    }

    #[allow(clippy::too_many_arguments)]
    fn post(
        &mut self,
        key: MsgKey,
        bytes: u64,
        mode: Protocol,
        side: Side,
        t: f64,
        awaited: bool,
        due: &mut Vec<MsgKey>,
    ) {
        let st = self.messages.entry(key).or_insert(MsgState {
            bytes,
            mode,
            post_send: None,
            post_recv: None,
            send_awaited: false,
            recv_awaited: false,
        });
        match side {
            Side::Send => {
                st.post_send = Some(t);
                st.send_awaited = awaited;
            }
            Side::Recv => {
                st.post_recv = Some(t);
                st.recv_awaited = awaited;
            }
        }
        if st.post_send.is_some() && st.post_recv.is_some() {
            due.push(key);
        }
    }

    /// Posts sends and receives of rank `r` as `(peer, tag, bytes, mode)`.
    fn post_batch(
        &mut self,
        r: usize,
        t: f64,
        sends: &[(usize, usize, u64, Protocol)],
        recvs: &[(usize, usize, u64, Protocol)],
    ) {
        let (iteration, phase) = (self.ranks[r].iteration, self.ranks[r].phase);
        self.ranks[r].pending = 0;
        self.ranks[r].ready_at = t;
        self.posting = Some(r);
        let mut due = Vec::new();
        for &(q, tag, bytes, mode) in sends {
            let awaited = mode == Protocol::Rendezvous;
            if awaited {
                self.ranks[r].pending += 1;
            }
            let key = MsgKey {
                src: r,
                dst: q,
                iteration,
                phase,
                tag,
            };
            self.post(key, bytes, mode, Side::Send, t, awaited, &mut due);
        }
        for &(q, tag, bytes, mode) in recvs {
            self.ranks[r].pending += 1;
            let key = MsgKey {
                src: q,
                dst: r,
                iteration,
                phase,
                tag,
            };
            self.post(key, bytes, mode, Side::Recv, t, true, &mut due);
        }
        for key in due {
            self.resolve(key);
        }
        self.posting = None;
        if self.ranks[r].pending == 0 {
            self.schedule_ready(r);
        }
    }

    fn resolve(&mut self, key: MsgKey) {
        let st = self.messages.remove(&key).expect("resolved message exists");
        let msg = self.fabric.complete(MessageEvent::new(
            key.src,
            key.dst,
            st.bytes,
            st.mode,
            st.post_send.unwrap(),
            st.post_recv.unwrap(),
        ));
        if st.send_awaited {
            self.notify(key.src, msg.send_complete);
        }
        if st.recv_awaited {
            self.notify(key.dst, msg.recv_complete);
        }
    }

    fn notify(&mut self, r: usize, complete: f64) {
        let st = &mut self.ranks[r];
        st.ready_at = st.ready_at.max(complete);
        st.pending -= 1;
        if st.pending == 0 && self.posting != Some(r) {
            self.schedule_ready(r);
        }
    }

    fn schedule_ready(&mut self, r: usize) {
        let st = &self.ranks[r];
        let kind = match st.stage {
            Stage::Exchange => EventKind::MessageReady,
            Stage::Collective => EventKind::CollectiveRound,
            s => unreachable!("ready in stage {s:?}"),
        };
        let t = st.ready_at.max(self.now);
        self.queue.push(t, kind, r, Target::Rank);
    }

    fn deadlock(&self) -> SimError {
        let blocked: Vec<usize> = (0..self.ranks.len())
            .filter(|&r| self.ranks[r].stage != Stage::Done)
            .collect();
        let mut waits: Vec<Vec<usize>> = vec![Vec::new(); self.ranks.len()];
        for (key, st) in &self.messages {
            if st.send_awaited && st.post_send.is_some() && st.post_recv.is_none() {
                waits[key.src].push(key.dst);
            }
            if st.recv_awaited && st.post_recv.is_some() && st.post_send.is_none() {
                waits[key.dst].push(key.src);
            }
        }
        for w in &mut waits {
            w.sort_unstable();
            w.dedup();
        }
        let mut best: Option<Vec<usize>> = None;
        for &start in &blocked {
            if let Some(cycle) = shortest_cycle(&waits, start) {
                let better = best
                    .as_ref()
                    .map_or(true, |b| (cycle.len(), &cycle) < (b.len(), b));
                if better {
                    best = Some(cycle);
                }
            }
        }
        SimError::Deadlock {
            cycle: best.unwrap_or_default(),
            blocked,
            time: self.now,
        }
    }
}

/// Shortest cycle through `start` in the wait-for graph, rotated so the
/// smallest rank comes first.
fn shortest_cycle(waits: &[Vec<usize>], start: usize) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; waits.len()];
    let mut queue = VecDeque::from([start]);
    let mut seen = vec![false; waits.len()];
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &waits[u] {
            if v == start {
                let mut path = vec![u];
                let mut x = u;
                while x != start {
                    x = parent[x];
                    path.push(x);
                }
                path.reverse();
                let pivot = path.iter().enumerate().min_by_key(|(_, &r)| r).unwrap().0;
                path.rotate_left(pivot);
                return Some(path);
            }
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}

/// Lock-step cost parts of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeBreakdown {
    /// Slowest rank's compute at full domain occupancy.
    pub compute: f64,
    /// Exchanges with all messages posted at once.
    pub comm: f64,
    /// Critical path of each collective phase with its step.
    pub collectives: Vec<(u64, f64)>,
    pub num_iterations: usize,
}

impl CompositeBreakdown {
    /// Per-iteration lock-step times.
    pub fn series(&self) -> Vec<f64> {
        (0..self.num_iterations)
            .map(|i| {
                self.compute
                    + self.comm
                    + self
                        .collectives
                        .iter()
                        .filter(|(step, _)| runs_in(*step, i))
                        .map(|(_, c)| c)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Communication (amortized collectives included) over compute.
    pub fn cer(&self) -> f64 {
        let amortized: f64 = self
            .collectives
            .iter()
            .filter(|(step, _)| *step > 0)
            .map(|(step, c)| c / *step as f64)
            .sum();
        (self.comm + amortized) / self.compute
    }
}

/// Lock-step iteration time of every iteration: slowest fully contended
/// compute, plus exchanges with all messages posted together, plus the
/// collective critical path in iterations where it runs. Noise is not
/// included.
pub fn composite_run(config: &RunConfig) -> Result<Vec<f64>, SimError> {
    composite_breakdown(config).map(|b| b.series())
}

pub fn composite_breakdown(config: &RunConfig) -> Result<CompositeBreakdown, SimError> {
    let p = config.num_ranks;
    let plans = build_plans(config)?;
    let fabric = Fabric::new(config.network.clone(), &config.machine);
    let rate = SaturationLaw::from_machine(&config.machine).rate(config.machine.ranks_per_domain)?;
    let mult = |r: usize| config.imbalance.multipliers.get(r).copied().unwrap_or(1.0);
    let mut out = CompositeBreakdown {
        compute: 0.0,
        comm: 0.0,
        collectives: Vec::new(),
        num_iterations: config.num_iterations,
    };
    for plan in &plans {
        match plan {
            PhasePlan::Compute { traffic, scalable } => {
                out.compute += (0..p)
                    .map(|r| mult(r) * (traffic / rate + scalable))
                    .fold(0.0, f64::max);
            }
            PhasePlan::Exchange {
                sends,
                recvs,
                bytes,
                mode,
            } => {
                let proto = fabric.protocol(*bytes, *mode);
                let mut worst = 0.0f64;
                let mut blocked = Vec::new();
                for r in 0..p {
                    let mut done = 0.0f64;
                    for &(q, tag) in &sends[r] {
                        let matched = recvs[q].contains(&(r, tag));
                        if !matched && proto == Protocol::Rendezvous {
                            blocked.push(r);
                        } else if matched {
                            let m = fabric.complete(MessageEvent::new(r, q, *bytes, proto, 0.0, 0.0));
                            done = done.max(m.send_complete);
                        }
                    }
                    for &(q, tag) in &recvs[r] {
                        if sends[q].contains(&(r, tag)) {
                            let m = fabric.complete(MessageEvent::new(q, r, *bytes, proto, 0.0, 0.0));
                            done = done.max(m.recv_complete);
                        } else {
                            blocked.push(r);
                        }
                    }
                    worst = worst.max(done);
                }
                if !blocked.is_empty() {
                    blocked.sort_unstable();
                    blocked.dedup();
                    return Err(SimError::Deadlock {
                        cycle: Vec::new(),
                        blocked,
                        time: 0.0,
                    });
                }
                out.comm += worst;
            }
            PhasePlan::Collective {
                schedule,
                semantics,
                step,
                ..
            } => {
                let exit = exit_times(schedule, &vec![0.0; p], &fabric, *semantics)?;
                out.collectives.push((*step, exit.into_iter().fold(0.0, f64::max)));
            }
        }
    }
    Ok(out)
}
