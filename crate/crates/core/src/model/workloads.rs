//! Preset workload generators. Geometry-to-traffic mapping lives only here;
//! the engine sees bytes and seconds.

use log::warn;

use super::{
    CollectiveAlgo, CollectiveVariant, ConfigError, MachineSpec, NetworkSpec, PhaseSpec,
    RunConfig,
};
use crate::contention::SaturationLaw;

/// Phases of one iteration plus any warnings raised while deriving them.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub phases: Vec<PhaseSpec>,
    pub warnings: Vec<String>,
}

/// Bytes moved per STREAM triad element: read B, read C, streaming store A.
pub const TRIAD_BYTES_PER_ELEMENT: u64 = 24;

/// Code balance of the fused D3Q19 collide/stream sweep, bytes per site update.
pub const D3Q19_BYTES_PER_LUP: u64 = 456;

/// Halo bytes per lattice site of the cross-section: 5 populations, 2 layers, 8 B.
const D3Q19_HALO_BYTES_PER_SITE: u64 = 2 * 5 * 8;

/// MPI-augmented STREAM triad: one streaming sweep over this rank's share of
/// the arrays, then a bidirectional exchange with both chain neighbors.
///
/// An indivisible share is rounded up (every rank runs the largest share)
/// and reported as a warning.
pub fn mst_workload(
    total_elements: u64,
    num_ranks: usize,
    message_bytes: u64,
) -> Result<Workload, ConfigError> {
    if num_ranks == 0 {
        return Err(ConfigError::invalid("num_ranks", "must be >= 1"));
    }
    let ranks = num_ranks as u64;
    let mut warnings = Vec::new();
    if total_elements % ranks != 0 {
        let msg = format!(
            "{total_elements} elements do not split evenly over {num_ranks} ranks; \
             per-rank traffic rounded up"
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let traffic = (TRIAD_BYTES_PER_ELEMENT * total_elements).div_ceil(ranks);
    let mut phases = vec![PhaseSpec::compute(traffic)];
    if num_ranks > 1 {
        phases.push(PhaseSpec::exchange(vec![-1, 1], message_bytes));
    }
    Ok(Workload { phases, warnings })
}

/// D3Q19 lattice Boltzmann sweep, decomposed along z: compute, halo exchange
/// with both z neighbors, and an 8-byte allreduce every `step` iterations.
pub fn lbm_workload(
    nx: u64,
    ny: u64,
    nz: u64,
    num_ranks: usize,
    step: u64,
) -> Result<Workload, ConfigError> {
    if num_ranks == 0 {
        return Err(ConfigError::invalid("num_ranks", "must be >= 1"));
    }
    if step == 0 {
        return Err(ConfigError::invalid("step", "must be >= 1"));
    }
    let ranks = num_ranks as u64;
    if nz % ranks != 0 {
        return Err(ConfigError::invalid(
            "nz",
            format!("{nz} layers do not split evenly over {num_ranks} ranks"),
        ));
    }
    let layers = nz / ranks;
    let phases = vec![
        PhaseSpec::compute(D3Q19_BYTES_PER_LUP * nx * ny * layers),
        PhaseSpec::exchange(vec![-1, 1], D3Q19_HALO_BYTES_PER_SITE * nx * ny),
        PhaseSpec::collective(CollectiveAlgo::new(CollectiveVariant::Ring), 8, step),
    ];
    Ok(Workload {
        phases,
        warnings: Vec::new(),
    })
}

/// Communication-to-execution ratio.
pub fn cer(t_comm: f64, t_comp: f64) -> Result<f64, ConfigError> {
    if !(t_comp > 0.0) {
        return Err(ConfigError::invalid("t_comp", "must be > 0"));
    }
    Ok(t_comm / t_comp)
}

/// Traffic that takes `seconds` when every rank of a domain computes at once.
pub fn traffic_for_time(seconds: f64, machine: &MachineSpec) -> u64 {
    let rate = SaturationLaw::from_machine(machine)
        .rate(machine.ranks_per_domain)
        .expect("ranks_per_domain >= 1");
    (seconds * rate).round() as u64
}

/// Message size whose point-to-point transfer takes `seconds` with both
/// sides posting together, under `auto` protocol selection.
pub fn message_for_time(seconds: f64, net: &NetworkSpec) -> u64 {
    let link = net.inter_node();
    let rendezvous = ((seconds - net.rendezvous_handshake - link.latency) * link.bandwidth).max(0.0);
    if rendezvous.round() as u64 > net.eager_limit {
        return rendezvous.round() as u64;
    }
    let eager = ((seconds - link.latency) * link.bandwidth).max(0.0).round() as u64;
    eager.min(net.eager_limit)
}

/// One column of measured per-iteration LBM timings for a domain shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbmShape {
    pub nx: u64,
    pub ny: u64,
    pub nz: u64,
    pub compute_seconds: f64,
    pub comm_seconds: f64,
}

impl LbmShape {
    pub fn name(&self) -> String {
        format!("{}.{}.{}", self.nx, self.ny, self.nz)
    }

    pub fn cer(&self) -> f64 {
        self.comm_seconds / self.compute_seconds
    }

    pub fn by_name(name: &str) -> Option<LbmShape> {
        LBM_SHAPES.iter().copied().find(|s| s.name() == name)
    }
}

/// D3Q19 shapes at constant problem size, 1280 processes (Meggie).
pub const LBM_SHAPES: [LbmShape; 4] = [
    LbmShape { nx: 152, ny: 152, nz: 1280, compute_seconds: 5.896e-3, comm_seconds: 6.34e-3 },
    LbmShape { nx: 108, ny: 108, nz: 2560, compute_seconds: 4.819e-3, comm_seconds: 2.283e-3 },
    LbmShape { nx: 88, ny: 88, nz: 3840, compute_seconds: 2.857e-3, comm_seconds: 0.787e-3 },
    LbmShape { nx: 52, ny: 52, nz: 11520, compute_seconds: 2.494e-3, comm_seconds: 0.188e-3 },
];

/// LBM iteration whose lock-step compute and exchange times reproduce a
/// measured shape on the given machine and network.
pub fn lbm_shape_workload(
    shape: &LbmShape,
    step: u64,
    algorithm: CollectiveAlgo,
    machine: &MachineSpec,
    net: &NetworkSpec,
) -> Workload {
    Workload {
        phases: vec![
            PhaseSpec::compute(traffic_for_time(shape.compute_seconds, machine)),
            PhaseSpec::exchange(vec![-1, 1], message_for_time(shape.comm_seconds, net)),
            PhaseSpec::collective(algorithm, 8, step),
        ],
        warnings: Vec::new(),
    }
}

/// Recalibrates the first compute and first exchange phase of `cfg` to
/// `shape`, keeping every other setting.
pub fn apply_lbm_shape(cfg: &mut RunConfig, shape: &LbmShape) -> Result<(), ConfigError> {
    let traffic = traffic_for_time(shape.compute_seconds, &cfg.machine);
    let message = message_for_time(shape.comm_seconds, &cfg.network);
    let compute = cfg
        .program
        .iter_mut()
        .find_map(|p| match p {
            PhaseSpec::Compute { traffic_bytes, .. } => Some(traffic_bytes),
            _ => None,
        })
        .ok_or_else(|| ConfigError::invalid("program", "no compute phase to calibrate"))?;
    *compute = traffic;
    let comm = cfg
        .program
        .iter_mut()
        .find_map(|p| match p {
            PhaseSpec::Comm { message_bytes, .. } => Some(message_bytes),
            _ => None,
        })
        .ok_or_else(|| ConfigError::invalid("program", "no exchange phase to calibrate"))?;
    *comm = message;
    Ok(())
}

/// Splits `num_ranks` into a near-cubic px x py x pz grid, px <= py <= pz.
pub fn grid3(num_ranks: usize) -> (usize, usize, usize) {
    let mut best = (1, 1, num_ranks);
    let mut best_score = usize::MAX;
    for px in 1..=num_ranks {
        if num_ranks % px != 0 {
            continue;
        }
        let rest = num_ranks / px;
        for py in px..=rest {
            if rest % py != 0 {
                continue;
            }
            let pz = rest / py;
            if pz < py {
                continue;
            }
            let score = pz - px;
            if score < best_score {
                best_score = score;
                best = (px, py, pz);
            }
        }
    }
    best
}

/// Rank offsets of the 26-point neighborhood on a [`grid3`] process grid,
/// reduced modulo the rank count, deduplicated, without self.
pub fn stencil26_offsets(num_ranks: usize) -> Vec<i64> {
    let (px, py, _) = grid3(num_ranks);
    let p = num_ranks as i64;
    let mut offsets = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let raw = dx + dy * px as i64 + dz * (px * py) as i64;
                let mut o = raw.rem_euclid(p);
                if o > p / 2 {
                    o -= p;
                }
                if o != 0 && !offsets.contains(&o) {
                    offsets.push(o);
                }
            }
        }
    }
    offsets.sort_unstable();
    offsets
}

/// Per-iteration timings of an HPCG-like run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpcgParams {
    /// Lock-step execution time of one iteration, seconds.
    pub exec_seconds: f64,
    /// Lock-step halo-exchange time, seconds.
    pub comm_seconds: f64,
    pub allreduce: CollectiveAlgo,
}

/// Three {compute, 8-byte allreduce} pairs for the dot products, then a
/// {compute, 26-neighbor halo exchange} pair. Execution time is split evenly
/// over the four compute phases.
pub fn hpcg_like(
    params: &HpcgParams,
    num_ranks: usize,
    machine: &MachineSpec,
    net: &NetworkSpec,
) -> Workload {
    let quarter = traffic_for_time(params.exec_seconds / 4.0, machine);
    let mut phases = Vec::with_capacity(8);
    for _ in 0..3 {
        phases.push(PhaseSpec::compute(quarter));
        phases.push(PhaseSpec::collective(params.allreduce, 8, 1));
    }
    phases.push(PhaseSpec::compute(quarter));
    let offsets = stencil26_offsets(num_ranks);
    if !offsets.is_empty() {
        phases.push(PhaseSpec::exchange(
            offsets,
            message_for_time(params.comm_seconds, net),
        ));
    }
    Workload {
        phases,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuleshParams {
    /// Compute-bound element kinematics, seconds.
    pub element_seconds: f64,
    /// Memory-bound nodal updates, seconds at full domain occupancy.
    pub nodal_seconds: f64,
    pub message_bytes: u64,
    /// Keep the per-iteration time-step reduction.
    pub reduction: bool,
}

/// Element update, position exchange, nodal update, gradient exchange and an
/// optional 8-byte allreduce every iteration. Imbalance comes from the
/// run's per-rank multipliers.
pub fn lulesh_like(
    params: &LuleshParams,
    num_ranks: usize,
    machine: &MachineSpec,
) -> Workload {
    let offsets = stencil26_offsets(num_ranks);
    let mut phases = vec![PhaseSpec::Compute {
        traffic_bytes: 0,
        scalable_seconds: params.element_seconds,
    }];
    if !offsets.is_empty() {
        phases.push(PhaseSpec::exchange(offsets.clone(), params.message_bytes));
    }
    phases.push(PhaseSpec::compute(traffic_for_time(params.nodal_seconds, machine)));
    if !offsets.is_empty() {
        phases.push(PhaseSpec::exchange(offsets, params.message_bytes));
    }
    if params.reduction {
        phases.push(PhaseSpec::collective(
            CollectiveAlgo::new(CollectiveVariant::RecursiveDoubling),
            8,
            1,
        ));
    }
    Workload {
        phases,
        warnings: Vec::new(),
    }
}

/// Single-socket STREAM triad saturation samples (concurrency, bytes/s).
pub const STREAM_SATURATION: [(usize, f64); 10] = [
    (1, 16081.349e6),
    (2, 28282.9129e6),
    (3, 38011.239e6),
    (4, 45320.711e6),
    (5, 49324.4899e6),
    (6, 51933.2305e6),
    (7, 52217.5162e6),
    (8, 53376.9859e6),
    (9, 52863.7581e6),
    (10, 53463.242e6),
];

/// Running maximum of a measured curve, which makes it a valid
/// non-decreasing saturation curve.
pub fn monotone_envelope(samples: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut best = f64::NEG_INFINITY;
    samples
        .iter()
        .map(|&(k, b)| {
            best = best.max(b);
            (k, best)
        })
        .collect()
}
