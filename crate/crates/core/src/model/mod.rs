//! Declarative description of a run: machine, network, per-iteration program,
//! load imbalance and noise, plus validation.
//!
//! Units are fixed throughout: bytes, seconds, bytes/second and plain counts.

mod file;
pub mod workloads;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{load_config, parse_config, to_toml_string};
pub use workloads::{cer, hpcg_like, lbm_workload, lulesh_like, mst_workload, Workload};

/// Validation or parse failure, always naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: num_ranks = {declared} but the topology yields {topology}")]
    TopologyMismatch {
        path: String,
        declared: usize,
        topology: usize,
    },
    #[error("{path}: noise period must be >= 1 or \"inf\"")]
    InvalidPeriod { path: String },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("{0}")]
    Parse(String),
}

impl ConfigError {
    pub(crate) fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Dotted path of the offending field, if the error carries one.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::TopologyMismatch { path, .. }
            | ConfigError::InvalidPeriod { path }
            | ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Parse(_) => None,
        }
    }
}

/// Machine topology and the memory-bandwidth parameters of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub num_nodes: usize,
    pub domains_per_node: usize,
    pub ranks_per_domain: usize,
    /// Saturated bandwidth of a memory domain, bytes/s.
    pub domain_bandwidth: f64,
    /// Bandwidth a single rank reaches when alone on its domain, bytes/s.
    pub single_rank_bandwidth: f64,
    /// Optional measured saturation curve: (concurrency, aggregate bytes/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_curve: Option<Vec<(usize, f64)>>,
}

impl MachineSpec {
    pub fn topology_ranks(&self) -> usize {
        self.num_nodes * self.domains_per_node * self.ranks_per_domain
    }

    pub fn num_domains(&self) -> usize {
        self.num_nodes * self.domains_per_node
    }

    pub fn domain_of(&self, rank: usize) -> usize {
        rank / self.ranks_per_domain
    }

    pub fn ranks_per_node(&self) -> usize {
        self.domains_per_node * self.ranks_per_domain
    }

    pub fn node_of(&self, rank: usize) -> usize {
        rank / self.ranks_per_node()
    }
}

/// Latency/bandwidth pair of one link class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// seconds
    pub latency: f64,
    /// bytes/s
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Inter-node latency, seconds.
    pub latency: f64,
    /// Inter-node bandwidth, bytes/s.
    pub bandwidth: f64,
    /// Largest message (bytes, inclusive) sent eagerly in `auto` mode.
    pub eager_limit: u64,
    /// Extra delay of the rendezvous handshake, seconds.
    #[serde(default)]
    pub rendezvous_handshake: f64,
    /// Separate parameters for messages between ranks of the same node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_node: Option<LinkSpec>,
}

impl NetworkSpec {
    pub fn inter_node(&self) -> LinkSpec {
        LinkSpec {
            latency: self.latency,
            bandwidth: self.bandwidth,
        }
    }

    pub fn link(&self, same_node: bool) -> LinkSpec {
        match (same_node, self.intra_node) {
            (true, Some(link)) => link,
            _ => self.inter_node(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    Eager,
    Rendezvous,
    #[default]
    Auto,
}

/// Which halves of a neighbor exchange a rank posts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Both,
    SendOnly,
    RecvOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveVariant {
    Ring,
    RecursiveDoubling,
    Rabenseifner,
    ReduceBroadcast,
    Barrier,
}

impl CollectiveVariant {
    pub const ALL: [CollectiveVariant; 5] = [
        CollectiveVariant::Ring,
        CollectiveVariant::RecursiveDoubling,
        CollectiveVariant::Rabenseifner,
        CollectiveVariant::ReduceBroadcast,
        CollectiveVariant::Barrier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CollectiveVariant::Ring => "ring",
            CollectiveVariant::RecursiveDoubling => "recursive_doubling",
            CollectiveVariant::Rabenseifner => "rabenseifner",
            CollectiveVariant::ReduceBroadcast => "reduce_broadcast",
            CollectiveVariant::Barrier => "barrier",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitSemantics {
    /// A rank leaves only after its schedule has delivered every contribution.
    #[default]
    Full,
    /// A rank leaves after its last send; trailing receive-only rounds are
    /// not awaited. A model knob, not a statement about any MPI library.
    Permeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveAlgo {
    pub variant: CollectiveVariant,
    #[serde(default)]
    pub exit_semantics: ExitSemantics,
    /// Root of the reduce-plus-broadcast tree; ignored by other variants.
    #[serde(default)]
    pub root: usize,
}

impl CollectiveAlgo {
    pub fn new(variant: CollectiveVariant) -> Self {
        CollectiveAlgo {
            variant,
            exit_semantics: ExitSemantics::Full,
            root: 0,
        }
    }

    pub fn permeable(mut self) -> Self {
        self.exit_semantics = ExitSemantics::Permeable;
        self
    }

    /// Semantics actually applied; a barrier is always full.
    pub fn effective_semantics(&self) -> ExitSemantics {
        if self.variant == CollectiveVariant::Barrier {
            ExitSemantics::Full
        } else {
            self.exit_semantics
        }
    }
}

/// One phase of the per-iteration program, identical on every rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseSpec {
    Compute {
        /// Memory traffic subject to domain contention, bytes.
        traffic_bytes: u64,
        /// Contention-immune work, seconds.
        #[serde(default)]
        scalable_seconds: f64,
    },
    Comm {
        /// Rank offsets: rank r sends to r+o and receives from r-o.
        partners: Vec<i64>,
        message_bytes: u64,
        #[serde(default)]
        mode: ProtocolMode,
        /// Offsets wrap around the rank range (closed chain).
        #[serde(default = "default_true")]
        periodic: bool,
        #[serde(default)]
        direction: Direction,
    },
    Collective {
        algorithm: CollectiveAlgo,
        payload_bytes: u64,
        /// Collective step size: runs in every `step`-th iteration.
        step: u64,
    },
}

fn default_true() -> bool {
    true
}

impl PhaseSpec {
    pub fn compute(traffic_bytes: u64) -> Self {
        PhaseSpec::Compute {
            traffic_bytes,
            scalable_seconds: 0.0,
        }
    }

    /// Bidirectional periodic exchange with the given offsets.
    pub fn exchange(partners: Vec<i64>, message_bytes: u64) -> Self {
        PhaseSpec::Comm {
            partners,
            message_bytes,
            mode: ProtocolMode::Auto,
            periodic: true,
            direction: Direction::Both,
        }
    }

    pub fn collective(algorithm: CollectiveAlgo, payload_bytes: u64, step: u64) -> Self {
        PhaseSpec::Collective {
            algorithm,
            payload_bytes,
            step,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PhaseSpec::Compute { .. } => "compute",
            PhaseSpec::Comm { .. } => "comm",
            PhaseSpec::Collective { .. } => "collective",
        }
    }
}

/// Per-rank multipliers on compute work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub multipliers: Vec<f64>,
}

impl ImbalanceSpec {
    pub fn balanced(num_ranks: usize) -> Self {
        ImbalanceSpec {
            multipliers: vec![1.0; num_ranks],
        }
    }

    /// Multipliers ramping linearly from `1 - spread` on rank 0 to
    /// `1 + spread` on the last rank.
    pub fn linear_spread(num_ranks: usize, spread: f64) -> Self {
        let multipliers = (0..num_ranks)
            .map(|r| {
                if num_ranks == 1 {
                    1.0
                } else {
                    1.0 - spread + 2.0 * spread * r as f64 / (num_ranks - 1) as f64
                }
            })
            .collect();
        ImbalanceSpec { multipliers }
    }

    pub fn is_balanced(&self) -> bool {
        self.multipliers.iter().all(|&m| m == 1.0)
    }
}

/// Noise period in iterations; `Never` disables injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePeriod {
    Every(u64),
    Never,
}

impl NoisePeriod {
    pub fn get(self) -> Option<u64> {
        match self {
            NoisePeriod::Every(k) => Some(k),
            NoisePeriod::Never => None,
        }
    }
}

impl std::fmt::Display for NoisePeriod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoisePeriod::Every(k) => write!(f, "{k}"),
            NoisePeriod::Never => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for NoisePeriod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "never" | "∞" => Ok(NoisePeriod::Never),
            other => other
                .parse::<u64>()
                .map(NoisePeriod::Every)
                .map_err(|_| format!("invalid noise period `{other}`")),
        }
    }
}

impl Serialize for NoisePeriod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NoisePeriod::Every(k) => s.serialize_u64(*k),
            NoisePeriod::Never => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NoisePeriod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            // Negative values survive parsing so validation can name the field.
            Raw::Int(k) if k < 0 => Ok(NoisePeriod::Every(0)),
            Raw::Int(k) => Ok(NoisePeriod::Every(k as u64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// From `start_iteration` (zero-based) on, inject with `period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSegment {
    pub start_iteration: u64,
    pub period: NoisePeriod,
}

/// One explicit delay injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    /// zero-based
    pub iteration: u64,
    pub rank: usize,
    pub extra_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub period: NoisePeriod,
    #[serde(default)]
    pub extra_seconds: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule_overrides: Vec<NoiseSegment>,
    /// Explicit plan for exact replay; replaces the random draw when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injections: Option<Vec<Injection>>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            period: NoisePeriod::Never,
            extra_seconds: 0.0,
            seed: 0,
            schedule_overrides: Vec::new(),
            injections: None,
        }
    }

    pub fn periodic(period: u64, extra_seconds: f64, seed: u64) -> Self {
        NoiseSpec {
            period: NoisePeriod::Every(period),
            extra_seconds,
            seed,
            ..NoiseSpec::none()
        }
    }

    pub fn explicit(injections: Vec<Injection>) -> Self {
        NoiseSpec {
            injections: Some(injections),
            ..NoiseSpec::none()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceDetail {
    #[default]
    Summary,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub machine: MachineSpec,
    pub network: NetworkSpec,
    pub program: Vec<PhaseSpec>,
    pub num_iterations: usize,
    pub num_ranks: usize,
    pub imbalance: ImbalanceSpec,
    pub noise: NoiseSpec,
    /// Per-rank start offsets, seconds.
    pub initial_skew: Vec<f64>,
    pub seed: u64,
    pub trace_detail: TraceDetail,
}

impl RunConfig {
    /// Balanced, noise-free, unskewed run on the full topology.
    pub fn new(
        machine: MachineSpec,
        network: NetworkSpec,
        program: Vec<PhaseSpec>,
        num_iterations: usize,
    ) -> Self {
        let num_ranks = machine.topology_ranks();
        RunConfig {
            machine,
            network,
            program,
            num_iterations,
            num_ranks,
            imbalance: ImbalanceSpec::balanced(num_ranks),
            noise: NoiseSpec::none(),
            initial_skew: vec![0.0; num_ranks],
            seed: 0,
            trace_detail: TraceDetail::Summary,
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn validate_machine(m: &MachineSpec) -> Result<(), ConfigError> {
    for (name, v) in [
        ("num_nodes", m.num_nodes),
        ("domains_per_node", m.domains_per_node),
        ("ranks_per_domain", m.ranks_per_domain),
    ] {
        if v < 1 {
            return Err(ConfigError::invalid(format!("machine.{name}"), "must be >= 1"));
        }
    }
    if !finite_pos(m.domain_bandwidth) {
        return Err(ConfigError::invalid("machine.domain_bandwidth", "must be > 0"));
    }
    if !finite_pos(m.single_rank_bandwidth) {
        return Err(ConfigError::invalid("machine.single_rank_bandwidth", "must be > 0"));
    }
    if let Some(curve) = &m.saturation_curve {
        let path = "machine.saturation_curve";
        if curve.is_empty() {
            return Err(ConfigError::invalid(path, "must not be empty"));
        }
        if curve[0].0 != 1 {
            return Err(ConfigError::invalid(format!("{path}[0]"), "concurrency must start at 1"));
        }
        for (i, w) in curve.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(ConfigError::invalid(
                    format!("{path}[{}]", i + 1),
                    "concurrency must be strictly increasing",
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(ConfigError::invalid(
                    format!("{path}[{}]", i + 1),
                    "aggregate bandwidth must be non-decreasing",
                ));
            }
        }
        if let Some(i) = curve.iter().position(|&(_, b)| !finite_pos(b)) {
            return Err(ConfigError::invalid(format!("{path}[{i}]"), "bandwidth must be > 0"));
        }
    }
    Ok(())
}

fn validate_network(n: &NetworkSpec) -> Result<(), ConfigError> {
    if !finite_nonneg(n.latency) {
        return Err(ConfigError::invalid("network.latency", "must be >= 0"));
    }
    if !finite_pos(n.bandwidth) {
        return Err(ConfigError::invalid("network.bandwidth", "must be > 0"));
    }
    if !finite_nonneg(n.rendezvous_handshake) {
        return Err(ConfigError::invalid("network.rendezvous_handshake", "must be >= 0"));
    }
    if let Some(link) = n.intra_node {
        if !finite_nonneg(link.latency) {
            return Err(ConfigError::invalid("network.intra_node.latency", "must be >= 0"));
        }
        if !finite_pos(link.bandwidth) {
            return Err(ConfigError::invalid("network.intra_node.bandwidth", "must be > 0"));
        }
    }
    Ok(())
}

fn validate_phase(i: usize, phase: &PhaseSpec, num_ranks: usize) -> Result<(), ConfigError> {
    let path = |field: &str| format!("program[{i}].{field}");
    match phase {
        PhaseSpec::Compute {
            scalable_seconds, ..
        } => {
            if !finite_nonneg(*scalable_seconds) {
                return Err(ConfigError::invalid(path("scalable_seconds"), "must be >= 0"));
            }
        }
        PhaseSpec::Comm { partners, .. } => {
            if let Some(j) = partners.iter().position(|&o| o == 0) {
                return Err(ConfigError::invalid(
                    format!("program[{i}].partners[{j}]"),
                    "offset must be nonzero",
                ));
            }
        }
        PhaseSpec::Collective {
            algorithm, step, ..
        } => {
            if *step < 1 {
                return Err(ConfigError::invalid(path("step"), "must be >= 1"));
            }
            if algorithm.root >= num_ranks {
                return Err(ConfigError::invalid(
                    path("algorithm.root"),
                    format!("root {} out of range for {num_ranks} ranks", algorithm.root),
                ));
            }
        }
    }
    Ok(())
}

fn validate_noise(noise: &NoiseSpec, num_ranks: usize) -> Result<(), ConfigError> {
    if noise.period == NoisePeriod::Every(0) {
        return Err(ConfigError::InvalidPeriod {
            path: "noise.period".into(),
        });
    }
    if !finite_nonneg(noise.extra_seconds) {
        return Err(ConfigError::invalid("noise.extra_seconds", "must be >= 0"));
    }
    for (i, seg) in noise.schedule_overrides.iter().enumerate() {
        if seg.period == NoisePeriod::Every(0) {
            return Err(ConfigError::InvalidPeriod {
                path: format!("noise.schedule_overrides[{i}].period"),
            });
        }
        if i > 0 && seg.start_iteration <= noise.schedule_overrides[i - 1].start_iteration {
            return Err(ConfigError::invalid(
                format!("noise.schedule_overrides[{i}].start_iteration"),
                "segments must be strictly increasing",
            ));
        }
    }
    if let Some(entries) = &noise.injections {
        for (i, inj) in entries.iter().enumerate() {
            if inj.rank >= num_ranks {
                return Err(ConfigError::invalid(
                    format!("noise.injections[{i}].rank"),
                    format!("rank {} out of range", inj.rank),
                ));
            }
            if !finite_nonneg(inj.extra_seconds) {
                return Err(ConfigError::invalid(
                    format!("noise.injections[{i}].extra_seconds"),
                    "must be >= 0",
                ));
            }
            if i > 0 && inj.iteration <= entries[i - 1].iteration {
                return Err(ConfigError::invalid(
                    format!("noise.injections[{i}].iteration"),
                    "iterations must be strictly increasing",
                ));
            }
        }
    }
    Ok(())
}

/// Checks every invariant of the run description; returns it unchanged on
/// success and the first violation (with its field path) otherwise.
pub fn validate(config: RunConfig) -> Result<RunConfig, ConfigError> {
    validate_machine(&config.machine)?;
    validate_network(&config.network)?;

    let topology = config.machine.topology_ranks();
    if config.num_ranks != topology {
        return Err(ConfigError::TopologyMismatch {
            path: "run.num_ranks".into(),
            declared: config.num_ranks,
            topology,
        });
    }
    if config.num_iterations < 1 {
        return Err(ConfigError::invalid("run.num_iterations", "must be >= 1"));
    }
    for (i, phase) in config.program.iter().enumerate() {
        validate_phase(i, phase, config.num_ranks)?;
    }
    let mult = &config.imbalance.multipliers;
    if mult.len() != config.num_ranks {
        return Err(ConfigError::invalid(
            "imbalance.multipliers",
            format!("expected {} entries, found {}", config.num_ranks, mult.len()),
        ));
    }
    if let Some(i) = mult.iter().position(|&m| !finite_pos(m)) {
        return Err(ConfigError::invalid(format!("imbalance.multipliers[{i}]"), "must be > 0"));
    }
    validate_noise(&config.noise, config.num_ranks)?;
    if config.initial_skew.len() != config.num_ranks {
        return Err(ConfigError::invalid(
            "run.initial_skew",
            format!(
                "expected {} entries, found {}",
                config.num_ranks,
                config.initial_skew.len()
            ),
        ));
    }
    if let Some(i) = config.initial_skew.iter().position(|&s| !finite_nonneg(s)) {
        return Err(ConfigError::invalid(format!("run.initial_skew[{i}]"), "must be >= 0"));
    }
    Ok(config)
}
