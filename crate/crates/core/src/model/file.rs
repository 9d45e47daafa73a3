//! TOML config files.
//!
//! Top-level keys are `machine`, `network`, `program`, `noise`, `imbalance`
//! and `run`. Sizes are bytes, times are seconds, bandwidths are bytes/s.
//! `noise` and `imbalance` may be omitted; `imbalance` accepts either an
//! explicit `multipliers` list or a `spread` for a linear ramp.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate, ConfigError, ImbalanceSpec, MachineSpec, NetworkSpec, NoiseSpec, PhaseSpec,
    RunConfig, TraceDetail,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    machine: MachineSpec,
    network: NetworkSpec,
    program: Vec<PhaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    imbalance: Option<ImbalanceSection>,
    run: RunSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImbalanceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    multipliers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spread: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    num_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_ranks: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    trace_detail: TraceDetail,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_skew: Option<Vec<f64>>,
}

impl ConfigFile {
    fn resolve(self) -> Result<RunConfig, ConfigError> {
        let num_ranks = self
            .run
            .num_ranks
            .unwrap_or_else(|| self.machine.topology_ranks());
        let imbalance = match self.imbalance {
            None => ImbalanceSpec::balanced(num_ranks),
            Some(ImbalanceSection {
                multipliers: Some(_),
                spread: Some(_),
            }) => {
                return Err(ConfigError::invalid(
                    "imbalance",
                    "give either `multipliers` or `spread`, not both",
                ))
            }
            Some(ImbalanceSection {
                multipliers: Some(multipliers),
                ..
            }) => ImbalanceSpec { multipliers },
            Some(ImbalanceSection {
                spread: Some(spread),
                ..
            }) => {
                if !(0.0..1.0).contains(&spread) {
                    return Err(ConfigError::invalid("imbalance.spread", "must lie in [0, 1)"));
                }
                ImbalanceSpec::linear_spread(num_ranks, spread)
            }
            Some(_) => ImbalanceSpec::balanced(num_ranks),
        };
        Ok(RunConfig {
            machine: self.machine,
            network: self.network,
            program: self.program,
            num_iterations: self.run.num_iterations,
            num_ranks,
            imbalance,
            noise: self.noise.unwrap_or_else(NoiseSpec::none),
            initial_skew: self.run.initial_skew.unwrap_or_else(|| vec![0.0; num_ranks]),
            seed: self.run.seed,
            trace_detail: self.run.trace_detail,
        })
    }

    fn from_config(cfg: &RunConfig) -> Self {
        ConfigFile {
            machine: cfg.machine.clone(),
            network: cfg.network.clone(),
            program: cfg.program.clone(),
            noise: Some(cfg.noise.clone()),
            imbalance: (!cfg.imbalance.is_balanced()).then(|| ImbalanceSection {
                multipliers: Some(cfg.imbalance.multipliers.clone()),
                spread: None,
            }),
            run: RunSection {
                num_iterations: cfg.num_iterations,
                num_ranks: Some(cfg.num_ranks),
                seed: cfg.seed,
                trace_detail: cfg.trace_detail,
                initial_skew: cfg
                    .initial_skew
                    .iter()
                    .any(|&s| s != 0.0)
                    .then(|| cfg.initial_skew.clone()),
            },
        }
    }
}

/// Parses and validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate(file.resolve()?)
}

/// Reads, parses and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_toml_string(cfg: &RunConfig) -> String {
    toml::to_string(&ConfigFile::from_config(cfg)).expect("config serializes to TOML")
}
