//! Bundled experiment configurations, shipped as TOML.

use crate::model::{parse_config, ConfigError, RunConfig};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "mst",
        summary: "memory-bound STREAM triad with 1 MB chain halos, periodic noise",
        text: include_str!("../presets/mst.toml"),
    },
    Preset {
        name: "lbm-d3q19",
        summary: "memory-bound D3Q19 LBM, CER ~1 shape, allreduce every 20 iterations",
        text: include_str!("../presets/lbm-d3q19.toml"),
    },
    Preset {
        name: "lbm-d2q37",
        summary: "compute-bound D2Q37 LBM with a barrier per iteration",
        text: include_str!("../presets/lbm-d2q37.toml"),
    },
    Preset {
        name: "hpcg-like",
        summary: "CG iteration with three 8-byte allreduces and a 26-point halo",
        text: include_str!("../presets/hpcg-like.toml"),
    },
    Preset {
        name: "lulesh-like",
        summary: "two halo exchanges, mixed compute, per-iteration time-step reduction",
        text: include_str!("../presets/lulesh-like.toml"),
    },
];

pub fn get(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Parsed and validated preset.
pub fn load(name: &str) -> Result<RunConfig, ConfigError> {
    let preset = get(name).ok_or_else(|| ConfigError::Parse(format!("no preset named `{name}`")))?;
    parse_config(preset.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for p in &PRESETS {
            let cfg = load(p.name).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert_eq!(cfg.num_ranks, 32, "{}", p.name);
        }
    }
}
