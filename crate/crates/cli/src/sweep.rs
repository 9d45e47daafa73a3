//! One-axis parameter sweeps over a base configuration.

use std::fmt::Write as _;
use std::path::Path;

use desync_core::analytics::{summary, Summary};
use desync_core::engine::{composite_breakdown, simulate};
use desync_core::model::workloads::{apply_lbm_shape, LbmShape};
use desync_core::model::{
    validate, CollectiveVariant, ImbalanceSpec, NoisePeriod, PhaseSpec, RunConfig,
};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    CollectiveStep,
    NoisePeriod,
    CollectiveAlgorithm,
    ImbalanceScale,
    CerShape,
}

impl Axis {
    fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "collective_step" => Axis::CollectiveStep,
            "noise_period" => Axis::NoisePeriod,
            "collective_algorithm" => Axis::CollectiveAlgorithm,
            "imbalance_scale" => Axis::ImbalanceScale,
            "cer_shape" => Axis::CerShape,
            other => return Err(CliError::Config(format!("axis: unknown axis `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::CollectiveStep => "collective_step",
            Axis::NoisePeriod => "noise_period",
            Axis::CollectiveAlgorithm => "collective_algorithm",
            Axis::ImbalanceScale => "imbalance_scale",
            Axis::CerShape => "cer_shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    Step(u64),
    Period(NoisePeriod),
    Algorithm(CollectiveVariant),
    /// Linear multiplier spread: rank multipliers run from 1 - s to 1 + s.
    Spread(f64),
    Shape(LbmShape),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::Step(s) => s.to_string(),
            AxisValue::Period(p) => p.to_string(),
            AxisValue::Algorithm(v) => v.name().to_string(),
            AxisValue::Spread(s) => s.to_string(),
            AxisValue::Shape(s) => s.name(),
        }
    }

    /// Position in the axis's natural order: growing step size, shrinking
    /// noise period with no noise first, growing spread, decreasing CER.
    fn order_key(&self) -> (f64, f64) {
        match self {
            AxisValue::Step(s) => (*s as f64, 0.0),
            AxisValue::Period(NoisePeriod::Never) => (0.0, 0.0),
            AxisValue::Period(NoisePeriod::Every(k)) => (1.0, -(*k as f64)),
            AxisValue::Algorithm(v) => {
                (CollectiveVariant::ALL.iter().position(|a| a == v).unwrap() as f64, 0.0)
            }
            AxisValue::Spread(s) => (*s, 0.0),
            AxisValue::Shape(s) => (-s.cer(), 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    pub base: RunConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    /// Config path relative to the sweep file, or `preset:NAME`.
    base: String,
    axis: String,
    values: Vec<toml::Value>,
}

fn parse_value(axis: Axis, v: &toml::Value) -> Result<AxisValue, CliError> {
    let bad = || CliError::Config(format!("values: `{v}` is not a valid {} value", axis.name()));
    Ok(match axis {
        Axis::CollectiveStep => match v.as_integer() {
            Some(s) if s >= 1 => AxisValue::Step(s as u64),
            _ => return Err(bad()),
        },
        Axis::NoisePeriod => match v {
            toml::Value::Integer(k) if *k >= 1 => AxisValue::Period(NoisePeriod::Every(*k as u64)),
            toml::Value::String(s) => AxisValue::Period(s.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        },
        Axis::CollectiveAlgorithm => v
            .as_str()
            .and_then(CollectiveVariant::from_name)
            .map(AxisValue::Algorithm)
            .ok_or_else(bad)?,
        Axis::ImbalanceScale => match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
            Some(s) if (0.0..1.0).contains(&s) => AxisValue::Spread(s),
            _ => return Err(bad()),
        },
        Axis::CerShape => v
            .as_str()
            .and_then(LbmShape::by_name)
            .map(AxisValue::Shape)
            .ok_or_else(bad)?,
    })
}

impl SweepSpec {
    /// Reads a sweep file; `load_base` resolves the `base` entry.
    pub fn load(
        path: &Path,
        load_base: impl Fn(&str, &Path) -> Result<RunConfig, CliError>,
    ) -> Result<SweepSpec, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file: SweepFile = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let axis = Axis::parse(&file.axis)?;
        let values = file
            .values
            .iter()
            .map(|v| parse_value(axis, v))
            .collect::<Result<Vec<_>, _>>()?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let spec = SweepSpec {
            axis,
            values,
            base: load_base(&file.base, dir)?,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Config("values: must not be empty".into()));
        }
        let has = |f: fn(&PhaseSpec) -> bool| self.base.program.iter().any(f);
        let applicable = match self.axis {
            Axis::CollectiveStep => has(|p| matches!(p, PhaseSpec::Collective { .. })),
            Axis::CollectiveAlgorithm => has(|p| {
                matches!(p, PhaseSpec::Collective { algorithm, .. } if algorithm.variant != CollectiveVariant::Barrier)
            }),
            Axis::CerShape => {
                has(|p| matches!(p, PhaseSpec::Compute { .. }))
                    && has(|p| matches!(p, PhaseSpec::Comm { .. }))
            }
            Axis::NoisePeriod | Axis::ImbalanceScale => true,
        };
        if !applicable {
            return Err(CliError::Config(format!(
                "axis: {} does not apply to the base program",
                self.axis.name()
            )));
        }
        Ok(())
    }

    /// For each value, its index in the axis's natural order. Seeds and the
    /// normalization baseline follow this order, so permuting the listed
    /// values only permutes the output rows.
    pub fn canonical_index(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (self.values[a].order_key(), self.values[b].order_key());
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        });
        let mut index = vec![0; order.len()];
        for (rank, &i) in order.iter().enumerate() {
            index[i] = rank;
        }
        index
    }

    /// Base config with `value` applied and both seeds set to `seed`.
    pub fn point(&self, value: &AxisValue, seed: u64) -> Result<RunConfig, CliError> {
        let mut cfg = self.base.clone();
        match value {
            AxisValue::Step(step) => {
                for p in cfg.program.iter_mut() {
                    if let PhaseSpec::Collective { step: s, .. } = p {
                        *s = *step;
                    }
                }
            }
            AxisValue::Period(period) => cfg.noise.period = *period,
            AxisValue::Algorithm(variant) => {
                for p in cfg.program.iter_mut() {
                    if let PhaseSpec::Collective { algorithm, .. } = p {
                        if algorithm.variant != CollectiveVariant::Barrier {
                            algorithm.variant = *variant;
                        }
                    }
                }
            }
            AxisValue::Spread(s) => cfg.imbalance = ImbalanceSpec::linear_spread(cfg.num_ranks, *s),
            AxisValue::Shape(shape) => apply_lbm_shape(&mut cfg, shape)?,
        }
        cfg.seed = seed;
        cfg.noise.seed = seed;
        Ok(validate(cfg)?)
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub label: String,
    pub seed: u64,
    pub summary: Summary,
    pub collective_seconds: f64,
    pub p_n: f64,
}

/// Runs every point, concurrently, and normalizes steady performance to
/// the first value in natural order.
pub fn run(spec: &SweepSpec, warmup_cut: f64) -> Result<Vec<PointResult>, CliError> {
    let canonical = spec.canonical_index();
    let base_seed = spec.base.seed;
    let configs = spec
        .values
        .iter()
        .zip(&canonical)
        .map(|(v, &k)| spec.point(v, base_seed + k as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let runs = configs
        .par_iter()
        .map(|cfg| {
            log::info!("sweep point seed {}", cfg.seed);
            let trace = simulate(cfg)?;
            let s = summary(&trace, &composite_breakdown(cfg)?, warmup_cut);
            let coll = trace.records.iter().map(|r| r.collective_seconds).sum::<f64>();
            Ok((s, coll))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let baseline = canonical.iter().position(|&k| k == 0).unwrap();
    let base_perf = runs[baseline].0.steady_performance;
    Ok(spec
        .values
        .iter()
        .zip(configs)
        .zip(runs)
        .map(|((v, cfg), (summary, collective_seconds))| PointResult {
            label: v.label(),
            seed: cfg.seed,
            p_n: summary.steady_performance / base_perf,
            summary,
            collective_seconds,
        })
        .collect())
}

const COLUMNS: &str = "index,value,seed,config_hash,steady_performance,composite_performance,\
speedup,mean_performance,std_performance,mean_mpi_time,collective_seconds,cer,p_n";

pub fn to_csv(spec: &SweepSpec, results: &[PointResult]) -> String {
    let mut out = format!(
        "# base_config_hash={} base_seed={} axis={}\n{COLUMNS}\n",
        spec.base.config_hash(),
        spec.base.seed,
        spec.axis.name()
    );
    for (i, r) in results.iter().enumerate() {
        let s = &r.summary;
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.seed,
            s.config_hash,
            s.steady_performance,
            s.composite_performance,
            s.speedup,
            s.mean_performance,
            s.std_performance,
            s.mean_mpi_time,
            r.collective_seconds,
            s.cer,
            r.p_n
        )
        .unwrap();
    }
    out
}

/// Human-readable table of the headline columns.
pub fn to_table(spec: &SweepSpec, results: &[PointResult]) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>14} {:>10} {:>12} {:>8}\n",
        spec.axis.name(),
        "seed",
        "perf [iter/s]",
        "speedup",
        "allreduce [s]",
        "P_n"
    );
    for r in results {
        writeln!(
            out,
            "{:<16} {:>6} {:>14.4} {:>10.4} {:>12.6} {:>8.4}",
            r.label, r.seed, r.summary.steady_performance, r.summary.speedup, r.collective_seconds, r.p_n
        )
        .unwrap();
    }
    out
}
