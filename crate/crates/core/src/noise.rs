//! Deliberate delay injection: every k-th iteration one uniformly drawn rank
//! gets a fixed amount of extra compute-bound work.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Injection, NoisePeriod, NoiseSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionPlan {
    pub entries: Vec<Injection>,
    pub seed: u64,
}

/// Builds the injection plan. Iterations are zero-based, so period `k`
/// hits indices `k-1, 2k-1, ...` (the k-th, 2k-th, ... iteration).
///
/// Ranks come from a generator seeded only by `noise.seed`; nothing else in
/// the run configuration can perturb the plan.
pub fn plan(noise: &NoiseSpec, num_ranks: usize, num_iterations: usize) -> InjectionPlan {
    if let Some(entries) = &noise.injections {
        return InjectionPlan {
            entries: entries.clone(),
            seed: noise.seed,
        };
    }
    let n = num_iterations as u64;
    let mut segments = vec![(0u64, noise.period)];
    segments.extend(
        noise
            .schedule_overrides
            .iter()
            .map(|s| (s.start_iteration, s.period)),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut entries = Vec::new();
    for (i, &(start, period)) in segments.iter().enumerate() {
        let end = segments.get(i + 1).map_or(n, |s| s.0).min(n);
        let NoisePeriod::Every(k) = period else {
            continue;
        };
        if k == 0 || num_ranks == 0 {
            continue;
        }
        let mut it = start + k - 1;
        while it < end {
            entries.push(Injection {
                iteration: it,
                rank: rng.gen_range(0..num_ranks),
                extra_seconds: noise.extra_seconds,
            });
            it += k;
        }
    }
    InjectionPlan {
        entries,
        seed: noise.seed,
    }
}

impl InjectionPlan {
    /// `iteration,rank,extra_seconds` lines under a header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={}\niteration,rank,extra_seconds\n", self.seed);
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.iteration, e.rank, e.extra_seconds));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<InjectionPlan, PlanError> {
        let mut seed = 0;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# seed=") {
                seed = rest.parse().map_err(|_| PlanError::Parse {
                    line: i + 1,
                    reason: format!("bad seed `{rest}`"),
                })?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') || line.starts_with("iteration") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |reason: &str| PlanError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected iteration,rank,extra_seconds"));
            }
            entries.push(Injection {
                iteration: fields[0].trim().parse().map_err(|_| bad("bad iteration"))?,
                rank: fields[1].trim().parse().map_err(|_| bad("bad rank"))?,
                extra_seconds: fields[2].trim().parse().map_err(|_| bad("bad extra_seconds"))?,
            });
        }
        Ok(InjectionPlan { entries, seed })
    }
}
