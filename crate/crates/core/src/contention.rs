//! Processor-sharing model of a memory domain.
//!
//! Ranks that are streaming through memory on the same domain share its
//! bandwidth. Rates change only when membership changes, so progress between
//! two events is exact.

use thiserror::Error;

use crate::model::MachineSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContentionError {
    #[error("concurrency must be >= 1")]
    ZeroConcurrency,
    #[error("saturation curve is empty")]
    EmptyCurve,
    #[error("rank {rank} has negative remaining work {remaining} bytes")]
    NegativeWork { rank: usize, remaining: f64 },
    #[error("time moved backwards: {now} < {last_update}")]
    TimeReversal { now: f64, last_update: f64 },
}

/// Per-rank rate under the min-law: `min(b1, B_max / k)`.
pub fn achieved_rate(k: usize, b1: f64, b_max: f64) -> Result<f64, ContentionError> {
    if k == 0 {
        return Err(ContentionError::ZeroConcurrency);
    }
    Ok(b1.min(b_max / k as f64))
}

/// Per-rank rate `aggregate(k) / k`, with the aggregate interpolated linearly
/// between samples and clamped to the last sample beyond the measured range.
pub fn rate_from_curve(k: usize, curve: &[(usize, f64)]) -> Result<f64, ContentionError> {
    if k == 0 {
        return Err(ContentionError::ZeroConcurrency);
    }
    let (last_k, last_b) = *curve.last().ok_or(ContentionError::EmptyCurve)?;
    let aggregate = if k >= last_k {
        last_b
    } else {
        match curve.iter().position(|&(ck, _)| ck >= k) {
            Some(0) => curve[0].1,
            Some(i) => {
                let (k0, b0) = curve[i - 1];
                let (k1, b1) = curve[i];
                b0 + (b1 - b0) * (k - k0) as f64 / (k1 - k0) as f64
            }
            None => last_b,
        }
    };
    Ok(aggregate / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SaturationLaw {
    MinLaw { b1: f64, b_max: f64 },
    Curve(Vec<(usize, f64)>),
}

impl SaturationLaw {
    pub fn from_machine(machine: &MachineSpec) -> Self {
        match &machine.saturation_curve {
            Some(curve) => SaturationLaw::Curve(curve.clone()),
            None => SaturationLaw::MinLaw {
                b1: machine.single_rank_bandwidth,
                b_max: machine.domain_bandwidth,
            },
        }
    }

    pub fn rate(&self, k: usize) -> Result<f64, ContentionError> {
        match self {
            SaturationLaw::MinLaw { b1, b_max } => achieved_rate(k, *b1, *b_max),
            SaturationLaw::Curve(curve) => rate_from_curve(k, curve),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub rank: usize,
    /// Bytes still to move.
    pub remaining: f64,
    /// Bytes this phase started with.
    pub total: f64,
    /// Bytes credited so far; equals `total - remaining` up to rounding.
    pub credited: f64,
    pub rate: f64,
}

/// Predicted completion of one member under the current rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub rank: usize,
    pub completion: f64,
}

/// The computing ranks of one memory domain and their current rates.
#[derive(Debug, Clone)]
pub struct DomainState {
    pub domain_id: usize,
    members: Vec<Member>,
    pub last_update: f64,
    law: SaturationLaw,
}

/// Remaining work below this fraction of the phase total counts as done.
const COMPLETION_EPS: f64 = 1e-12;

impl DomainState {
    pub fn new(domain_id: usize, law: SaturationLaw) -> Self {
        DomainState {
            domain_id,
            members: Vec::new(),
            last_update: 0.0,
            law,
        }
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn credit(&mut self, now: f64) -> Result<(), ContentionError> {
        if now < self.last_update {
            return Err(ContentionError::TimeReversal {
                now,
                last_update: self.last_update,
            });
        }
        let dt = now - self.last_update;
        if dt > 0.0 {
            for m in &mut self.members {
                let progress = m.rate * dt;
                m.remaining -= progress;
                m.credited += progress;
                if m.remaining < -(COMPLETION_EPS * m.total.max(1.0) + m.rate * 4.0 * f64::EPSILON * now.abs()) {
                    return Err(ContentionError::NegativeWork {
                        rank: m.rank,
                        remaining: m.remaining,
                    });
                }
            }
        }
        self.last_update = now;
        Ok(())
    }

    /// Credits progress since the last update at the old rates, recomputes
    /// rates for the current membership and predicts every completion.
    pub fn reschedule(&mut self, now: f64) -> Result<Vec<Prediction>, ContentionError> {
        self.credit(now)?;
        if self.members.is_empty() {
            return Ok(Vec::new());
        }
        let rate = self.law.rate(self.members.len())?;
        Ok(self
            .members
            .iter_mut()
            .map(|m| {
                m.rate = rate;
                Prediction {
                    rank: m.rank,
                    completion: now + m.remaining.max(0.0) / rate,
                }
            })
            .collect())
    }

    /// Adds a rank with `bytes` of streaming work at time `now`.
    pub fn join(&mut self, now: f64, rank: usize, bytes: f64) -> Result<(), ContentionError> {
        self.credit(now)?;
        self.members.push(Member {
            rank,
            remaining: bytes,
            total: bytes,
            credited: 0.0,
            rate: 0.0,
        });
        self.reschedule(now).map(|_| ())
    }

    /// Earliest predicted completion (ties broken by rank).
    pub fn next_completion(&self) -> Option<Prediction> {
        self.members
            .iter()
            .map(|m| Prediction {
                rank: m.rank,
                completion: self.last_update + m.remaining.max(0.0) / m.rate,
            })
            .min_by(|a, b| {
                a.completion
                    .total_cmp(&b.completion)
                    .then(a.rank.cmp(&b.rank))
            })
    }

    /// Advances to `now`, removes every member whose work is done and
    /// reschedules the rest. Returns the finished members in rank order.
    pub fn complete_due(&mut self, now: f64) -> Result<Vec<Member>, ContentionError> {
        self.credit(now)?;
        let mut done = Vec::new();
        let mut i = 0;
        while i < self.members.len() {
            let m = &self.members[i];
            let below_resolution = m.remaining / m.rate <= 4.0 * f64::EPSILON * now.abs();
            if m.remaining <= COMPLETION_EPS * m.total.max(1.0) || below_resolution {
                done.push(self.members.swap_remove(i));
            } else {
                i += 1;
            }
        }
        self.members.sort_by_key(|m| m.rank);
        done.sort_by_key(|m| m.rank);
        self.reschedule(now)?;
        Ok(done)
    }
}
