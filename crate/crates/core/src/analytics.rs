//! Metrics over traces: per-rank series, phase-space pairs, correlation,
//! histograms and steady-state summaries against the lock-step baseline.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::{CompositeBreakdown, Trace, TraceMeta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("unknown metric `{0}` (expected mpi_time, performance or bandwidth_utilization)")]
    UnknownMetric(String),
    #[error("rank {rank} out of range for {num_ranks} ranks")]
    RankOutOfRange { rank: usize, num_ranks: usize },
    #[error("series of length {len} is too short, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series has zero variance")]
    DegenerateVariance,
    #[error("compute time must be positive, got {0}")]
    NonPositiveCompute(f64),
    #[error("baseline performance must be positive, got {0}")]
    ZeroBaseline(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Seconds per iteration spent in communication.
    MpiTime,
    /// Iterations per second.
    Performance,
    /// Bytes per second while computing.
    BandwidthUtilization,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MpiTime => "mpi_time",
            Metric::Performance => "performance",
            Metric::BandwidthUtilization => "bandwidth_utilization",
        }
    }
}

impl FromStr for Metric {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mpi_time" => Ok(Metric::MpiTime),
            "performance" => Ok(Metric::Performance),
            "bandwidth_utilization" => Ok(Metric::BandwidthUtilization),
            other => Err(AnalyticsError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub rank: usize,
    pub metric: Metric,
    pub values: Vec<f64>,
}

pub fn metric_series(trace: &Trace, rank: usize, metric: Metric) -> Result<MetricSeries, AnalyticsError> {
    if rank >= trace.num_ranks() {
        return Err(AnalyticsError::RankOutOfRange {
            rank,
            num_ranks: trace.num_ranks(),
        });
    }
    let values = trace
        .rank(rank)
        .iter()
        .map(|rec| match metric {
            Metric::MpiTime => rec.mpi_wait_seconds,
            Metric::Performance => 1.0 / rec.wall_seconds(),
            Metric::BandwidthUtilization => {
                if rec.compute_seconds > 0.0 {
                    rec.traffic_bytes / rec.compute_seconds
                } else {
                    0.0
                }
            }
        })
        .collect();
    Ok(MetricSeries {
        rank,
        metric,
        values,
    })
}

/// Mean over ranks of each iteration's performance.
pub fn iteration_performance(trace: &Trace) -> Vec<f64> {
    let p = trace.num_ranks() as f64;
    (0..trace.num_iterations())
        .map(|i| {
            (0..trace.num_ranks())
                .map(|r| 1.0 / trace.record(r, i).wall_seconds())
                .sum::<f64>()
                / p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceSeries {
    pub rank: usize,
    pub metric: Metric,
    /// `(m_i, m_{i+1})`.
    pub points: Vec<(f64, f64)>,
    /// Iteration index `i` of each point.
    pub iterations: Vec<usize>,
    /// `i` as a fraction of the full series, in `[0, 1]`.
    pub color_key: Vec<f64>,
}

pub fn phase_space(series: &MetricSeries) -> Result<PhaseSpaceSeries, AnalyticsError> {
    phase_space_window(series, 0, series.values.len())
}

/// Phase space of `values[start..start + len]`, colored by position in
/// the whole series.
pub fn phase_space_window(
    series: &MetricSeries,
    start: usize,
    len: usize,
) -> Result<PhaseSpaceSeries, AnalyticsError> {
    let n = series.values.len();
    let end = start.saturating_add(len).min(n);
    if end < start + 2 {
        return Err(AnalyticsError::TooShort {
            len: end.saturating_sub(start),
            min: 2,
        });
    }
    let window = &series.values[start..end];
    let scale = (n - 1).max(1) as f64;
    Ok(PhaseSpaceSeries {
        rank: series.rank,
        metric: series.metric,
        points: window.windows(2).map(|w| (w[0], w[1])).collect(),
        iterations: (start..end - 1).collect(),
        color_key: (start..end - 1).map(|i| i as f64 / scale).collect(),
    })
}

impl PhaseSpaceSeries {
    /// The series the points were built from.
    pub fn recover(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        if let Some(last) = self.points.last() {
            v.push(last.1);
        }
        v
    }

    pub fn on_diagonal(&self) -> bool {
        self.points.iter().all(|(x, y)| x == y)
    }

    /// Fraction of points within `radius` of `center`.
    pub fn fraction_within(&self, center: (f64, f64), radius: f64) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let inside = self
            .points
            .iter()
            .filter(|(x, y)| (x - center.0).hypot(y - center.1) <= radius)
            .count();
        inside as f64 / self.points.len() as f64
    }

    pub fn to_csv(&self, meta: &TraceMeta) -> String {
        let mut out = format!(
            "# config_hash={} seed={} metric={} rank={}\nx,y,iteration,color\n",
            meta.config_hash,
            meta.seed,
            self.metric.name(),
            self.rank
        );
        for ((&(x, y), i), c) in self.points.iter().zip(&self.iterations).zip(&self.color_key) {
            writeln!(out, "{x},{y},{i},{c}").unwrap();
        }
        out
    }
}

/// `1 / (t_comp + t_comm + t_collective)`.
pub fn composite_performance(t_comp: f64, t_comm: f64, t_collective: f64) -> Result<f64, AnalyticsError> {
    if !(t_comp > 0.0) {
        return Err(AnalyticsError::NonPositiveCompute(t_comp));
    }
    Ok(1.0 / (t_comp + t_comm + t_collective))
}

pub fn normalized_performance(p: f64, baseline: f64) -> Result<f64, AnalyticsError> {
    if !(baseline > 0.0) {
        return Err(AnalyticsError::ZeroBaseline(baseline));
    }
    Ok(p / baseline)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalyticsError::TooShort { len: a.len(), min: 2 });
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(AnalyticsError::DegenerateVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks from 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with n - 2 degrees of
    /// freedom.
    pub p_value: f64,
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman, AnalyticsError> {
    if a.len() < 3 {
        return Err(AnalyticsError::TooShort { len: a.len(), min: 3 });
    }
    let rho = pearson(&ranks(a), &ranks(b))?;
    let n = a.len() as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0).expect("n >= 3");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Spearman { rho, p_value })
}

/// Spearman correlation between iteration index and `values`; a positive,
/// significant trend marks a run drifting toward higher performance.
pub fn trend(values: &[f64]) -> Result<Spearman, AnalyticsError> {
    let index: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    spearman(&index, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`; the maximum falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    if values.is_empty() {
        return Histogram {
            edges: vec![0.0; bins + 1],
            counts,
        };
    }
    let width = (max - min) / bins as f64;
    let edges = (0..=bins).map(|k| min + width * k as f64).collect();
    for &v in values {
        let k = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    pub mean_performance: f64,
    pub std_performance: f64,
    pub mean_mpi_time: f64,
    pub std_mpi_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub num_ranks: usize,
    pub warmup_iterations: usize,
    pub ranks: Vec<RankSummary>,
    /// Average over ranks of the per-rank mean of `1 / T_i`.
    pub mean_performance: f64,
    /// Average over ranks of the per-rank standard deviation.
    pub std_performance: f64,
    pub mean_mpi_time: f64,
    /// Steady-state iterations per second: iterations after the cut over
    /// the span from the earliest entry to the latest exit.
    pub steady_performance: f64,
    /// Lock-step iterations per second over the same iterations.
    pub composite_performance: f64,
    pub speedup: f64,
    pub cer: f64,
}

/// Statistics over iterations from `ceil(warmup_cut * N)` on.
pub fn summary(trace: &Trace, composite: &CompositeBreakdown, warmup_cut: f64) -> Summary {
    let n = trace.num_iterations();
    let p = trace.num_ranks();
    let w = ((warmup_cut.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let ranks: Vec<RankSummary> = (0..p)
        .map(|r| {
            let recs = &trace.rank(r)[w..];
            let perf: Vec<f64> = recs.iter().map(|x| 1.0 / x.wall_seconds()).collect();
            let mpi: Vec<f64> = recs.iter().map(|x| x.mpi_wait_seconds).collect();
            RankSummary {
                rank: r,
                mean_performance: mean(&perf),
                std_performance: std_dev(&perf),
                mean_mpi_time: mean(&mpi),
                std_mpi_time: std_dev(&mpi),
            }
        })
        .collect();
    let avg = |f: fn(&RankSummary) -> f64| ranks.iter().map(f).sum::<f64>() / p.max(1) as f64;
    let first = (0..p).map(|r| trace.record(r, w).t_enter).fold(f64::INFINITY, f64::min);
    let last = (0..p)
        .map(|r| trace.record(r, n - 1).t_exit)
        .fold(f64::NEG_INFINITY, f64::max);
    let steady = (n - w) as f64 / (last - first);
    let lock_step: f64 = composite.series()[w..].iter().sum();
    let composite_performance = (n - w) as f64 / lock_step;
    Summary {
        config_hash: trace.meta.config_hash.clone(),
        seed: trace.meta.seed,
        num_ranks: p,
        warmup_iterations: w,
        mean_performance: avg(|r| r.mean_performance),
        std_performance: avg(|r| r.std_performance),
        mean_mpi_time: avg(|r| r.mean_mpi_time),
        ranks,
        steady_performance: steady,
        composite_performance,
        speedup: steady / composite_performance,
        cer: composite.cer(),
    }
}

impl Summary {
    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("config_hash", self.config_hash.clone()),
            ("seed", self.seed.to_string()),
            ("ranks", self.num_ranks.to_string()),
            ("warmup_iterations", self.warmup_iterations.to_string()),
            ("steady_performance [iter/s]", format!("{:.6}", self.steady_performance)),
            ("composite_performance [iter/s]", format!("{:.6}", self.composite_performance)),
            ("speedup", format!("{:.6}", self.speedup)),
            ("mean_performance [iter/s]", format!("{:.6}", self.mean_performance)),
            ("std_performance [iter/s]", format!("{:.6}", self.std_performance)),
            (
                "per_rank_performance [iter/s/rank]",
                format!("{:.6}", self.mean_performance / self.num_ranks.max(1) as f64),
            ),
            ("mean_mpi_time [s]", format!("{:.6e}", self.mean_mpi_time)),
            ("cer", format!("{:.4}", self.cer)),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// Long-format `iteration,rank,value` export of one metric for all ranks.
pub fn metrics_csv(trace: &Trace, metric: Metric) -> String {
    let mut out = format!(
        "# config_hash={} seed={} metric={}\niteration,rank,value\n",
        trace.meta.config_hash,
        trace.meta.seed,
        metric.name()
    );
    for r in 0..trace.num_ranks() {
        let s = metric_series(trace, r, metric).expect("rank in range");
        for (i, v) in s.values.iter().enumerate() {
            writeln!(out, "{i},{r},{v}").unwrap();
        }
    }
    out
}
