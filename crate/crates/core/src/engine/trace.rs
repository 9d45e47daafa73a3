use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TraceDetail;

/// One rank-iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rank: usize,
    pub t_enter: f64,
    pub t_exit: f64,
    /// Memory-bound plus scalable work, without injected noise.
    pub compute_seconds: f64,
    /// Time blocked in point-to-point and collective phases.
    pub mpi_wait_seconds: f64,
    pub noise_seconds: f64,
    /// Point-to-point share of `mpi_wait_seconds`.
    pub comm_seconds: f64,
    /// Collective share of `mpi_wait_seconds`.
    pub collective_seconds: f64,
    /// Share of `compute_seconds` spent streaming through the memory domain.
    pub contended_seconds: f64,
    pub traffic_bytes: f64,
}

impl IterationRecord {
    pub fn wall_seconds(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

/// Entry and exit of a single phase, kept at full detail only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub iteration: usize,
    pub rank: usize,
    pub phase: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    pub num_ranks: usize,
    pub num_iterations: usize,
    pub total_wall_time: f64,
    pub detail: TraceDetail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    /// Rank-major: all iterations of rank 0, then rank 1, ...
    pub records: Vec<IterationRecord>,
    pub phases: Vec<PhaseTiming>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("rank {rank} iteration {iteration}: {reason}")]
    Invariant {
        rank: usize,
        iteration: usize,
        reason: String,
    },
}

const CSV_COLUMNS: &str = "iteration,rank,t_enter,t_exit,compute_seconds,mpi_wait_seconds,\
noise_seconds,comm_seconds,collective_seconds,contended_seconds,traffic_bytes";

impl Trace {
    pub fn num_ranks(&self) -> usize {
        self.meta.num_ranks
    }

    pub fn num_iterations(&self) -> usize {
        self.meta.num_iterations
    }

    pub fn rank(&self, rank: usize) -> &[IterationRecord] {
        let n = self.meta.num_iterations;
        &self.records[rank * n..(rank + 1) * n]
    }

    pub fn record(&self, rank: usize, iteration: usize) -> &IterationRecord {
        &self.records[rank * self.meta.num_iterations + iteration]
    }

    /// Checks per-rank time accounting to relative `tol` and that
    /// timestamps never decrease.
    pub fn check_invariants(&self, tol: f64) -> Result<(), TraceError> {
        for r in 0..self.num_ranks() {
            let mut last = f64::NEG_INFINITY;
            for rec in self.rank(r) {
                let fail = |reason: String| TraceError::Invariant {
                    rank: r,
                    iteration: rec.iteration,
                    reason,
                };
                if rec.t_enter < last || rec.t_exit < rec.t_enter {
                    return Err(fail("timestamps decrease".into()));
                }
                last = rec.t_exit;
                let wall = rec.wall_seconds();
                let sum = rec.compute_seconds + rec.mpi_wait_seconds + rec.noise_seconds;
                if (sum - wall).abs() > tol * wall + 8.0 * f64::EPSILON * rec.t_exit.abs() {
                    return Err(fail(format!("accounted {sum} s of {wall} s")));
                }
            }
        }
        Ok(())
    }

    fn header(&self) -> String {
        let m = &self.meta;
        format!(
            "# config_hash={} seed={} num_ranks={} num_iterations={} total_wall_time={} detail={}\n",
            m.config_hash,
            m.seed,
            m.num_ranks,
            m.num_iterations,
            m.total_wall_time,
            match m.detail {
                TraceDetail::Summary => "summary",
                TraceDetail::Full => "full",
            }
        )
    }

    /// One line per rank-iteration under a `#` metadata header.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push_str(CSV_COLUMNS);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.rank,
                r.t_enter,
                r.t_exit,
                r.compute_seconds,
                r.mpi_wait_seconds,
                r.noise_seconds,
                r.comm_seconds,
                r.collective_seconds,
                r.contended_seconds,
                r.traffic_bytes
            )
            .unwrap();
        }
        out
    }

    /// Phase timestamps as `iteration,rank,phase,t_enter,t_exit`.
    pub fn phases_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("iteration,rank,phase,t_enter,t_exit\n");
        for p in &self.phases {
            writeln!(out, "{},{},{},{},{}", p.iteration, p.rank, p.phase, p.t_enter, p.t_exit).unwrap();
        }
        out
    }

    /// Metadata object on the first line, then one record object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({ "meta": self.meta })).unwrap();
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Trace, TraceError> {
        let mut meta = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| TraceError::Parse {
                line: line_no,
                reason,
            };
            if let Some(rest) = line.strip_prefix('#') {
                meta = Some(parse_header(rest).map_err(err)?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with("iteration") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(err(format!("expected 11 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
            records.push(IterationRecord {
                iteration: int(f[0])?,
                rank: int(f[1])?,
                t_enter: num(f[2])?,
                t_exit: num(f[3])?,
                compute_seconds: num(f[4])?,
                mpi_wait_seconds: num(f[5])?,
                noise_seconds: num(f[6])?,
                comm_seconds: num(f[7])?,
                collective_seconds: num(f[8])?,
                contended_seconds: num(f[9])?,
                traffic_bytes: num(f[10])?,
            });
        }
        let meta = meta.ok_or_else(|| TraceError::Parse {
            line: 1,
            reason: "missing `#` metadata header".into(),
        })?;
        if records.len() != meta.num_ranks * meta.num_iterations {
            return Err(TraceError::Parse {
                line: text.lines().count(),
                reason: format!(
                    "expected {} records, found {}",
                    meta.num_ranks * meta.num_iterations,
                    records.len()
                ),
            });
        }
        Ok(Trace {
            meta,
            records,
            phases: Vec::new(),
        })
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        #[derive(Deserialize)]
        struct Head {
            meta: TraceMeta,
        }
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| TraceError::Parse {
            line: 1,
            reason: "empty stream".into(),
        })?;
        let head: Head = serde_json::from_str(first).map_err(|e| TraceError::Parse {
            line: 1,
            reason: e.to_string(),
        })?;
        let records = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| TraceError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<IterationRecord>, _>>()?;
        Ok(Trace {
            meta: head.meta,
            records,
            phases: Vec::new(),
        })
    }

    /// SHA-256 of the CSV form, hex encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.update(self.phases_csv().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_header(rest: &str) -> Result<TraceMeta, String> {
    let mut meta = TraceMeta {
        config_hash: String::new(),
        seed: 0,
        num_ranks: 0,
        num_iterations: 0,
        total_wall_time: 0.0,
        detail: TraceDetail::Summary,
    };
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| format!("bad header token `{token}`"))?;
        let bad = |e: &dyn std::fmt::Display| format!("{key}: {e}");
        match key {
            "config_hash" => meta.config_hash = value.to_string(),
            "seed" => meta.seed = value.parse().map_err(|e| bad(&e))?,
            "num_ranks" => meta.num_ranks = value.parse().map_err(|e| bad(&e))?,
            "num_iterations" => meta.num_iterations = value.parse().map_err(|e| bad(&e))?,
            "total_wall_time" => meta.total_wall_time = value.parse().map_err(|e| bad(&e))?,
            "detail" => {
                meta.detail = match value {
                    "full" => TraceDetail::Full,
                    _ => TraceDetail::Summary,
                }
            }
            _ => {}
        }
    }
    Ok(meta)
}
