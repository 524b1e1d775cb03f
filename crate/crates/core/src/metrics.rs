//! Per-iteration error, network variance, and cumulative communication cost.

use std::fmt::Write as _;

use thiserror::Error;

use crate::mixing::{MixEvent, SchemeKind};
use crate::netstate::{sq_dist, StateMatrix};
use crate::optimizer::{MetricsSink, Observation};

/// CSV header shared by per-run and aggregated series.
pub const CSV_HEADER: &str = "scheme,run,seed,t,error,network_variance,cumulative_bits";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("w* has dimension {got}, state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no runs to aggregate")]
    Empty,
    #[error("run {run} does not share the iteration grid of run 0")]
    GridMismatch { run: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub scheme: SchemeKind,
    pub run: usize,
    pub seed: u64,
    pub t: u64,
    /// `‖W(t) − 1 w*ᵀ‖_F`, when `w*` is known.
    pub error: Option<f64>,
    /// `V(W(t))`.
    pub network_variance: f64,
    pub cumulative_bits: u64,
}

/// Identifies the run a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunId {
    pub scheme: SchemeKind,
    pub run: usize,
    pub seed: u64,
}

/// Builds the record for iteration `t` from the mixed state `w`.
pub fn record(
    id: RunId,
    t: u64,
    w: &StateMatrix,
    ev: &MixEvent,
    w_star: Option<&[f64]>,
    prev: Option<&ExperimentRecord>,
) -> Result<ExperimentRecord, MetricsError> {
    let error = match w_star {
        Some(ws) if ws.len() != w.d() => {
            return Err(MetricsError::DimensionMismatch {
                expected: w.d(),
                got: ws.len(),
            })
        }
        Some(ws) => Some(w.rows().map(|r| sq_dist(r, ws)).sum::<f64>().sqrt()),
        None => None,
    };
    Ok(ExperimentRecord {
        scheme: id.scheme,
        run: id.run,
        seed: id.seed,
        t,
        error,
        network_variance: w.lyapunov(),
        cumulative_bits: prev.map_or(0, |p| p.cumulative_bits) + ev.bits,
    })
}

/// Pointwise mean over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub t: u64,
    pub error: Option<f64>,
    pub network_variance: f64,
    pub cumulative_bits: f64,
}

pub fn aggregate_runs(runs: &[Vec<ExperimentRecord>]) -> Result<Vec<AggregateRecord>, MetricsError> {
    let first = runs.first().ok_or(MetricsError::Empty)?;
    for (k, r) in runs.iter().enumerate() {
        let same = r.len() == first.len() && r.iter().zip(first).all(|(a, b)| a.t == b.t);
        if !same {
            return Err(MetricsError::GridMismatch { run: k });
        }
    }
    let count = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let rows = runs.iter().map(|r| &r[i]);
            let error = rows
                .clone()
                .map(|r| r.error)
                .sum::<Option<f64>>()
                .map(|s| s / count);
            AggregateRecord {
                t: first[i].t,
                error,
                network_variance: rows.clone().map(|r| r.network_variance).sum::<f64>() / count,
                cumulative_bits: rows.map(|r| r.cumulative_bits as f64).sum::<f64>() / count,
            }
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|e| e.to_string()).unwrap_or_default()
}

/// Per-run CSV (header included).
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scheme,
            r.run,
            r.seed,
            r.t,
            fmt_opt(r.error),
            r.network_variance,
            r.cumulative_bits
        )
        .unwrap();
    }
    out
}

/// Aggregated CSV; the `run` column reads `mean` and `seed` carries the base
/// seed.
pub fn aggregate_to_csv(scheme: SchemeKind, base_seed: u64, rows: &[AggregateRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},mean,{},{},{},{},{}",
            scheme,
            base_seed,
            r.t,
            fmt_opt(r.error),
            r.network_variance,
            r.cumulative_bits
        )
        .unwrap();
    }
    out
}

/// Sink that keeps one record every `every` iterations (bits accumulate on
/// every iteration regardless).
#[derive(Debug, Clone)]
pub struct Recorder {
    id: RunId,
    w_star: Option<Vec<f64>>,
    every: u64,
    bits: u64,
    records: Vec<ExperimentRecord>,
    error: Option<MetricsError>,
}

impl Recorder {
    pub fn new(id: RunId, w_star: Option<Vec<f64>>, every: u64) -> Self {
        Recorder {
            id,
            w_star,
            every: every.max(1),
            bits: 0,
            records: Vec::new(),
            error: None,
        }
    }

    pub fn finish(self) -> Result<Vec<ExperimentRecord>, MetricsError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.records),
        }
    }
}

impl MetricsSink for Recorder {
    fn observe(&mut self, obs: &Observation<'_>) {
        if !obs.t.is_multiple_of(self.every) || self.error.is_some() {
            self.bits += obs.event.bits;
            return;
        }
        let prev = ExperimentRecord {
            scheme: self.id.scheme,
            run: self.id.run,
            seed: self.id.seed,
            t: 0,
            error: None,
            network_variance: 0.0,
            cumulative_bits: self.bits,
        };
        match record(self.id, obs.t, obs.w, obs.event, self.w_star.as_deref(), Some(&prev)) {
            Ok(r) => {
                self.bits = r.cumulative_bits;
                self.records.push(r);
            }
            Err(e) => self.error = Some(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn id() -> RunId {
        RunId {
            scheme: SchemeKind::RandomizedGossip,
            run: 0,
            seed: 5,
        }
    }

    fn rg_event() -> MixEvent {
        MixEvent {
            scheme: SchemeKind::RandomizedGossip,
            activated: Some(0),
            pairs: vec![Edge::new(0, 1)],
            bits: 64,
        }
    }

    #[test]
    fn record_examples() {
        let w = StateMatrix::from_scalars(&[1.0, 1.0, 1.0]).unwrap();
        let r = record(id(), 1, &w, &rg_event(), Some(&[1.0]), None).unwrap();
        assert_eq!(r.error, Some(0.0));

        let w = StateMatrix::from_scalars(&[0.0, 2.0]).unwrap();
        let r = record(id(), 1, &w, &rg_event(), Some(&[1.0]), None).unwrap();
        assert!((r.error.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.network_variance, 2.0);
        assert_eq!(r.network_variance, w.lyapunov());

        let mut prev = None;
        for t in 1..=3 {
            prev = Some(record(id(), t, &w, &rg_event(), None, prev.as_ref()).unwrap());
        }
        assert_eq!(prev.unwrap().cumulative_bits, 192);

        assert_eq!(
            record(id(), 1, &w, &rg_event(), Some(&[1.0, 2.0]), None),
            Err(MetricsError::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    fn series(errors: &[f64]) -> Vec<ExperimentRecord> {
        errors
            .iter()
            .enumerate()
            .map(|(k, &e)| ExperimentRecord {
                scheme: SchemeKind::LoadBalancing,
                run: 0,
                seed: 0,
                t: k as u64 + 1,
                error: Some(e),
                network_variance: 2.0 * e,
                cumulative_bits: 10 * (k as u64 + 1),
            })
            .collect()
    }

    #[test]
    fn aggregation() {
        let a = series(&[1.0, 4.0]);
        let same = aggregate_runs(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same[1].error, Some(4.0));
        assert_eq!(same[1].cumulative_bits, 20.0);

        let b = series(&[3.0, 0.0]);
        let mean = aggregate_runs(&[a.clone(), b]).unwrap();
        assert_eq!(mean[0].error, Some(2.0));
        assert_eq!(mean[0].network_variance, 4.0);

        assert_eq!(aggregate_runs(&[]), Err(MetricsError::Empty));
        let short = series(&[1.0]);
        assert_eq!(
            aggregate_runs(&[a, short]),
            Err(MetricsError::GridMismatch { run: 1 })
        );
    }

    #[test]
    fn csv_layout() {
        let mut rows = series(&[0.5]);
        rows.push(ExperimentRecord {
            error: None,
            ..rows[0].clone()
        });
        let text = records_to_csv(&rows);
        assert_eq!(
            text,
            "scheme,run,seed,t,error,network_variance,cumulative_bits\n\
             load_balancing,0,0,1,0.5,1,10\n\
             load_balancing,0,0,1,,1,10\n"
        );
        let agg = aggregate_to_csv(SchemeKind::LoadBalancing, 9, &aggregate_runs(&[series(&[0.5])]).unwrap());
        assert!(agg.ends_with("load_balancing,mean,9,1,0.5,1,10\n"));
    }

    #[test]
    fn recorder_accumulates_bits_between_records() {
        let w = StateMatrix::from_scalars(&[0.0, 2.0]).unwrap();
        let g = StateMatrix::zeros(2, 1).unwrap();
        let ev = rg_event();
        let mut rec = Recorder::new(id(), Some(vec![1.0]), 2);
        for t in 1..=4 {
            rec.observe(&Observation {
                t,
                w: &w,
                subgradients: &g,
                prev_mean: &[1.0],
                event: &ev,
                alpha: 1.0,
            });
        }
        let out = rec.finish().unwrap();
        assert_eq!(out.iter().map(|r| r.t).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(out[0].cumulative_bits, 128);
        assert_eq!(out[1].cumulative_bits, 256);
    }
}
