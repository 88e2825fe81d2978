//! Trace records, regret, first-success statistics and CSV/JSON emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::numkit::DenseVector;

pub const CSV_HEADER: &str = "iter,queries,loss,measure_m,grad_norm_sq,distortion,success";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub queries: u64,
    pub loss: f64,
    pub measure_m: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub distortion: Option<f64>,
    pub success: bool,
}

/// Everything one optimizer run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub final_iterate: DenseVector,
    pub total_queries: u64,
    pub iterations: usize,
    /// Uniformly drawn iterate index in `[1, iterations]` (0 when no iteration ran).
    pub random_iterate: usize,
    /// `f_t(x_t)` averaged over each iteration's minibatch, uncounted.
    pub online_losses: Vec<f64>,
    /// `f_t(x_ref)` at the problem's comparator point, when it has one.
    pub comparator_losses: Vec<f64>,
    /// `measure_m` came from a high-accuracy estimate rather than an analytic gradient.
    pub measure_approx: bool,
    /// Set when a numeric error cut the run short; records up to the failure are kept.
    pub aborted: Option<String>,
}

impl Trace {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Average regret over the first `t` iterations against the comparator.
    pub fn regret_prefix(&self, t: usize) -> Result<f64> {
        if self.comparator_losses.is_empty() {
            return Err(ZoError::Unsupported(
                "problem has no comparator point".into(),
            ));
        }
        if t == 0 || t > self.online_losses.len() {
            return Err(ZoError::InvalidArgument(format!(
                "regret horizon {t} outside [1, {}]",
                self.online_losses.len()
            )));
        }
        average_regret(&self.online_losses[..t], &self.comparator_losses[..t])
    }
}

/// Run output plus the configuration echo needed to re-execute it.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub config: BTreeMap<String, String>,
    /// Wall-clock time; `None` keeps envelopes byte-reproducible.
    pub seconds: Option<f64>,
}

/// `(1/T) sum_t [f_t(x_t) - f_t(x*)]`.
pub fn average_regret(values: &[f64], comparator: &[f64]) -> Result<f64> {
    if values.len() != comparator.len() {
        return Err(ZoError::InvalidArgument(format!(
            "regret needs equal lengths, got {} and {}",
            values.len(),
            comparator.len()
        )));
    }
    if values.is_empty() {
        return Err(ZoError::InvalidArgument(
            "regret over an empty horizon".into(),
        ));
    }
    let mut acc = 0.0;
    for (v, c) in values.iter().zip(comparator) {
        acc += v - c;
    }
    Ok(acc / values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstSuccess {
    pub iter: u64,
    pub queries: u64,
    pub distortion: Option<f64>,
}

/// Earliest record flagged as a successful attack.
pub fn first_success(records: &[TraceRecord]) -> Option<FirstSuccess> {
    records.iter().find(|r| r.success).map(|r| FirstSuccess {
        iter: r.iter,
        queries: r.queries,
        distortion: r.distortion,
    })
}

fn opt_cell(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(out, "{v}").expect("writing to a String");
    }
}

/// CSV text for a trace; `Display` for `f64` is the shortest round-trip form.
pub fn csv_string(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{},{},{},", r.iter, r.queries, r.loss).expect("writing to a String");
        opt_cell(&mut out, r.measure_m);
        out.push(',');
        opt_cell(&mut out, r.grad_norm_sq);
        out.push(',');
        opt_cell(&mut out, r.distortion);
        out.push(',');
        out.push_str(if r.success { "true" } else { "false" });
        out.push('\n');
    }
    out
}

pub fn serialize_csv(result: &RunResult, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(&result.trace.records)).map_err(|e| ZoError::io(path, e))
}

fn parse_opt(cell: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_num(cell, line).map(Some)
    }
}

fn parse_num<T: std::str::FromStr>(cell: &str, line: usize) -> Result<T> {
    cell.parse()
        .map_err(|_| ZoError::InvalidArgument(format!("line {line}: cannot parse `{cell}`")))
}

/// Inverse of [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(ZoError::InvalidArgument("missing trace CSV header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(ZoError::InvalidArgument(format!(
                "line {}: expected 7 cells, got {}",
                i + 1,
                cells.len()
            )));
        }
        let success = match cells[6] {
            "true" => true,
            "false" => false,
            other => {
                return Err(ZoError::InvalidArgument(format!(
                    "line {}: bad success cell `{other}`",
                    i + 1
                )))
            }
        };
        out.push(TraceRecord {
            iter: parse_num(cells[0], i + 1)?,
            queries: parse_num(cells[1], i + 1)?,
            loss: parse_num(cells[2], i + 1)?,
            measure_m: parse_opt(cells[3], i + 1)?,
            grad_norm_sq: parse_opt(cells[4], i + 1)?,
            distortion: parse_opt(cells[5], i + 1)?,
            success,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_loss: Option<f64>,
    pub first_success: Option<FirstSuccess>,
    pub total_queries: u64,
    pub seconds: Option<f64>,
}

/// JSON document written next to each trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub config: BTreeMap<String, String>,
    pub summary: Summary,
    pub csv_path: String,
    pub iterations: usize,
    pub random_iterate: usize,
    pub measure_approx: bool,
    pub aborted: Option<String>,
}

impl Envelope {
    pub fn new(result: &RunResult, csv_path: &str) -> Self {
        let t = &result.trace;
        Self {
            config: result.config.clone(),
            summary: Summary {
                final_loss: t.final_loss(),
                first_success: first_success(&t.records),
                total_queries: t.total_queries,
                seconds: result.seconds,
            },
            csv_path: csv_path.to_string(),
            iterations: t.iterations,
            random_iterate: t.random_iterate,
            measure_approx: t.measure_approx,
            aborted: t.aborted.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| ZoError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(iter: u64, success: bool) -> TraceRecord {
        TraceRecord {
            iter,
            queries: iter * 11,
            loss: 1.0 / (iter as f64 + 1.0),
            measure_m: None,
            grad_norm_sq: Some(0.25),
            distortion: Some(iter as f64 * 0.1),
            success,
        }
    }

    #[test]
    fn regret_cases() {
        assert_eq!(average_regret(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((average_regret(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(average_regret(&[1.0], &[1.0, 2.0]).is_err());
        assert!(average_regret(&[], &[]).is_err());
    }

    #[test]
    fn first_success_picks_earliest() {
        let none: Vec<_> = (0..6).map(|i| rec(i, false)).collect();
        assert_eq!(first_success(&none), None);
        let only5: Vec<_> = (0..8).map(|i| rec(i, i == 5)).collect();
        let fs = first_success(&only5).unwrap();
        assert_eq!((fs.iter, fs.queries), (5, 55));
        assert_eq!(fs.distortion, Some(0.5));
        let two: Vec<_> = (0..9).map(|i| rec(i, i == 3 || i == 7)).collect();
        assert_eq!(first_success(&two).unwrap().iter, 3);
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
        assert!(csv_string(&[rec(1, false)]).trim_end().ends_with(",false"));
    }

    #[test]
    fn csv_file_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let result = RunResult {
            trace: Trace {
                records: vec![rec(0, false), rec(1, true)],
                final_iterate: DenseVector::zeros(2),
                total_queries: 11,
                iterations: 1,
                random_iterate: 1,
                online_losses: vec![],
                comparator_losses: vec![],
                measure_approx: false,
                aborted: None,
            },
            config: BTreeMap::new(),
            seconds: None,
        };
        serialize_csv(&result, &path).unwrap();
        let back = parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, result.trace.records);
        let env = Envelope::new(&result, "t.csv");
        assert_eq!(env.summary.first_success.unwrap().iter, 1);
        assert!(serialize_csv(&result, &dir.path().join("missing/x.csv")).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1e3..1e3f64,
        ]
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec(
            (any::<u32>(), any::<u32>(), finite(), prop::option::of(finite()),
             prop::option::of(finite()), prop::option::of(finite()), any::<bool>()), 0..20)) {
            let records: Vec<TraceRecord> = rows.into_iter().map(|(i, q, l, m, g, d, s)| TraceRecord {
                iter: i as u64, queries: q as u64, loss: l, measure_m: m,
                grad_norm_sq: g, distortion: d, success: s,
            }).collect();
            let back = parse_csv(&csv_string(&records)).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
                prop_assert_eq!(a.measure_m.map(f64::to_bits), b.measure_m.map(f64::to_bits));
                prop_assert_eq!(a.grad_norm_sq.map(f64::to_bits), b.grad_norm_sq.map(f64::to_bits));
                prop_assert_eq!(a.distortion.map(f64::to_bits), b.distortion.map(f64::to_bits));
                prop_assert_eq!((a.iter, a.queries, a.success), (b.iter, b.queries, b.success));
            }
        }
    }
}
