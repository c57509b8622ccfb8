//! Per-iteration training records and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iteration,objective,data_term,penalty_term,eta,mae";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iteration: usize,
    pub objective: f64,
    pub data_term: f64,
    /// Weighted penalty `η·R`; `objective = data_term + penalty_term`.
    pub penalty_term: f64,
    pub eta: f64,
    pub mae: Option<f64>,
}

/// Records in strictly increasing iteration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    records: Vec<Record>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "metrics iteration {} after {}",
                    r.iteration, last.iteration
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Mean objective over the last `fraction` of records (at least one).
    pub fn tail_objective(&self, fraction: f64) -> Option<f64> {
        self.tail_mean(fraction, |r| r.objective)
    }

    pub fn tail_mean(&self, fraction: f64, field: impl Fn(&Record) -> f64) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let k = ((self.records.len() as f64 * fraction).ceil() as usize).clamp(1, self.records.len());
        let tail = &self.records[self.records.len() - k..];
        Some(tail.iter().map(field).sum::<f64>() / k as f64)
    }

    /// Last recorded mean absolute error.
    pub fn final_mae(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.mae)
    }

    /// Floats use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{:?},{:?},{:?},{:?},", r.iteration, r.objective, r.data_term, r.penalty_term, r.eta);
            if let Some(m) = r.mae {
                let _ = write!(s, "{m:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::InvalidArgument(format!("metrics csv must start with `{CSV_HEADER}`")));
        }
        let mut log = MetricsLog::new();
        for (ln, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::InvalidArgument(format!("metrics csv line {}: `{line}`", ln + 2));
            if cols.len() != 6 {
                return Err(bad());
            }
            let f = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
            log.push(Record {
                iteration: cols[0].parse().map_err(|_| bad())?,
                objective: f(1)?,
                data_term: f(2)?,
                penalty_term: f(3)?,
                eta: f(4)?,
                mae: if cols[5].is_empty() { None } else { Some(f(5)?) },
            })?;
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
