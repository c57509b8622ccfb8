//! Reproducible studies and the run-directory format they write.
//!
//! A run directory holds:
//!
//! * `config.json`: the exact configuration, which reproduces the run when fed back;
//! * `metrics.csv`: the primary training log (`iteration,objective,data_term,penalty_term,eta,mae`),
//!   plus `metrics_<name>.csv` for any secondary logs;
//! * `report.json`: kind, run id, seed, summary scalars, and an index of arrays;
//! * `arrays/<name>.csv`: labeled long-format tables (heatmaps, spectra).

mod denoise;
mod matrix;
mod rof;

pub use denoise::{
    run_synthetic_denoise, sample_manifold, spectrum_analysis, DenoiseConfig, ManifoldKind, ManifoldSample, ManifoldSpec, Spectrum,
};
pub use matrix::{run_matrix_equiv, run_shrinkage, MatrixEquivConfig, ShrinkageConfig};
pub use rof::{rof_exact_solution, run_rof, RofConfig, RofProblem, RofVariant};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::MetricsLog;

/// A table with one column per axis label, written as CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledArray {
    pub name: String,
    pub columns: Vec<String>,
    /// Logical shape of the data, e.g. `[128, 128]` for a heatmap in long format.
    pub shape: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl LabeledArray {
    pub fn new(name: &str, columns: &[&str], shape: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            shape,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayIndex {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub columns: Vec<String>,
}

/// Everything one experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub kind: String,
    pub seed: u64,
    pub run_id: String,
    pub config: Value,
    /// Primary log first; the first entry becomes `metrics.csv`.
    pub metrics: Vec<(String, MetricsLog)>,
    pub summary: BTreeMap<String, f64>,
    pub arrays: Vec<LabeledArray>,
}

impl ExperimentReport {
    pub fn new<C: Serialize>(kind: &str, seed: u64, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            kind: kind.to_string(),
            seed,
            run_id: run_id(kind, &config),
            config,
            metrics: Vec::new(),
            summary: BTreeMap::new(),
            arrays: Vec::new(),
        })
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.summary.insert(key.to_string(), value);
    }

    pub fn array(&self, name: &str) -> Option<&LabeledArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn log(&self, name: &str) -> Option<&MetricsLog> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    fn metrics_file(i: usize, name: &str) -> String {
        if i == 0 {
            "metrics.csv".to_string()
        } else {
            format!("metrics_{name}.csv")
        }
    }

    pub fn report_json(&self) -> Value {
        let arrays: Vec<ArrayIndex> = self
            .arrays
            .iter()
            .map(|a| ArrayIndex {
                name: a.name.clone(),
                file: format!("arrays/{}.csv", a.name),
                shape: a.shape.clone(),
                columns: a.columns.clone(),
            })
            .collect();
        let metrics: BTreeMap<String, String> = self
            .metrics
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), Self::metrics_file(i, n)))
            .collect();
        // Non-finite summaries become null in JSON.
        let summary: BTreeMap<&String, Value> = self
            .summary
            .iter()
            .map(|(k, v)| (k, serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number)))
            .collect();
        serde_json::json!({
            "kind": self.kind,
            "run_id": self.run_id,
            "seed": self.seed,
            "summary": summary,
            "metrics": metrics,
            "arrays": arrays,
        })
    }

    /// Writes the run directory. An existing non-empty directory is an error unless `force`.
    pub fn write_run_dir(&self, dir: &Path, force: bool) -> Result<()> {
        if dir.exists() {
            let non_empty = std::fs::read_dir(dir)?.next().is_some();
            if non_empty && !force {
                return Err(Error::Config(format!(
                    "output directory {} exists and is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
        }
        std::fs::create_dir_all(dir.join("arrays"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)? + "\n")?;
        if self.metrics.is_empty() {
            MetricsLog::new().write_csv(&dir.join("metrics.csv"))?;
        }
        for (i, (name, log)) in self.metrics.iter().enumerate() {
            log.write_csv(&dir.join(Self::metrics_file(i, name)))?;
        }
        for a in &self.arrays {
            std::fs::write(dir.join("arrays").join(format!("{}.csv", a.name)), a.to_csv())?;
        }
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report_json())? + "\n")?;
        Ok(())
    }
}

/// Short content hash of the experiment kind and its canonical config.
pub fn run_id(kind: &str, config: &Value) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    h.update([0]);
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    let digest = h.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
