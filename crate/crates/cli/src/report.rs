//! Run reports, CSV artifacts and the output schema.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Version of the report layout; bumped on any change to the fields below.
pub const SCHEMA_VERSION: &str = "1.0";

/// One estimated or computed quantity.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub quantity: String,
    pub params: Value,
    pub mean: f64,
    /// Standard error, or the numerical error bound of a deterministic value.
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    /// Seconds; null when timing is disabled.
    pub wall_time: Option<f64>,
}

/// A pass/fail invariant with the numbers it was decided on.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, value, tolerance, detail: detail.into() }
    }
}

/// Collects the outputs of one run and writes them to the output directory.
pub struct Report {
    pub command: String,
    pub action: String,
    pub seed: u64,
    pub records: Vec<Record>,
    pub checks: Vec<Check>,
    pub detail: Value,
    pub artifacts: Vec<String>,
    timing: bool,
    plot_data: bool,
    out: PathBuf,
    started: Instant,
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting; deterministic across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Tidy long-format rows (series, x, y, y_err) for external plotting.
#[derive(Default)]
pub struct PlotData {
    rows: Vec<(String, f64, f64, f64)>,
}

impl PlotData {
    pub fn push(&mut self, series: impl Into<String>, x: f64, y: f64, err: f64) {
        self.rows.push((series.into(), x, y, err));
    }
}

impl Report {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self, crate::config::ConfigError> {
        Ok(Report {
            command: cfg.command.clone(),
            action: cfg.action.clone(),
            seed,
            records: Vec::new(),
            checks: Vec::new(),
            detail: Value::Null,
            artifacts: Vec::new(),
            timing: cfg.flag("timing", true)?,
            plot_data: cfg.flag("plot_data", false)?,
            out: cfg.out_dir(),
            started: Instant::now(),
        })
    }

    fn stem(&self) -> String {
        if self.action.is_empty() {
            self.command.clone()
        } else {
            format!("{}-{}", self.command, self.action)
        }
    }

    /// Wall time since the previous call (or since the run started).
    pub fn lap(&mut self) -> Option<f64> {
        let t = self.started.elapsed().as_secs_f64();
        self.started = Instant::now();
        self.timing.then_some(t)
    }

    pub fn record(&mut self, quantity: &str, params: Value, mean: f64, stderr: f64, n: u64, wall_time: Option<f64>) {
        self.records.push(Record {
            quantity: quantity.to_string(),
            params,
            mean,
            stderr,
            n,
            seed: self.seed,
            wall_time,
        });
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write_csv(&mut self, suffix: &str, table: &Table) -> std::io::Result<PathBuf> {
        let name = format!("{}{}.csv", self.stem(), suffix);
        let path = self.out.join(&name);
        std::fs::create_dir_all(&self.out)?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.artifacts.push(name);
        Ok(path)
    }

    pub fn write_plot(&mut self, plot: &PlotData) -> std::io::Result<()> {
        if !self.plot_data {
            return Ok(());
        }
        let mut t = Table::new(&["series", "x", "y", "y_err"]);
        for (s, x, y, e) in &plot.rows {
            t.push(vec![s.clone(), num(*x), num(*y), num(*e)]);
        }
        self.write_csv("-plot", &t)?;
        Ok(())
    }

    /// Writes `<command>-<action>.json` and returns its path.
    pub fn finish(&mut self, cfg: &RunConfig) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let name = format!("{}.json", self.stem());
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "action": self.action,
            "seed": self.seed,
            "config": cfg.echo(),
            "status": if self.passed() { "pass" } else { "fail" },
            "records": self.records,
            "checks": self.checks,
            "artifacts": self.artifacts,
            "detail": self.detail,
        });
        let path = self.out.join(name);
        let mut text = serde_json::to_string_pretty(&body).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let mean = if r.mean != 0.0 && (r.mean.abs() < 1e-3 || r.mean.abs() >= 1e6) {
                format!("{:.8e}", r.mean)
            } else {
                format!("{:.8}", r.mean)
            };
            s.push_str(&format!("{:<28} {:>16} ± {:<12.3e} n={}\n", r.quantity, mean, r.stderr, r.n));
        }
        for c in &self.checks {
            s.push_str(&format!(
                "{} {}: {} (value {:.6e}, tolerance {:.6e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail,
                c.value,
                c.tolerance
            ));
        }
        s
    }
}

/// Machine-readable description of every report field and CSV column.
pub fn report_schema() -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": {
            "file": "<command>[-<action>].json",
            "fields": {
                "schema_version": "string; equals the schema_version of this document",
                "tool_version": "string; crate version",
                "command": "string", "action": "string",
                "seed": "u64; run seed",
                "config": "object; every key the run consulted with its resolved value",
                "status": "\"pass\" or \"fail\"",
                "records": "array of record",
                "checks": "array of check",
                "artifacts": "array of CSV file names written next to the report",
                "detail": "object; command-specific full result"
            }
        },
        "record": {
            "quantity": "string; name of the estimated quantity",
            "params": "object; parameters of this quantity",
            "mean": "f64; estimate or computed value",
            "stderr": "f64; Monte Carlo standard error, or numerical error bound for deterministic values",
            "n": "u64; number of samples (0 for deterministic values)",
            "seed": "u64",
            "wall_time": "f64 seconds or null when timing=false"
        },
        "check": {
            "name": "string", "passed": "bool",
            "value": "f64; the tested quantity", "tolerance": "f64; the bound it was held to",
            "detail": "string"
        },
        "csv": {
            "constants": ["quantity", "value", "lo", "hi"],
            "transition-mass": ["n", "mass", "abs_dev", "parity_zero"],
            "transition-lclt": ["t", "y1", "y2", "y3", "norm", "p", "gaussian", "rel_err"],
            "partition-mean-one": ["beta", "t", "mean", "stderr", "n_env", "n_paths", "z_score"],
            "partition-second-moment": ["t", "oracle", "oracle_err", "mc", "mc_stderr", "pair", "pair_stderr"],
            "partition-profile": ["beta", "t", "second_moment"],
            "moments-lambda": ["r", "estimate", "stderr", "target"],
            "moments-a-cells": ["t", "l", "r", "mc", "mc_stderr", "quadrature", "quadrature_err", "z_score"],
            "moments-ratio": ["t", "sup", "argmax", "n_sites"],
            "moments-convolution": ["r", "n_max", "c"],
            "factorization": ["t", "horizon", "sup_mean_abs", "sup_ci_lo", "sup_ci_hi", "origin_mean_abs", "origin_ci_lo", "origin_ci_hi", "n_classes"],
            "she-fk": ["dt", "lattice", "bridge", "bridge_stderr", "rel_diff"],
            "she-ratio": ["t", "median_gap"],
            "tail-empirical": ["u", "count", "n_env", "log_p", "ci_lo", "ci_hi"],
            "tail-discrete-pairs": ["t", "steps", "mean", "stderr", "closed"],
            "tail-discrete-q": ["N", "q", "N_one_minus_q", "N_log_inv_q"],
            "tail-discrete-waiting": ["N", "ks", "exact_distance", "p_value"],
            "plot": ["series", "x", "y", "y_err"]
        },
        "exit_codes": {"0": "success", "1": "an invariant check failed", "2": "configuration or usage error"}
    })
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, text)
}
