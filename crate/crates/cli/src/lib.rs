//! Batch runner for the immse library: config-driven sweeps written as CSV,
//! plus a quick self-check suite.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod experiments;
pub mod report;
pub mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use rayon::prelude::*;

pub use report::{interference_report, interference_report_with, InterferenceReport};
pub use sweep::{Axis, Experiment, GridPoint, SweepSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub rows: usize,
    pub columns: Vec<String>,
    /// Largest entry of any `*_se` column.
    pub max_std_error: f64,
}

/// Leading provenance comment of every CSV.
pub fn provenance(spec: &SweepSpec) -> String {
    format!(
        "# immse {VERSION} experiment={} spec_sha256={} seed={} samples={} samples_initial={}",
        spec.experiment, spec.hash, spec.seed, spec.n_samples, spec.solver.samples_initial
    )
}

/// Evaluates every grid point on a pool of `workers` threads and returns
/// the CSV text. Rows come back in grid order and each point draws from
/// its own derived seed, so the text does not depend on `workers`.
pub fn render(spec: &SweepSpec, workers: usize) -> anyhow::Result<(String, RunSummary)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building the worker pool")?;
    let grid = spec.grid();
    let columns = experiments::header(spec);
    let rows: Vec<anyhow::Result<Vec<f64>>> = pool.install(|| {
        grid.par_iter()
            .map(|pt| experiments::evaluate(spec, pt).with_context(|| format!("{} at {pt}", spec.experiment)))
            .collect()
    });
    let mut out = String::new();
    out.push_str(&provenance(spec));
    out.push('\n');
    out.push_str(&columns.join(","));
    out.push('\n');
    let mut max_se: f64 = 0.0;
    for (pt, row) in grid.iter().zip(rows) {
        let row = row?;
        validate_row(&columns, &row, pt)?;
        for (name, v) in columns.iter().zip(&row) {
            if name.ends_with("_se") {
                max_se = max_se.max(*v);
            }
        }
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    let summary = RunSummary {
        experiment: spec.experiment,
        rows: grid.len(),
        columns,
        max_std_error: max_se,
    };
    Ok((out, summary))
}

/// Rejects rows whose width differs from the header or that contain a
/// non-finite value, naming the column and grid point.
pub fn validate_row(columns: &[String], row: &[f64], pt: &GridPoint) -> anyhow::Result<()> {
    if row.len() != columns.len() {
        bail!("{pt}: {} values for {} columns", row.len(), columns.len());
    }
    if let Some((name, v)) = columns.iter().zip(row).find(|(_, v)| !v.is_finite()) {
        bail!("non-finite `{name}` = {v} at {pt}");
    }
    Ok(())
}

/// Runs the sweep and writes the CSV to `spec.output`.
pub fn run(spec: &SweepSpec, workers: usize) -> anyhow::Result<RunSummary> {
    let (text, summary) = render(spec, workers)?;
    write_atomically(&spec.output, &text)?;
    Ok(summary)
}

fn write_atomically(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("csv.partial");
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("moving output to {}", path.display()))?;
    Ok(())
}

/// Parses a config file into a sweep, naming the file on failure.
pub fn load(path: &Path) -> anyhow::Result<SweepSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SweepSpec::parse(&text).with_context(|| format!("invalid config {}", path.display()))
}
