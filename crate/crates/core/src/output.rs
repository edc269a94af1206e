//! Trace serialization: JSON, per-iteration metric CSV and long-format
//! plot CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::driver::RunTrace;
use crate::error::{FcdError, Result};

pub const METRICS_HEADER: &str = "k,F,alpha,backtracks,inner_iters,res_norm";
pub const PLOT_HEADER: &str = "algorithm,k,time_s,F";

pub fn trace_json(trace: &RunTrace) -> Result<String> {
    serde_json::to_string_pretty(trace).map_err(|e| FcdError::Io(e.to_string()))
}

/// One row per recorded iteration, `k` counting committed steps (row 0 is
/// the starting point). No wall-clock column, so equal seeds give
/// byte-identical files.
pub fn metrics_csv(trace: &RunTrace) -> String {
    let mut s = String::new();
    s.push_str(METRICS_HEADER);
    s.push('\n');
    let _ = writeln!(s, "0,{},,,,", trace.initial_objective);
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.k + 1,
            r.objective,
            r.alpha,
            r.backtracks,
            r.inner_iterations,
            r.residual_norm
        );
    }
    s
}

/// Long-format rows `algorithm,k,time_s,F` for any number of runs.
pub fn plot_csv<'a>(traces: impl IntoIterator<Item = &'a RunTrace>) -> String {
    let mut s = String::new();
    s.push_str(PLOT_HEADER);
    s.push('\n');
    for t in traces {
        let _ = writeln!(s, "{},0,{},{}", t.algorithm, t.timing.setup_s, t.initial_objective);
        for r in &t.records {
            let _ = writeln!(s, "{},{},{},{}", t.algorithm, r.k + 1, r.time_s, r.objective);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub json: PathBuf,
    pub metrics: PathBuf,
    pub plot: PathBuf,
}

/// Write `<stem>.json`, `<stem>.csv` and `<stem>_plot.csv` into `dir`.
pub fn write_run_outputs(dir: &Path, stem: &str, trace: &RunTrace) -> Result<RunFiles> {
    fs::create_dir_all(dir)?;
    let files = RunFiles {
        json: dir.join(format!("{stem}.json")),
        metrics: dir.join(format!("{stem}.csv")),
        plot: dir.join(format!("{stem}_plot.csv")),
    };
    fs::write(&files.json, trace_json(trace)?)?;
    fs::write(&files.metrics, metrics_csv(trace))?;
    fs::write(&files.plot, plot_csv([trace]))?;
    Ok(files)
}
