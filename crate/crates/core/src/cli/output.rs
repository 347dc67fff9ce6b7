//! CSV traces and summaries.
//!
//! Floats are written with 17 significant digits, so files round-trip every
//! value exactly and identical traces give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simulator::{Aggregate, SimulationTrace};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per step and agent: `step,agent,error_sq,gamma,granted,policy`.
pub fn trace_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("step,agent,error_sq,gamma,granted,policy\n");
    for step in &trace.steps {
        for (i, a) in step.agents.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", step.step, i + 1, float(a.error_sq), u8::from(a.gamma), u8::from(a.granted), step.policy);
        }
    }
    out
}

pub fn summary_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("step,mean_error_sq\n");
    for step in &trace.steps {
        let _ = writeln!(out, "{},{}", step.step, float(step.mean_error_sq));
    }
    out
}

pub fn aggregate_csv(aggregate: &Aggregate) -> String {
    let mut out = String::from("step,mean_error_sq,stderr\n");
    for (k, (m, s)) in aggregate.mean.iter().zip(&aggregate.stderr).enumerate() {
        let _ = writeln!(out, "{k},{},{}", float(*m), float(*s));
    }
    out
}

/// Writes `trace.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn emit_trace_csv(trace: &SimulationTrace, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write(dir, TRACE_FILE, &trace_csv(trace))?, write(dir, SUMMARY_FILE, &summary_csv(trace))?])
}

/// Writes the first replicate's `trace.csv` and a `summary.csv` with the
/// mean and standard error over all replicates.
pub fn emit_aggregate_csv(first: &SimulationTrace, aggregate: &Aggregate, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write(dir, TRACE_FILE, &trace_csv(first))?, write(dir, SUMMARY_FILE, &aggregate_csv(aggregate))?])
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}
