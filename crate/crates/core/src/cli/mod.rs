//! Command-line front end.
//!
//! ```text
//! netsched simulate --config <path> [--seed S] [--policy P] [--replicates R] [--out DIR]
//! netsched bounds   --config <path> [--seed S]
//! netsched compare  --config <path> --seeds S1,S2,... [--settle 20] [--out DIR]
//! netsched sweep    --config <path> --param <field> --values v1,v2,... [--out DIR]
//! ```
//!
//! `NETSCHED_THREADS` caps the number of worker threads.

mod file;
mod output;

use std::fmt::{self, Write as _};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::bounds::{choose_scheme, SchemeChoice};
use crate::error::{Error, Result};
use crate::scenario::{BudgetCheck, Policy, ScenarioConfig};
use crate::simulator::{aggregate_replicates, mean_quadratic_error, run_replicate, run_replicates, window_mean, Decision};

pub use file::{emit_scenario, parse_scenario, FORMAT_VERSION};
pub use output::{aggregate_csv, emit_aggregate_csv, emit_trace_csv, float, summary_csv, trace_csv, SUMMARY_FILE, TRACE_FILE};

pub const THREADS_VAR: &str = "NETSCHED_THREADS";

/// Steps skipped after each event before a comparison window opens.
pub const DEFAULT_SETTLE: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "netsched", version, about = "Event-triggered scheduling of many remote estimators over a shared network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write trace.csv and summary.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print both error bounds and the chosen scheme at every decision point.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run all three policies on the same seeds and report windowed mean errors.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = DEFAULT_SETTLE)]
        settle: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one scenario field and report bounds and mean errors per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments, runs the command and maps errors to exit code 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut stdout = String::new();
    match configure_threads().and_then(|()| run(&cli, &mut stdout)) {
        Ok(()) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::config(THREADS_VAR, format!("expected a positive integer, got `{raw}`")))?;
    // Fails only if a pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Runs `cli`, appending the report to `out`.
pub fn run(cli: &Cli, out: &mut String) -> Result<()> {
    match &cli.command {
        Command::Simulate { config, seed, policy, replicates, out: dir } => {
            let mut scenario = load(config)?;
            if let Some(seed) = seed {
                scenario.seed = *seed;
            }
            if let Some(policy) = policy {
                scenario.policy = *policy;
            }
            if let Some(r) = replicates {
                scenario.replicates = *r;
            }
            simulate(&scenario, dir, out)
        }
        Command::Bounds { config, seed } => {
            let mut scenario = load(config)?;
            if let Some(seed) = seed {
                scenario.seed = *seed;
            }
            let decisions = bound_decisions(&scenario)?;
            out.push_str(&decisions_csv(&[(scenario.seed, decisions)]));
            Ok(())
        }
        Command::Compare { config, seeds, settle, out: dir } => {
            let report = compare(&load(config)?, seeds, *settle)?;
            let text = report.to_string();
            if let Some(dir) = dir {
                output::write(dir, "compare.csv", &text)?;
            }
            out.push_str(&text);
            Ok(())
        }
        Command::Sweep { config, param, values, out: dir } => {
            let rows = sweep(&load(config)?, param, values)?;
            let text = sweep_csv(param, &rows);
            if let Some(dir) = dir {
                output::write(dir, "sweep.csv", &text)?;
            }
            out.push_str(&text);
            Ok(())
        }
    }
}

pub fn load(path: &Path) -> Result<ScenarioConfig> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&bytes)
}

fn simulate(scenario: &ScenarioConfig, dir: &Path, out: &mut String) -> Result<()> {
    scenario.validate(BudgetCheck::Relaxed)?;
    let traces = run_replicates(scenario)?;
    let first = &traces[0];
    let written = if traces.len() == 1 {
        emit_trace_csv(first, dir)?
    } else {
        emit_aggregate_csv(first, &aggregate_replicates(&traces)?, dir)?
    };
    let horizon = first.horizon();
    let overall: f64 = traces.iter().map(|t| mean_quadratic_error(t, 0..horizon)).sum::<Result<f64>>()? / traces.len() as f64;
    let _ = writeln!(out, "scenario {} policy {} seed {} replicates {}", scenario.name, scenario.policy, scenario.seed, traces.len());
    let _ = writeln!(out, "mean squared error over [0, {horizon}): {}", float(overall));
    if !first.decisions.is_empty() {
        out.push_str(&decisions_csv(&[(scenario.seed, first.decisions.clone())]));
    }
    for path in written {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}

/// Bound comparisons the adaptive policy makes on replicate 0 (at step 0 and
/// at every event), whatever policy the scenario names.
pub fn bound_decisions(scenario: &ScenarioConfig) -> Result<Vec<Decision>> {
    let mut adaptive = scenario.clone();
    adaptive.policy = Policy::Adaptive;
    Ok(run_replicate(&adaptive, 0)?.decisions)
}

fn decisions_csv(decisions: &[(u64, Vec<Decision>)]) -> String {
    let mut out = String::from("seed,step,periodic_bound,predictive_bound,chosen\n");
    for (seed, list) in decisions {
        for d in list {
            let c = d.choice;
            let _ = writeln!(out, "{seed},{},{},{},{}", d.step, float(c.periodic_bound_value), float(c.predictive_bound_value), c.chosen);
        }
    }
    out
}

/// Segments between events; each after the first starts `settle` steps late.
pub fn event_windows(scenario: &ScenarioConfig, settle: usize) -> Vec<Range<usize>> {
    let mut cuts: Vec<usize> = scenario.events.iter().map(|e| e.step).filter(|&s| s > 0 && s < scenario.horizon).collect();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(scenario.horizon);
    bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| (if i == 0 { w[0] } else { w[0] + settle })..w[1])
        .filter(|r| r.start < r.end)
        .collect()
}

/// Windowed mean errors of all three policies on shared seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub windows: Vec<Range<usize>>,
    /// `per_seed[s][w][p]`, policies in [`Policy::ALL`] order.
    pub per_seed: Vec<Vec<[f64; 3]>>,
    /// Seed-averaged `means[w][p]`.
    pub means: Vec<[f64; 3]>,
    pub decisions: Vec<(u64, Vec<Decision>)>,
}

impl ComparisonReport {
    pub fn mean(&self, window: usize, policy: Policy) -> f64 {
        self.means[window][policy_index(policy)]
    }
}

fn policy_index(policy: Policy) -> usize {
    Policy::ALL.iter().position(|&p| p == policy).expect("policy listed in ALL")
}

pub fn compare(scenario: &ScenarioConfig, seeds: &[u64], settle: usize) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let windows = event_windows(scenario, settle);
    let runs: Vec<(usize, usize, Vec<f64>, Vec<Decision>)> = seeds
        .par_iter()
        .enumerate()
        .flat_map_iter(|(s, &seed)| Policy::ALL.iter().enumerate().map(move |(p, &policy)| (s, seed, p, policy)))
        .map(|(s, seed, p, policy)| {
            let mut run = scenario.clone();
            run.seed = seed;
            run.policy = policy;
            let trace = run_replicate(&run, 0)?;
            Ok((s, p, trace.mean_series(), trace.decisions))
        })
        .collect::<Result<_>>()?;

    let mut per_seed = vec![vec![[0.0; 3]; windows.len()]; seeds.len()];
    let mut decisions = vec![(0, Vec::new()); seeds.len()];
    for (s, p, series, trace_decisions) in runs {
        for (w, window) in windows.iter().enumerate() {
            per_seed[s][w][p] = window_mean(&series, window.clone())?;
        }
        if Policy::ALL[p] == Policy::Adaptive {
            decisions[s] = (seeds[s], trace_decisions);
        }
    }
    let means = (0..windows.len())
        .map(|w| {
            let mut m = [0.0; 3];
            for row in &per_seed {
                for p in 0..3 {
                    m[p] += row[w][p];
                }
            }
            m.map(|x| x / seeds.len() as f64)
        })
        .collect();
    Ok(ComparisonReport { seeds: seeds.to_vec(), windows, per_seed, means, decisions })
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "window_start,window_end,periodic,predictive,adaptive")?;
        for (window, m) in self.windows.iter().zip(&self.means) {
            writeln!(f, "{},{},{},{},{}", window.start, window.end, float(m[0]), float(m[1]), float(m[2]))?;
        }
        writeln!(f)?;
        f.write_str(&decisions_csv(&self.decisions))
    }
}

/// Result of one sweep value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    /// Bounds at step 0 for replicate 0.
    pub choice: SchemeChoice,
    /// Replicate-averaged mean error over the horizon, per policy.
    pub mean_error: [f64; 3],
}

pub const SWEEP_PARAMS: [&str; 7] = ["delta", "k_total", "k_pred", "horizon", "seed", "replicates", "reidentification_lag"];

/// Applies `param = value` to a copy of `scenario`.
pub fn with_param(scenario: &ScenarioConfig, param: &str, value: &str) -> Result<ScenarioConfig> {
    let bad = |e: String| Error::config(param, format!("cannot use `{value}`: {e}"));
    let int = || value.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
    let mut s = scenario.clone();
    match param {
        "delta" => s.delta = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "k_total" | "k_per" => {
            s.budget.k_total = int()?;
            s.budget.k_per = s.budget.k_total;
        }
        "k_pred" => s.budget.k_pred = int()?,
        "horizon" => s.horizon = int()?,
        "seed" => s.seed = value.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "replicates" => s.replicates = int()?,
        "reidentification_lag" => s.reidentification_lag = int()?,
        other => return Err(Error::config("param", format!("unknown parameter `{other}`, expected one of {}", SWEEP_PARAMS.join(", ")))),
    }
    s.validate(BudgetCheck::Strict)?;
    Ok(s)
}

pub fn sweep(scenario: &ScenarioConfig, param: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|value| {
            let s = with_param(scenario, param, value)?;
            let models = s.realize(0)?.estimator_models()?;
            let choice = choose_scheme(&models, s.delta, &s.budget, s.noise_indexing)?;
            let mut mean_error = [0.0; 3];
            for (p, &policy) in Policy::ALL.iter().enumerate() {
                let mut run = s.clone();
                run.policy = policy;
                let traces = run_replicates(&run)?;
                let total = traces.iter().map(|t| mean_quadratic_error(t, 0..t.horizon())).sum::<Result<f64>>()?;
                mean_error[p] = total / traces.len() as f64;
            }
            Ok(SweepRow { value: value.clone(), choice, mean_error })
        })
        .collect()
}

fn sweep_csv(param: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{param},periodic_bound,predictive_bound,chosen,periodic,predictive,adaptive\n");
    for r in rows {
        let c = r.choice;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.value,
            float(c.periodic_bound_value),
            float(c.predictive_bound_value),
            c.chosen,
            float(r.mean_error[0]),
            float(r.mean_error[1]),
            float(r.mean_error[2])
        );
    }
    out
}
