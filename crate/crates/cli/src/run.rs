//! Executing runs and comparisons, and writing their reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use infoevo_core::demes::{run_demes, DemeBudget, DemeSummary};
use infoevo_core::domains::Problem;
use infoevo_core::evolve::{Mode, RoundReport, Trace};

use crate::config::{BuiltProblem, RunConfig, RunMode};
use crate::CliError;

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const TRACE_SCHEMA: &str = "infoevo-trace";
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Outcome of one search mode within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub mode: Mode,
    pub seed: u64,
    pub reached_target: bool,
    /// Evaluations spent up to and including the first one at or above the
    /// target.
    pub evals_to_target: Option<usize>,
    pub evaluations: usize,
    pub initial_evaluations: usize,
    pub best_score: Option<f64>,
    pub best_genotype: String,
    pub best_deme: usize,
    pub candidates_skipped: usize,
    pub wall_time_secs: f64,
    /// Relative path of the JSONL trace, next to `run.json`.
    pub trace_file: Option<String>,
    pub demes: Vec<DemeSummary>,
    /// Non-finite scores in these reports are written as `null`.
    pub rounds: Vec<RoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config: RunConfig,
    pub runs: Vec<ModeRecord>,
    pub wall_time_secs: f64,
}

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub problem: String,
    pub mode: Mode,
    pub seed: u64,
    pub budget: usize,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn evals_to_target(trace: &Trace, target: Option<f64>) -> Option<usize> {
    let t = target?;
    trace.entries().iter().position(|e| e.score.is_some_and(|s| s >= t)).map(|i| i + 1)
}

fn execute<P: Problem>(problem: &P, config: &RunConfig, mode: Mode, seed: u64) -> Result<(ModeRecord, Trace), CliError> {
    let mut search = config.effective_search();
    search.mode = mode;
    let budget = DemeBudget::split(config.budget, config.demes, config.subdemes());
    let start = Instant::now();
    let out = run_demes(problem, config.demes, budget, config.budget, &search, seed).map_err(|e| CliError::Run(e.to_string()))?;
    let wall = start.elapsed().as_secs_f64();
    let record = ModeRecord {
        mode,
        seed,
        reached_target: out.reached_target,
        evals_to_target: evals_to_target(&out.trace, problem.target()),
        evaluations: out.trace.len(),
        initial_evaluations: out.initial_evaluations(),
        best_score: finite(out.best.score),
        best_genotype: problem.render(&out.best.genotype),
        best_deme: out.best_deme,
        candidates_skipped: out.trace.skipped(),
        wall_time_secs: wall,
        trace_file: None,
        demes: out.demes,
        rounds: out.reports,
    };
    Ok((record, out.trace))
}

/// Runs one mode on a validated problem.
pub fn run_mode(problem: &BuiltProblem, config: &RunConfig, mode: Mode, seed: u64) -> Result<(ModeRecord, Trace), CliError> {
    match problem {
        BuiltProblem::Bits(p) => execute(p, config, mode, seed),
        BuiltProblem::Real(p) => execute(p, config, mode, seed),
        BuiltProblem::Tree(p) => execute(p, config, mode, seed),
    }
}

fn modes(mode: RunMode) -> Vec<Mode> {
    match mode {
        RunMode::InfoEvo => vec![Mode::InfoEvo],
        RunMode::Baseline => vec![Mode::Baseline],
        RunMode::Paired => vec![Mode::InfoEvo, Mode::Baseline],
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::InfoEvo => "info_evo",
        Mode::Baseline => "baseline",
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn write_trace(path: &Path, header: &TraceHeader, trace: &Trace) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let line = |w: &mut BufWriter<File>, v: String| writeln!(w, "{v}").map_err(io_err(path));
    line(&mut w, serde_json::to_string(header).map_err(|e| CliError::Run(e.to_string()))?)?;
    for e in trace.entries() {
        line(&mut w, serde_json::to_string(e).map_err(|e| CliError::Run(e.to_string()))?)?;
    }
    w.flush().map_err(io_err(path))
}

/// Validates `config`, runs its mode(s) and writes `run.json` plus one trace
/// per mode into `out`.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<RunRecord, CliError> {
    let problem = config.validate()?;
    let seed = config.seed()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let start = Instant::now();
    let mut runs = Vec::new();
    for mode in modes(config.mode) {
        let (mut record, trace) = run_mode(&problem, config, mode, seed)?;
        let name = if config.mode == RunMode::Paired {
            format!("trace_{}.jsonl", mode_name(mode))
        } else {
            "trace.jsonl".to_string()
        };
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            version: TRACE_SCHEMA_VERSION,
            problem: config.problem.name.clone(),
            mode,
            seed,
            budget: config.budget,
        };
        write_trace(&out.join(&name), &header, &trace)?;
        record.trace_file = Some(name);
        runs.push(record);
    }
    let record = RunRecord {
        schema_version: RUN_SCHEMA_VERSION,
        config: config.clone(),
        runs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let path = out.join("run.json");
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(record)
}

/// One row of `compare.csv`. Summary rows carry `median` in the seed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: String,
    pub mode: String,
    pub evals_to_target: f64,
    pub best_score: Option<f64>,
    pub candidates_skipped: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Paired runs over seeds `seed..seed + repeats`; writes `compare.csv`.
/// Unreached targets count as the full budget.
pub fn cmd_compare(config: &RunConfig, repeats: usize, out: &Path) -> Result<Vec<CompareRow>, CliError> {
    if repeats == 0 {
        return Err(crate::config::ConfigError::field("repeats", "must be at least 1").into());
    }
    let problem = config.validate()?;
    let seed = config.seed()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::new();
    for s in seed..seed + repeats as u64 {
        for mode in [Mode::InfoEvo, Mode::Baseline] {
            let (r, _) = run_mode(&problem, config, mode, s)?;
            rows.push(CompareRow {
                seed: s.to_string(),
                mode: mode_name(mode).into(),
                evals_to_target: r.evals_to_target.unwrap_or(config.budget) as f64,
                best_score: r.best_score,
                candidates_skipped: r.candidates_skipped as f64,
            });
        }
    }
    for mode in [Mode::InfoEvo, Mode::Baseline] {
        let of = |f: &dyn Fn(&CompareRow) -> f64| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.mode == mode_name(mode)).map(f).collect();
            median(&mut v)
        };
        let best = of(&|r| r.best_score.unwrap_or(f64::NEG_INFINITY));
        rows.push(CompareRow {
            seed: "median".into(),
            mode: mode_name(mode).into(),
            evals_to_target: of(&|r| r.evals_to_target),
            best_score: finite(best),
            candidates_skipped: of(&|r| r.candidates_skipped),
        });
    }
    let path: PathBuf = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn target_index_is_one_based() {
        let mut t = Trace::new();
        t.record(0, 1.0);
        t.record(0, f64::NEG_INFINITY);
        t.record(0, 5.0);
        assert_eq!(evals_to_target(&t, Some(5.0)), Some(3));
        assert_eq!(evals_to_target(&t, Some(6.0)), None);
        assert_eq!(evals_to_target(&t, None), None);
    }
}
