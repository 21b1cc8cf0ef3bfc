//! Batch experiment harness: configure, run, compare guided search against
//! the unguided baseline, and check lattice geodesics.
//!
//! Exit codes: 0 success, 1 runtime or tolerance failure, 2 configuration
//! error.

pub mod config;
pub mod geocheck;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use infoevo_core::domains::problem_catalog;
use infoevo_core::geodesic::RayMode;
use infoevo_core::ledger::DistanceMetric;

use config::{ConfigError, RunConfig, RunMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run failed: {0}")]
    Run(String),
    #[error("tolerance exceeded: {0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "infoevo", version, about = "Information-geometric guided evolutionary search experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write run.json plus a trace.
    Run(RunArgs),
    /// Paired guided/baseline runs over consecutive seeds; writes compare.csv.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Compare refined lattice geodesics with the exact distance.
    GeodesicCheck {
        /// Distribution sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// List the available problems.
    ListProblems,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricArg {
    Genotypic,
    Phenotypic,
    Blended,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub trap_block: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// CSV with a header row: input columns, then the output column.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<f64>,
    /// Behavioral distance for trees: euclidean or fisher.
    #[arg(long)]
    pub pheno: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// info_evo, baseline or paired.
    #[arg(long)]
    pub mode: Option<RunMode>,
    #[arg(long)]
    pub demes: Option<usize>,
    /// Rays, and candidate sub-demes, per deme round.
    #[arg(long)]
    pub subdemes: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub chart_dim: Option<usize>,
    /// Trace rays in closed form instead of on the lattice.
    #[arg(long)]
    pub exact_rays: bool,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub filter_k: Option<usize>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Genotypic weight of the blended metric.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub subpop: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub initial_population: Option<usize>,
}

impl RunArgs {
    /// Applies every flag that was given on top of `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.problem;
        if let Some(v) = &self.problem {
            p.name = v.clone();
        }
        set(&mut p.bits, self.bits);
        set(&mut p.trap_block, self.trap_block);
        set(&mut p.dim, self.dim);
        set(&mut p.max_depth, self.max_depth);
        if self.dataset.is_some() {
            p.dataset = self.dataset.clone();
        }
        if self.target.is_some() {
            p.target = self.target;
        }
        if let Some(v) = &self.pheno {
            p.pheno = v.clone();
        }
        set(&mut cfg.budget, self.budget);
        set(&mut cfg.mode, self.mode);
        set(&mut cfg.demes, self.demes);
        if self.subdemes.is_some() {
            cfg.subdemes = self.subdemes;
        }
        let s = &mut cfg.search;
        set(&mut s.step.gamma, self.gamma);
        set(&mut s.step.grid_resolution, self.resolution);
        set(&mut s.step.refinement_levels, self.levels);
        set(&mut s.step.chart_dim, self.chart_dim);
        if self.exact_rays {
            s.step.ray_mode = RayMode::Exact;
        }
        set(&mut s.policy.threshold_quantile, self.quantile);
        set(&mut s.policy.k, self.filter_k);
        set(&mut s.evolution.subpop_size, self.subpop);
        set(&mut s.evolution.generations_per_round, self.generations);
        if self.mutation_rate.is_some() {
            s.evolution.mutation_rate = self.mutation_rate;
        }
        if self.initial_population.is_some() {
            s.initial_population = self.initial_population;
        }
        let lambda = self.lambda.or(match cfg.metric {
            Some(DistanceMetric::Blended { lambda }) => Some(lambda),
            _ => None,
        });
        match self.metric {
            Some(MetricArg::Genotypic) => cfg.metric = Some(DistanceMetric::Genotypic),
            Some(MetricArg::Phenotypic) => cfg.metric = Some(DistanceMetric::Phenotypic),
            Some(MetricArg::Blended) => cfg.metric = Some(DistanceMetric::Blended { lambda: lambda.unwrap_or(0.5) }),
            None => {
                if let (Some(l), Some(DistanceMetric::Blended { .. })) = (self.lambda, cfg.metric) {
                    cfg.metric = Some(DistanceMetric::Blended { lambda: l });
                }
            }
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Loads `--config` (if any), then applies flags and the common seed.
pub fn resolve_config(common: &CommonArgs, args: &RunArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    args.apply(&mut cfg);
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError::field("threads", "must be positive").into());
        }
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Executes a parsed command, printing a human summary to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.common.threads)?;
    match &cli.command {
        Command::Run(args) => {
            let cfg = resolve_config(&cli.common, args)?;
            let record = run::cmd_run(&cfg, &cli.common.out)?;
            for r in &record.runs {
                println!(
                    "{} seed={} reached_target={} evals_to_target={} evaluations={} best_score={} skipped={} trace={}",
                    run::mode_name(r.mode),
                    r.seed,
                    r.reached_target,
                    fmt_opt(r.evals_to_target),
                    r.evaluations,
                    fmt_opt(r.best_score),
                    r.candidates_skipped,
                    fmt_opt(r.trace_file.as_deref()),
                );
                println!("  best: {}", r.best_genotype);
            }
            println!("wrote {}", cli.common.out.join("run.json").display());
        }
        Command::Compare { run: args, repeats } => {
            let cfg = resolve_config(&cli.common, args)?;
            let rows = run::cmd_compare(&cfg, *repeats, &cli.common.out)?;
            for r in rows.iter().filter(|r| r.seed == "median") {
                println!(
                    "median {}: evals_to_target={} best_score={} skipped={}",
                    r.mode,
                    r.evals_to_target,
                    fmt_opt(r.best_score),
                    r.candidates_skipped
                );
            }
            println!("wrote {}", cli.common.out.join("compare.csv").display());
        }
        Command::GeodesicCheck { n, trials, resolution, levels } => {
            let report = geocheck::geodesic_check(n, *trials, *resolution, *levels, cli.common.seed.unwrap_or(0))?;
            for t in &report.trials {
                println!(
                    "n={} trial={} exact={:.9} lattice={:.9} refined={:.9} rel_error={:.3e}",
                    t.n, t.trial, t.exact, t.lattice, t.refined, t.rel_error
                );
            }
            println!("max_rel_error={:.6e} tolerance={}", report.max_rel_error, geocheck::TOLERANCE);
            if !report.passed() {
                return Err(CliError::Tolerance(format!(
                    "max relative error {:.4} exceeds {} at resolution {}",
                    report.max_rel_error,
                    geocheck::TOLERANCE,
                    report.resolution
                )));
            }
        }
        Command::ListProblems => {
            for (name, about) in problem_catalog() {
                println!("{name:<12} {about}");
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
